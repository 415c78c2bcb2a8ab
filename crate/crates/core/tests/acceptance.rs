//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr; the test fails if any criterion does.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use xdfsod::bench::run_bench;
use xdfsod::config::RunConfig;
use xdfsod::detector::{init_params, meta_test, nms, Detection};
use xdfsod::embedding::gradcheck::{self, GradcheckConfig};
use xdfsod::embedding::{cfce_loss, cosine_sim};
use xdfsod::episodic::{
    enumerate_fewshot, Annotation, DatasetIndex, DatasetView, Domain, EpisodeSampler, ImageEntry, MdtsPolicy,
    SamplerConfig, SplitConfig,
};
use xdfsod::imaging::{apply_pipeline, AugmentationPipeline};
use xdfsod::metrics::{
    average_precision, evaluate, iou_thresholds, match_detections, oracle_evaluate, DetectionRecord, GroundTruth,
    MetricsReport,
};
use xdfsod::synthgen::{generate_scene, shape_classes, DomainSpec, SceneSpec};
use xdfsod::{rng, BBox, Error};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    threads(1, f)
}

fn threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn elapsed_ok(start: Instant, budget: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < budget, format!("{:.2}s (budget {}s)", t.as_secs_f64(), budget.as_secs()))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::run(0, &GradcheckConfig::default()).unwrap();
    let (fast, time) = elapsed_ok(start, Duration::from_secs(1));
    outcome(
        report.passed && report.instances == 100 && report.max_relative_error < 1e-5 && fast,
        format!(
            "{} instances, max relative error {:.3e}, {time}",
            report.instances, report.max_relative_error
        ),
    )
}

fn det(image_id: u64, category_id: u32, b: [f64; 4], score: f64) -> DetectionRecord {
    DetectionRecord {
        image_id,
        category_id,
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
        score,
    }
}

fn gt(image_id: u64, category_id: u32, b: [f64; 4]) -> GroundTruth {
    GroundTruth {
        image_id,
        category_id,
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
    }
}

fn micro_instance<R: Rng>(rng: &mut R) -> (Vec<DetectionRecord>, Vec<GroundTruth>) {
    let b = |rng: &mut R| {
        let x = rng.random_range(0..24u32);
        let y = rng.random_range(0..24u32);
        let w = rng.random_range(1..=(32 - x).min(10));
        let h = rng.random_range(1..=(32 - y).min(10));
        [x, y, w, h].map(f64::from)
    };
    let n_img = rng.random_range(1..=3u64);
    let gts = (0..rng.random_range(0..=4))
        .map(|_| gt(rng.random_range(1..=n_img), rng.random_range(1..=2), b(rng)))
        .collect();
    let dets = (0..rng.random_range(0..=6))
        .map(|_| {
            let score = f64::from(rng.random_range(0..5u8)) / 5.0;
            det(rng.random_range(1..=n_img), rng.random_range(1..=2), b(rng), score)
        })
        .collect();
    (dets, gts)
}

fn reports_agree(a: &MetricsReport, b: &MetricsReport) -> bool {
    let near = |x: f64, y: f64| (x - y).abs() <= 1e-12;
    near(a.ap, b.ap)
        && near(a.ap50, b.ap50)
        && near(a.ap75, b.ap75)
        && near(a.ar, b.ar)
        && a.per_class.len() == b.per_class.len()
        && a.per_class.iter().zip(&b.per_class).all(|((ka, ma), (kb, mb))| {
            ka == kb && near(ma.ap, mb.ap) && near(ma.ap50, mb.ap50) && near(ma.ap75, mb.ap75) && near(ma.ar, mb.ar)
        })
}

fn metric_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let classes: BTreeSet<u32> = [1, 2].into();
    let mut r = rng::stream(0, 0, 2024);
    let (mut compared, mut disagreements) = (0, 0);
    for _ in 0..1000 {
        let (d, g) = micro_instance(&mut r);
        match (evaluate(&d, &g, &classes), oracle_evaluate(&d, &g, &classes)) {
            (Ok(a), Ok(b)) if reports_agree(&a, &b) => compared += 1,
            (Err(Error::NoGroundTruth), Err(Error::NoGroundTruth)) => {}
            _ => disagreements += 1,
        }
    }
    let (fast, time) = elapsed_ok(start, Duration::from_secs(10));

    let boxes = [[2.0, 2.0, 8.0, 8.0], [20.0, 20.0, 6.0, 6.0]];
    let perfect_gts: Vec<_> = boxes.iter().map(|&b| gt(1, 1, b)).collect();
    let perfect_dets: Vec<_> = boxes.iter().map(|&b| det(1, 1, b, 0.9)).collect();
    let one: BTreeSet<u32> = [1].into();
    let perfect = evaluate(&perfect_dets, &perfect_gts, &one).unwrap().ap;

    // TP at 0.9, FP at 0.8, TP at 0.7 against two GTs: precision 1 up to
    // recall 0.5, then 2/3 up to recall 1, on the 101 recall points.
    let ranked = vec![
        det(1, 1, boxes[0], 0.9),
        det(1, 1, [40.0, 40.0, 5.0, 5.0], 0.8),
        det(1, 1, boxes[1], 0.7),
    ];
    let expected = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    let mixed = evaluate(&ranked, &perfect_gts, &one).unwrap().ap;

    outcome(
        disagreements == 0 && compared > 500 && fast && perfect == 1.0 && (mixed - expected).abs() < 1e-12,
        format!(
            "{compared} compared, {disagreements} disagreements, perfect AP {perfect}, TP/FP/TP AP {mixed:.4} (want {expected:.4}), {time}"
        ),
    )
}

fn augmentation_safety() -> Outcome {
    let start = Instant::now();
    let scene = SceneSpec::default();
    let domains = [DomainSpec::source_default(), RunConfig::default().synth.target_spec()];
    let mut pipeline = AugmentationPipeline::default();
    pipeline.set_all_probs(1.0);
    let mut failures = Vec::new();
    for i in 0..500u64 {
        let mut scene_rng = rng::stream(i, rng::purpose::SYNTH_SCENE, 0);
        let (img, anns) = generate_scene(&scene, &domains[(i % 2) as usize], &mut scene_rng).unwrap();
        let (out, out_anns) = apply_pipeline(&img, &anns, &pipeline, &mut rng::stream(i, rng::purpose::PIPELINE, 0)).unwrap();
        let same_boxes = anns.len() == out_anns.len()
            && anns.iter().zip(&out_anns).all(|(a, b)| {
                a.bbox.to_array().map(f64::to_bits) == b.bbox.to_array().map(f64::to_bits)
                    && a.class_id == b.class_id
                    && a.id == b.id
            });
        let valid = out.width() == img.width()
            && out.height() == img.height()
            && out.data().len() == out.width() as usize * out.height() as usize * 3;
        if !(same_boxes && valid) {
            failures.push(i);
        }
    }
    let (fast, time) = elapsed_ok(start, Duration::from_secs(30));
    outcome(
        failures.is_empty() && fast,
        format!("500 triples, {} failures {:?}, {time}", failures.len(), &failures[..failures.len().min(5)]),
    )
}

fn split_fidelity() -> Outcome {
    let split = SplitConfig::load(&repo_root().join("configs/tless_split.json")).unwrap();
    let base: BTreeSet<u32> = split.base_class_ids.iter().copied().collect();
    let novel: BTreeSet<u32> = split.novel_class_ids.iter().copied().collect();
    let want_base: BTreeSet<u32> = (1..=18).chain([27]).collect();
    outcome(
        base.len() == 19 && novel.len() == 11 && base == want_base && base.is_disjoint(&novel),
        format!("{} base, {} novel", base.len(), novel.len()),
    )
}

/// Six copies of one scene holding two classes, so every class's supports
/// are pixel-identical crops.
fn identical_copies() -> DatasetIndex {
    let classes = shape_classes();
    let scene = SceneSpec {
        objects: [2, 2],
        ..SceneSpec::default()
    };
    let domain = DomainSpec::source_default();
    let (img, anns) = (0..)
        .map(|s| generate_scene(&scene, &domain, &mut rng::stream(s, rng::purpose::SYNTH_SCENE, 0)).unwrap())
        .find(|(_, a)| a[0].class_id != a[1].class_id)
        .unwrap();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for id in 1..=6u64 {
        let entry = ImageEntry {
            id,
            file_name: format!("{id}.png"),
            width: img.width(),
            height: img.height(),
            domain: Domain::Source,
        };
        images.push((entry, img.clone()));
        for (k, a) in anns.iter().enumerate() {
            annotations.push(Annotation {
                id: id * 10 + k as u64,
                image_id: id,
                ..*a
            });
        }
    }
    DatasetIndex::from_parts(images, annotations, classes).unwrap()
}

fn degenerate_gaussian_identity() -> Outcome {
    let index = identical_copies();
    let fewshot = enumerate_fewshot(&DatasetView::all(&index), 5, &mut rng::stream(0, rng::purpose::FEWSHOT, 0)).unwrap();
    let view = fewshot.view(&DatasetView::all(&index));
    let mut cfg = RunConfig::default().train;
    cfg.meta_test.iterations = 40;
    cfg.meta_test.augment = false;
    let params = init_params(&cfg);
    let run = |feature_aug: bool| {
        let mut c = cfg.clone();
        c.meta_test.feature_aug = feature_aug;
        meta_test(&view, params.clone(), &c).unwrap()
    };
    let (on, off) = (run(true), run(false));
    let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = bits(&on.loss_trace) == bits(&off.loss_trace) && on.params == off.params;
    outcome(
        same && on.loss_trace.len() == 40,
        format!(
            "{} classes x 5 identical shots, {} iterations, traces {}",
            fewshot.per_class.len(),
            on.loss_trace.len(),
            if same { "bit-identical" } else { "differ" }
        ),
    )
}

fn domain_gap_reproduction() -> Outcome {
    let run = RunConfig::load(&repo_root().join("configs/bench.toml")).unwrap();
    let start = Instant::now();
    let report = single_thread(|| run_bench(&run, &|_| {})).unwrap();
    let (fast, time) = elapsed_ok(start, Duration::from_secs(600));
    let source = report.arm("Source").unwrap();
    let dr = report.arm("MDTS-Aug").unwrap();
    let full = report.arm("MDTS+DR+CFCE").unwrap();

    let gap = source.mean.source_ap50 - source.mean.target_ap50;
    let wins = source
        .runs
        .iter()
        .zip(&dr.runs)
        .filter(|(s, d)| d.target.ap50 > s.target.ap50)
        .count();
    let a = gap >= 0.10;
    let b = wins >= 4;
    let c_ap = full.mean.target_ap50 >= dr.mean.target_ap50 - 0.02;
    let c_var = full.mean.meta_test_detection_variance <= dr.mean.meta_test_detection_variance;
    let detail = format!(
        "(a) gap {gap:.3} [{}] (b) DR wins {wins}/{} seeds [{}] (c) target AP50 {:.3} vs {:.3} [{}], detection-loss trace variance {:.4} vs {:.4} [{}] (total-loss {:.4} vs {:.4}), {time}\n{}",
        if a { "ok" } else { "no" },
        source.runs.len(),
        if b { "ok" } else { "no" },
        full.mean.target_ap50,
        dr.mean.target_ap50,
        if c_ap { "ok" } else { "no" },
        full.mean.meta_test_detection_variance,
        dr.mean.meta_test_detection_variance,
        if c_var { "ok" } else { "no" },
        full.mean.meta_test_loss_variance,
        dr.mean.meta_test_loss_variance,
        report.table()
    );
    outcome(a && b && c_ap && c_var && fast, detail)
}

fn determinism() -> Outcome {
    let mut run = RunConfig::load(&repo_root().join("configs/bench.toml")).unwrap();
    run.bench.seeds = vec![0, 1];
    run.bench.n_train = 60;
    run.bench.n_test = 30;
    run.train.meta_train.episodes = 200;
    run.train.meta_test.iterations = 30;
    let once = threads(1, || run_bench(&run, &|_| {})).unwrap();
    let twice = threads(2, || run_bench(&run, &|_| {})).unwrap();
    let a = serde_json::to_string_pretty(&once).unwrap();
    let b = serde_json::to_string_pretty(&twice).unwrap();
    outcome(
        a == b,
        format!("reduced bench, 1 vs 2 threads, {} bytes {}", a.len(), if a == b { "identical" } else { "differ" }),
    )
}

fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn property_suites() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut r = rng::stream(8, 0, 0);

    for _ in 0..2000 {
        let (a, b) = (random_vec(&mut r, 8), random_vec(&mut r, 8));
        let c = cosine_sim(&a, &b).unwrap();
        let s = r.random_range(0.01..100.0);
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        if !(-1.0..=1.0).contains(&c) || (cosine_sim(&scaled, &b).unwrap() - c).abs() > 1e-12 {
            failures.push("cosine bounds or scale invariance".into());
            break;
        }
    }

    for _ in 0..2000 {
        let fg: Vec<Vec<f64>> = (0..r.random_range(1..=4)).map(|_| random_vec(&mut r, 8)).collect();
        let (pos, neg) = (random_vec(&mut r, 8), random_vec(&mut r, 8));
        let margin = r.random_range(0.05..1.0);
        let loss = cfce_loss(&fg, &pos, &neg, margin).unwrap();
        let slack = fg
            .iter()
            .all(|z| cosine_sim(z, &pos).unwrap() - cosine_sim(z, &neg).unwrap() >= margin);
        if loss < 0.0 || (slack != (loss == 0.0)) {
            failures.push("cfce non-negativity or zero condition".into());
            break;
        }
    }
    let aligned = vec![vec![1.0, 0.0], vec![2.0, 0.0]];
    if cfce_loss(&aligned, &[1.0, 0.0], &[-1.0, 0.0], 0.5).unwrap() != 0.0 {
        failures.push("cfce not zero for separated embeddings".into());
    }

    for _ in 0..1000 {
        let dets: Vec<Detection> = (0..r.random_range(0..12))
            .map(|_| Detection {
                bbox: BBox::new(
                    f64::from(r.random_range(0..20u8)),
                    f64::from(r.random_range(0..20u8)),
                    f64::from(r.random_range(1..10u8)),
                    f64::from(r.random_range(1..10u8)),
                ),
                score: f64::from(r.random_range(0..6u8)) / 5.0,
                class_id: r.random_range(1..=2),
            })
            .collect();
        let thresh = r.random_range(0.1..0.9);
        let kept = nms(&dets, thresh);
        let subset = kept.iter().all(|k| dets.contains(k));
        if !subset || nms(&kept, thresh) != kept {
            failures.push("nms subset or idempotence".into());
            break;
        }
    }

    let index = common::mixed_dataset(60, 8);
    let policy = MdtsPolicy::default();
    let budget = policy.few_shot_target_budget;
    let sampler = EpisodeSampler::new(
        common::base_view(&index),
        policy,
        SamplerConfig::default(),
        &mut rng::stream(8, rng::purpose::TARGET_BUDGET, 0),
    )
    .unwrap();
    let mut er = rng::stream(8, rng::purpose::META_TRAIN, 0);
    for i in 0..100_000 {
        let plan = sampler.plan(&mut er).unwrap();
        if let Some(v) = common::episode_violation(&sampler, &plan, budget) {
            failures.push(format!("episode {i}: {v}"));
            break;
        }
    }

    let mut monotone_checked = 0;
    for _ in 0..500 {
        let (d, g) = micro_instance(&mut r);
        for c in 1..=2 {
            let cd: Vec<_> = d.iter().filter(|x| x.category_id == c).copied().collect();
            let cg: Vec<_> = g.iter().filter(|x| x.category_id == c).copied().collect();
            let aps: Vec<f64> = iou_thresholds()
                .iter()
                .filter_map(|&t| average_precision(&match_detections(&cd, &cg, t)))
                .collect();
            if aps.windows(2).any(|w| w[1] > w[0] + 1e-15) {
                failures.push("AP increased with the IoU threshold".into());
            }
            monotone_checked += usize::from(!aps.is_empty());
        }
    }

    outcome(
        failures.is_empty() && monotone_checked > 0,
        if failures.is_empty() {
            "cosine, cfce, nms, 1e5 episodes, AP monotonicity".to_string()
        } else {
            failures.join("; ")
        },
    )
}

#[test]
fn acceptance() {
    let mut results: BTreeMap<usize, (&str, Outcome)> = BTreeMap::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        let mark = if o.passed { "PASS" } else { "FAIL" };
        writeln!(std::io::stderr(), "[{mark}] {n}. {name}: {}", o.detail).unwrap();
        results.insert(n, (name, o));
    };
    report(1, "gradient correctness", gradient_correctness());
    report(2, "metric oracle equivalence", metric_oracle_equivalence());
    report(3, "augmentation safety", augmentation_safety());
    report(4, "split fidelity", split_fidelity());
    report(5, "degenerate gaussian identity", degenerate_gaussian_identity());
    report(6, "domain gap reproduction", domain_gap_reproduction());
    report(7, "determinism", determinism());
    report(8, "property suites", property_suites());

    let failed: Vec<_> = results.iter().filter(|(_, (_, o))| !o.passed).map(|(n, (name, _))| format!("{n}. {name}")).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
