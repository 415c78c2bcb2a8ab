//! End-to-end comparison of training variants on generated paired-domain
//! data: generate, meta-train, meta-test, infer and evaluate per seed.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EvalClasses, RunConfig};
use crate::detector::{self, class_embeddings, infer_images, TrainConfig};
use crate::episodic::{enumerate_fewshot, load_dataset, DatasetIndex, DatasetView, Domain, FewShotSets, MdtsPolicy, SplitConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, GroundTruth, MetricsReport};
use crate::rng::{self, purpose};
use crate::synthgen::generate_pair;

/// One training variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    /// Meta-train with the configured mixed-domain policy instead of source
    /// data only.
    pub mixed_domain: bool,
    /// Pixel-level domain randomization in both training phases.
    pub domain_randomization: bool,
    /// The contrastive loss in the phases enabled by `train.cfce`.
    pub cfce: bool,
    /// Gaussian class-embedding sampling in meta-testing and inference.
    pub feature_aug: bool,
}

impl ArmSpec {
    fn new(name: &str, mixed_domain: bool, domain_randomization: bool, cfce: bool, feature_aug: bool) -> Self {
        ArmSpec {
            name: name.to_string(),
            mixed_domain,
            domain_randomization,
            cfce,
            feature_aug,
        }
    }

    /// The four default arms: source only, source with randomization,
    /// mixed-domain, and mixed-domain with randomization, the contrastive
    /// loss and embedding sampling.
    pub fn defaults() -> Vec<ArmSpec> {
        vec![
            ArmSpec::new("Source", false, false, false, false),
            ArmSpec::new("MDTS-Aug", false, true, false, false),
            ArmSpec::new("MDTS", true, false, false, false),
            ArmSpec::new("MDTS+DR+CFCE", true, true, true, true),
        ]
    }

    pub fn configure(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        if !self.mixed_domain {
            cfg.mdts = MdtsPolicy::source_only();
        }
        cfg.meta_train.augment = self.domain_randomization;
        cfg.meta_test.augment = self.domain_randomization;
        if !self.cfce {
            cfg.cfce.enabled_phases.clear();
        }
        cfg.meta_test.feature_aug = self.feature_aug;
        cfg.inference.mean_only = !self.feature_aug;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Training images per domain and seed.
    pub n_train: usize,
    /// Test images per domain and seed.
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSpec>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_train: 240,
            n_test: 160,
            seeds: vec![0, 1, 2, 3, 4],
            arms: ArmSpec::defaults(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 || self.seeds.is_empty() || self.arms.is_empty() {
            return Err(Error::InvalidParam("bench needs images, seeds and arms".into()));
        }
        let names: BTreeSet<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        if names.len() != self.arms.len() {
            return Err(Error::InvalidParam("bench arm names must be unique".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub source: MetricsReport,
    pub target: MetricsReport,
    pub meta_train_final_loss: f64,
    pub meta_test_loss_mean: f64,
    pub meta_test_loss_variance: f64,
    /// Variance of the fg/bg hinge part of the meta-test loss, which every
    /// arm optimizes; the contrastive term is left out.
    pub meta_test_detection_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub source_ap50: f64,
    pub target_ap50: f64,
    pub source_ap: f64,
    pub target_ap: f64,
    pub meta_test_loss_variance: f64,
    pub meta_test_detection_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: ArmSpec,
    pub runs: Vec<RunResult>,
    pub mean: ArmSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub shots: usize,
    pub eval_classes: Vec<u32>,
    pub arms: Vec<ArmResult>,
}

impl BenchReport {
    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm.name == name)
    }

    /// Plain-text comparison of the arms.
    pub fn table(&self) -> String {
        let mut s = format!("{}-shot, classes {:?}, mean over seeds\n", self.shots, self.eval_classes);
        s += &format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>12}\n",
            "arm", "src AP50", "tgt AP50", "src AP", "tgt AP", "mt-det var"
        );
        for a in &self.arms {
            let m = &a.mean;
            s += &format!(
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>12.3e}\n",
                a.arm.name, m.source_ap50, m.target_ap50, m.source_ap, m.target_ap, m.meta_test_detection_variance
            );
        }
        s += "\nper seed target AP50\n";
        for a in &self.arms {
            let per: Vec<String> = a.runs.iter().map(|r| format!("{:.4}", r.target.ap50)).collect();
            s += &format!("{:<16} {}\n", a.arm.name, per.join("  "));
        }
        s
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Class ids the evaluator averages over.
pub fn eval_class_set(split: &SplitConfig, which: EvalClasses, all: impl IntoIterator<Item = u32>) -> BTreeSet<u32> {
    match which {
        EvalClasses::Novel => split.novel_class_ids.clone(),
        EvalClasses::Base => split.base_class_ids.clone(),
        EvalClasses::All => all.into_iter().collect(),
    }
}

/// On-disk datasets named by a run config, each domain split into its
/// leading training images and trailing test images.
pub struct RunData {
    pub source_train: DatasetIndex,
    pub source_test: DatasetIndex,
    pub target_train: Option<DatasetIndex>,
    pub target_test: Option<DatasetIndex>,
}

impl RunData {
    /// Source training images merged with target training images, if any.
    pub fn train(&self) -> Result<DatasetIndex> {
        match &self.target_train {
            Some(t) => self.source_train.merge(t),
            None => Ok(self.source_train.clone()),
        }
    }
}

fn load_split(path: &std::path::Path, test_fraction: f64) -> Result<(DatasetIndex, DatasetIndex)> {
    let root = path.parent().unwrap_or(std::path::Path::new("."));
    let index = load_dataset(path, root)?;
    let n = index.images().len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    Ok(split_train_test(&index, n - n_test))
}

pub fn load_run_data(run: &RunConfig) -> Result<RunData> {
    let (source_train, source_test) = load_split(&run.data.source, run.data.test_fraction)?;
    let (target_train, target_test) = match &run.data.target {
        Some(p) => {
            let (a, b) = load_split(p, run.data.test_fraction)?;
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Ok(RunData {
        source_train,
        source_test,
        target_train,
        target_test,
    })
}

/// The few-shot support set drawn from the novel classes of the source
/// training images.
pub fn draw_fewshot(run: &RunConfig, source_train: &DatasetIndex) -> Result<FewShotSets> {
    let novel = DatasetView::by_class(source_train, |c| run.split.is_novel(c)).restrict_domain(Domain::Source);
    enumerate_fewshot(&novel, run.train.sampler.shots, &mut rng::stream(run.seed, purpose::FEWSHOT, 0))
}

/// Data shared by every arm of one seed.
pub struct SeedData {
    pub train: DatasetIndex,
    pub source_train: DatasetIndex,
    pub source_test: DatasetIndex,
    pub target_test: DatasetIndex,
    pub fewshot: FewShotSets,
}

/// Split each domain into its first `n_train` images and the rest.
pub fn split_train_test(index: &DatasetIndex, n_train: usize) -> (DatasetIndex, DatasetIndex) {
    let cut = index.images().get(n_train).map(|e| e.id).unwrap_or(u64::MAX);
    (index.filter_images(|e| e.id < cut), index.filter_images(|e| e.id >= cut))
}

pub fn prepare_seed(run: &RunConfig, seed: u64) -> Result<SeedData> {
    let b = &run.bench;
    let (src, tgt) = generate_pair(
        b.n_train + b.n_test,
        &run.synth.scene,
        &run.synth.source_spec(),
        &run.synth.target_spec(),
        seed,
    )?;
    let (source_train, source_test) = split_train_test(&src, b.n_train);
    let (target_train, target_test) = split_train_test(&tgt, b.n_train);
    let train = source_train.merge(&target_train)?;
    let novel = DatasetView::by_class(&source_train, |c| run.split.is_novel(c)).restrict_domain(Domain::Source);
    let fewshot = enumerate_fewshot(&novel, run.train.sampler.shots, &mut rng::stream(seed, purpose::FEWSHOT, 0))?;
    Ok(SeedData {
        train,
        source_train,
        source_test,
        target_test,
        fewshot,
    })
}

fn evaluate_on(
    index: &DatasetIndex,
    embeddings: &std::collections::BTreeMap<u32, crate::embedding::FeatureVec>,
    params: &crate::embedding::ExtractorParams,
    cfg: &TrainConfig,
    classes: &BTreeSet<u32>,
) -> Result<MetricsReport> {
    let positions: Vec<usize> = (0..index.images().len()).collect();
    let dets = infer_images(index, &positions, embeddings, params, cfg)?;
    let gts: Vec<GroundTruth> = index.annotations().iter().map(GroundTruth::from).collect();
    evaluate(&dets, &gts, classes)
}

/// Train and evaluate one arm on one seed's data.
pub fn run_arm(run: &RunConfig, arm: &ArmSpec, seed: u64, data: &SeedData) -> Result<RunResult> {
    let mut base = run.train.clone();
    base.seed = seed;
    let cfg = arm.configure(&base);
    let base_view = DatasetView::by_class(&data.train, |c| run.split.is_base(c));
    let trained = detector::meta_train(&base_view, detector::init_params(&cfg), &cfg)?;
    let novel_view = DatasetView::by_class(&data.source_train, |c| run.split.is_novel(c));
    let fewshot_view = data.fewshot.view(&novel_view);
    let tuned = detector::meta_test(&fewshot_view, trained.params, &cfg)?;
    let embeddings = class_embeddings(&data.source_train, &data.fewshot, &tuned.params, &cfg)?;
    let classes = eval_class_set(&run.split, run.metrics.classes, data.source_train.classes().keys().copied());
    let source = evaluate_on(&data.source_test, &embeddings, &tuned.params, &cfg, &classes)?;
    let target = evaluate_on(&data.target_test, &embeddings, &tuned.params, &cfg, &classes)?;
    let (meta_test_loss_mean, meta_test_loss_variance) = mean_var(&tuned.loss_trace);
    let (_, meta_test_detection_variance) = mean_var(&tuned.detection_trace);
    Ok(RunResult {
        seed,
        source,
        target,
        meta_train_final_loss: trained.loss_trace.last().copied().unwrap_or(0.0),
        meta_test_loss_mean,
        meta_test_loss_variance,
        meta_test_detection_variance,
    })
}

/// Run every arm on every seed. `progress` receives one line per finished
/// run.
pub fn run_bench(run: &RunConfig, progress: &(dyn Fn(&str) + Sync)) -> Result<BenchReport> {
    run.validate()?;
    let b = &run.bench;
    let mut per_arm: Vec<Vec<RunResult>> = vec![Vec::new(); b.arms.len()];
    for &seed in &b.seeds {
        let data = prepare_seed(run, seed).map_err(|e| e.context(format!("bench seed {seed}")))?;
        let results = b
            .arms
            .par_iter()
            .map(|arm| {
                let r = run_arm(run, arm, seed, &data).map_err(|e| e.context(format!("arm {} seed {seed}", arm.name)))?;
                progress(&format!(
                    "seed {seed} {:<14} source AP50 {:.4}  target AP50 {:.4}",
                    arm.name, r.source.ap50, r.target.ap50
                ));
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        for (slot, r) in per_arm.iter_mut().zip(results) {
            slot.push(r);
        }
    }
    let arms = b
        .arms
        .iter()
        .zip(per_arm)
        .map(|(arm, runs)| {
            let avg = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
            let mean = ArmSummary {
                source_ap50: avg(&|r| r.source.ap50),
                target_ap50: avg(&|r| r.target.ap50),
                source_ap: avg(&|r| r.source.ap),
                target_ap: avg(&|r| r.target.ap),
                meta_test_loss_variance: avg(&|r| r.meta_test_loss_variance),
                meta_test_detection_variance: avg(&|r| r.meta_test_detection_variance),
            };
            ArmResult {
                arm: arm.clone(),
                runs,
                mean,
            }
        })
        .collect();
    Ok(BenchReport {
        shots: run.train.sampler.shots,
        eval_classes: eval_class_set(&run.split, run.metrics.classes, 1..=6).into_iter().collect(),
        arms,
    })
}
