use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{crop_support, ImageRGB};

use super::dataset::{Annotation, Domain};
use super::view::DatasetView;

/// How the domains of support crops are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMix {
    SourceOnly,
    TargetOnly,
    /// One domain per class per episode, drawn with probability 1/2 each.
    SingleRandomDomain,
    /// Each support's domain drawn independently with probability 1/2.
    Mixed,
}

/// Mixed-domain training policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdtsPolicy {
    pub query_target_prob: f64,
    pub support_mix_mode: SupportMix,
    /// Maximum number of distinct target images usable per class. Zero means
    /// no target pixel is ever sampled.
    pub few_shot_target_budget: usize,
}

impl Default for MdtsPolicy {
    fn default() -> Self {
        MdtsPolicy {
            query_target_prob: 0.5,
            support_mix_mode: SupportMix::Mixed,
            few_shot_target_budget: 5,
        }
    }
}

impl MdtsPolicy {
    pub fn source_only() -> Self {
        MdtsPolicy {
            query_target_prob: 0.0,
            support_mix_mode: SupportMix::SourceOnly,
            few_shot_target_budget: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.query_target_prob) {
            return Err(Error::InvalidParam(format!(
                "query_target_prob must be in [0, 1], got {}",
                self.query_target_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Supports per class (K).
    pub shots: usize,
    /// Context pixels around each support box.
    pub context_px: u32,
    /// Side of the square support crop.
    pub support_size: u32,
    /// Allow the same instance to be drawn several times within one class's
    /// supports. Needed when fine-tuning on a frozen K-shot set, where the
    /// query's own instance is excluded.
    pub with_replacement: bool,
    /// Whole-plan retries before reporting failure.
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            shots: 5,
            context_px: 4,
            support_size: 32,
            with_replacement: false,
            max_attempts: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportRef {
    /// Annotation position in the index.
    pub annotation: usize,
    pub domain: Domain,
}

/// Index-level description of an episode, before any pixels are touched.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePlan {
    pub query_image: usize,
    pub query_domain: Domain,
    pub positive_class: u32,
    pub negative_class: u32,
    pub positive: Vec<SupportRef>,
    pub negative: Vec<SupportRef>,
}

#[derive(Debug, Clone)]
pub struct SupportCrop {
    pub image: ImageRGB,
    pub domain: Domain,
    pub annotation_id: u64,
    pub image_id: u64,
}

/// One two-way meta-learning task.
#[derive(Debug, Clone)]
pub struct Episode {
    pub query: ImageRGB,
    pub query_image_id: u64,
    pub query_domain: Domain,
    /// Query annotations of the positive class.
    pub query_annotations: Vec<Annotation>,
    pub positive_class: u32,
    pub negative_class: u32,
    pub positive_supports: Vec<SupportCrop>,
    pub negative_supports: Vec<SupportCrop>,
}

/// Mixed-domain episode sampler over a fixed view.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    view: DatasetView<'a>,
    policy: MdtsPolicy,
    config: SamplerConfig,
    classes: Vec<u32>,
    pools: BTreeMap<(u32, Domain), Vec<usize>>,
    allowed_target: BTreeMap<u32, BTreeSet<usize>>,
    source_queries: Vec<usize>,
    target_queries: Vec<usize>,
}

impl<'a> EpisodeSampler<'a> {
    /// `budget_rng` picks which target images each class may use; it is
    /// consumed only at construction.
    pub fn new<R: Rng + ?Sized>(
        view: DatasetView<'a>,
        policy: MdtsPolicy,
        config: SamplerConfig,
        budget_rng: &mut R,
    ) -> Result<Self> {
        policy.validate()?;
        if config.shots == 0 {
            return Err(Error::InvalidParam("shots must be at least 1".into()));
        }
        let classes: Vec<u32> = view.classes().iter().copied().collect();
        if classes.len() < 2 {
            return Err(Error::Sampling(format!(
                "a two-way episode needs at least 2 classes, view has {}",
                classes.len()
            )));
        }
        let index = view.index();
        let mut target_images: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
        let mut pools: BTreeMap<(u32, Domain), Vec<usize>> = BTreeMap::new();
        let mut source_queries = Vec::new();
        for img in view.image_positions() {
            let domain = index.images()[img].domain;
            if domain == Domain::Source {
                source_queries.push(img);
            }
            for (pos, ann) in view.annotations_in(img) {
                pools.entry((ann.class_id, domain)).or_default().push(pos);
                if domain == Domain::Target {
                    target_images.entry(ann.class_id).or_default().insert(img);
                }
            }
        }
        let mut allowed_target = BTreeMap::new();
        for &class in &classes {
            let mut candidates: Vec<usize> = target_images
                .get(&class)
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default();
            candidates.shuffle(budget_rng);
            candidates.truncate(policy.few_shot_target_budget);
            allowed_target.insert(class, candidates.into_iter().collect::<BTreeSet<_>>());
        }
        for ((class, domain), anns) in pools.iter_mut() {
            if *domain == Domain::Target {
                let allowed = &allowed_target[class];
                anns.retain(|&a| {
                    let img = index.image_position(index.annotations()[a].image_id).expect("valid");
                    allowed.contains(&img)
                });
            }
        }
        let target_queries: Vec<usize> = allowed_target
            .values()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(EpisodeSampler {
            view,
            policy,
            config,
            classes,
            pools,
            allowed_target,
            source_queries,
            target_queries,
        })
    }

    pub fn view(&self) -> &DatasetView<'a> {
        &self.view
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Target images class `class` may draw from.
    pub fn allowed_target_images(&self, class: u32) -> Option<&BTreeSet<usize>> {
        self.allowed_target.get(&class)
    }

    fn image_of(&self, ann: usize) -> usize {
        let index = self.view.index();
        index
            .image_position(index.annotations()[ann].image_id)
            .expect("valid index")
    }

    /// Draw an episode plan, retrying up to `max_attempts` times.
    pub fn plan<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EpisodePlan> {
        let mut last = Error::Sampling("no attempts made".into());
        for _ in 0..self.config.max_attempts.max(1) {
            match self.plan_once(rng) {
                Ok(p) => return Ok(p),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn plan_once<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EpisodePlan> {
        let want_target = rng.random::<f64>() < self.policy.query_target_prob;
        let (query_domain, candidates) = match (want_target, self.target_queries.is_empty(), self.source_queries.is_empty()) {
            (true, false, _) | (false, false, true) => (Domain::Target, &self.target_queries),
            (_, _, false) => (Domain::Source, &self.source_queries),
            _ => return Err(Error::Sampling("no query image available".into())),
        };
        let query = *candidates.choose(rng).expect("non-empty");
        let mut present: Vec<u32> = self
            .view
            .annotations_in(query)
            .map(|(_, a)| a.class_id)
            .filter(|c| query_domain == Domain::Source || self.allowed_target[c].contains(&query))
            .collect();
        present.sort_unstable();
        present.dedup();
        let positive_class = *present
            .choose(rng)
            .ok_or_else(|| Error::Sampling(format!("query image {query} has no eligible class")))?;
        let others: Vec<u32> = self.classes.iter().copied().filter(|&c| c != positive_class).collect();
        let negative_class = *others.choose(rng).expect("at least two classes");
        let positive = self.draw_supports(positive_class, query, rng)?;
        let negative = self.draw_supports(negative_class, query, rng)?;
        Ok(EpisodePlan {
            query_image: query,
            query_domain,
            positive_class,
            negative_class,
            positive,
            negative,
        })
    }

    fn eligible(&self, class: u32, domain: Domain, query: usize) -> Vec<usize> {
        self.pools
            .get(&(class, domain))
            .map(|anns| anns.iter().copied().filter(|&a| self.image_of(a) != query).collect())
            .unwrap_or_default()
    }

    fn draw_supports<R: Rng + ?Sized>(&self, class: u32, query: usize, rng: &mut R) -> Result<Vec<SupportRef>> {
        let k = self.config.shots;
        let coin = |rng: &mut R| {
            if rng.random::<f64>() < 0.5 {
                Domain::Target
            } else {
                Domain::Source
            }
        };
        let (mut n_target, flexible) = match self.policy.support_mix_mode {
            SupportMix::SourceOnly => (0, false),
            SupportMix::TargetOnly => (k, false),
            SupportMix::SingleRandomDomain => (if coin(rng) == Domain::Target { k } else { 0 }, true),
            SupportMix::Mixed => ((0..k).filter(|_| coin(rng) == Domain::Target).count(), true),
        };
        let src = self.eligible(class, Domain::Source, query);
        let tgt = self.eligible(class, Domain::Target, query);
        let (cap_s, cap_t) = if self.config.with_replacement {
            let cap = |pool: &Vec<usize>| if pool.is_empty() { 0 } else { k };
            (cap(&src), cap(&tgt))
        } else {
            (src.len(), tgt.len())
        };
        if flexible {
            // shift supports to the other domain when one runs short
            if n_target > cap_t {
                n_target = cap_t;
            }
            if k - n_target > cap_s {
                n_target = (k - cap_s).min(cap_t);
            }
        }
        let n_source = k - n_target;
        if n_source > cap_s || n_target > cap_t {
            return Err(Error::Sampling(format!(
                "class {class}: need {n_source} source + {n_target} target supports, \
                 have {} source + {} target eligible instances",
                src.len(),
                tgt.len()
            )));
        }
        let mut out = Vec::with_capacity(k);
        for (pool, n, domain) in [(&src, n_source, Domain::Source), (&tgt, n_target, Domain::Target)] {
            if n == 0 {
                continue;
            }
            if self.config.with_replacement {
                out.extend((0..n).map(|_| SupportRef {
                    annotation: *pool.choose(rng).expect("non-empty"),
                    domain,
                }));
            } else {
                out.extend(index::sample(rng, pool.len(), n).into_iter().map(|i| SupportRef {
                    annotation: pool[i],
                    domain,
                }));
            }
        }
        Ok(out)
    }

    /// Cut the support crops and gather the query for a plan.
    pub fn materialize(&self, plan: &EpisodePlan) -> Result<Episode> {
        let index = self.view.index();
        let entry = &index.images()[plan.query_image];
        let query_annotations = self
            .view
            .annotations_in(plan.query_image)
            .filter(|(_, a)| a.class_id == plan.positive_class)
            .map(|(_, a)| *a)
            .collect();
        let crops = |refs: &[SupportRef]| -> Result<Vec<SupportCrop>> {
            refs.iter()
                .map(|r| {
                    let ann = &index.annotations()[r.annotation];
                    let img = index.pixels(self.image_of(r.annotation));
                    let crop = crop_support(img, &ann.bbox, self.config.context_px, self.config.support_size)?;
                    Ok(SupportCrop {
                        image: crop,
                        domain: r.domain,
                        annotation_id: ann.id,
                        image_id: ann.image_id,
                    })
                })
                .collect()
        };
        Ok(Episode {
            query: index.pixels(plan.query_image).clone(),
            query_image_id: entry.id,
            query_domain: plan.query_domain,
            query_annotations,
            positive_class: plan.positive_class,
            negative_class: plan.negative_class,
            positive_supports: crops(&plan.positive)?,
            negative_supports: crops(&plan.negative)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Episode> {
        let plan = self.plan(rng)?;
        self.materialize(&plan)
    }
}

/// One-off episode draw. Builds a sampler per call; use [`EpisodeSampler`]
/// in loops. Target budgets are selected from the same stream.
pub fn sample_episode<R: Rng + ?Sized>(
    view: &DatasetView<'_>,
    policy: &MdtsPolicy,
    shots: usize,
    support_size: u32,
    rng: &mut R,
) -> Result<Episode> {
    let config = SamplerConfig {
        shots,
        support_size,
        ..SamplerConfig::default()
    };
    let sampler = EpisodeSampler::new(view.clone(), policy.clone(), config, rng)?;
    sampler.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use crate::episodic::{DatasetIndex, ImageEntry};
    use crate::rng;

    /// `n` images per domain, each with one instance of every class in `classes`.
    fn dataset(n: u64, classes: &[u32]) -> DatasetIndex {
        let table = classes.iter().map(|&c| (c, format!("c{c}"))).collect();
        let mut images = Vec::new();
        let mut anns = Vec::new();
        for i in 0..2 * n {
            let domain = if i < n { Domain::Source } else { Domain::Target };
            images.push((
                ImageEntry {
                    id: i,
                    file_name: format!("{i}.png"),
                    width: 48,
                    height: 48,
                    domain,
                },
                ImageRGB::filled(48, 48, [i as u8, 0, 0]),
            ));
            for (j, &c) in classes.iter().enumerate() {
                anns.push(Annotation {
                    id: anns.len() as u64,
                    image_id: i,
                    class_id: c,
                    bbox: BBox::new(2.0 + 12.0 * j as f64, 4.0, 10.0, 10.0),
                });
            }
        }
        DatasetIndex::from_parts(images, anns, table).unwrap()
    }

    fn sampler<'a>(idx: &'a DatasetIndex, policy: MdtsPolicy, shots: usize) -> EpisodeSampler<'a> {
        let cfg = SamplerConfig {
            shots,
            ..SamplerConfig::default()
        };
        EpisodeSampler::new(DatasetView::all(idx), policy, cfg, &mut rng::stream(0, 9, 0)).unwrap()
    }

    #[test]
    fn two_classes_force_the_negative() {
        let idx = dataset(6, &[1, 2]);
        let s = sampler(&idx, MdtsPolicy::default(), 2);
        let mut r = rng::stream(1, 0, 0);
        for _ in 0..200 {
            let p = s.plan(&mut r).unwrap();
            assert_ne!(p.positive_class, p.negative_class);
            assert!([1, 2].contains(&p.negative_class));
        }
    }

    #[test]
    fn source_only_policy_never_touches_target() {
        let idx = dataset(6, &[1, 2, 3]);
        let s = sampler(&idx, MdtsPolicy::source_only(), 3);
        let mut r = rng::stream(2, 0, 0);
        for _ in 0..1000 {
            let p = s.plan(&mut r).unwrap();
            assert_eq!(p.query_domain, Domain::Source);
            assert!(p.positive.iter().chain(&p.negative).all(|s| s.domain == Domain::Source));
        }
    }

    #[test]
    fn budget_limits_distinct_target_images_per_class() {
        let idx = dataset(10, &[1, 2, 3]);
        let policy = MdtsPolicy {
            query_target_prob: 0.5,
            support_mix_mode: SupportMix::Mixed,
            few_shot_target_budget: 3,
        };
        let s = sampler(&idx, policy, 2);
        let mut used: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
        let mut r = rng::stream(3, 0, 0);
        for _ in 0..2000 {
            let p = s.plan(&mut r).unwrap();
            if p.query_domain == Domain::Target {
                used.entry(p.positive_class).or_default().insert(p.query_image);
            }
            for (class, refs) in [(p.positive_class, &p.positive), (p.negative_class, &p.negative)] {
                for sref in refs.iter().filter(|s| s.domain == Domain::Target) {
                    used.entry(class).or_default().insert(s.image_of(sref.annotation));
                }
            }
        }
        for (class, imgs) in &used {
            assert!(imgs.len() <= 3, "class {class} used {} target images", imgs.len());
            assert!(imgs.is_subset(s.allowed_target_images(*class).unwrap()));
        }
    }

    #[test]
    fn insufficient_supports_is_a_structured_error() {
        let idx = dataset(2, &[1, 2]);
        // 2 source images: excluding the query leaves 1 instance per class
        let s = sampler(&idx, MdtsPolicy::source_only(), 2);
        let err = s.plan(&mut rng::stream(4, 0, 0)).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
        // with replacement the same view works
        let cfg = SamplerConfig {
            shots: 2,
            with_replacement: true,
            ..SamplerConfig::default()
        };
        let s = EpisodeSampler::new(DatasetView::all(&idx), MdtsPolicy::source_only(), cfg, &mut rng::stream(0, 0, 0))
            .unwrap();
        let p = s.plan(&mut rng::stream(4, 0, 0)).unwrap();
        assert_eq!(p.positive.len(), 2);
        assert!(p.positive.iter().all(|r| s.image_of(r.annotation) != p.query_image));
    }

    #[test]
    fn single_class_view_is_rejected() {
        let idx = dataset(3, &[1]);
        let err = EpisodeSampler::new(
            DatasetView::all(&idx),
            MdtsPolicy::default(),
            SamplerConfig::default(),
            &mut rng::stream(0, 0, 0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn materialized_episode_has_crops_and_positive_annotations() {
        let idx = dataset(5, &[1, 2, 3]);
        let s = sampler(&idx, MdtsPolicy::default(), 3);
        let ep = s.sample(&mut rng::stream(5, 0, 0)).unwrap();
        assert_eq!(ep.positive_supports.len(), 3);
        assert_eq!(ep.negative_supports.len(), 3);
        assert!(!ep.query_annotations.is_empty());
        assert!(ep.query_annotations.iter().all(|a| a.class_id == ep.positive_class));
        for c in ep.positive_supports.iter().chain(&ep.negative_supports) {
            assert_eq!((c.image.width(), c.image.height()), (32, 32));
            assert_ne!(c.image_id, ep.query_image_id);
        }
    }

    #[test]
    fn free_function_matches_contract() {
        let idx = dataset(5, &[1, 2]);
        let view = DatasetView::all(&idx);
        let ep = sample_episode(&view, &MdtsPolicy::source_only(), 2, 16, &mut rng::stream(6, 0, 0)).unwrap();
        assert_eq!(ep.positive_supports[0].image.width(), 16);
        assert_eq!(ep.query_domain, Domain::Source);
    }
}
