#![allow(dead_code)]

use std::collections::BTreeSet;

use xdfsod::config::RunConfig;
use xdfsod::episodic::{DatasetIndex, DatasetView, Domain, EpisodePlan, EpisodeSampler};
use xdfsod::synthgen::generate_pair;

/// Source and target shapes merged into one index.
pub fn mixed_dataset(n_per_domain: usize, seed: u64) -> DatasetIndex {
    let s = RunConfig::default().synth;
    let (src, tgt) = generate_pair(n_per_domain, &s.scene, &s.source_spec(), &s.target_spec(), seed).unwrap();
    src.merge(&tgt).unwrap()
}

/// Check every structural promise of one plan; returns a description of
/// the first violation.
pub fn episode_violation(sampler: &EpisodeSampler<'_>, plan: &EpisodePlan, budget: usize) -> Option<String> {
    let view = sampler.view();
    let index = view.index();
    let shots = sampler.config().shots;
    if plan.positive_class == plan.negative_class {
        return Some("positive and negative class coincide".into());
    }
    if !view.annotations_in(plan.query_image).any(|(_, a)| a.class_id == plan.positive_class) {
        return Some("query has no positive instance".into());
    }
    if index.images()[plan.query_image].domain != plan.query_domain {
        return Some("query domain tag mismatch".into());
    }
    for (supports, class) in [(&plan.positive, plan.positive_class), (&plan.negative, plan.negative_class)] {
        if supports.len() != shots {
            return Some(format!("{} supports instead of {shots}", supports.len()));
        }
        let distinct: BTreeSet<usize> = supports.iter().map(|s| s.annotation).collect();
        if !sampler.config().with_replacement && distinct.len() != supports.len() {
            return Some("repeated support without replacement".into());
        }
        for s in supports {
            let ann = &index.annotations()[s.annotation];
            if ann.class_id != class {
                return Some("support of the wrong class".into());
            }
            let img = index.image_position(ann.image_id).unwrap();
            if img == plan.query_image {
                return Some("query image reused as support source".into());
            }
            if index.images()[img].domain != s.domain {
                return Some("support domain tag mismatch".into());
            }
            if s.domain == Domain::Target && !sampler.allowed_target_images(class).unwrap().contains(&img) {
                return Some("target support outside the class budget".into());
            }
        }
    }
    for class in view.classes() {
        if sampler.allowed_target_images(*class).map_or(0, |s| s.len()) > budget {
            return Some(format!("class {class} exceeds the target budget"));
        }
    }
    None
}

pub fn base_view(index: &DatasetIndex) -> DatasetView<'_> {
    DatasetView::by_class(index, |c| c <= 4)
}
