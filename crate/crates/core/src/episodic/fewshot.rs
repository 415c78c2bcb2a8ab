use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::view::DatasetView;

/// Frozen K-shot support sets, by class, as annotation ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSets {
    pub shots: usize,
    pub per_class: BTreeMap<u32, Vec<u64>>,
}

impl FewShotSets {
    /// Annotation positions of every selected instance, resolved against the
    /// view's index.
    pub fn positions(&self, view: &DatasetView<'_>) -> Vec<usize> {
        let wanted: std::collections::HashSet<u64> = self.per_class.values().flatten().copied().collect();
        view.annotation_positions()
            .filter(|&p| wanted.contains(&view.index().annotations()[p].id))
            .collect()
    }

    /// A view restricted to the selected instances.
    pub fn view<'a>(&self, view: &DatasetView<'a>) -> DatasetView<'a> {
        DatasetView::from_annotations(view.index(), self.positions(view))
    }
}

/// Pick exactly `k` instances per class by a seeded shuffle of each class's
/// instances followed by a prefix, so smaller-K sets are prefixes of
/// larger-K sets drawn with the same seed.
pub fn enumerate_fewshot<R: Rng + ?Sized>(view: &DatasetView<'_>, k: usize, rng: &mut R) -> Result<FewShotSets> {
    if k == 0 {
        return Err(Error::InvalidParam("few-shot K must be at least 1".into()));
    }
    let mut by_class: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for ann in view.annotations() {
        by_class.entry(ann.class_id).or_default().push(ann.id);
    }
    let deficient: Vec<(u32, usize)> = by_class
        .iter()
        .filter(|(_, v)| v.len() < k)
        .map(|(&c, v)| (c, v.len()))
        .collect();
    if !deficient.is_empty() {
        return Err(Error::InsufficientShots { k, classes: deficient });
    }
    for ids in by_class.values_mut() {
        ids.shuffle(rng);
        ids.truncate(k);
    }
    Ok(FewShotSets {
        shots: k,
        per_class: by_class,
    })
}
