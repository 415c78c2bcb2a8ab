use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::imaging::ImageRGB;

use super::dataset::{Annotation, DatasetIndex, Domain, ImageEntry};
use super::split::SplitConfig;

/// Non-owning filter over a [`DatasetIndex`]: a subset of annotations and the
/// images that carry at least one of them.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    index: &'a DatasetIndex,
    /// annotation positions grouped by image position, both ascending
    by_image: BTreeMap<usize, Vec<usize>>,
    classes: BTreeSet<u32>,
}

impl<'a> DatasetView<'a> {
    /// View over the annotations at the given positions of `index`.
    pub fn from_annotations(index: &'a DatasetIndex, positions: impl IntoIterator<Item = usize>) -> Self {
        let mut by_image: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut classes = BTreeSet::new();
        for pos in positions {
            let ann = &index.annotations()[pos];
            let img = index.image_position(ann.image_id).expect("validated index");
            by_image.entry(img).or_default().push(pos);
            classes.insert(ann.class_id);
        }
        for anns in by_image.values_mut() {
            anns.sort_unstable();
            anns.dedup();
        }
        DatasetView {
            index,
            by_image,
            classes,
        }
    }

    /// Every annotation of the index whose class passes `keep`.
    pub fn by_class(index: &'a DatasetIndex, keep: impl Fn(u32) -> bool) -> Self {
        let positions = index
            .annotations()
            .iter()
            .enumerate()
            .filter(|(_, a)| keep(a.class_id))
            .map(|(i, _)| i);
        Self::from_annotations(index, positions)
    }

    pub fn all(index: &'a DatasetIndex) -> Self {
        Self::by_class(index, |_| true)
    }

    pub fn index(&self) -> &'a DatasetIndex {
        self.index
    }

    pub fn classes(&self) -> &BTreeSet<u32> {
        &self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.is_empty()
    }

    /// Image positions (into the index) present in this view, ascending.
    pub fn image_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_image.keys().copied()
    }

    pub fn image_count(&self) -> usize {
        self.by_image.len()
    }

    pub fn image_entry(&self, position: usize) -> &'a ImageEntry {
        &self.index.images()[position]
    }

    pub fn pixels(&self, position: usize) -> &'a ImageRGB {
        self.index.pixels(position)
    }

    /// Annotation positions in the view, ascending.
    pub fn annotation_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_image.values().flatten().copied()
    }

    pub fn annotations(&self) -> impl Iterator<Item = &'a Annotation> + '_ {
        let all = self.index.annotations();
        self.annotation_positions().map(move |p| &all[p])
    }

    pub fn annotation_count(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    /// Annotations of the view that lie in the image at `position`.
    pub fn annotations_in(&self, position: usize) -> impl Iterator<Item = (usize, &'a Annotation)> + '_ {
        let all = self.index.annotations();
        self.by_image
            .get(&position)
            .into_iter()
            .flatten()
            .map(move |&p| (p, &all[p]))
    }

    /// Narrow to images of one domain.
    pub fn restrict_domain(&self, domain: Domain) -> DatasetView<'a> {
        let positions: Vec<usize> = self
            .by_image
            .iter()
            .filter(|(img, _)| self.index.images()[**img].domain == domain)
            .flat_map(|(_, anns)| anns.iter().copied())
            .collect();
        DatasetView::from_annotations(self.index, positions)
    }
}

/// Split an index into a base-class view and a novel-class view. Images with
/// both kinds of objects appear in both views with filtered annotations.
pub fn partition<'a>(index: &'a DatasetIndex, split: &SplitConfig) -> Result<(DatasetView<'a>, DatasetView<'a>)> {
    split.validate_against(index.classes())?;
    let base = DatasetView::by_class(index, |c| split.is_base(c));
    let novel = DatasetView::by_class(index, |c| split.is_novel(c));
    Ok((base, novel))
}
