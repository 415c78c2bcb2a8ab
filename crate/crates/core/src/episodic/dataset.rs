use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::imaging::HasBox;
use crate::imaging::ImageRGB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub domain: Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    #[serde(rename = "category_id")]
    pub class_id: u32,
    pub bbox: BBox,
}

impl HasBox for Annotation {
    fn bbox(&self) -> BBox {
        self.bbox
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Category {
    id: u32,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    images: Vec<ImageEntry>,
    #[serde(default)]
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
}

/// A validated, immutable dataset with pixels held in memory.
///
/// Images are ordered by id and annotations by `(image_id, file order)`.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    images: Vec<ImageEntry>,
    pixels: Vec<ImageRGB>,
    annotations: Vec<Annotation>,
    classes: BTreeMap<u32, String>,
    image_pos: HashMap<u64, usize>,
}

impl DatasetIndex {
    /// Validate and assemble an index from already-decoded images.
    pub fn from_parts(
        images: Vec<(ImageEntry, ImageRGB)>,
        annotations: Vec<Annotation>,
        classes: BTreeMap<u32, String>,
    ) -> Result<Self> {
        let mut images = images;
        images.sort_by_key(|(e, _)| e.id);
        let mut image_pos = HashMap::with_capacity(images.len());
        for (i, (entry, img)) in images.iter().enumerate() {
            if image_pos.insert(entry.id, i).is_some() {
                return Err(Error::DuplicateId(entry.id));
            }
            if img.width() != entry.width || img.height() != entry.height {
                return Err(Error::InvalidImage(format!(
                    "image {} declared {}x{} but decoded {}x{}",
                    entry.id,
                    entry.width,
                    entry.height,
                    img.width(),
                    img.height()
                )));
            }
        }
        let mut seen = HashSet::with_capacity(annotations.len());
        let mut checked = Vec::with_capacity(annotations.len());
        for mut ann in annotations {
            if !seen.insert(ann.id) {
                return Err(Error::DuplicateId(ann.id));
            }
            let Some(&pos) = image_pos.get(&ann.image_id) else {
                return Err(Error::UnknownImage {
                    annotation_id: ann.id,
                    image_id: ann.image_id,
                });
            };
            if !classes.contains_key(&ann.class_id) {
                return Err(Error::UnknownClass(ann.class_id).context(format!("annotation {}", ann.id)));
            }
            if !ann.bbox.is_finite() || ann.bbox.w <= 0.0 || ann.bbox.h <= 0.0 {
                return Err(Error::MalformedGeometry {
                    annotation_id: ann.id,
                    reason: format!("bbox {:?} needs positive finite extent", ann.bbox.to_array()),
                });
            }
            let entry = &images[pos].0;
            let clipped = ann.bbox.clip(entry.width, entry.height);
            if clipped.area() <= 0.0 {
                return Err(Error::MalformedGeometry {
                    annotation_id: ann.id,
                    reason: format!(
                        "bbox {:?} lies outside the {}x{} image",
                        ann.bbox.to_array(),
                        entry.width,
                        entry.height
                    ),
                });
            }
            ann.bbox = clipped;
            checked.push(ann);
        }
        // stable: keeps file order within an image
        checked.sort_by_key(|a| a.image_id);
        let (images, pixels) = images.into_iter().unzip();
        Ok(DatasetIndex {
            images,
            pixels,
            annotations: checked,
            classes,
            image_pos,
        })
    }

    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn classes(&self) -> &BTreeMap<u32, String> {
        &self.classes
    }

    pub fn image_position(&self, image_id: u64) -> Option<usize> {
        self.image_pos.get(&image_id).copied()
    }

    pub fn pixels(&self, position: usize) -> &ImageRGB {
        &self.pixels[position]
    }

    pub fn pixels_by_id(&self, image_id: u64) -> Option<&ImageRGB> {
        self.image_position(image_id).map(|p| &self.pixels[p])
    }

    /// Keep only the images accepted by `keep`, with their annotations.
    pub fn filter_images(&self, mut keep: impl FnMut(&ImageEntry) -> bool) -> DatasetIndex {
        let kept: HashSet<u64> = self.images.iter().filter(|e| keep(e)).map(|e| e.id).collect();
        let images = self
            .images
            .iter()
            .zip(&self.pixels)
            .filter(|(e, _)| kept.contains(&e.id))
            .map(|(e, p)| (e.clone(), p.clone()))
            .collect();
        let anns = self
            .annotations
            .iter()
            .filter(|a| kept.contains(&a.image_id))
            .copied()
            .collect();
        DatasetIndex::from_parts(images, anns, self.classes.clone()).expect("subset of a valid index")
    }

    /// Union of two indexes with disjoint image and annotation ids and
    /// compatible class tables.
    pub fn merge(&self, other: &DatasetIndex) -> Result<DatasetIndex> {
        let mut classes = self.classes.clone();
        for (id, name) in &other.classes {
            match classes.get(id) {
                Some(existing) if existing != name => {
                    return Err(Error::InvalidSplit(format!(
                        "class {id} named {existing:?} and {name:?} in merged datasets"
                    )))
                }
                _ => {
                    classes.insert(*id, name.clone());
                }
            }
        }
        let images = self
            .images
            .iter()
            .zip(&self.pixels)
            .chain(other.images.iter().zip(&other.pixels))
            .map(|(e, p)| (e.clone(), p.clone()))
            .collect();
        let anns = self.annotations.iter().chain(&other.annotations).copied().collect();
        DatasetIndex::from_parts(images, anns, classes)
    }

    pub fn annotation_json(&self) -> serde_json::Value {
        let file = AnnotationFile {
            images: self.images.clone(),
            annotations: self.annotations.clone(),
            categories: self
                .classes
                .iter()
                .map(|(&id, name)| Category {
                    id,
                    name: name.clone(),
                })
                .collect(),
        };
        serde_json::to_value(file).expect("serializable")
    }

    /// Write `annotations.json` into `dir` and every image as PNG under
    /// `dir/<file_name>`.
    pub fn save(&self, dir: &Path, annotation_file: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (entry, img) in self.images.iter().zip(&self.pixels) {
            let path = dir.join(&entry.file_name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            img.save_png(&path)?;
        }
        let ann_path = dir.join(annotation_file);
        let text = serde_json::to_string_pretty(&self.annotation_json())?;
        std::fs::write(&ann_path, text).map_err(|e| Error::io(&ann_path, e))?;
        Ok(ann_path)
    }
}

/// Parse an annotation file without decoding images. Annotations must
/// reference listed images and categories.
pub fn load_annotations(annotation_path: &Path) -> Result<(Vec<ImageEntry>, Vec<Annotation>, BTreeMap<u32, String>)> {
    let text = std::fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text)
        .map_err(|e| Error::from(e).context(format!("parsing {}", annotation_path.display())))?;
    let classes: BTreeMap<u32, String> = file.categories.into_iter().map(|c| (c.id, c.name)).collect();
    let ids: HashSet<u64> = file.images.iter().map(|e| e.id).collect();
    for a in &file.annotations {
        if !ids.contains(&a.image_id) {
            return Err(Error::UnknownImage {
                annotation_id: a.id,
                image_id: a.image_id,
            });
        }
        if !classes.contains_key(&a.class_id) {
            return Err(Error::UnknownClass(a.class_id));
        }
    }
    Ok((file.images, file.annotations, classes))
}

/// Parse an annotation file and decode every referenced image below
/// `image_root`.
pub fn load_dataset(annotation_path: &Path, image_root: &Path) -> Result<DatasetIndex> {
    let text = std::fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text)
        .map_err(|e| Error::from(e).context(format!("parsing {}", annotation_path.display())))?;
    let mut classes = BTreeMap::new();
    for c in file.categories {
        if classes.insert(c.id, c.name).is_some() {
            return Err(Error::DuplicateId(u64::from(c.id)).context("categories"));
        }
    }
    let mut images = Vec::with_capacity(file.images.len());
    for entry in file.images {
        let path = image_root.join(&entry.file_name);
        if !path.is_file() {
            return Err(Error::MissingImage {
                image_id: entry.id,
                path,
            });
        }
        let img = ImageRGB::load_png(&path)?;
        images.push((entry, img));
    }
    DatasetIndex::from_parts(images, file.annotations, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn entry(id: u64, domain: Domain) -> (ImageEntry, ImageRGB) {
        (
            ImageEntry {
                id,
                file_name: format!("{id}.png"),
                width: 16,
                height: 16,
                domain,
            },
            ImageRGB::filled(16, 16, [id as u8, 0, 0]),
        )
    }

    fn classes() -> BTreeMap<u32, String> {
        [(1, "a".to_string()), (2, "b".to_string())].into_iter().collect()
    }

    fn ann(id: u64, image_id: u64, class_id: u32) -> Annotation {
        Annotation {
            id,
            image_id,
            class_id,
            bbox: BBox::new(1.0, 1.0, 4.0, 4.0),
        }
    }

    #[test]
    fn empty_annotations_are_valid() {
        let idx = DatasetIndex::from_parts(vec![entry(1, Domain::Source)], vec![], classes()).unwrap();
        assert_eq!(idx.images().len(), 1);
        assert!(idx.annotations().is_empty());
    }

    #[test]
    fn unknown_image_is_named() {
        let err = DatasetIndex::from_parts(vec![entry(1, Domain::Source)], vec![ann(5, 42, 1)], classes())
            .unwrap_err();
        assert!(matches!(err, Error::UnknownImage { image_id: 42, .. }));
        assert!(err.to_string().contains("42"));
    }

    #[test]
    fn unknown_class_and_bad_geometry() {
        let imgs = || vec![entry(1, Domain::Source)];
        assert!(DatasetIndex::from_parts(imgs(), vec![ann(1, 1, 9)], classes()).is_err());
        let mut bad = ann(1, 1, 1);
        bad.bbox.w = 0.0;
        assert!(matches!(
            DatasetIndex::from_parts(imgs(), vec![bad], classes()),
            Err(Error::MalformedGeometry { .. })
        ));
        let mut outside = ann(1, 1, 1);
        outside.bbox = BBox::new(20.0, 20.0, 3.0, 3.0);
        assert!(DatasetIndex::from_parts(imgs(), vec![outside], classes()).is_err());
        // partially outside boxes are clipped
        let mut partial = ann(1, 1, 1);
        partial.bbox = BBox::new(14.0, 0.0, 5.0, 3.0);
        let idx = DatasetIndex::from_parts(imgs(), vec![partial], classes()).unwrap();
        assert_eq!(idx.annotations()[0].bbox, BBox::new(14.0, 0.0, 2.0, 3.0));
    }

    #[test]
    fn ordering_is_by_image_then_file_order() {
        let imgs = vec![entry(3, Domain::Source), entry(1, Domain::Target)];
        let anns = vec![ann(10, 3, 1), ann(11, 1, 2), ann(12, 3, 2), ann(13, 1, 1)];
        let idx = DatasetIndex::from_parts(imgs, anns, classes()).unwrap();
        let ids: Vec<u64> = idx.images().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![1, 3]);
        let aids: Vec<u64> = idx.annotations().iter().map(|a| a.id).collect();
        assert_eq!(aids, vec![11, 13, 10, 12]);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = DatasetIndex::from_parts(
            vec![entry(1, Domain::Source), entry(2, Domain::Target)],
            vec![ann(1, 1, 1), ann(2, 2, 2)],
            classes(),
        )
        .unwrap();
        let path = idx.save(dir.path(), "annotations.json").unwrap();
        let back = load_dataset(&path, dir.path()).unwrap();
        assert_eq!(back.images(), idx.images());
        assert_eq!(back.annotations(), idx.annotations());
        assert_eq!(back.pixels(1), idx.pixels(1));

        std::fs::remove_file(dir.path().join("2.png")).unwrap();
        assert!(matches!(
            load_dataset(&path, dir.path()),
            Err(Error::MissingImage { image_id: 2, .. })
        ));
    }

    #[test]
    fn merge_rejects_id_collisions() {
        let a = DatasetIndex::from_parts(vec![entry(1, Domain::Source)], vec![], classes()).unwrap();
        let b = DatasetIndex::from_parts(vec![entry(1, Domain::Target)], vec![], classes()).unwrap();
        assert!(a.merge(&b).is_err());
        let c = DatasetIndex::from_parts(vec![entry(2, Domain::Target)], vec![], classes()).unwrap();
        assert_eq!(a.merge(&c).unwrap().images().len(), 2);
    }
}
