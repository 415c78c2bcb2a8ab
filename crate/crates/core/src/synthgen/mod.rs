//! Paired-domain synthetic shape scenes with a controllable domain gap.

mod shapes;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::{iou_or_zero, BBox};
use crate::episodic::{Annotation, DatasetIndex, Domain, ImageEntry, SplitConfig};
use crate::error::{Error, Result};
use crate::imaging::texture::Background;
use crate::imaging::{add_gaussian_noise, gaussian_blur, ImageRGB};
use crate::rng::{self, purpose};

pub use shapes::Shape;

/// Rejections tolerated per object before placement gives up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Offset added to target-domain image and annotation ids.
pub const TARGET_ID_OFFSET: u64 = 1_000_000;

/// Linear brightness ramp across the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Illumination {
    /// Direction of increasing brightness, degrees counter-clockwise from +x.
    pub angle_deg: f64,
    /// Peak-to-peak swing as a fraction of 255.
    pub strength: f64,
}

/// How one domain renders a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub background: Background,
    #[serde(default)]
    pub color_shift: [f64; 3],
    #[serde(default)]
    pub illumination: Option<Illumination>,
    #[serde(default)]
    pub blur_sigma: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        self.background.validate()?;
        if self.color_shift.iter().any(|c| !(-255.0..=255.0).contains(c)) {
            return Err(Error::InvalidParam("color shift must lie in [-255, 255]".into()));
        }
        if let Some(il) = &self.illumination {
            if !il.angle_deg.is_finite() || !(0.0..=1.0).contains(&il.strength) {
                return Err(Error::InvalidParam("illumination strength must lie in [0, 1]".into()));
            }
        }
        if !(0.0..=10.0).contains(&self.blur_sigma) || !(0.0..=128.0).contains(&self.noise_sigma) {
            return Err(Error::InvalidParam("blur sigma in [0, 10] and noise sigma in [0, 128] required".into()));
        }
        Ok(())
    }

    /// Flat mid-gray background, no post-effects.
    pub fn source_default() -> Self {
        DomainSpec {
            background: Background::Flat { color: [40, 40, 40] },
            color_shift: [0.0; 3],
            illumination: None,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
        }
    }
}

/// Named source/target pairings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPreset {
    None,
    Mild,
    Default,
    Harsh,
}

impl std::str::FromStr for GapPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GapPreset::None),
            "mild" => Ok(GapPreset::Mild),
            "default" => Ok(GapPreset::Default),
            "harsh" => Ok(GapPreset::Harsh),
            other => Err(Error::Config(format!(
                "unknown gap preset {other:?} (expected none, mild, default or harsh)"
            ))),
        }
    }
}

impl GapPreset {
    pub fn source(self) -> DomainSpec {
        DomainSpec::source_default()
    }

    pub fn target(self) -> DomainSpec {
        match self {
            GapPreset::None => self.source(),
            GapPreset::Mild => DomainSpec {
                background: Background::SmoothNoise {
                    base: [80, 80, 80],
                    amplitude: 20.0,
                    scale: 12,
                },
                color_shift: [15.0, -10.0, -5.0],
                illumination: None,
                blur_sigma: 0.4,
                noise_sigma: 3.0,
            },
            GapPreset::Default => DomainSpec {
                background: Background::Checker {
                    a: [20, 20, 20],
                    b: [100, 100, 100],
                    cell: 12,
                },
                color_shift: [30.0, -20.0, -10.0],
                illumination: None,
                blur_sigma: 0.8,
                noise_sigma: 6.0,
            },
            GapPreset::Harsh => DomainSpec {
                background: Background::Checker {
                    a: [15, 15, 15],
                    b: [120, 120, 120],
                    cell: 10,
                },
                color_shift: [50.0, -40.0, -30.0],
                illumination: Some(Illumination {
                    angle_deg: 30.0,
                    strength: 0.3,
                }),
                blur_sigma: 1.2,
                noise_sigma: 12.0,
            },
        }
    }
}

/// Scene layout parameters shared by both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Inclusive range of objects per scene.
    pub objects: [usize; 2],
    pub classes: Vec<u32>,
    /// Inclusive range of the nominal shape size in pixels.
    pub size: [u32; 2],
    /// Largest IoU allowed between two placed objects.
    pub max_overlap: f64,
    /// HSV saturation and value ranges of object fill colors. The defaults
    /// keep every channel of a fill above the default backgrounds, so two
    /// objects of one shape correlate positively whatever their hues.
    pub fill_saturation: [f64; 2],
    pub fill_value: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            objects: [1, 3],
            classes: Shape::ALL.iter().map(|s| s.class_id()).collect(),
            size: [14, 24],
            max_overlap: 0.0,
            fill_saturation: [0.2, 0.5],
            fill_value: [0.8, 1.0],
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(format!("scene spec: {m}")));
        if self.width == 0 || self.height == 0 {
            return bad("canvas must be non-empty");
        }
        if self.objects[0] > self.objects[1] {
            return bad("objects range is reversed");
        }
        if self.size[0] < 2 || self.size[0] > self.size[1] {
            return bad("size range must satisfy 2 <= min <= max");
        }
        if self.size[1] > self.width.min(self.height) {
            return bad("objects do not fit the canvas");
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return bad("overlap limit must lie in [0, 1]");
        }
        if self.objects[1] > 0 && self.classes.is_empty() {
            return bad("class set is empty");
        }
        if let Some(c) = self.classes.iter().find(|&&c| Shape::from_class_id(c).is_none()) {
            return Err(Error::UnknownClass(*c).context("scene spec"));
        }
        let in_unit = |r: &[f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0;
        if !in_unit(&self.fill_saturation) || !in_unit(&self.fill_value) {
            return bad("fill ranges must be ordered within [0, 1]");
        }
        Ok(())
    }
}

/// One placed object before rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedObject {
    pub shape: Shape,
    /// Top-left corner of the nominal square.
    pub x: u32,
    pub y: u32,
    pub size: u32,
    pub color: [u8; 3],
    /// Tight bounds of the rasterized mask.
    pub bbox: BBox,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn mask_bounds(mask: &[bool], size: u32) -> Option<(u32, u32, u32, u32)> {
    let mut b: Option<(u32, u32, u32, u32)> = None;
    for y in 0..size {
        for x in 0..size {
            if mask[(y * size + x) as usize] {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b
}

fn place_objects<R: Rng + ?Sized>(scene: &SceneSpec, rng: &mut R) -> Result<Vec<PlacedObject>> {
    let count = rng.random_range(scene.objects[0]..=scene.objects[1]);
    let mut placed: Vec<PlacedObject> = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = Shape::from_class_id(scene.classes[rng.random_range(0..scene.classes.len())]).expect("validated");
        let hue = rng.random_range(0.0..360.0);
        let sat = rng.random_range(scene.fill_saturation[0]..=scene.fill_saturation[1]);
        let val = rng.random_range(scene.fill_value[0]..=scene.fill_value[1]);
        let color = hsv_to_rgb(hue, sat, val);
        let mut attempts = 0;
        let object = loop {
            if attempts == MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::Placement { attempts });
            }
            attempts += 1;
            let size = rng.random_range(scene.size[0]..=scene.size[1]);
            let x = rng.random_range(0..=scene.width - size);
            let y = rng.random_range(0..=scene.height - size);
            let mask = shape.mask(size);
            let Some((x0, y0, x1, y1)) = mask_bounds(&mask, size) else {
                continue;
            };
            let bbox = BBox::new(
                f64::from(x + x0),
                f64::from(y + y0),
                f64::from(x1 - x0 + 1),
                f64::from(y1 - y0 + 1),
            );
            let clear = placed.iter().all(|p| {
                let o = iou_or_zero(&p.bbox, &bbox);
                if scene.max_overlap == 0.0 {
                    o == 0.0
                } else {
                    o <= scene.max_overlap
                }
            });
            if clear {
                break PlacedObject {
                    shape,
                    x,
                    y,
                    size,
                    color,
                    bbox,
                };
            }
        };
        placed.push(object);
    }
    Ok(placed)
}

fn apply_domain_effects<R: Rng + ?Sized>(img: ImageRGB, domain: &DomainSpec, rng: &mut R) -> Result<ImageRGB> {
    let (w, h) = (img.width(), img.height());
    let mut img = img;
    if domain.color_shift != [0.0; 3] || domain.illumination.is_some() {
        let ramp = domain.illumination.map(|il| {
            let (s, c) = il.angle_deg.to_radians().sin_cos();
            // project onto the direction and normalize the projection to [0, 1]
            let corners = [(0.0, 0.0), (f64::from(w), 0.0), (0.0, f64::from(h)), (f64::from(w), f64::from(h))];
            let proj = move |x: f64, y: f64| x * c - y * s;
            let lo = corners.iter().map(|&(x, y)| proj(x, y)).fold(f64::INFINITY, f64::min);
            let hi = corners.iter().map(|&(x, y)| proj(x, y)).fold(f64::NEG_INFINITY, f64::max);
            (proj, lo, hi, il.strength)
        });
        let data = img.data_mut();
        for y in 0..h {
            for x in 0..w {
                let mut offset = 0.0;
                if let Some((proj, lo, hi, strength)) = &ramp {
                    let t = (proj(f64::from(x) + 0.5, f64::from(y) + 0.5) - lo) / (hi - lo);
                    offset = strength * 255.0 * (t - 0.5);
                }
                let i = ((y * w + x) * 3) as usize;
                for ch in 0..3 {
                    let v = f64::from(data[i + ch]) + domain.color_shift[ch] + offset;
                    data[i + ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    if domain.blur_sigma > 0.0 {
        let k = 2 * (3.0 * domain.blur_sigma).ceil() as usize + 1;
        img = gaussian_blur(&img, domain.blur_sigma, k)?;
    }
    if domain.noise_sigma > 0.0 {
        img = add_gaussian_noise(&img, domain.noise_sigma, rng)?;
    }
    Ok(img)
}

/// Render one scene. Annotation ids and image ids are left at zero for the
/// caller to assign.
pub fn generate_scene<R: Rng + ?Sized>(
    scene: &SceneSpec,
    domain: &DomainSpec,
    rng: &mut R,
) -> Result<(ImageRGB, Vec<Annotation>)> {
    scene.validate()?;
    domain.validate()?;
    let mut img = domain.background.render(scene.width, scene.height, rng);
    let objects = place_objects(scene, rng)?;
    for o in &objects {
        let mask = o.shape.mask(o.size);
        for my in 0..o.size {
            for mx in 0..o.size {
                if mask[(my * o.size + mx) as usize] {
                    img.set_pixel(o.x + mx, o.y + my, o.color);
                }
            }
        }
    }
    let img = apply_domain_effects(img, domain, rng)?;
    let annotations = objects
        .iter()
        .map(|o| Annotation {
            id: 0,
            image_id: 0,
            class_id: o.shape.class_id(),
            bbox: o.bbox,
        })
        .collect();
    Ok((img, annotations))
}

pub fn shape_classes() -> BTreeMap<u32, String> {
    Shape::ALL.iter().map(|s| (s.class_id(), s.name().to_string())).collect()
}

fn domain_key(scene: &SceneSpec, domain: &DomainSpec) -> u64 {
    let bytes = serde_json::to_vec(&(scene, domain)).expect("serializable");
    rng::fingerprint(&bytes)
}

/// Generate `n_images` scenes of one domain in memory. Image `i` draws from
/// its own stream keyed by the seed, the specs and `i`, so equal specs give
/// equal pixels and different specs give independent scenes.
pub fn generate_domain(
    n_images: usize,
    scene: &SceneSpec,
    spec: &DomainSpec,
    domain: Domain,
    seed: u64,
) -> Result<DatasetIndex> {
    scene.validate()?;
    spec.validate()?;
    let offset = match domain {
        Domain::Source => 0,
        Domain::Target => TARGET_ID_OFFSET,
    };
    let key = seed ^ domain_key(scene, spec);
    let mut images = Vec::with_capacity(n_images);
    let mut annotations = Vec::new();
    for i in 0..n_images {
        let mut r = rng::stream(key, purpose::SYNTH_SCENE, i as u64);
        let (img, anns) = generate_scene(scene, spec, &mut r).map_err(|e| e.context(format!("{domain} scene {i}")))?;
        let id = offset + i as u64 + 1;
        for a in anns {
            annotations.push(Annotation {
                id: offset + annotations.len() as u64 + 1,
                image_id: id,
                ..a
            });
        }
        let entry = ImageEntry {
            id,
            file_name: format!("images/{id:07}.png"),
            width: scene.width,
            height: scene.height,
            domain,
        };
        images.push((entry, img));
    }
    DatasetIndex::from_parts(images, annotations, shape_classes())
}

/// Both domains in memory.
pub fn generate_pair(
    n_images: usize,
    scene: &SceneSpec,
    source: &DomainSpec,
    target: &DomainSpec,
    seed: u64,
) -> Result<(DatasetIndex, DatasetIndex)> {
    Ok((
        generate_domain(n_images, scene, source, Domain::Source, seed)?,
        generate_domain(n_images, scene, target, Domain::Target, seed)?,
    ))
}

/// Generate both domains and write them as `out_dir/{source,target}/`,
/// each holding `annotations.json` and `images/*.png`.
pub fn generate_dataset(
    n_images: usize,
    scene: &SceneSpec,
    source: &DomainSpec,
    target: &DomainSpec,
    split: &SplitConfig,
    out_dir: &Path,
    seed: u64,
) -> Result<(DatasetIndex, DatasetIndex)> {
    let classes = shape_classes();
    split.validate_against(&classes)?;
    if split.base_class_ids.len() + split.novel_class_ids.len() != classes.len() {
        return Err(Error::InvalidSplit("split must cover all six shape classes".into()));
    }
    let (src, tgt) = generate_pair(n_images, scene, source, target, seed)?;
    src.save(&out_dir.join("source"), "annotations.json")?;
    tgt.save(&out_dir.join("target"), "annotations.json")?;
    Ok((src, tgt))
}
