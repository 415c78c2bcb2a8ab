use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageRGB;

/// Finite real feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVec(Vec<f64>);

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("feature vector has non-finite entries".into()));
        }
        Ok(FeatureVec(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }
}

impl TryFrom<Vec<f64>> for FeatureVec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVec::new(v)
    }
}

impl From<FeatureVec> for Vec<f64> {
    fn from(f: FeatureVec) -> Self {
        f.0
    }
}

impl AsRef<[f64]> for FeatureVec {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trainable {
    pub projection: bool,
    pub bias: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Trainable {
            projection: true,
            bias: true,
        }
    }
}

/// Affine projection from a flattened support patch to a `feature_dim`
/// embedding. Stands in for a frozen backbone plus trainable head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub feature_dim: usize,
    pub patch_size: u32,
    /// Row-major `feature_dim x input_dim`.
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
    pub trainable: Trainable,
}

impl ExtractorParams {
    pub fn input_dim_for(patch_size: u32) -> usize {
        patch_size as usize * patch_size as usize * 3
    }

    pub fn input_dim(&self) -> usize {
        Self::input_dim_for(self.patch_size)
    }

    pub fn zeros(feature_dim: usize, patch_size: u32) -> Self {
        ExtractorParams {
            feature_dim,
            patch_size,
            projection: vec![0.0; feature_dim * Self::input_dim_for(patch_size)],
            bias: vec![0.0; feature_dim],
            trainable: Trainable::default(),
        }
    }

    /// Gaussian projection with variance `1 / input_dim`, zero bias.
    pub fn random<R: Rng + ?Sized>(feature_dim: usize, patch_size: u32, rng: &mut R) -> Self {
        let mut p = Self::zeros(feature_dim, patch_size);
        let scale = 1.0 / (p.input_dim() as f64).sqrt();
        for w in &mut p.projection {
            let g: f64 = rng.sample(StandardNormal);
            *w = g * scale;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.patch_size == 0 {
            return Err(Error::InvalidParam("extractor dimensions must be positive".into()));
        }
        let want = self.feature_dim * self.input_dim();
        if self.projection.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: self.projection.len(),
            });
        }
        if self.bias.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: self.bias.len(),
            });
        }
        if self.projection.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("extractor has non-finite parameters".into()));
        }
        Ok(())
    }

    /// Forward pass that keeps what [`FeatureCache::backward`] needs.
    pub fn forward(&self, patch: &ImageRGB) -> Result<(FeatureVec, FeatureCache)> {
        if patch.width() != self.patch_size || patch.height() != self.patch_size {
            return Err(Error::InvalidImage(format!(
                "extractor expects {0}x{0} patches, got {1}x{2}",
                self.patch_size,
                patch.width(),
                patch.height()
            )));
        }
        let input = preprocess(patch);
        let p = input.len();
        let mut pre: Vec<f64> = self.bias.clone();
        for (d, out) in pre.iter_mut().enumerate() {
            *out += dot(&self.projection[d * p..(d + 1) * p], &input);
        }
        let norm = l2(&pre);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        let feature = FeatureVec(pre.iter().map(|v| v / norm).collect());
        Ok((feature, FeatureCache { input, norm }))
    }
}

/// Convert to `[0, 1]`, subtract the patch mean, flatten row-major RGB.
fn preprocess(patch: &ImageRGB) -> Vec<f64> {
    let data = patch.data();
    let total: u64 = data.iter().map(|&v| u64::from(v)).sum();
    let mean = total as f64 / (data.len() as f64 * 255.0);
    data.iter().map(|&v| f64::from(v) / 255.0 - mean).collect()
}

/// Unit-norm embedding of a support-sized patch.
pub fn extract_features(patch: &ImageRGB, params: &ExtractorParams) -> Result<FeatureVec> {
    params.forward(patch).map(|(f, _)| f)
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    input: Vec<f64>,
    norm: f64,
}

impl FeatureCache {
    /// Accumulate parameter gradients given `d loss / d feature`.
    ///
    /// With `u = W x + b` and `f = u / |u|`, `d f / d u = (I - f f^T) / |u|`.
    pub fn backward(&self, feature: &FeatureVec, grad_feature: &[f64], params: &ExtractorParams, grads: &mut ExtractorGrads) {
        let f = feature.as_slice();
        let proj = dot(f, grad_feature);
        let p = self.input.len();
        for d in 0..f.len() {
            let gu = (grad_feature[d] - f[d] * proj) / self.norm;
            if gu == 0.0 {
                continue;
            }
            if params.trainable.bias {
                grads.bias[d] += gu;
            }
            if params.trainable.projection {
                for (g, x) in grads.projection[d * p..(d + 1) * p].iter_mut().zip(&self.input) {
                    *g += gu * x;
                }
            }
        }
    }
}

/// Gradients with the same layout as [`ExtractorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorGrads {
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ExtractorGrads {
    pub fn zeros_like(params: &ExtractorParams) -> Self {
        ExtractorGrads {
            projection: vec![0.0; params.projection.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &ExtractorGrads) {
        for (a, b) in self.projection.iter_mut().zip(&other.projection) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.projection.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.projection.iter().chain(&self.bias).all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn patch(seed: u8) -> ImageRGB {
        let data = (0..8 * 8 * 3).map(|i| ((i * 31 + usize::from(seed) * 7) % 251) as u8).collect();
        ImageRGB::from_raw(8, 8, data).unwrap()
    }

    #[test]
    fn zero_projection_is_zero_norm() {
        let p = ExtractorParams::zeros(4, 8);
        assert!(matches!(extract_features(&patch(1), &p), Err(Error::ZeroNorm)));
    }

    #[test]
    fn constant_patch_is_zero_norm_under_identity_projection() {
        let mut p = ExtractorParams::zeros(8 * 8 * 3, 8);
        let n = p.input_dim();
        for i in 0..n {
            p.projection[i * n + i] = 1.0;
        }
        let flat = ImageRGB::filled(8, 8, [77, 77, 77]);
        assert!(matches!(extract_features(&flat, &p), Err(Error::ZeroNorm)));
        // a non-constant patch is fine and unit norm
        let f = extract_features(&patch(2), &p).unwrap();
        assert!((f.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn outputs_are_unit_norm() {
        let p = ExtractorParams::random(16, 8, &mut rng::stream(1, 0, 0));
        for s in 0..20 {
            let f = extract_features(&patch(s), &p).unwrap();
            assert_eq!(f.dim(), 16);
            assert!((f.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_patch_size_rejected() {
        let p = ExtractorParams::random(4, 8, &mut rng::stream(1, 0, 0));
        assert!(extract_features(&ImageRGB::filled(9, 8, [1, 2, 3]), &p).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // loss = a . f(patch); check a few parameter coordinates
        let mut params = ExtractorParams::random(6, 8, &mut rng::stream(2, 0, 0));
        params.bias = vec![0.1, -0.2, 0.3, 0.0, 0.05, -0.1];
        let img = patch(3);
        let a = [0.3, -1.0, 0.5, 0.2, -0.7, 0.9];
        let loss = |p: &ExtractorParams| dot(&a, extract_features(&img, p).unwrap().as_slice());
        let (f, cache) = params.forward(&img).unwrap();
        let mut g = ExtractorGrads::zeros_like(&params);
        cache.backward(&f, &a, &params, &mut g);
        let h = 1e-6;
        for idx in [0usize, 17, 100, 191, 5 * 192 + 3] {
            let mut plus = params.clone();
            plus.projection[idx] += h;
            let mut minus = params.clone();
            minus.projection[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - g.projection[idx]).abs() < 1e-7, "w[{idx}] fd {fd} an {}", g.projection[idx]);
        }
        for d in 0..6 {
            let mut plus = params.clone();
            plus.bias[d] += h;
            let mut minus = params.clone();
            minus.bias[d] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - g.bias[d]).abs() < 1e-7);
        }
    }

    #[test]
    fn frozen_tensors_get_no_gradient() {
        let mut params = ExtractorParams::random(4, 8, &mut rng::stream(3, 0, 0));
        params.trainable.projection = false;
        let (f, cache) = params.forward(&patch(4)).unwrap();
        let mut g = ExtractorGrads::zeros_like(&params);
        cache.backward(&f, &[1.0, 0.0, 0.0, 0.0], &params, &mut g);
        assert!(g.projection.iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().any(|&v| v != 0.0));
    }
}
