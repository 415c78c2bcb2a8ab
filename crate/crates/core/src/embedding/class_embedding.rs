use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::FeatureVec;

/// Per-dimension mean and population standard deviation of K support
/// features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEmbedding {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub shots: usize,
}

/// Mean and population std (divide by K). The mean is accumulated as
/// `first + mean(v_i - first)`, which is exact when all supports are equal,
/// so identical supports give a std of exactly zero.
pub fn class_embedding<V: AsRef<[f64]>>(supports: &[V]) -> Result<ClassEmbedding> {
    let first = supports.first().ok_or(Error::Empty("class embedding needs at least one support"))?.as_ref();
    let dim = first.len();
    if let Some(bad) = supports.iter().find(|s| s.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.as_ref().len(),
        });
    }
    let k = supports.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|d| {
            let shift: f64 = supports.iter().map(|s| s.as_ref()[d] - first[d]).sum();
            first[d] + shift / k
        })
        .collect();
    let std = (0..dim)
        .map(|d| {
            let var: f64 = supports.iter().map(|s| (s.as_ref()[d] - mean[d]).powi(2)).sum::<f64>() / k;
            var.sqrt()
        })
        .collect();
    Ok(ClassEmbedding {
        mean,
        std,
        shots: supports.len(),
    })
}

impl ClassEmbedding {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draw `mean + std * g` with `g ~ N(0, I)` and also return `g`.
    pub fn sample_with_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let noise: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let v = self
            .mean
            .iter()
            .zip(&self.std)
            .zip(&noise)
            .map(|((m, s), g)| m + s * g)
            .collect();
        (v, noise)
    }

    /// Average of `count` draws; `count == 0` returns the mean.
    pub fn sample_mean<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        if count == 0 {
            return self.mean.clone();
        }
        let mut acc = vec![0.0; self.dim()];
        for _ in 0..count {
            let (v, _) = self.sample_with_noise(rng);
            acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
        }
        acc.iter().map(|a| a / count as f64).collect()
    }

    /// Gradient with respect to each support, given the gradient at the
    /// (possibly sampled) embedding `mean + std * noise`.
    pub fn backward<V: AsRef<[f64]>>(&self, supports: &[V], noise: Option<&[f64]>, grad: &[f64]) -> Vec<Vec<f64>> {
        let k = supports.len() as f64;
        supports
            .iter()
            .map(|s| {
                let s = s.as_ref();
                (0..self.dim())
                    .map(|d| {
                        let mut g = grad[d] / k;
                        if let Some(noise) = noise {
                            if self.std[d] > 0.0 {
                                g += grad[d] * noise[d] * (s[d] - self.mean[d]) / (k * self.std[d]);
                            }
                        }
                        g
                    })
                    .collect()
            })
            .collect()
    }
}

/// One draw from the diagonal Gaussian `N(mean, std^2)`.
pub fn sample_embedding<R: Rng + ?Sized>(ce: &ClassEmbedding, rng: &mut R) -> Result<FeatureVec> {
    FeatureVec::new(ce.sample_with_noise(rng).0)
}
