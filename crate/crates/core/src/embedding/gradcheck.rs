//! Finite-difference check of the analytic CFCE gradients.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::rng;

use super::cfce::{cfce_grad, cfce_loss, cosine_sim};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub dim: usize,
    pub max_proposals: usize,
    pub margin: f64,
    pub step: f64,
    /// Minimum distance of every hinge argument from zero.
    pub kink_clearance: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 100,
            dim: 8,
            max_proposals: 4,
            margin: 0.2,
            step: 1e-6,
            kink_clearance: 1e-3,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub rejected: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

struct Instance {
    query: Vec<Vec<f64>>,
    c_pos: Vec<f64>,
    c_neg: Vec<f64>,
}

fn random_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-2 {
            return v;
        }
    }
}

fn clear_of_kinks(inst: &Instance, margin: f64, clearance: f64) -> Result<bool> {
    let mut any_active = false;
    for z in &inst.query {
        let arg = cosine_sim(z, &inst.c_neg)? - cosine_sim(z, &inst.c_pos)? + margin;
        if arg.abs() < clearance {
            return Ok(false);
        }
        any_active |= arg > 0.0;
    }
    Ok(any_active)
}

/// `|a - n| / max(|a|, |n|)` over one gradient tensor, with 0/0 read as 0.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of the loss with respect to one input vector.
fn numeric_grad(inst: &Instance, which: usize, margin: f64, h: f64) -> Result<Vec<f64>> {
    let p = inst.query.len();
    let dim = inst.c_pos.len();
    let eval = |v: &[f64]| -> Result<f64> {
        match which {
            w if w < p => {
                let mut q = inst.query.clone();
                q[w] = v.to_vec();
                cfce_loss(&q, &inst.c_pos, &inst.c_neg, margin)
            }
            w if w == p => cfce_loss(&inst.query, v, &inst.c_neg, margin),
            _ => cfce_loss(&inst.query, &inst.c_pos, v, margin),
        }
    };
    let base = match which {
        w if w < p => &inst.query[w],
        w if w == p => &inst.c_pos,
        _ => &inst.c_neg,
    };
    let mut out = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut plus = base.clone();
        plus[d] += h;
        let mut minus = base.clone();
        minus[d] -= h;
        out.push((eval(&plus)? - eval(&minus)?) / (2.0 * h));
    }
    Ok(out)
}

/// Compare analytic and numeric gradients over seeded random instances.
pub fn run(seed: u64, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = rng::stream(seed, rng::purpose::GRADCHECK, 0);
    let mut worst = 0.0f64;
    let mut rejected = 0;
    for _ in 0..cfg.instances {
        let inst = loop {
            let count = rng.random_range(1..=cfg.max_proposals);
            let inst = Instance {
                query: (0..count).map(|_| random_vec(&mut rng, cfg.dim)).collect(),
                c_pos: random_vec(&mut rng, cfg.dim),
                c_neg: random_vec(&mut rng, cfg.dim),
            };
            if clear_of_kinks(&inst, cfg.margin, cfg.kink_clearance)? {
                break inst;
            }
            rejected += 1;
        };
        let analytic = cfce_grad(&inst.query, &inst.c_pos, &inst.c_neg, cfg.margin)?;
        let p = inst.query.len();
        for which in 0..p + 2 {
            let a = match which {
                w if w < p => &analytic.query[w],
                w if w == p => &analytic.c_pos,
                _ => &analytic.c_neg,
            };
            let n = numeric_grad(&inst, which, cfg.margin, cfg.step)?;
            worst = worst.max(relative_error(a, &n));
        }
    }
    Ok(GradcheckReport {
        instances: cfg.instances,
        rejected,
        max_relative_error: worst,
        tolerance: cfg.tolerance,
        passed: worst < cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_check_passes() {
        let report = run(0, &GradcheckConfig::default()).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_relative_error > 0.0);
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
    }
}
