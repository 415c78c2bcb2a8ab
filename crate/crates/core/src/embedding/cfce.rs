use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::{dot, l2};

/// Training phases in which a loss term can be enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MetaTrain,
    MetaTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfceConfig {
    pub margin: f64,
    pub enabled_phases: BTreeSet<Phase>,
    pub loss_weight: f64,
}

impl Default for CfceConfig {
    fn default() -> Self {
        CfceConfig {
            margin: 0.2,
            enabled_phases: [Phase::MetaTest].into_iter().collect(),
            loss_weight: 1.0,
        }
    }
}

impl CfceConfig {
    pub fn disabled() -> Self {
        CfceConfig {
            enabled_phases: BTreeSet::new(),
            ..CfceConfig::default()
        }
    }

    pub fn enabled_in(&self, phase: Phase) -> bool {
        self.loss_weight > 0.0 && self.enabled_phases.contains(&phase)
    }

    pub fn validate(&self) -> Result<()> {
        check_margin(self.margin)?;
        if !(self.loss_weight >= 0.0 && self.loss_weight.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "cfce loss_weight must be >= 0, got {}",
                self.loss_weight
            )));
        }
        Ok(())
    }
}

fn check_margin(m: f64) -> Result<()> {
    if m > 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("margin must be > 0, got {m}")))
    }
}

fn nonzero_norm(v: &[f64]) -> Result<f64> {
    let n = l2(v);
    if n == 0.0 || !n.is_finite() {
        Err(Error::ZeroNorm)
    } else {
        Ok(n)
    }
}

/// Cosine similarity `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = nonzero_norm(a)?;
    let nb = nonzero_norm(b)?;
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity and its gradients with respect to both arguments:
/// `d cos / d a = b / (|a||b|) - cos * a / |a|^2`, symmetrically for `b`.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = nonzero_norm(a)?;
    let nb = nonzero_norm(b)?;
    let cos = dot(a, b) / (na * nb);
    let ga = a.iter().zip(b).map(|(x, y)| y / (na * nb) - cos * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x / (na * nb) - cos * y / (nb * nb)).collect();
    Ok((cos, ga, gb))
}

/// Mean over foreground proposals of
/// `max(cos(z, c_neg) - cos(z, c_pos) + margin, 0)`.
///
/// The hinge penalizes proposals whose similarity to the positive class
/// embedding does not exceed their similarity to the negative one by the
/// margin.
pub fn cfce_loss<V: AsRef<[f64]>>(query_fg: &[V], c_pos: &[f64], c_neg: &[f64], margin: f64) -> Result<f64> {
    check_margin(margin)?;
    if query_fg.is_empty() {
        return Err(Error::Empty("cfce needs at least one foreground proposal"));
    }
    let mut total = 0.0;
    for z in query_fg {
        let z = z.as_ref();
        let arg = cosine_sim(z, c_neg)? - cosine_sim(z, c_pos)? + margin;
        total += arg.max(0.0);
    }
    Ok(total / query_fg.len() as f64)
}

/// Loss value and gradients of [`cfce_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct CfceGrad {
    pub loss: f64,
    pub query: Vec<Vec<f64>>,
    pub c_pos: Vec<f64>,
    pub c_neg: Vec<f64>,
    /// Number of proposals with a strictly positive hinge argument.
    pub active: usize,
}

/// Analytic gradients of [`cfce_loss`]. A hinge argument of exactly zero
/// takes the zero subgradient.
pub fn cfce_grad<V: AsRef<[f64]>>(query_fg: &[V], c_pos: &[f64], c_neg: &[f64], margin: f64) -> Result<CfceGrad> {
    check_margin(margin)?;
    if query_fg.is_empty() {
        return Err(Error::Empty("cfce needs at least one foreground proposal"));
    }
    let dim = c_pos.len();
    let scale = 1.0 / query_fg.len() as f64;
    let mut out = CfceGrad {
        loss: 0.0,
        query: Vec::with_capacity(query_fg.len()),
        c_pos: vec![0.0; dim],
        c_neg: vec![0.0; dim],
        active: 0,
    };
    for z in query_fg {
        let z = z.as_ref();
        let (cos_p, gz_p, gc_p) = cosine_grad(z, c_pos)?;
        let (cos_n, gz_n, gc_n) = cosine_grad(z, c_neg)?;
        let arg = cos_n - cos_p + margin;
        if arg > 0.0 {
            out.loss += arg * scale;
            out.active += 1;
            out.query.push(gz_n.iter().zip(&gz_p).map(|(n, p)| (n - p) * scale).collect());
            for d in 0..dim {
                out.c_pos[d] -= gc_p[d] * scale;
                out.c_neg[d] += gc_n[d] * scale;
            }
        } else {
            out.query.push(vec![0.0; dim]);
        }
    }
    Ok(out)
}
