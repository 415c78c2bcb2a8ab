use crate::error::{Error, Result};

use super::features::{ExtractorGrads, ExtractorParams};

/// Plain SGD: `p <- p - lr * g` for every trainable tensor, after scaling
/// the gradient so its global L2 norm is at most `clip` when given.
///
/// Returns the global gradient norm over trainable tensors, before clipping.
pub fn sgd_step(params: &mut ExtractorParams, grads: &ExtractorGrads, lr: f64, clip: Option<f64>) -> Result<f64> {
    if grads.projection.len() != params.projection.len() {
        return Err(Error::DimensionMismatch {
            expected: params.projection.len(),
            got: grads.projection.len(),
        });
    }
    if grads.bias.len() != params.bias.len() {
        return Err(Error::DimensionMismatch {
            expected: params.bias.len(),
            got: grads.bias.len(),
        });
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidParam(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut sq = 0.0;
    if params.trainable.projection {
        sq += grads.projection.iter().map(|g| g * g).sum::<f64>();
    }
    if params.trainable.bias {
        sq += grads.bias.iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::InvalidParam("non-finite gradient".into()));
    }
    let mut step = lr;
    if let Some(max) = clip {
        if !(max > 0.0) {
            return Err(Error::InvalidParam(format!("clip norm must be > 0, got {max}")));
        }
        if norm > max {
            step *= max / norm;
        }
    }
    if step == 0.0 {
        return Ok(norm);
    }
    if params.trainable.projection {
        for (p, g) in params.projection.iter_mut().zip(&grads.projection) {
            *p -= step * g;
        }
    }
    if params.trainable.bias {
        for (p, g) in params.bias.iter_mut().zip(&grads.bias) {
            *p -= step * g;
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cfce_grad, cfce_loss, FeatureVec};
    use crate::imaging::ImageRGB;
    use crate::rng;
    use rand::Rng;

    fn tiny() -> ExtractorParams {
        let mut p = ExtractorParams::zeros(1, 1);
        p.bias = vec![1.0];
        p
    }

    #[test]
    fn scalar_step() {
        let mut p = tiny();
        let g = ExtractorGrads {
            projection: vec![0.0; 3],
            bias: vec![2.0],
        };
        sgd_step(&mut p, &g, 0.1, None).unwrap();
        assert!((p.bias[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_or_zero_grad_is_noop() {
        let mut r = rng::stream(3, 0, 0);
        let mut p = ExtractorParams::random(4, 2, &mut r);
        let before = p.clone();
        let mut g = ExtractorGrads::zeros_like(&p);
        sgd_step(&mut p, &g, 0.5, None).unwrap();
        assert_eq!(p, before);
        g.bias[1] = 3.0;
        sgd_step(&mut p, &g, 0.0, None).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn frozen_tensors_untouched() {
        let mut r = rng::stream(3, 0, 1);
        let mut p = ExtractorParams::random(4, 2, &mut r);
        p.trainable.projection = false;
        let before = p.clone();
        let mut g = ExtractorGrads::zeros_like(&p);
        g.projection.iter_mut().for_each(|v| *v = 1.0);
        g.bias.iter_mut().for_each(|v| *v = 1.0);
        sgd_step(&mut p, &g, 0.1, None).unwrap();
        assert_eq!(p.projection, before.projection);
        assert_ne!(p.bias, before.bias);
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut p = tiny();
        let g = ExtractorGrads {
            projection: vec![0.0; 3],
            bias: vec![10.0],
        };
        let norm = sgd_step(&mut p, &g, 1.0, Some(0.5)).unwrap();
        assert_eq!(norm, 10.0);
        assert!((p.bias[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = tiny();
        let g = ExtractorGrads {
            projection: vec![0.0; 2],
            bias: vec![0.0],
        };
        assert!(matches!(sgd_step(&mut p, &g, 0.1, None), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn step_on_active_hinge_decreases_loss() {
        let mut r = rng::stream(21, 0, 0);
        let random_patch = |r: &mut rand_chacha::ChaCha8Rng| {
            let data = (0..4 * 4 * 3).map(|_| r.random::<u8>()).collect();
            ImageRGB::from_raw(4, 4, data).unwrap()
        };
        let mut tested = 0;
        while tested < 20 {
            let params = ExtractorParams::random(6, 4, &mut r);
            let (q, cp, cn) = (random_patch(&mut r), random_patch(&mut r), random_patch(&mut r));
            let loss_at = |p: &ExtractorParams| -> f64 {
                let f = |img: &ImageRGB| p.forward(img).unwrap().0;
                cfce_loss(&[f(&q)], f(&cp).as_slice(), f(&cn).as_slice(), 0.2).unwrap()
            };
            let (fq, cq) = params.forward(&q).unwrap();
            let (fp, cache_p) = params.forward(&cp).unwrap();
            let (fn_, cache_n) = params.forward(&cn).unwrap();
            let g = cfce_grad(std::slice::from_ref(&fq), fp.as_slice(), fn_.as_slice(), 0.2).unwrap();
            if g.active == 0 {
                continue;
            }
            let mut grads = ExtractorGrads::zeros_like(&params);
            let bw = |f: &FeatureVec, c: &super::super::FeatureCache, gf: &[f64], grads: &mut ExtractorGrads| {
                c.backward(f, gf, &params, grads)
            };
            bw(&fq, &cq, &g.query[0], &mut grads);
            bw(&fp, &cache_p, &g.c_pos, &mut grads);
            bw(&fn_, &cache_n, &g.c_neg, &mut grads);
            let base = loss_at(&params);
            for lr in [1e-3, 1e-4] {
                let mut stepped = params.clone();
                sgd_step(&mut stepped, &grads, lr, None).unwrap();
                assert!(loss_at(&stepped) < base, "lr {lr}");
            }
            tested += 1;
        }
    }
}
