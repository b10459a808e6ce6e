//! Training losses for the detection and matting/fitting stages, with their
//! analytic (sub)gradients so external trainers can plug them in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{Plane, RasterImage};
use crate::trajectory::{curve_loss, Curve};

/// Logarithms in the binary cross-entropy are floored at this value.
pub const BCE_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub alpha_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_a: 15.0,
            alpha_b: 0.4,
            alpha_c: 4.0 / 256.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha_a, self.alpha_b, self.alpha_c].iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

fn same_shape(a: &Plane, b: &Plane) -> Result<()> {
    if a.domain() != b.domain() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean absolute error over positive ground-truth pixels plus mean absolute
/// prediction over exactly-zero ground-truth pixels. An empty group
/// contributes 0.
pub fn detection_loss(gt: &Plane, pred: &Plane) -> Result<f64> {
    same_shape(gt, pred)?;
    let (mut pos, mut n1, mut zero, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (d, p) in gt.data().iter().zip(pred.data()) {
        if *d > 0.0 {
            pos += (d - p).abs();
            n1 += 1;
        } else {
            zero += p.abs();
            n0 += 1;
        }
    }
    let term = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(term(pos, n1) + term(zero, n0))
}

/// Subgradient of [`detection_loss`] with respect to the prediction
/// (`sign(0) = 0`).
pub fn detection_loss_grad(gt: &Plane, pred: &Plane) -> Result<Plane> {
    same_shape(gt, pred)?;
    let n1 = gt.data().iter().filter(|d| **d > 0.0).count();
    let n0 = gt.data().len() - n1;
    let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    let g = gt
        .data()
        .iter()
        .zip(pred.data())
        .map(|(d, p)| {
            if *d > 0.0 {
                sign(p - d) / n1 as f64
            } else {
                sign(*p) / n0 as f64
            }
        })
        .collect();
    Plane::new(gt.height(), gt.width(), g)
}

/// Ground truth consumed by the matting/fitting loss.
#[derive(Debug, Clone)]
pub struct MattingTargets {
    pub hf: RasterImage,
    pub hm: RasterImage,
    pub curve: Curve,
    pub present: bool,
}

/// Network-style prediction: blurred appearance, blurred mask, curve and
/// presence probability.
#[derive(Debug, Clone)]
pub struct MattingPrediction {
    pub hf: RasterImage,
    pub hm: RasterImage,
    pub curve: Curve,
    pub present_prob: f64,
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub appearance: f64,
    pub curve: f64,
    pub bce: f64,
    pub total: f64,
}

pub fn bce(b: bool, b_hat: f64) -> f64 {
    let p = if b { b_hat } else { 1.0 - b_hat };
    // Adding 0.0 turns -0.0 into 0.0.
    0.0 - p.max(BCE_LOG_FLOOR).ln() + 0.0
}

fn check_prediction(gt: &MattingTargets, pred: &MattingPrediction) -> Result<()> {
    if !gt.hf.same_shape(&pred.hf) || !gt.hm.same_shape(&pred.hm) {
        return Err(Error::DimensionMismatch("prediction and target shapes differ".into()));
    }
    if !(0.0..=1.0).contains(&pred.present_prob) {
        return Err(Error::OutOfRange(format!(
            "presence probability {} outside [0, 1]",
            pred.present_prob
        )));
    }
    Ok(())
}

fn l1(a: &RasterImage, b: &RasterImage) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum()
}

/// `alpha_a b (|Hf - Hf'|_1 + |Hm - Hm'|_1) + alpha_c b Lc + alpha_b BCE(b, b')`
/// with plain (unnormalized) L1 sums.
pub fn matting_fitting_loss(
    gt: &MattingTargets,
    pred: &MattingPrediction,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    check_prediction(gt, pred)?;
    let b = if gt.present { 1.0 } else { 0.0 };
    let appearance = if gt.present {
        w.alpha_a * b * (l1(&gt.hf, &pred.hf) + l1(&gt.hm, &pred.hm))
    } else {
        0.0
    };
    let curve = if gt.present {
        w.alpha_c * b * curve_loss(&gt.curve, &pred.curve)
    } else {
        0.0
    };
    let bce = w.alpha_b * bce(gt.present, pred.present_prob);
    Ok(LossBreakdown {
        appearance,
        curve,
        bce,
        total: appearance + curve + bce,
    })
}

/// Gradients of [`matting_fitting_loss`] with respect to the predicted
/// blurred appearance, blurred mask and presence probability.
#[derive(Debug, Clone)]
pub struct MattingGradient {
    pub hf: Vec<f64>,
    pub hm: Vec<f64>,
    pub present_prob: f64,
}

pub fn matting_fitting_grad(
    gt: &MattingTargets,
    pred: &MattingPrediction,
    w: &LossWeights,
) -> Result<MattingGradient> {
    w.validate()?;
    check_prediction(gt, pred)?;
    let scale = if gt.present { w.alpha_a } else { 0.0 };
    let sub = |a: &RasterImage, b: &RasterImage| -> Vec<f64> {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(t, p)| {
                let d = p - t;
                scale * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 }
            })
            .collect()
    };
    let p = pred.present_prob;
    let dbce = if gt.present {
        if p > BCE_LOG_FLOOR { -1.0 / p } else { 0.0 }
    } else if 1.0 - p > BCE_LOG_FLOOR {
        1.0 / (1.0 - p)
    } else {
        0.0
    };
    Ok(MattingGradient {
        hf: sub(&gt.hf, &pred.hf),
        hm: sub(&gt.hm, &pred.hm),
        present_prob: w.alpha_b * dbce,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(v: &[f64], h: usize, w: usize) -> Plane {
        Plane::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn detection_loss_examples() {
        let d = plane(&[1.0, 0.0], 1, 2);
        assert_eq!(detection_loss(&d, &d).unwrap(), 0.0);
        let p = plane(&[0.5, 0.25], 1, 2);
        assert_eq!(detection_loss(&d, &p).unwrap(), 0.75);
        let z = Plane::zeros(3, 4);
        let p = plane(&[0.3; 12], 3, 4);
        assert!((detection_loss(&z, &p).unwrap() - 0.3).abs() < 1e-15);
        assert!(detection_loss(&z, &Plane::zeros(4, 3)).is_err());
    }

    #[test]
    fn detection_loss_toy_oracle() {
        // 2x2: D = [0.5, 0; 1, 0], D' = [0.2, 0.1; 0.7, -0.4]
        let d = plane(&[0.5, 0.0, 1.0, 0.0], 2, 2);
        let p = plane(&[0.2, 0.1, 0.7, -0.4], 2, 2);
        let want = (0.3 + 0.3) / 2.0 + (0.1 + 0.4) / 2.0;
        assert!((detection_loss(&d, &p).unwrap() - want).abs() <= 1e-12);
    }

    fn targets(rng: &mut ChaCha8Rng, present: bool) -> MattingTargets {
        let hm: Vec<f64> = (0..4).map(|_| rng.gen_range(0.2..1.0)).collect();
        let hf: Vec<f64> = hm.iter().flat_map(|m| [m * 0.3, m * 0.6, m * 0.9]).collect();
        MattingTargets {
            hf: RasterImage::new(2, 2, 3, hf).unwrap(),
            hm: RasterImage::new(2, 2, 1, hm).unwrap(),
            curve: Curve::new(Vec2::new(3.0, 4.0), Vec2::new(5.0, 1.0), Vec2::ZERO, Vec2::new(2.0, 2.0)),
            present,
        }
    }

    fn perturbed(rng: &mut ChaCha8Rng, gt: &MattingTargets, b_hat: f64) -> MattingPrediction {
        let jitter = |img: &RasterImage, rng: &mut ChaCha8Rng| {
            let d = img
                .data()
                .iter()
                .map(|v| (v + rng.gen_range(-0.15..0.15)).clamp(0.01, 0.99))
                .collect();
            RasterImage::new(img.height(), img.width(), img.channels(), d).unwrap()
        };
        MattingPrediction {
            hf: jitter(&gt.hf, rng),
            hm: jitter(&gt.hm, rng),
            curve: gt.curve.translated(Vec2::new(1.0, -2.0)),
            present_prob: b_hat,
        }
    }

    #[test]
    fn exact_prediction_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = targets(&mut rng, true);
        let pred = MattingPrediction {
            hf: gt.hf.clone(),
            hm: gt.hm.clone(),
            curve: gt.curve,
            present_prob: 1.0 - 1e-12,
        };
        let l = matting_fitting_loss(&gt, &pred, &LossWeights::default()).unwrap();
        assert!(l.total <= 1e-9);
    }

    #[test]
    fn absent_object_only_pays_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = targets(&mut rng, false);
        let pred = perturbed(&mut rng, &gt, 0.3);
        let w = LossWeights::default();
        let l = matting_fitting_loss(&gt, &pred, &w).unwrap();
        assert_eq!(l.total, w.alpha_b * -(0.7f64).ln());
        assert_eq!(l.appearance, 0.0);
        assert_eq!(l.curve, 0.0);
    }

    #[test]
    fn toy_case_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = targets(&mut rng, true);
        let pred = perturbed(&mut rng, &gt, 0.8);
        let w = LossWeights::default();
        let mut l1 = 0.0;
        for i in 0..12 {
            l1 += (gt.hf.data()[i] - pred.hf.data()[i]).abs();
        }
        for i in 0..4 {
            l1 += (gt.hm.data()[i] - pred.hm.data()[i]).abs();
        }
        // Translation by (1, -2): every corresponding pair is sqrt(5) apart.
        let lc = 5f64.sqrt();
        let want = 15.0 * l1 + (4.0 / 256.0) * lc + 0.4 * -(0.8f64).ln();
        let got = matting_fitting_loss(&gt, &pred, &w).unwrap();
        assert!((got.total - want).abs() <= 1e-12, "{} vs {}", got.total, want);
    }

    #[test]
    fn detection_subgradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = Plane::from_fn(5, 5, |y, x| if (x + y) % 3 == 0 { 0.0 } else { rng.gen_range(0.1..1.0) });
        let pred = Plane::from_fn(5, 5, |_, _| rng.gen_range(0.05..0.95));
        let g = detection_loss_grad(&gt, &pred).unwrap();
        let h = 1e-6;
        for i in 0..25 {
            let mut up = pred.clone();
            up.data_mut()[i] += h;
            let mut dn = pred.clone();
            dn.data_mut()[i] -= h;
            let fd = (detection_loss(&gt, &up).unwrap() - detection_loss(&gt, &dn).unwrap()) / (2.0 * h);
            let a = g.data()[i];
            assert!((fd - a).abs() <= 1e-4 * a.abs().max(1e-12), "pixel {i}: fd {fd} vs {a}");
        }
    }

    #[test]
    fn matting_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = targets(&mut rng, true);
        let pred = perturbed(&mut rng, &gt, 0.65);
        let w = LossWeights::default();
        let g = matting_fitting_grad(&gt, &pred, &w).unwrap();
        let h = 1e-6;
        let total = |p: &MattingPrediction| matting_fitting_loss(&gt, p, &w).unwrap().total;
        let rel = |fd: f64, a: f64| (fd - a).abs() / a.abs().max(1e-12);
        for i in 0..12 {
            let mut up = pred.clone();
            let mut dn = pred.clone();
            let mut du = up.hf.clone().into_data();
            du[i] += h;
            up.hf = RasterImage::new(2, 2, 3, du).unwrap();
            let mut dd = dn.hf.clone().into_data();
            dd[i] -= h;
            dn.hf = RasterImage::new(2, 2, 3, dd).unwrap();
            let fd = (total(&up) - total(&dn)) / (2.0 * h);
            assert!(rel(fd, g.hf[i]) <= 1e-4);
        }
        for i in 0..4 {
            let mut up = pred.clone();
            let mut dn = pred.clone();
            let mut du = up.hm.clone().into_data();
            du[i] += h;
            up.hm = RasterImage::new(2, 2, 1, du).unwrap();
            let mut dd = dn.hm.clone().into_data();
            dd[i] -= h;
            dn.hm = RasterImage::new(2, 2, 1, dd).unwrap();
            let fd = (total(&up) - total(&dn)) / (2.0 * h);
            assert!(rel(fd, g.hm[i]) <= 1e-4);
        }
        let mut up = pred.clone();
        up.present_prob += h;
        let mut dn = pred.clone();
        dn.present_prob -= h;
        let fd = (total(&up) - total(&dn)) / (2.0 * h);
        assert!(rel(fd, g.present_prob) <= 1e-4);
    }

    #[test]
    fn invalid_probability_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = targets(&mut rng, true);
        let pred = perturbed(&mut rng, &gt, 1.5);
        assert!(matting_fitting_loss(&gt, &pred, &LossWeights::default()).is_err());
    }

    proptest! {
        #[test]
        fn weights_scale_total(seed in any::<u64>(), lambda in 0.01f64..100.0, present in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = targets(&mut rng, present);
            let p = rng.gen_range(0.05..0.95);
            let pred = perturbed(&mut rng, &gt, p);
            let w = LossWeights::default();
            let ws = LossWeights { alpha_a: w.alpha_a * lambda, alpha_b: w.alpha_b * lambda, alpha_c: w.alpha_c * lambda };
            let a = matting_fitting_loss(&gt, &pred, &w).unwrap().total;
            let b = matting_fitting_loss(&gt, &pred, &ws).unwrap().total;
            prop_assert!((b - lambda * a).abs() <= 1e-9 * b.abs().max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn detection_loss_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 0.0 } else { rng.gen::<f64>() }).collect();
            let pr: Vec<f64> = (0..16).map(|_| rng.gen::<f64>()).collect();
            let mut idx: Vec<usize> = (0..16).collect();
            for i in (1..16).rev() {
                idx.swap(i, rng.gen_range(0..=i));
            }
            let a = detection_loss(&plane(&gt, 4, 4), &plane(&pr, 4, 4)).unwrap();
            let gp: Vec<f64> = idx.iter().map(|i| gt[*i]).collect();
            let pp: Vec<f64> = idx.iter().map(|i| pr[*i]).collect();
            let b = detection_loss(&plane(&gp, 4, 4), &plane(&pp, 4, 4)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a >= 0.0);
        }
    }
}
