//! Per-head and weighted multi-head losses.
//!
//! Cross-entropy uses mean reduction over pixels with probabilities clamped
//! to `[EPS, 1 - EPS]`. Soft Dice uses additive smoothing of 1.

use super::{LossKind, LossWeights, MultiHeadPrediction};
use crate::error::Result;
use crate::raster::{ensure_same_dims, BinaryMask, ProbMap};

pub const EPS: f64 = 1e-8;
pub const DICE_SMOOTH: f64 = 1.0;

pub(crate) fn bce(p: &[f64], t: &[u8]) -> f64 {
    let sum: f64 = p
        .iter()
        .zip(t)
        .map(|(&p, &t)| {
            let pc = p.clamp(EPS, 1.0 - EPS);
            if t == 1 {
                -pc.ln()
            } else {
                -(1.0 - pc).ln()
            }
        })
        .sum();
    sum / p.len() as f64
}

/// Gradient of [`bce`] with respect to the pre-sigmoid logit of each pixel,
/// scaled by `scale`. Pixels whose probability sits in the clamp region get 0.
pub(crate) fn bce_logit_grad(p: &[f64], t: &[u8], scale: f64, out: &mut [f64]) {
    let n = p.len() as f64;
    for ((o, &p), &t) in out.iter_mut().zip(p).zip(t) {
        *o = if !(EPS..=1.0 - EPS).contains(&p) {
            0.0
        } else {
            scale * (p - t as f64) / n
        };
    }
}

pub(crate) fn soft_dice(p: &[f64], t: &[u8]) -> f64 {
    let (mut inter, mut sp, mut st) = (0.0, 0.0, 0.0);
    for (&p, &t) in p.iter().zip(t) {
        let t = t as f64;
        inter += p * t;
        sp += p;
        st += t;
    }
    1.0 - (2.0 * inter + DICE_SMOOTH) / (sp + st + DICE_SMOOTH)
}

pub(crate) fn soft_dice_logit_grad(p: &[f64], t: &[u8], scale: f64, out: &mut [f64]) {
    let (mut inter, mut sp, mut st) = (0.0, 0.0, 0.0);
    for (&p, &t) in p.iter().zip(t) {
        let t = t as f64;
        inter += p * t;
        sp += p;
        st += t;
    }
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = sp + st + DICE_SMOOTH;
    for ((o, &p), &t) in out.iter_mut().zip(p).zip(t) {
        let dl_dp = -(2.0 * t as f64 * den - num) / (den * den);
        *o = scale * dl_dp * p * (1.0 - p);
    }
}

/// Mean binary cross-entropy of one head.
pub fn head_loss(p: &ProbMap, target: &BinaryMask) -> Result<f64> {
    ensure_same_dims(p.dims(), target.dims())?;
    Ok(bce(p.values(), target.values()))
}

/// `1 - (2 Σ p t + s) / (Σ p + Σ t + s)` with `s = 1`.
pub fn soft_dice_loss(p: &ProbMap, target: &BinaryMask) -> Result<f64> {
    ensure_same_dims(p.dims(), target.dims())?;
    Ok(soft_dice(p.values(), target.values()))
}

/// Weighted cross-entropy over the three heads.
pub fn total_loss(pred: &MultiHeadPrediction, target: &BinaryMask, w: &LossWeights) -> Result<f64> {
    objective(pred, target, w, LossKind::CrossEntropy)
}

/// Weighted multi-head loss for either loss kind.
pub fn objective(
    pred: &MultiHeadPrediction,
    target: &BinaryMask,
    w: &LossWeights,
    kind: LossKind,
) -> Result<f64> {
    w.validate()?;
    let mut total = 0.0;
    for (head, alpha) in pred.heads().into_iter().zip(w.as_array()) {
        let l = match kind {
            LossKind::CrossEntropy => head_loss(head, target)?,
            LossKind::SoftDice => soft_dice_loss(head, target)?,
        };
        total += alpha * l;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred_all(v: f64, h: usize, w: usize) -> MultiHeadPrediction {
        let p = ProbMap::filled(h, w, v).unwrap();
        MultiHeadPrediction::new(p.clone(), p.clone(), p).unwrap()
    }

    #[test]
    fn head_loss_examples() {
        let t = BinaryMask::from_fn(4, 4, |r, c| (r + c) % 3 == 0).unwrap();
        let half = ProbMap::filled(4, 4, 0.5).unwrap();
        assert!((head_loss(&half, &t).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(head_loss(&t.to_prob(), &t).unwrap() < 1e-6);
        let ones = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        let p = ProbMap::filled(2, 2, 0.8).unwrap();
        assert!((head_loss(&p, &ones).unwrap() - (-(0.8f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn total_loss_examples() {
        let t = BinaryMask::from_fn(4, 4, |r, _| r < 2).unwrap();
        let w = LossWeights::default();
        let total = total_loss(&pred_all(0.5, 4, 4), &t, &w).unwrap();
        assert!((total - std::f64::consts::LN_2).abs() < 1e-12);

        let mut pred = pred_all(0.3, 4, 4);
        pred.final_ = ProbMap::filled(4, 4, 0.9).unwrap();
        let w = LossWeights::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(
            total_loss(&pred, &t, &w).unwrap(),
            head_loss(&pred.final_, &t).unwrap()
        );
    }

    #[test]
    fn total_loss_rejects_bad_weights() {
        let t = BinaryMask::zeros(2, 2).unwrap();
        let w = LossWeights {
            lower: 0.5,
            middle: 0.5,
            final_: 0.5,
        };
        assert!(total_loss(&pred_all(0.5, 2, 2), &t, &w).is_err());
        assert!(LossWeights::new(-0.1, 0.5, 0.6).is_err());
    }

    // Scalar recomputation written against the formulas directly, one pixel
    // at a time, in the 2-class form -log p(target).
    fn oracle_total(
        pred: &MultiHeadPrediction,
        t: &BinaryMask,
        alphas: [f64; 3],
        dice: bool,
    ) -> f64 {
        let mut total = 0.0;
        for (head, a) in pred.heads().iter().zip(alphas) {
            let l = if dice {
                let mut num = 1.0;
                let mut den = 1.0;
                for i in 0..t.len() {
                    num += 2.0 * head.values()[i] * t.values()[i] as f64;
                    den += head.values()[i] + t.values()[i] as f64;
                }
                1.0 - num / den
            } else {
                let mut s = 0.0;
                for i in 0..t.len() {
                    let p = head.values()[i].clamp(1e-8, 1.0 - 1e-8);
                    let prob_of_target = if t.values()[i] == 1 { p } else { 1.0 - p };
                    s += -prob_of_target.ln();
                }
                s / t.len() as f64
            };
            total += a * l;
        }
        total
    }

    fn random_instance(seed: u64) -> (MultiHeadPrediction, BinaryMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map =
            || ProbMap::new(8, 8, (0..64).map(|_| rng.random::<f64>()).collect()).unwrap();
        let pred = MultiHeadPrediction::new(map(), map(), map()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let t = BinaryMask::new(8, 8, (0..64).map(|_| rng.random_range(0..2u8)).collect()).unwrap();
        (pred, t)
    }

    #[test]
    fn total_loss_matches_scalar_recomputation() {
        for seed in 0..5 {
            let (pred, t) = random_instance(seed);
            let w = LossWeights::default();
            let got = total_loss(&pred, &t, &w).unwrap();
            let want = oracle_total(&pred, &t, [0.1, 0.3, 0.6], false);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            let got = objective(&pred, &t, &w, LossKind::SoftDice).unwrap();
            let want = oracle_total(&pred, &t, [0.1, 0.3, 0.6], true);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn soft_dice_examples() {
        let t = BinaryMask::from_fn(4, 4, |r, c| r > c).unwrap();
        assert_eq!(soft_dice_loss(&t.to_prob(), &t).unwrap(), 0.0);
        let z = BinaryMask::zeros(4, 4).unwrap();
        let ones = ProbMap::filled(4, 4, 1.0).unwrap();
        let got = soft_dice_loss(&ones, &z).unwrap();
        assert!((got - (1.0 - 1.0 / 17.0)).abs() < 1e-15);
        let (pred, t) = random_instance(42);
        let single = soft_dice_loss(&pred.final_, &t).unwrap();
        assert!((0.0..=1.0).contains(&single));
    }

    #[test]
    fn weighted_total_lies_between_head_losses() {
        for seed in 10..30 {
            let (pred, t) = random_instance(seed);
            let heads: Vec<f64> = pred
                .heads()
                .iter()
                .map(|h| head_loss(h, &t).unwrap())
                .collect();
            let total = total_loss(&pred, &t, &LossWeights::default()).unwrap();
            let lo = heads.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = heads.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(total >= lo - 1e-12 && total <= hi + 1e-12);
        }
    }
}
