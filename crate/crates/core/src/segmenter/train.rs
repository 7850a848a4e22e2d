use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::accumulate;
use super::{Optimizer, SegmenterParams, TrainConfig};
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, ImageGrid};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamState {
    m: SegmenterParams,
    v: SegmenterParams,
    step: i32,
}

/// Mini-batch training warm-started from `params`.
///
/// Each epoch visits `data` in a seeded random order; batch gradients are the
/// mean of per-sample gradients, reduced in sample order.
pub fn train(
    params: &SegmenterParams,
    data: &[(&ImageGrid, &BinaryMask)],
    cfg: &TrainConfig,
) -> Result<SegmenterParams> {
    if data.is_empty() {
        return Err(Error::Empty {
            what: "labeled set",
        });
    }
    cfg.validate()?;
    for (img, mask) in data {
        ensure_same_dims(img.dims(), mask.dims())?;
        if img.height() % 4 != 0 || img.width() % 4 != 0 {
            return Err(Error::NotDivisible {
                height: img.height(),
                width: img.width(),
            });
        }
    }

    let mut params = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = AdamState {
        m: SegmenterParams::zeros(),
        v: SegmenterParams::zeros(),
        step: 0,
    };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = SegmenterParams::zeros();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (img, mask) = data[i];
                accumulate(
                    &params,
                    img,
                    mask,
                    &cfg.loss_weights,
                    cfg.loss_kind,
                    scale,
                    &mut grads,
                );
            }
            apply(&mut params, &grads, cfg, &mut adam);
        }
    }
    Ok(params)
}

fn apply(
    params: &mut SegmenterParams,
    grads: &SegmenterParams,
    cfg: &TrainConfig,
    adam: &mut AdamState,
) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => params.zip_mut(grads, |p, g| *p -= lr * g),
        Optimizer::Adam => {
            adam.step += 1;
            adam.m
                .zip_mut(grads, |m, g| *m = BETA1 * *m + (1.0 - BETA1) * g);
            adam.v
                .zip_mut(grads, |v, g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
            let c1 = 1.0 - BETA1.powi(adam.step);
            let c2 = 1.0 - BETA2.powi(adam.step);
            // m and v share the parameter layout; walk them in lockstep.
            let m = adam.m.to_flat();
            let v = adam.v.to_flat();
            let mut k = 0;
            params.for_each_mut(|p| {
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
                k += 1;
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{forward, init_params, objective, LossKind, LossWeights};
    use crate::synthetic::{generate, ShapeKind, SyntheticSpec};

    fn one_sample() -> (ImageGrid, BinaryMask) {
        let spec = SyntheticSpec {
            n_samples: 1,
            image_size: 16,
            shape: ShapeKind::Ellipse,
            noise_level: 0.05,
            occlusion_prob: 0.0,
            seed: 3,
        };
        let s = generate(&spec).unwrap().remove(0);
        (s.image, s.ground_truth.unwrap())
    }

    fn loss_of(p: &SegmenterParams, img: &ImageGrid, m: &BinaryMask, kind: LossKind) -> f64 {
        objective(&forward(p, img).unwrap(), m, &LossWeights::default(), kind).unwrap()
    }

    #[test]
    fn one_sgd_epoch_decreases_loss() {
        let (img, mask) = one_sample();
        let p0 = init_params(1);
        for kind in [LossKind::CrossEntropy, LossKind::SoftDice] {
            let cfg = TrainConfig {
                epochs: 1,
                learning_rate: 1e-2,
                batch_size: 1,
                loss_kind: kind,
                optimizer: Optimizer::Sgd,
                ..TrainConfig::default()
            };
            let p1 = train(&p0, &[(&img, &mask)], &cfg).unwrap();
            assert!(loss_of(&p1, &img, &mask, kind) < loss_of(&p0, &img, &mask, kind));
        }
    }

    #[test]
    fn adam_reduces_loss_over_epochs() {
        let (img, mask) = one_sample();
        let p0 = init_params(2);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let p1 = train(&p0, &[(&img, &mask)], &cfg).unwrap();
        let before = loss_of(&p0, &img, &mask, LossKind::CrossEntropy);
        let after = loss_of(&p1, &img, &mask, LossKind::CrossEntropy);
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn zero_epochs_is_identity_and_training_is_reproducible() {
        let (img, mask) = one_sample();
        let p0 = init_params(4);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&p0, &[(&img, &mask)], &cfg).unwrap(), p0);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let data = [(&img, &mask), (&img, &mask), (&img, &mask)];
        assert_eq!(
            train(&p0, &data, &cfg).unwrap(),
            train(&p0, &data, &cfg).unwrap()
        );
    }

    #[test]
    fn empty_set_is_an_error() {
        let err = train(&init_params(0), &[], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Empty { .. }));
    }

    #[test]
    fn small_step_does_not_increase_batch_loss() {
        let (img, mask) = one_sample();
        for seed in 0..5 {
            let p0 = init_params(seed);
            let cfg = TrainConfig {
                epochs: 1,
                learning_rate: 1e-4,
                batch_size: 1,
                optimizer: Optimizer::Sgd,
                ..TrainConfig::default()
            };
            let p1 = train(&p0, &[(&img, &mask)], &cfg).unwrap();
            let before = loss_of(&p0, &img, &mask, LossKind::CrossEntropy);
            let after = loss_of(&p1, &img, &mask, LossKind::CrossEntropy);
            assert!(after <= before + 1e-6);
        }
    }
}
