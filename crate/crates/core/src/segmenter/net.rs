use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    conv_backward, conv_forward, maxpool2, maxpool2_backward, relu_backward, relu_inplace, sigmoid,
    upsample, upsample_backward, FeatureMap,
};
use super::loss::{bce, bce_logit_grad, soft_dice, soft_dice_logit_grad};
use super::{LossKind, LossWeights, MultiHeadPrediction, SegmenterParams};
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, ImageGrid, ProbMap};

/// He-uniform kernels (`U(-a, a)`, `a = sqrt(6 / fan_in)`) and zero biases.
pub fn init_params(seed: u64) -> SegmenterParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = SegmenterParams::zeros();
    for layer in params.layers_mut() {
        let a = (6.0 / layer.fan_in() as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-a..a);
        }
    }
    params
}

/// Intermediate activations kept for the backward pass.
struct Trace {
    x0: FeatureMap,
    a1: FeatureMap,
    idx1: Vec<usize>,
    p1: FeatureMap,
    a2: FeatureMap,
    idx2: Vec<usize>,
    p2: FeatureMap,
    a3: FeatureMap,
    c2: FeatureMap,
    a4: FeatureMap,
    c1: FeatureMap,
    a5: FeatureMap,
    /// Full-resolution probabilities per head: lower, middle, final.
    probs: [Vec<f64>; 3],
}

fn check_input(image: &ImageGrid) -> Result<()> {
    let (h, w) = image.dims();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::NotDivisible {
            height: h,
            width: w,
        });
    }
    Ok(())
}

fn head_probs(logits: &FeatureMap, factor: usize) -> Vec<f64> {
    let up = if factor == 1 {
        logits.clone()
    } else {
        upsample(logits, factor)
    };
    up.data.into_iter().map(sigmoid).collect()
}

fn run(params: &SegmenterParams, image: &ImageGrid) -> Trace {
    let (h, w) = image.dims();
    let x0 = FeatureMap {
        channels: 1,
        height: h,
        width: w,
        data: image.values().to_vec(),
    };
    let mut a1 = conv_forward(&x0, &params.enc1);
    relu_inplace(&mut a1);
    let (p1, idx1) = maxpool2(&a1);
    let mut a2 = conv_forward(&p1, &params.enc2);
    relu_inplace(&mut a2);
    let (p2, idx2) = maxpool2(&a2);
    let mut a3 = conv_forward(&p2, &params.bottleneck);
    relu_inplace(&mut a3);

    let c2 = upsample(&a3, 2).concat(&a2);
    let mut a4 = conv_forward(&c2, &params.dec_mid);
    relu_inplace(&mut a4);
    let c1 = upsample(&a4, 2).concat(&a1);
    let mut a5 = conv_forward(&c1, &params.dec_top);
    relu_inplace(&mut a5);

    let probs = [
        head_probs(&conv_forward(&a3, &params.head_lower), 4),
        head_probs(&conv_forward(&a4, &params.head_middle), 2),
        head_probs(&conv_forward(&a5, &params.head_final), 1),
    ];
    Trace {
        x0,
        a1,
        idx1,
        p1,
        a2,
        idx2,
        p2,
        a3,
        c2,
        a4,
        c1,
        a5,
        probs,
    }
}

/// Three head probability maps at input resolution. Both sides of the image
/// must be multiples of 4.
pub fn forward(params: &SegmenterParams, image: &ImageGrid) -> Result<MultiHeadPrediction> {
    check_input(image)?;
    let (h, w) = image.dims();
    let [lower, middle, final_] = run(params, image).probs;
    Ok(MultiHeadPrediction {
        lower: ProbMap::from_raw(h, w, lower),
        middle: ProbMap::from_raw(h, w, middle),
        final_: ProbMap::from_raw(h, w, final_),
    })
}

/// Loss of one sample and its exact gradient with respect to every parameter.
pub fn backward(
    params: &SegmenterParams,
    image: &ImageGrid,
    target: &BinaryMask,
    weights: &LossWeights,
    kind: LossKind,
) -> Result<(f64, SegmenterParams)> {
    check_input(image)?;
    ensure_same_dims(image.dims(), target.dims())?;
    weights.validate()?;
    let mut grads = SegmenterParams::zeros();
    let loss = accumulate(params, image, target, weights, kind, 1.0, &mut grads);
    Ok((loss, grads))
}

/// Adds `scale * d(loss)/d(params)` into `grads` and returns the unscaled
/// loss. Inputs are assumed validated.
pub(crate) fn accumulate(
    params: &SegmenterParams,
    image: &ImageGrid,
    target: &BinaryMask,
    weights: &LossWeights,
    kind: LossKind,
    scale: f64,
    grads: &mut SegmenterParams,
) -> f64 {
    let tr = run(params, image);
    let (h, w) = image.dims();
    let t = target.values();
    let alphas = weights.as_array();

    let mut loss = 0.0;
    let mut dz: [FeatureMap; 3] = std::array::from_fn(|_| FeatureMap::zeros(1, h, w));
    for k in 0..3 {
        let p = &tr.probs[k];
        match kind {
            LossKind::CrossEntropy => {
                loss += alphas[k] * bce(p, t);
                bce_logit_grad(p, t, scale * alphas[k], &mut dz[k].data);
            }
            LossKind::SoftDice => {
                loss += alphas[k] * soft_dice(p, t);
                soft_dice_logit_grad(p, t, scale * alphas[k], &mut dz[k].data);
            }
        }
    }
    let [dz_lower, dz_middle, dz_final] = dz;

    // heads
    let mut g_a5 = conv_backward(
        &tr.a5,
        &params.head_final,
        &dz_final,
        &mut grads.head_final,
        true,
    )
    .expect("input grad requested");
    let g_a4_head = conv_backward(
        &tr.a4,
        &params.head_middle,
        &upsample_backward(&dz_middle, 2),
        &mut grads.head_middle,
        true,
    )
    .expect("input grad requested");
    let g_a3_head = conv_backward(
        &tr.a3,
        &params.head_lower,
        &upsample_backward(&dz_lower, 4),
        &mut grads.head_lower,
        true,
    )
    .expect("input grad requested");

    // top decoder stage
    relu_backward(&tr.a5, &mut g_a5);
    let g_c1 = conv_backward(&tr.c1, &params.dec_top, &g_a5, &mut grads.dec_top, true)
        .expect("input grad requested");
    let (g_up4, g_a1_skip) = g_c1.split(tr.a4.channels);
    let mut g_a4 = upsample_backward(&g_up4, 2);
    add_into(&mut g_a4, &g_a4_head);

    // middle decoder stage
    relu_backward(&tr.a4, &mut g_a4);
    let g_c2 = conv_backward(&tr.c2, &params.dec_mid, &g_a4, &mut grads.dec_mid, true)
        .expect("input grad requested");
    let (g_up3, g_a2_skip) = g_c2.split(tr.a3.channels);
    let mut g_a3 = upsample_backward(&g_up3, 2);
    add_into(&mut g_a3, &g_a3_head);

    // encoder
    relu_backward(&tr.a3, &mut g_a3);
    let g_p2 = conv_backward(
        &tr.p2,
        &params.bottleneck,
        &g_a3,
        &mut grads.bottleneck,
        true,
    )
    .expect("input grad requested");
    let mut g_a2 = maxpool2_backward(&g_p2, &tr.idx2, tr.a2.height, tr.a2.width);
    add_into(&mut g_a2, &g_a2_skip);
    relu_backward(&tr.a2, &mut g_a2);
    let g_p1 = conv_backward(&tr.p1, &params.enc2, &g_a2, &mut grads.enc2, true)
        .expect("input grad requested");
    let mut g_a1 = maxpool2_backward(&g_p1, &tr.idx1, tr.a1.height, tr.a1.width);
    add_into(&mut g_a1, &g_a1_skip);
    relu_backward(&tr.a1, &mut g_a1);
    conv_backward(&tr.x0, &params.enc1, &g_a1, &mut grads.enc1, false);

    loss
}

fn add_into(dst: &mut FeatureMap, src: &FeatureMap) {
    for (a, b) in dst.data.iter_mut().zip(&src.data) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::objective;

    fn image(seed: u64, h: usize, w: usize) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        assert_eq!(init_params(7), init_params(7));
        assert_ne!(init_params(7), init_params(8));
        let p = init_params(0);
        p.validate().unwrap();
        assert!(p.enc1.bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn forward_shapes_and_range() {
        let p = init_params(1);
        let pred = forward(&p, &image(2, 16, 16)).unwrap();
        for head in pred.heads() {
            assert_eq!(head.dims(), (16, 16));
            assert!(head.values().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn zero_input_zero_heads_give_half() {
        let mut p = init_params(3);
        for l in [&mut p.head_lower, &mut p.head_middle, &mut p.head_final] {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let pred = forward(&p, &ImageGrid::filled(8, 12, 0.0).unwrap()).unwrap();
        for head in pred.heads() {
            assert!(head.values().iter().all(|v| *v == 0.5));
        }
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let p = init_params(11);
        let img = image(12, 16, 16);
        assert_eq!(forward(&p, &img).unwrap(), forward(&p, &img).unwrap());
    }

    #[test]
    fn forward_rejects_indivisible_dims() {
        let err = forward(&init_params(0), &ImageGrid::filled(10, 16, 0.1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NotDivisible { .. }));
    }

    #[test]
    fn backward_loss_matches_objective() {
        let p = init_params(5);
        let img = image(6, 16, 16);
        let t = BinaryMask::from_fn(16, 16, |r, c| r + c < 14).unwrap();
        let w = LossWeights::default();
        for kind in [LossKind::CrossEntropy, LossKind::SoftDice] {
            let (loss, _) = backward(&p, &img, &t, &w, kind).unwrap();
            let pred = forward(&p, &img).unwrap();
            let direct = objective(&pred, &t, &w, kind).unwrap();
            assert!((loss - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn detached_heads_get_zero_gradient() {
        let p = init_params(5);
        let img = image(6, 16, 16);
        let t = BinaryMask::from_fn(16, 16, |r, _| r < 7).unwrap();
        let w = LossWeights::new(0.0, 0.0, 1.0).unwrap();
        for kind in [LossKind::CrossEntropy, LossKind::SoftDice] {
            let (_, g) = backward(&p, &img, &t, &w, kind).unwrap();
            for l in [&g.head_lower, &g.head_middle] {
                assert!(l.weights.iter().chain(&l.bias).all(|v| *v == 0.0));
            }
            assert!(g.head_final.weights.iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let p = init_params(9);
        let img = image(10, 8, 8);
        let t = BinaryMask::from_fn(8, 8, |r, c| r * c > 9).unwrap();
        let w = LossWeights::default();
        let a = backward(&p, &img, &t, &w, LossKind::CrossEntropy).unwrap();
        let b = backward(&p, &img, &t, &w, LossKind::CrossEntropy).unwrap();
        assert_eq!(a, b);
    }
}
