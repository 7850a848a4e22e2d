//! Deeply supervised encoder-decoder segmenter.
//!
//! The network is a three-scale U-Net-style model with three sigmoid heads:
//!
//! ```text
//! x ─ conv(1→8) ─ pool ─ conv(8→16) ─ pool ─ conv(16→32) ──────────────► lower head (×4 up)
//!        │                    │                  │
//!        │                    └──── concat ◄─ up×2
//!        │                            │
//!        │                       conv(48→16) ─────────────────────────► middle head (×2 up)
//!        │                            │
//!        └──────────── concat ◄─── up×2
//!                        │
//!                   conv(24→8) ───────────────────────────────────────► final head
//! ```
//!
//! Every conv is 3×3 with ReLU; heads are 1×1 projections followed by a
//! sigmoid. Upsampling is nearest-neighbour throughout. Training minimizes a
//! weighted sum of per-head losses (see [`loss`]) with hand-derived gradients.

pub mod checkpoint;
pub(crate) mod layers;
pub mod loss;
mod net;
mod train;

pub use layers::ConvLayer;
pub use loss::{head_loss, objective, soft_dice_loss, total_loss};
pub use net::{backward, forward, init_params};
pub use train::train;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageGrid, ProbMap};

/// Probability maps of the lower, middle and final heads at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadPrediction {
    pub lower: ProbMap,
    pub middle: ProbMap,
    pub final_: ProbMap,
}

impl MultiHeadPrediction {
    pub fn new(lower: ProbMap, middle: ProbMap, final_: ProbMap) -> Result<Self> {
        crate::raster::ensure_same_dims(lower.dims(), final_.dims())?;
        crate::raster::ensure_same_dims(middle.dims(), final_.dims())?;
        Ok(Self {
            lower,
            middle,
            final_,
        })
    }

    pub fn heads(&self) -> [&ProbMap; 3] {
        [&self.lower, &self.middle, &self.final_]
    }

    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            lower: self.lower.crop(height, width)?,
            middle: self.middle.crop(height, width)?,
            final_: self.final_.crop(height, width)?,
        })
    }
}

/// Names of the parameter groups, in checkpoint order.
pub const LAYER_NAMES: [&str; 8] = [
    "enc1",
    "enc2",
    "bottleneck",
    "dec_mid",
    "dec_top",
    "head_lower",
    "head_middle",
    "head_final",
];

/// Trunk weights `W` and the three head projections.
///
/// The same type doubles as the gradient container returned by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterParams {
    pub enc1: ConvLayer,
    pub enc2: ConvLayer,
    pub bottleneck: ConvLayer,
    pub dec_mid: ConvLayer,
    pub dec_top: ConvLayer,
    pub head_lower: ConvLayer,
    pub head_middle: ConvLayer,
    pub head_final: ConvLayer,
}

impl SegmenterParams {
    /// All-zero parameters with the reference shapes.
    pub fn zeros() -> Self {
        Self {
            enc1: ConvLayer::zeros(8, 1, 3),
            enc2: ConvLayer::zeros(16, 8, 3),
            bottleneck: ConvLayer::zeros(32, 16, 3),
            dec_mid: ConvLayer::zeros(16, 48, 3),
            dec_top: ConvLayer::zeros(8, 24, 3),
            head_lower: ConvLayer::zeros(1, 32, 1),
            head_middle: ConvLayer::zeros(1, 16, 1),
            head_final: ConvLayer::zeros(1, 8, 1),
        }
    }

    pub fn layers(&self) -> [(&'static str, &ConvLayer); 8] {
        [
            (LAYER_NAMES[0], &self.enc1),
            (LAYER_NAMES[1], &self.enc2),
            (LAYER_NAMES[2], &self.bottleneck),
            (LAYER_NAMES[3], &self.dec_mid),
            (LAYER_NAMES[4], &self.dec_top),
            (LAYER_NAMES[5], &self.head_lower),
            (LAYER_NAMES[6], &self.head_middle),
            (LAYER_NAMES[7], &self.head_final),
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut ConvLayer; 8] {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.bottleneck,
            &mut self.dec_mid,
            &mut self.dec_top,
            &mut self.head_lower,
            &mut self.head_middle,
            &mut self.head_final,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    /// Flattened view in checkpoint order: per layer, weights then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, l) in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in self.layers_mut() {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(&mut f);
        }
    }

    pub fn zip_mut(&mut self, other: &SegmenterParams, mut f: impl FnMut(&mut f64, f64)) {
        for (dst, (_, src)) in self.layers_mut().into_iter().zip(other.layers()) {
            for (a, &b) in dst.weights.iter_mut().zip(&src.weights) {
                f(a, b);
            }
            for (a, &b) in dst.bias.iter_mut().zip(&src.bias) {
                f(a, b);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reference = Self::zeros();
        for ((name, l), (_, r)) in self.layers().into_iter().zip(reference.layers()) {
            if (l.out_channels, l.in_channels, l.kernel)
                != (r.out_channels, r.in_channels, r.kernel)
                || l.weights.len() != r.weights.len()
                || l.bias.len() != r.bias.len()
            {
                return Err(Error::invalid(
                    "params",
                    format!("layer {name} has the wrong shape"),
                ));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::invalid(
                    "params",
                    format!("layer {name} has non-finite values"),
                ));
            }
        }
        Ok(())
    }
}

/// Per-head loss weights `(alpha_l, alpha_m, alpha_f)`; they sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lower: f64,
    pub middle: f64,
    pub final_: f64,
}

impl LossWeights {
    pub fn new(lower: f64, middle: f64, final_: f64) -> Result<Self> {
        let w = Self {
            lower,
            middle,
            final_,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lower, self.middle, self.final_];
        if all.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::invalid(
                "loss weights",
                "weights must be nonnegative",
            ));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "loss weights",
                format!("weights sum to {sum}, not 1"),
            ));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lower, self.middle, self.final_]
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lower: 0.1,
            middle: 0.3,
            final_: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    SoftDice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    /// Adam with the usual `(0.9, 0.999, 1e-8)` constants; moments are reset
    /// at the start of every [`train`] call.
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub optimizer: Optimizer,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        self.loss_weights.validate()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 3e-3,
            batch_size: 8,
            loss_kind: LossKind::CrossEntropy,
            optimizer: Optimizer::Adam,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

/// Contract the active-learning loop needs from a multi-head model.
pub trait Segmenter {
    fn predict(&self, image: &ImageGrid) -> Result<MultiHeadPrediction>;

    /// Warm-started training on `data` (image, target) pairs.
    fn fine_tune(&mut self, data: &[(&ImageGrid, &BinaryMask)], cfg: &TrainConfig) -> Result<()>;
}

/// The reference deeply supervised network. Inputs whose sides are not
/// multiples of 4 are edge-padded and predictions cropped back.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSupervisedNet {
    pub params: SegmenterParams,
}

impl DeepSupervisedNet {
    pub fn new(seed: u64) -> Self {
        Self {
            params: init_params(seed),
        }
    }
}

impl Segmenter for DeepSupervisedNet {
    fn predict(&self, image: &ImageGrid) -> Result<MultiHeadPrediction> {
        let (h, w) = image.dims();
        if h % 4 == 0 && w % 4 == 0 {
            return forward(&self.params, image);
        }
        forward(&self.params, &image.pad_to_multiple(4))?.crop(h, w)
    }

    fn fine_tune(&mut self, data: &[(&ImageGrid, &BinaryMask)], cfg: &TrainConfig) -> Result<()> {
        let needs_pad = data
            .iter()
            .any(|(img, _)| img.height() % 4 != 0 || img.width() % 4 != 0);
        self.params = if needs_pad {
            let padded: Vec<(ImageGrid, BinaryMask)> = data
                .iter()
                .map(|(i, m)| (i.pad_to_multiple(4), m.pad_to_multiple(4)))
                .collect();
            let refs: Vec<(&ImageGrid, &BinaryMask)> = padded.iter().map(|(i, m)| (i, m)).collect();
            train(&self.params, &refs, cfg)?
        } else {
            train(&self.params, data, cfg)?
        };
        Ok(())
    }
}
