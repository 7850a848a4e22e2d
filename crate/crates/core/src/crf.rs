//! Fully connected binary CRF with Gaussian and bilateral pairwise kernels,
//! decoded by mean-field inference.
//!
//! Energy of a labeling `y`:
//!
//! ```text
//! E(y) = Σ_i ψ_u(y_i) + Σ_{i<j} [y_i ≠ y_j] (w_g k_g(i, j) + w_b k_b(i, j))
//! k_g  = exp(-|s_i - s_j|² / 2σ_g²)
//! k_b  = exp(-|s_i - s_j|² / 2σ_b² - (I_i - I_j)² / 2σ_c²)
//! ```
//!
//! with `s` pixel coordinates and `I` normalized gray levels. Mean-field
//! messages can be computed over all pixel pairs ([`MessagePath::Exact`]) or
//! within a window of radius `ceil(4σ)` ([`MessagePath::Windowed`]), where the
//! Gaussian kernel is applied as a separable filter.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, ImageGrid, ProbMap};

pub const UNARY_EPS: f64 = 1e-8;
/// Largest side accepted by [`gibbs_energy`].
pub const ORACLE_LIMIT: usize = 64;

const BG: usize = 0;
const FG: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfParams {
    /// Spatial standard deviation of the Gaussian kernel, pixels.
    pub gaussian_sdims: f64,
    pub gaussian_compat: f64,
    /// Spatial standard deviation of the bilateral kernel, pixels.
    pub bilateral_sdims: f64,
    /// Intensity standard deviation of the bilateral kernel, in `[0, 1]` gray units.
    pub bilateral_schan: f64,
    pub bilateral_compat: f64,
    /// Mean-field iterations.
    pub steps: usize,
}

impl CrfParams {
    /// Tuned centre for ISIC 2017 dermoscopy images (192×240).
    pub fn isic() -> Self {
        Self {
            gaussian_sdims: 29.93,
            gaussian_compat: 9.06,
            bilateral_sdims: 28.19,
            bilateral_schan: 5.59,
            bilateral_compat: 9.46,
            steps: 2,
        }
    }

    /// Tuned centre for RSNA bone-age radiographs (512×512).
    pub fn rsna() -> Self {
        Self {
            gaussian_sdims: 1.0,
            gaussian_compat: 6.0,
            bilateral_sdims: 1.0,
            bilateral_schan: 7.0,
            bilateral_compat: 4.0,
            steps: 1,
        }
    }

    /// Centre used for the 32×32 synthetic corpus.
    pub fn desk() -> Self {
        Self {
            gaussian_sdims: 1.0,
            gaussian_compat: 0.3,
            bilateral_sdims: 2.0,
            bilateral_schan: 0.15,
            bilateral_compat: 0.6,
            steps: 3,
        }
    }

    /// Both pairwise weights zero: inference reduces to thresholding.
    pub fn without_pairwise(self) -> Self {
        Self {
            gaussian_compat: 0.0,
            bilateral_compat: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gaussian.sdims", self.gaussian_sdims),
            ("bilateral.sdims", self.bilateral_sdims),
            ("bilateral.schan", self.bilateral_schan),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "crf",
                    format!("{name} = {v} must be positive"),
                ));
            }
        }
        for (name, v) in [
            ("gaussian.compat", self.gaussian_compat),
            ("bilateral.compat", self.bilateral_compat),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "crf",
                    format!("{name} = {v} must be nonnegative"),
                ));
            }
        }
        if self.steps == 0 {
            return Err(Error::invalid("crf", "steps must be at least 1"));
        }
        Ok(())
    }

    /// `key=value` lines, keys optionally prefixed (e.g. `ensemble.center.`).
    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{prefix}{k}={v}");
        }
        s
    }

    fn entries(&self) -> [(&'static str, String); 6] {
        [
            ("gaussian.sdims", self.gaussian_sdims.to_string()),
            ("gaussian.compat", self.gaussian_compat.to_string()),
            ("bilateral.sdims", self.bilateral_sdims.to_string()),
            ("bilateral.schan", self.bilateral_schan.to_string()),
            ("bilateral.compat", self.bilateral_compat.to_string()),
            ("steps", self.steps.to_string()),
        ]
    }

    /// Reads the six keys under `prefix` from a parsed key/value map. All
    /// keys are required.
    pub fn from_kv(map: &BTreeMap<String, String>, prefix: &str) -> Result<Self> {
        let get = |k: &str| -> Result<&String> {
            map.get(&format!("{prefix}{k}"))
                .ok_or_else(|| Error::parse(format!("{prefix}{k}"), "missing key"))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|e| Error::parse(format!("{prefix}{k}"), format!("{e}")))
        };
        let p = Self {
            gaussian_sdims: real("gaussian.sdims")?,
            gaussian_compat: real("gaussian.compat")?,
            bilateral_sdims: real("bilateral.sdims")?,
            bilateral_schan: real("bilateral.schan")?,
            bilateral_compat: real("bilateral.compat")?,
            steps: get("steps")?
                .parse()
                .map_err(|e| Error::parse(format!("{prefix}steps"), format!("{e}")))?,
        };
        p.validate()?;
        Ok(p)
    }
}

impl Default for CrfParams {
    fn default() -> Self {
        Self::desk()
    }
}

/// Kernel feature vector of one pixel: position scaled by `1/sdims` and,
/// for the bilateral kernel, intensity scaled by `1/schan`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFeatures {
    pub spatial: [f64; 2],
    pub intensity: Option<f64>,
}

impl PixelFeatures {
    pub fn gaussian(row: usize, col: usize, sdims: f64) -> Self {
        Self {
            spatial: [row as f64 / sdims, col as f64 / sdims],
            intensity: None,
        }
    }

    pub fn bilateral(row: usize, col: usize, value: f64, sdims: f64, schan: f64) -> Self {
        Self {
            spatial: [row as f64 / sdims, col as f64 / sdims],
            intensity: Some(value / schan),
        }
    }

    /// `exp(-|f_i - f_j|² / 2)`.
    pub fn kernel(&self, other: &PixelFeatures) -> f64 {
        let dr = self.spatial[0] - other.spatial[0];
        let dc = self.spatial[1] - other.spatial[1];
        let di = match (self.intensity, other.intensity) {
            (Some(a), Some(b)) => a - b,
            _ => 0.0,
        };
        (-(dr * dr + dc * dc + di * di) / 2.0).exp()
    }
}

/// Per-pixel unary energies `-log p` for each label.
#[derive(Debug, Clone, PartialEq)]
pub struct Unary {
    pub background: Vec<f64>,
    pub foreground: Vec<f64>,
}

pub fn unary_from_prob(p: &ProbMap) -> Unary {
    let (background, foreground) = p
        .values()
        .iter()
        .map(|&v| {
            (
                -(1.0 - v).clamp(UNARY_EPS, 1.0 - UNARY_EPS).ln(),
                -v.clamp(UNARY_EPS, 1.0 - UNARY_EPS).ln(),
            )
        })
        .unzip();
    Unary {
        background,
        foreground,
    }
}

/// Mean-field marginals `Q_i = (Q_i(bg), Q_i(fg))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalField {
    height: usize,
    width: usize,
    q: Vec<[f64; 2]>,
}

impl MarginalField {
    /// `Q_i ∝ exp(-ψ_u(i, ·))`.
    pub fn from_unary(height: usize, width: usize, unary: &Unary) -> Self {
        let q = unary
            .background
            .iter()
            .zip(&unary.foreground)
            .map(|(&b, &f)| normalize(-b, -f))
            .collect();
        Self { height, width, q }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn marginals(&self) -> &[[f64; 2]] {
        &self.q
    }

    pub fn foreground(&self) -> impl Iterator<Item = f64> + '_ {
        self.q.iter().map(|q| q[FG])
    }

    /// Per-pixel argmax; ties go to foreground.
    pub fn decode(&self) -> BinaryMask {
        BinaryMask::new(
            self.height,
            self.width,
            self.q.iter().map(|q| u8::from(q[FG] >= q[BG])).collect(),
        )
        .expect("dimensions are consistent")
    }
}

/// Softmax over two log-scores.
fn normalize(log_bg: f64, log_fg: f64) -> [f64; 2] {
    let m = log_bg.max(log_fg);
    let b = (log_bg - m).exp();
    let f = (log_fg - m).exp();
    let z = b + f;
    [b / z, f / z]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MessagePath {
    /// Sum over every pixel pair. Quadratic; reference quality.
    Exact,
    /// Window of radius `ceil(4σ)` per kernel; separable filtering for the
    /// Gaussian kernel.
    #[default]
    Windowed,
}

fn window_radius(sdims: f64) -> usize {
    (4.0 * sdims).ceil() as usize
}

/// Returns `(msg_bg, msg_fg)`: for each pixel the pairwise cost of taking
/// that label given the neighbours' current marginals.
fn messages_exact(
    field: &MarginalField,
    image: &ImageGrid,
    params: &CrfParams,
) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = field.dims();
    let n = h * w;
    let feats: Vec<(PixelFeatures, PixelFeatures)> = (0..n)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            (
                PixelFeatures::gaussian(r, c, params.gaussian_sdims),
                PixelFeatures::bilateral(
                    r,
                    c,
                    image.values()[i],
                    params.bilateral_sdims,
                    params.bilateral_schan,
                ),
            )
        })
        .collect();
    let mut msg_bg = vec![0.0; n];
    let mut msg_fg = vec![0.0; n];
    for i in 0..n {
        let (gi, bi) = &feats[i];
        let (mut acc_bg, mut acc_fg) = (0.0, 0.0);
        for (j, (gj, bj)) in feats.iter().enumerate() {
            if j == i {
                continue;
            }
            let k =
                params.gaussian_compat * gi.kernel(gj) + params.bilateral_compat * bi.kernel(bj);
            // Potts: label l pays for every neighbour mass on the other label.
            acc_bg += k * field.q[j][FG];
            acc_fg += k * field.q[j][BG];
        }
        msg_bg[i] = acc_bg;
        msg_fg[i] = acc_fg;
    }
    (msg_bg, msg_fg)
}

fn gaussian_taps(sdims: f64, radius: usize) -> Vec<f64> {
    (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sdims * sdims)).exp())
        .collect()
}

/// Separable truncated Gaussian filter of one plane, including the centre tap.
fn separable_filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = taps.len() - 1;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            tmp[y * w + x] = (lo..=hi)
                .map(|xx| taps[x.abs_diff(xx)] * plane[y * w + xx])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi)
                .map(|yy| taps[y.abs_diff(yy)] * tmp[yy * w + x])
                .sum();
        }
    }
    out
}

/// Bilateral weights of every pixel to its window, `(2r+1)²` per pixel with
/// zeros outside the image and at the centre.
struct BilateralTable {
    weights: Vec<f64>,
}

/// Tables above this many entries are not built; weights are recomputed per step.
const TABLE_LIMIT: usize = 1 << 23;

impl BilateralTable {
    fn fits(h: usize, w: usize, params: &CrfParams) -> bool {
        let side = 2 * window_radius(params.bilateral_sdims) + 1;
        h * w * side * side <= TABLE_LIMIT
    }

    fn new(image: &ImageGrid, params: &CrfParams) -> Self {
        let (h, w) = image.dims();
        let r = window_radius(params.bilateral_sdims);
        let side = 2 * r + 1;
        let mut weights = vec![0.0; h * w * side * side];
        for (i, row) in weights.chunks_exact_mut(side * side).enumerate() {
            bilateral_row(image, params, r, i / w, i % w, row);
        }
        Self { weights }
    }
}

/// Fills `row` with the bilateral weights from pixel `(y, x)` to its window.
fn bilateral_row(
    image: &ImageGrid,
    params: &CrfParams,
    r: usize,
    y: usize,
    x: usize,
    row: &mut [f64],
) {
    let (h, w) = image.dims();
    let side = 2 * r + 1;
    let spatial = gaussian_taps(params.bilateral_sdims, r);
    let inv_2c2 = 1.0 / (2.0 * params.bilateral_schan * params.bilateral_schan);
    let img = image.values();
    let vi = img[y * w + x];
    row.fill(0.0);
    for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
        let sy = spatial[y.abs_diff(yy)];
        for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
            if yy == y && xx == x {
                continue;
            }
            let di = vi - img[yy * w + xx];
            row[(yy + r - y) * side + (xx + r - x)] =
                sy * spatial[x.abs_diff(xx)] * (-di * di * inv_2c2).exp();
        }
    }
}

fn messages_windowed(
    field: &MarginalField,
    image: &ImageGrid,
    params: &CrfParams,
    table: Option<&BilateralTable>,
) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = field.dims();
    let n = h * w;
    let q_bg: Vec<f64> = field.q.iter().map(|q| q[BG]).collect();
    let q_fg: Vec<f64> = field.q.iter().map(|q| q[FG]).collect();
    let mut msg_bg = vec![0.0; n];
    let mut msg_fg = vec![0.0; n];

    if params.gaussian_compat > 0.0 {
        let taps = gaussian_taps(params.gaussian_sdims, window_radius(params.gaussian_sdims));
        let f_fg = separable_filter(&q_fg, h, w, &taps);
        let f_bg = separable_filter(&q_bg, h, w, &taps);
        for i in 0..n {
            // remove the self term (kernel value 1 at zero distance)
            msg_bg[i] += params.gaussian_compat * (f_fg[i] - q_fg[i]);
            msg_fg[i] += params.gaussian_compat * (f_bg[i] - q_bg[i]);
        }
    }

    if params.bilateral_compat > 0.0 {
        let r = window_radius(params.bilateral_sdims);
        let side = 2 * r + 1;
        let mut scratch = vec![0.0; side * side];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let row: &[f64] = match table {
                    Some(t) => &t.weights[i * side * side..(i + 1) * side * side],
                    None => {
                        bilateral_row(image, params, r, y, x, &mut scratch);
                        &scratch
                    }
                };
                let (mut acc_bg, mut acc_fg) = (0.0, 0.0);
                for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    let base = (yy + r - y) * side + r;
                    for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        let k = row[base + xx - x];
                        let j = yy * w + xx;
                        acc_bg += k * q_fg[j];
                        acc_fg += k * q_bg[j];
                    }
                }
                msg_bg[i] += params.bilateral_compat * acc_bg;
                msg_fg[i] += params.bilateral_compat * acc_fg;
            }
        }
    }
    (msg_bg, msg_fg)
}

/// One Jacobi mean-field update: every pixel reads `field` and writes a fresh
/// field.
pub fn meanfield_step(
    field: &MarginalField,
    image: &ImageGrid,
    unary: &Unary,
    params: &CrfParams,
    path: MessagePath,
) -> MarginalField {
    step_with(field, image, unary, params, path, None)
}

fn step_with(
    field: &MarginalField,
    image: &ImageGrid,
    unary: &Unary,
    params: &CrfParams,
    path: MessagePath,
    table: Option<&BilateralTable>,
) -> MarginalField {
    let (msg_bg, msg_fg) = match path {
        MessagePath::Exact => messages_exact(field, image, params),
        MessagePath::Windowed => messages_windowed(field, image, params, table),
    };
    let q = (0..field.q.len())
        .map(|i| {
            normalize(
                -unary.background[i] - msg_bg[i],
                -unary.foreground[i] - msg_fg[i],
            )
        })
        .collect();
    MarginalField {
        height: field.height,
        width: field.width,
        q,
    }
}

/// Runs `params.steps` mean-field iterations from the unary softmax and
/// returns the final marginals.
pub fn marginals(
    image: &ImageGrid,
    p: &ProbMap,
    params: &CrfParams,
    path: MessagePath,
) -> Result<MarginalField> {
    ensure_same_dims(image.dims(), p.dims())?;
    params.validate()?;
    let unary = unary_from_prob(p);
    let (h, w) = p.dims();
    let mut field = MarginalField::from_unary(h, w, &unary);
    let table = (path == MessagePath::Windowed
        && params.bilateral_compat > 0.0
        && params.steps > 1
        && BilateralTable::fits(h, w, params))
    .then(|| BilateralTable::new(image, params));
    for _ in 0..params.steps {
        field = step_with(&field, image, &unary, params, path, table.as_ref());
    }
    Ok(field)
}

/// MAP-style labeling: per-pixel argmax of the mean-field marginals.
pub fn infer(image: &ImageGrid, p: &ProbMap, params: &CrfParams) -> Result<BinaryMask> {
    infer_with(image, p, params, MessagePath::Windowed)
}

pub fn infer_with(
    image: &ImageGrid,
    p: &ProbMap,
    params: &CrfParams,
    path: MessagePath,
) -> Result<BinaryMask> {
    Ok(marginals(image, p, params, path)?.decode())
}

/// Exact Gibbs energy of labeling `y`. Quadratic in the pixel count; sides
/// above [`ORACLE_LIMIT`] are rejected.
pub fn gibbs_energy(
    y: &BinaryMask,
    image: &ImageGrid,
    p: &ProbMap,
    params: &CrfParams,
) -> Result<f64> {
    ensure_same_dims(y.dims(), image.dims())?;
    ensure_same_dims(y.dims(), p.dims())?;
    let (h, w) = y.dims();
    if h > ORACLE_LIMIT || w > ORACLE_LIMIT {
        return Err(Error::OracleLimit {
            height: h,
            width: w,
            limit: ORACLE_LIMIT,
        });
    }
    let unary = unary_from_prob(p);
    let labels = y.values();
    let mut energy: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l == 1 {
                unary.foreground[i]
            } else {
                unary.background[i]
            }
        })
        .sum();
    let n = h * w;
    for i in 0..n {
        let gi = PixelFeatures::gaussian(i / w, i % w, params.gaussian_sdims);
        let bi = PixelFeatures::bilateral(
            i / w,
            i % w,
            image.values()[i],
            params.bilateral_sdims,
            params.bilateral_schan,
        );
        for j in i + 1..n {
            if labels[i] == labels[j] {
                continue;
            }
            let gj = PixelFeatures::gaussian(j / w, j % w, params.gaussian_sdims);
            let bj = PixelFeatures::bilateral(
                j / w,
                j % w,
                image.values()[j],
                params.bilateral_sdims,
                params.bilateral_schan,
            );
            energy +=
                params.gaussian_compat * gi.kernel(&gj) + params.bilateral_compat * bi.kernel(&bj);
        }
    }
    Ok(energy)
}
