//! Dense feature-map tensors and the handful of layer kernels the network
//! needs, each with its backward pass.

/// Channel-major feature map `(channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Stacks `self` on top of `other` along the channel axis.
    pub fn concat(&self, other: &FeatureMap) -> FeatureMap {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        FeatureMap {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Inverse of [`FeatureMap::concat`] for gradients.
    pub fn split(self, first_channels: usize) -> (FeatureMap, FeatureMap) {
        let n = self.plane_len();
        let mut data = self.data;
        let tail = data.split_off(first_channels * n);
        (
            FeatureMap {
                channels: first_channels,
                height: self.height,
                width: self.width,
                data,
            },
            FeatureMap {
                channels: self.channels - first_channels,
                height: self.height,
                width: self.width,
                data: tail,
            },
        )
    }
}

/// Convolution kernel bank, weights laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[cfg(test)]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }
}

/// Range of output coordinates `y` for which `y + d` stays inside `0..len`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfolds `input` into a `(in_channels * k * k, height * width)` matrix of
/// zero-padded patches (row index `(i * k + ky) * k + kx`).
fn im2col(input: &FeatureMap, k: usize) -> Vec<f64> {
    let (h, w) = (input.height, input.width);
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0; input.channels * k * k * n];
    for i in 0..input.channels {
        let src = input.plane(i);
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x0, x1) = valid_range(w, dx);
                let row = &mut cols[((i * k + ky) * k + kx) * n..][..n];
                for y in y0..y1 {
                    let s0 =
                        (((y as isize + dy) as usize * w) as isize + x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, k: usize) -> FeatureMap {
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut out = FeatureMap::zeros(channels, h, w);
    for i in 0..channels {
        let dst = &mut out.data[i * n..(i + 1) * n];
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x0, x1) = valid_range(w, dx);
                let row = &cols[((i * k + ky) * k + kx) * n..][..n];
                for y in y0..y1 {
                    let s0 =
                        (((y as isize + dy) as usize * w) as isize + x0 as isize + dx) as usize;
                    for (d, g) in dst[s0..s0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&row[y * w + x0..y * w + x1])
                    {
                        *d += g;
                    }
                }
            }
        }
    }
    out
}

/// `c (m x n) = op(a) * op(b) + beta * c` with `c` row-major; explicit
/// strides on `a` and `b` make transposes free.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index reachable through the
    // given dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same-padded stride-1 convolution (zero padding).
pub(crate) fn conv_forward(input: &FeatureMap, layer: &ConvLayer) -> FeatureMap {
    debug_assert_eq!(input.channels, layer.in_channels);
    let (h, w) = (input.height, input.width);
    let n = h * w;
    let kk = layer.fan_in();
    let mut out = FeatureMap::zeros(layer.out_channels, h, w);
    for (o, plane) in out.data.chunks_exact_mut(n).enumerate() {
        plane.fill(layer.bias[o]);
    }
    let unfolded;
    let cols: &[f64] = if layer.kernel == 1 {
        &input.data
    } else {
        unfolded = im2col(input, layer.kernel);
        &unfolded
    };
    gemm(
        layer.out_channels,
        kk,
        n,
        &layer.weights,
        (kk, 1),
        cols,
        (n, 1),
        1.0,
        &mut out.data,
    );
    out
}

/// Accumulates parameter gradients into `grad` and returns the gradient with
/// respect to the input (skipped when `need_input_grad` is false).
pub(crate) fn conv_backward(
    input: &FeatureMap,
    layer: &ConvLayer,
    grad_out: &FeatureMap,
    grad: &mut ConvLayer,
    need_input_grad: bool,
) -> Option<FeatureMap> {
    let (h, w) = (input.height, input.width);
    let n = h * w;
    let kk = layer.fan_in();
    for (o, g) in grad_out.data.chunks_exact(n).enumerate() {
        grad.bias[o] += g.iter().sum::<f64>();
    }
    let unfolded;
    let cols: &[f64] = if layer.kernel == 1 {
        &input.data
    } else {
        unfolded = im2col(input, layer.kernel);
        &unfolded
    };
    // dW (out x kk) += dY (out x n) * cols^T (n x kk)
    gemm(
        layer.out_channels,
        n,
        kk,
        &grad_out.data,
        (n, 1),
        cols,
        (1, n),
        1.0,
        &mut grad.weights,
    );
    if !need_input_grad {
        return None;
    }
    // dCols (kk x n) = W^T (kk x out) * dY (out x n)
    let mut dcols = vec![0.0; kk * n];
    gemm(
        kk,
        layer.out_channels,
        n,
        &layer.weights,
        (1, kk),
        &grad_out.data,
        (n, 1),
        0.0,
        &mut dcols,
    );
    if layer.kernel == 1 {
        return Some(FeatureMap {
            channels: layer.in_channels,
            height: h,
            width: w,
            data: dcols,
        });
    }
    Some(col2im(&dcols, layer.in_channels, h, w, layer.kernel))
}

pub(crate) fn relu_inplace(map: &mut FeatureMap) {
    for v in &mut map.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub(crate) fn relu_backward(activated: &FeatureMap, grad: &mut FeatureMap) {
    for (g, a) in grad.data.iter_mut().zip(&activated.data) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling; returns the pooled map and the flat argmax index per output.
pub(crate) fn maxpool2(input: &FeatureMap) -> (FeatureMap, Vec<usize>) {
    let (h, w) = (input.height / 2, input.width / 2);
    let mut out = FeatureMap::zeros(input.channels, h, w);
    let mut argmax = vec![0; out.data.len()];
    let n_in = input.plane_len();
    for c in 0..input.channels {
        for y in 0..h {
            for x in 0..w {
                let mut best = c * n_in + (2 * y) * input.width + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = c * n_in + (2 * y + dy) * input.width + 2 * x + dx;
                    if input.data[idx] > input.data[best] {
                        best = idx;
                    }
                }
                let o = (c * h + y) * w + x;
                out.data[o] = input.data[best];
                argmax[o] = best;
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool2_backward(
    grad_out: &FeatureMap,
    argmax: &[usize],
    input_height: usize,
    input_width: usize,
) -> FeatureMap {
    let mut g = FeatureMap::zeros(grad_out.channels, input_height, input_width);
    for (go, &idx) in grad_out.data.iter().zip(argmax) {
        g.data[idx] += go;
    }
    g
}

/// Nearest-neighbour upsampling by an integer factor on a flat plane stack.
pub(crate) fn upsample(input: &FeatureMap, factor: usize) -> FeatureMap {
    let (h, w) = (input.height * factor, input.width * factor);
    let mut out = FeatureMap::zeros(input.channels, h, w);
    for c in 0..input.channels {
        let src = input.plane(c);
        for y in 0..h {
            let sy = y / factor;
            let row = &mut out.data[(c * h + y) * w..(c * h + y + 1) * w];
            for (x, v) in row.iter_mut().enumerate() {
                *v = src[sy * input.width + x / factor];
            }
        }
    }
    out
}

/// Gradient of [`upsample`]: sums each `factor x factor` block.
pub(crate) fn upsample_backward(grad_out: &FeatureMap, factor: usize) -> FeatureMap {
    let (h, w) = (grad_out.height / factor, grad_out.width / factor);
    let mut g = FeatureMap::zeros(grad_out.channels, h, w);
    for c in 0..grad_out.channels {
        let src = grad_out.plane(c);
        for y in 0..grad_out.height {
            for x in 0..grad_out.width {
                g.data[(c * h + y / factor) * w + x / factor] += src[y * grad_out.width + x];
            }
        }
    }
    g
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct convolution with explicit bounds checks, independent of the
    // slice arithmetic above.
    fn naive_conv(input: &FeatureMap, layer: &ConvLayer) -> FeatureMap {
        let (h, w) = (input.height as isize, input.width as isize);
        let p = (layer.kernel / 2) as isize;
        let mut out = FeatureMap::zeros(layer.out_channels, input.height, input.width);
        for o in 0..layer.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layer.bias[o];
                    for i in 0..layer.in_channels {
                        for ky in 0..layer.kernel as isize {
                            for kx in 0..layer.kernel as isize {
                                let (sy, sx) = (y + ky - p, x + kx - p);
                                if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                    continue;
                                }
                                acc += layer.w(o, i, ky as usize, kx as usize)
                                    * input.data[(i * input.height + sy as usize) * input.width
                                        + sx as usize];
                            }
                        }
                    }
                    out.data[(o * input.height + y as usize) * input.width + x as usize] = acc;
                }
            }
        }
        out
    }

    fn filled(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut m = FeatureMap::zeros(c, h, w);
        let mut s = seed;
        for v in &mut m.data {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *v = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
        }
        m
    }

    #[test]
    fn conv_matches_naive() {
        let input = filled(3, 5, 7, 1);
        let mut layer = ConvLayer::zeros(2, 3, 3);
        let src = filled(1, 1, layer.weights.len(), 2);
        layer.weights.copy_from_slice(&src.data);
        layer.bias = vec![0.1, -0.2];
        let a = conv_forward(&input, &layer);
        let b = naive_conv(&input, &layer);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> for the input gradient.
        let input = filled(2, 4, 6, 3);
        let mut layer = ConvLayer::zeros(3, 2, 3);
        let n = layer.weights.len();
        layer.weights.copy_from_slice(&filled(1, 1, n, 4).data);
        let g = filled(3, 4, 6, 5);
        let out = conv_forward(&input, &layer);
        let lhs: f64 = out.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let mut grad = ConvLayer::zeros(3, 2, 3);
        let gi = conv_backward(&input, &layer, &g, &mut grad, true).unwrap();
        let rhs: f64 = input.data.iter().zip(&gi.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        // linear in weights (bias is zero): <out, g> = <w, dw>
        let rhs_w: f64 = layer
            .weights
            .iter()
            .zip(&grad.weights)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let m = filled(2, 4, 4, 9);
        let (p, idx) = maxpool2(&m);
        assert_eq!((p.channels, p.height, p.width), (2, 2, 2));
        for (v, i) in p.data.iter().zip(&idx) {
            assert_eq!(*v, m.data[*i]);
        }
        let u = upsample(&p, 2);
        assert_eq!(u.data.len(), m.data.len());
        let back = upsample_backward(&u, 2);
        for (a, b) in back.data.iter().zip(&p.data) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
