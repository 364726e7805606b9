//! Forward and backward kernels over channel-major feature maps.
//!
//! A feature map with `C` channels and `F` frames is a flat `[C][F]`
//! row-major slice. Backward functions accumulate parameter gradients into the
//! slices they are given and return (or accumulate) the input gradient.

const GLN_EPS: f64 = 1e-8;

/// `c = op(a) · op(b)` (or `c += …` when `accumulate`), all row-major.
///
/// `op(a)` is `m × k`; when `a_t` is set, `a` is stored as `k × m`.
/// `op(b)` is `k × n`; when `b_t` is set, `b` is stored as `n × k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every index the strides can reach
    // lies inside the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Pointwise convolution: `y = W x + b`, `W` is `cout × cin`.
pub(crate) fn conv1x1(w: &[f64], b: &[f64], x: &[f64], cin: usize, cout: usize, frames: usize) -> Vec<f64> {
    let mut y = vec![0.0; cout * frames];
    for (row, &bias) in y.chunks_exact_mut(frames).zip(b) {
        row.fill(bias);
    }
    gemm(cout, cin, frames, w, false, x, false, &mut y, true);
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1x1_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    cin: usize,
    cout: usize,
    frames: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    gemm(cout, frames, cin, dy, false, x, true, dw, true);
    for (g, row) in db.iter_mut().zip(dy.chunks_exact(frames)) {
        *g += row.iter().sum::<f64>();
    }
    let mut dx = vec![0.0; cin * frames];
    gemm(cin, cout, frames, w, true, dy, false, &mut dx, false);
    dx
}

pub(crate) fn prelu(x: &[f64], alpha: f64) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { alpha * v }).collect()
}

/// Returns `dx`; accumulates the slope gradient into `dalpha`.
pub(crate) fn prelu_backward(x: &[f64], dy: &[f64], alpha: f64, dalpha: &mut f64) -> Vec<f64> {
    let mut acc = 0.0;
    let dx = x
        .iter()
        .zip(dy)
        .map(|(&v, &g)| {
            if v > 0.0 {
                g
            } else {
                acc += g * v;
                alpha * g
            }
        })
        .collect();
    *dalpha += acc;
    dx
}

/// Normalised input kept for the backward pass of global layer norm.
pub(crate) struct GlnCache {
    pub xhat: Vec<f64>,
    pub inv_std: f64,
}

/// Global layer norm: statistics over all channels and frames, per-channel
/// gain and bias.
pub(crate) fn gln(x: &[f64], gamma: &[f64], beta: &[f64], frames: usize) -> (Vec<f64>, GlnCache) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + GLN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let mut y = vec![0.0; x.len()];
    for (c, (yrow, xrow)) in y.chunks_exact_mut(frames).zip(xhat.chunks_exact(frames)).enumerate() {
        let (g, b) = (gamma[c], beta[c]);
        for (o, &v) in yrow.iter_mut().zip(xrow) {
            *o = g * v + b;
        }
    }
    (y, GlnCache { xhat, inv_std })
}

pub(crate) fn gln_backward(
    cache: &GlnCache,
    dy: &[f64],
    gamma: &[f64],
    frames: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let n = dy.len() as f64;
    let mut dxhat = vec![0.0; dy.len()];
    for (c, ((drow, yrow), xrow)) in dxhat
        .chunks_exact_mut(frames)
        .zip(dy.chunks_exact(frames))
        .zip(cache.xhat.chunks_exact(frames))
        .enumerate()
    {
        let g = gamma[c];
        let mut sg = 0.0;
        let mut sb = 0.0;
        for ((d, &gy), &xh) in drow.iter_mut().zip(yrow).zip(xrow) {
            *d = gy * g;
            sg += gy * xh;
            sb += gy;
        }
        dgamma[c] += sg;
        dbeta[c] += sb;
    }
    let m1 = dxhat.iter().sum::<f64>() / n;
    let m2 = dxhat.iter().zip(&cache.xhat).map(|(d, x)| d * x).sum::<f64>() / n;
    dxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(d, x)| cache.inv_std * (d - m1 - x * m2))
        .collect()
}

/// Per-channel dilated convolution with "same" zero padding; `w` is
/// `channels × kernel`, `kernel` odd.
pub(crate) fn depthwise_conv(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    channels: usize,
    frames: usize,
    kernel: usize,
    dilation: usize,
) -> Vec<f64> {
    let half = (kernel - 1) / 2;
    let mut y = vec![0.0; channels * frames];
    for c in 0..channels {
        let xrow = &x[c * frames..(c + 1) * frames];
        let yrow = &mut y[c * frames..(c + 1) * frames];
        yrow.fill(b[c]);
        for k in 0..kernel {
            let wk = w[c * kernel + k];
            let shift = (k as isize - half as isize) * dilation as isize;
            let (dst, src) = shifted_ranges(frames, shift);
            for (o, &v) in yrow[dst].iter_mut().zip(&xrow[src]) {
                *o += wk * v;
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_conv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    channels: usize,
    frames: usize,
    kernel: usize,
    dilation: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let half = (kernel - 1) / 2;
    let mut dx = vec![0.0; channels * frames];
    for c in 0..channels {
        let xrow = &x[c * frames..(c + 1) * frames];
        let grow = &dy[c * frames..(c + 1) * frames];
        let dxrow = &mut dx[c * frames..(c + 1) * frames];
        db[c] += grow.iter().sum::<f64>();
        for k in 0..kernel {
            let wk = w[c * kernel + k];
            let shift = (k as isize - half as isize) * dilation as isize;
            let (dst, src) = shifted_ranges(frames, shift);
            let mut acc = 0.0;
            for (&g, (&v, d)) in grow[dst].iter().zip(xrow[src.clone()].iter().zip(&mut dxrow[src])) {
                acc += g * v;
                *d += wk * g;
            }
            dw[c * kernel + k] += acc;
        }
    }
    dx
}

/// Output index range and matching input index range for `y[f] += x[f + shift]`.
fn shifted_ranges(frames: usize, shift: isize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let s = shift.unsigned_abs().min(frames);
    if shift >= 0 {
        (0..frames - s, s..frames)
    } else {
        (s..frames, 0..frames - s)
    }
}

/// Number of analysis frames for a signal of `len` samples.
pub fn frame_count(len: usize, frame_length: usize, stride: usize) -> usize {
    if len < frame_length {
        0
    } else {
        (len - frame_length) / stride + 1
    }
}

/// `frame_length × frames` matrix of overlapping windows of `y`.
pub(crate) fn frame_signal(y: &[f64], frame_length: usize, stride: usize, frames: usize) -> Vec<f64> {
    let mut out = vec![0.0; frame_length * frames];
    for l in 0..frame_length {
        let row = &mut out[l * frames..(l + 1) * frames];
        for (f, v) in row.iter_mut().enumerate() {
            *v = y[f * stride + l];
        }
    }
    out
}

/// Overlap-add of a `frame_length × frames` matrix into a signal of `len` samples.
pub(crate) fn overlap_add(frames_mat: &[f64], frame_length: usize, stride: usize, frames: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for l in 0..frame_length {
        let row = &frames_mat[l * frames..(l + 1) * frames];
        for (f, &v) in row.iter().enumerate() {
            out[f * stride + l] += v;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let expected = naive_matmul(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, a_t) in [(&a, false), (&at, true)] {
            for (bb, b_t) in [(&b, false), (&bt, true)] {
                let mut c = vec![1.0; m * n];
                gemm(m, k, n, aa, a_t, bb, b_t, &mut c, false);
                for (x, y) in c.iter().zip(&expected) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(48_000, 20, 10), 4799);
        assert_eq!(frame_count(20, 20, 10), 1);
        assert_eq!(frame_count(19, 20, 10), 0);
    }

    #[test]
    fn depthwise_identity_kernel() {
        let x: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let w = [0.0, 1.0, 0.0];
        assert_eq!(depthwise_conv(&x, &w, &[0.0], 1, 10, 3, 4), x);
        // pure shift by the dilation
        let shifted = depthwise_conv(&x, &[0.0, 0.0, 1.0], &[0.0], 1, 10, 3, 2);
        assert_eq!(&shifted[..8], &x[2..]);
        assert_eq!(&shifted[8..], &[0.0, 0.0]);
    }

    #[test]
    fn gln_output_is_normalised() {
        let x: Vec<f64> = (0..24).map(|v| (v as f64 * 1.3).sin() * 5.0 + 2.0).collect();
        let (y, _) = gln(&x, &[1.0; 3], &[0.0; 3], 8);
        let mean = y.iter().sum::<f64>() / 24.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 24.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
