//! Forward and backward kernels for the layers used by the policy/value net.
//!
//! Activations are row-major `f64` slices. Image tensors are `[batch, channels,
//! height, width]`; dense tensors are `[batch, features]`.

/// `C = op(A)·op(B) + beta·C` with `op(A)` of shape `m×k` and `op(B)` of shape `k×n`.
/// A non-transposed operand is stored row-major in its logical shape; a
/// transposed one is stored row-major in the transposed shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides can reach is in bounds.
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

/// Shape of a same-padded, stride-1 square convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn patch(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch()
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.plane()
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.plane()
    }
}

/// Unfolds one sample `[cin, h, w]` into `[cin·k·k, h·w]` patches.
fn im2col(s: &ConvShape, x: &[f64], col: &mut [f64]) {
    let (h, w, k) = (s.height as isize, s.width as isize, s.kernel as isize);
    let pad = k / 2;
    let plane = s.plane();
    for c in 0..s.cin {
        let xc = &x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * (k * k) as usize) + (ki * k + kj) as usize;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for i in 0..h {
                    let si = i + ki - pad;
                    for j in 0..w {
                        let sj = j + kj - pad;
                        dst[(i * w + j) as usize] =
                            if si >= 0 && si < h && sj >= 0 && sj < w { xc[(si * w + sj) as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

/// Folds patch gradients back onto one sample, accumulating into `dx`.
fn col2im(s: &ConvShape, col: &[f64], dx: &mut [f64]) {
    let (h, w, k) = (s.height as isize, s.width as isize, s.kernel as isize);
    let pad = k / 2;
    let plane = s.plane();
    for c in 0..s.cin {
        let dxc = &mut dx[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * (k * k) as usize) + (ki * k + kj) as usize;
                let src = &col[row * plane..(row + 1) * plane];
                for i in 0..h {
                    let si = i + ki - pad;
                    if si < 0 || si >= h {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j + kj - pad;
                        if sj >= 0 && sj < w {
                            dxc[(si * w + sj) as usize] += src[(i * w + j) as usize];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_forward(s: &ConvShape, batch: usize, x: &[f64], weight: &[f64], bias: Option<&[f64]>, y: &mut [f64]) {
    let plane = s.plane();
    let mut col = if s.kernel == 1 { Vec::new() } else { vec![0.0; s.patch() * plane] };
    for b in 0..batch {
        let xb = &x[b * s.in_len()..(b + 1) * s.in_len()];
        let yb = &mut y[b * s.out_len()..(b + 1) * s.out_len()];
        let cols: &[f64] = if s.kernel == 1 {
            xb
        } else {
            im2col(s, xb, &mut col);
            &col
        };
        gemm(s.cout, s.patch(), plane, weight, false, cols, false, 0.0, yb);
        if let Some(bias) = bias {
            for (o, chunk) in yb.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bias[o]);
            }
        }
    }
}

/// Accumulates weight/bias gradients and writes (overwrites) the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    s: &ConvShape,
    batch: usize,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
) {
    let plane = s.plane();
    let mut col = vec![0.0; s.patch() * plane];
    let mut dcol = vec![0.0; s.patch() * plane];
    dx.fill(0.0);
    for b in 0..batch {
        let xb = &x[b * s.in_len()..(b + 1) * s.in_len()];
        let dyb = &dy[b * s.out_len()..(b + 1) * s.out_len()];
        let dxb = &mut dx[b * s.in_len()..(b + 1) * s.in_len()];
        if s.kernel == 1 {
            gemm(s.cout, plane, s.patch(), dyb, false, xb, true, 1.0, dweight);
            gemm(s.patch(), s.cout, plane, weight, true, dyb, false, 0.0, dxb);
        } else {
            im2col(s, xb, &mut col);
            gemm(s.cout, plane, s.patch(), dyb, false, &col, true, 1.0, dweight);
            gemm(s.patch(), s.cout, plane, weight, true, dyb, false, 0.0, &mut dcol);
            col2im(s, &dcol, dxb);
        }
    }
    if let Some(db) = dbias {
        for b in 0..batch {
            let dyb = &dy[b * s.out_len()..(b + 1) * s.out_len()];
            for (o, chunk) in dyb.chunks(plane).enumerate() {
                db[o] += chunk.iter().sum::<f64>();
            }
        }
    }
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel statistics kept from a training-mode batchnorm pass.
#[derive(Clone, Debug, Default)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

/// Training-mode batchnorm over `[batch, channels, plane]`, using batch statistics.
pub fn bn_forward_train(
    batch: usize,
    channels: usize,
    plane: usize,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    y: &mut [f64],
) -> BnCache {
    let count = (batch * plane) as f64;
    let mut cache = BnCache {
        xhat: vec![0.0; x.len()],
        inv_std: vec![0.0; channels],
        mean: vec![0.0; channels],
        var: vec![0.0; channels],
    };
    for c in 0..channels {
        let mut sum = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            sum += x[off..off + plane].iter().sum::<f64>();
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            sq += x[off..off + plane].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        let var = sq / count;
        let inv_std = 1.0 / (var + BN_EPS).sqrt();
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                let xh = (x[i] - mean) * inv_std;
                cache.xhat[i] = xh;
                y[i] = gamma[c] * xh + beta[c];
            }
        }
        cache.mean[c] = mean;
        cache.var[c] = var;
        cache.inv_std[c] = inv_std;
    }
    cache
}

#[allow(clippy::too_many_arguments)]
pub fn bn_forward_infer(
    batch: usize,
    channels: usize,
    plane: usize,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    y: &mut [f64],
) {
    for c in 0..channels {
        let scale = gamma[c] / (running_var[c] + BN_EPS).sqrt();
        let shift = beta[c] - running_mean[c] * scale;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                y[i] = x[i] * scale + shift;
            }
        }
    }
}

/// Overwrites `dx`; accumulates into `dgamma` and `dbeta`.
#[allow(clippy::too_many_arguments)]
pub fn bn_backward(
    batch: usize,
    channels: usize,
    plane: usize,
    cache: &BnCache,
    gamma: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let count = (batch * plane) as f64;
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * cache.xhat[i];
            }
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        let k = gamma[c] * cache.inv_std[c] / count;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                dx[i] = k * (count * dy[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
            }
        }
    }
}

/// `y = x·Wᵀ + b` with `W` of shape `[nout, nin]`.
pub fn dense_forward(batch: usize, nin: usize, nout: usize, x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    for row in y[..batch * nout].chunks_mut(nout) {
        row.copy_from_slice(&b[..nout]);
    }
    gemm(batch, nin, nout, x, false, w, true, 1.0, y);
}

/// Overwrites `dx`; accumulates into `dw` and `db`.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    batch: usize,
    nin: usize,
    nout: usize,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    gemm(nout, batch, nin, dy, true, x, false, 1.0, dw);
    gemm(batch, nout, nin, dy, false, w, false, 0.0, dx);
    for row in dy[..batch * nout].chunks(nout) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward_inplace(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Softmax over the entries where `mask` is true; masked-out entries are exactly 0.
/// A row with no valid entry is all zeros.
pub fn masked_softmax(logits: &[f64], mask: &[bool], out: &mut [f64]) {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for ((o, &l), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { (l - max).exp() } else { 0.0 };
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Floor inside the cross-entropy logarithm.
pub const LOG_EPS: f64 = 1e-10;

/// `-Σ t·ln(p + ε)` for one row, and its gradient with respect to the logits
/// (scaled by `scale`) written into `dlogits`.
pub fn policy_cross_entropy(p: &[f64], target: &[f64], mask: &[bool], scale: f64, dlogits: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    let mut s = 0.0;
    for ((&pi, &ti), &m) in p.iter().zip(target).zip(mask) {
        if m {
            loss -= ti * (pi + LOG_EPS).ln();
            s += ti * pi / (pi + LOG_EPS);
        }
    }
    for (k, d) in dlogits.iter_mut().enumerate() {
        *d = if mask[k] { scale * (p[k] * s - target[k] * p[k] / (p[k] + LOG_EPS)) } else { 0.0 };
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    fn conv_reference(s: &ConvShape, batch: usize, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
        let (h, wd, k) = (s.height as isize, s.width as isize, s.kernel as isize);
        let pad = k / 2;
        let mut y = vec![0.0; batch * s.out_len()];
        for b in 0..batch {
            for o in 0..s.cout {
                for i in 0..h {
                    for j in 0..wd {
                        let mut acc = bias[o];
                        for c in 0..s.cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let (si, sj) = (i + ki - pad, j + kj - pad);
                                    if si < 0 || si >= h || sj < 0 || sj >= wd {
                                        continue;
                                    }
                                    let xv = x[b * s.in_len() + c * s.plane() + (si * wd + sj) as usize];
                                    let wv = w[((o * s.cin + c) * s.kernel + ki as usize) * s.kernel + kj as usize];
                                    acc += xv * wv;
                                }
                            }
                        }
                        y[b * s.out_len() + o * s.plane() + (i * wd + j) as usize] = acc;
                    }
                }
            }
        }
        y
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_matches_nested_loops() {
        for (cin, cout, k, hw, batch) in [(2, 3, 3, 4, 2), (3, 2, 1, 5, 3), (1, 4, 5, 6, 1)] {
            let s = ConvShape { cin, cout, kernel: k, height: hw, width: hw };
            let x = pseudo(batch * s.in_len(), 1);
            let w = pseudo(s.weight_len(), 2);
            let bias = pseudo(cout, 3);
            let mut y = vec![0.0; batch * s.out_len()];
            conv_forward(&s, batch, &x, &w, Some(&bias), &mut y);
            let r = conv_reference(&s, batch, &x, &w, &bias);
            for (a, b) in y.iter().zip(&r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2,3],[4,5,6]] (2x3), B = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [0.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, 0.0, &mut c2);
        assert_eq!(c2, c);
    }

    #[test]
    fn masked_softmax_zeroes_invalid_entries() {
        let mut out = [0.0; 4];
        masked_softmax(&[1.0, 50.0, 1.0, -3.0], &[true, false, true, false], &mut out);
        assert_eq!(out, [0.5, 0.0, 0.5, 0.0]);
        masked_softmax(&[1.0, 2.0], &[false, false], &mut out[..2]);
        assert_eq!(&out[..2], &[0.0, 0.0]);
        masked_softmax(&[7.0, 2.0, 3.0], &[false, true, false], &mut out[..3]);
        assert_eq!(&out[..3], &[0.0, 1.0, 0.0]);
    }
}
