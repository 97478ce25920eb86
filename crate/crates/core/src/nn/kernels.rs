//! Forward and backward kernels for the graph ops. All tensors are NHWC.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

use super::{resolve_padding, Window};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pt: usize,
    pub pl: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geom {
    pub fn new(h: usize, w: usize, cin: usize, win: &Window) -> Option<Self> {
        let (pt, _, oh) = resolve_padding(win.padding, h, win.kh, win.sh)?;
        let (pl, _, ow) = resolve_padding(win.padding, w, win.kw, win.sw)?;
        Some(Self {
            h,
            w,
            cin,
            kh: win.kh,
            kw: win.kw,
            sh: win.sh,
            sw: win.sw,
            pt,
            pl,
            oh,
            ow,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pt == 0 && self.pl == 0
    }

    fn cols(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Input row for output row `oy`, kernel row `ky`, if in bounds.
    #[inline]
    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.sh + ky).checked_sub(self.pt).filter(|&v| v < self.h)
    }

    #[inline]
    fn ix(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.sw + kx).checked_sub(self.pl).filter(|&v| v < self.w)
    }
}

fn im2col(x: &[f32], g: &Geom, col: &mut [f32]) {
    let k = g.cols();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut col[(oy * g.ow + ox) * k..][..k];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let dst = &mut row[(ky * g.kw + kx) * g.cin..][..g.cin];
                    match (g.iy(oy, ky), g.ix(ox, kx)) {
                        (Some(iy), Some(ix)) => dst.copy_from_slice(&x[(iy * g.w + ix) * g.cin..][..g.cin]),
                        _ => dst.fill(0.0),
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &Geom, dx: &mut [f32]) {
    let k = g.cols();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &col[(oy * g.ow + ox) * k..][..k];
            for ky in 0..g.kh {
                let Some(iy) = g.iy(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.ix(ox, kx) else { continue };
                    let src = &row[(ky * g.kw + kx) * g.cin..][..g.cin];
                    let dst = &mut dx[(iy * g.w + ix) * g.cin..][..g.cin];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
        }
    }
}

/// `c = a * b (+ c if accumulate)` for row-major `a: m x k`, `b: k x n`.
/// Transposed operands are expressed through the stride arguments.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], (rsa, csa): (usize, usize), b: &[f32], (rsb, csb): (usize, usize), c: &mut [f32], accumulate: bool) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices cover the index ranges implied by the dimensions and
    // strides; every call site passes buffers sized exactly to them.
    unsafe {
        matrixmultiply::sgemm(
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
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv_forward(x: &Tensor, g: &Geom, kernel: &[f32], bias: Option<&[f32]>, cout: usize) -> Tensor {
    let n = x.batch();
    let m = g.oh * g.ow;
    let k = g.cols();
    let mut out = Tensor::zeros([n, g.oh, g.ow, cout]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; m * k] };
    for i in 0..n {
        let xs = x.sample(i);
        let a: &[f32] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[i * m * cout..(i + 1) * m * cout];
        gemm(m, k, cout, a, (k, 1), kernel, (cout, 1), dst, false);
        if let Some(b) = bias {
            for px in dst.chunks_exact_mut(cout) {
                px.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
            }
        }
    }
    out
}

/// Accumulates kernel/bias gradients and returns the input gradient.
pub(crate) fn conv_backward(
    x: &Tensor,
    dy: &Tensor,
    g: &Geom,
    kernel: &[f32],
    dkernel: &mut [f32],
    mut dbias: Option<&mut [f32]>,
    cout: usize,
) -> Tensor {
    let n = x.batch();
    let m = g.oh * g.ow;
    let k = g.cols();
    let mut dx = Tensor::zeros(x.shape());
    let pointwise = g.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![0.0; m * k] };
    let mut dcol = if pointwise { Vec::new() } else { vec![0.0; m * k] };
    for i in 0..n {
        let dys = &dy.data()[i * m * cout..(i + 1) * m * cout];
        let xs = x.sample(i);
        let a: &[f32] = if pointwise {
            xs
        } else {
            im2col(xs, g, &mut col);
            &col
        };
        // dW += A^T dY
        gemm(k, m, cout, a, (1, k), dys, (cout, 1), dkernel, true);
        if let Some(db) = dbias.as_deref_mut() {
            for px in dys.chunks_exact(cout) {
                db.iter_mut().zip(px).for_each(|(d, v)| *d += v);
            }
        }
        // dA = dY W^T
        let dxs = &mut dx.data_mut()[i * x.sample_len()..(i + 1) * x.sample_len()];
        if pointwise {
            gemm(m, cout, k, dys, (cout, 1), kernel, (1, cout), dxs, false);
        } else {
            gemm(m, cout, k, dys, (cout, 1), kernel, (1, cout), &mut dcol, false);
            col2im(&dcol, g, dxs);
        }
    }
    dx
}

pub(crate) fn depthwise_forward(x: &Tensor, g: &Geom, kernel: &[f32]) -> Tensor {
    let (n, c) = (x.batch(), g.cin);
    let mut out = Tensor::zeros([n, g.oh, g.ow, c]);
    let olen = g.oh * g.ow * c;
    for i in 0..n {
        let xs = x.sample(i);
        let dst = &mut out.data_mut()[i * olen..(i + 1) * olen];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = &mut dst[(oy * g.ow + ox) * c..][..c];
                for ky in 0..g.kh {
                    let Some(iy) = g.iy(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.ix(ox, kx) else { continue };
                        let src = &xs[(iy * g.w + ix) * c..][..c];
                        let wk = &kernel[(ky * g.kw + kx) * c..][..c];
                        for ((o, s), w) in o.iter_mut().zip(src).zip(wk) {
                            *o += s * w;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward(x: &Tensor, dy: &Tensor, g: &Geom, kernel: &[f32], dkernel: &mut [f32]) -> Tensor {
    let (n, c) = (x.batch(), g.cin);
    let mut dx = Tensor::zeros(x.shape());
    let olen = g.oh * g.ow * c;
    let ilen = x.sample_len();
    for i in 0..n {
        let xs = x.sample(i);
        let dys = &dy.data()[i * olen..(i + 1) * olen];
        let dxs = &mut dx.data_mut()[i * ilen..(i + 1) * ilen];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let d = &dys[(oy * g.ow + ox) * c..][..c];
                for ky in 0..g.kh {
                    let Some(iy) = g.iy(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.ix(ox, kx) else { continue };
                        let base = (iy * g.w + ix) * c;
                        let kb = (ky * g.kw + kx) * c;
                        for ch in 0..c {
                            dkernel[kb + ch] += d[ch] * xs[base + ch];
                            dxs[base + ch] += d[ch] * kernel[kb + ch];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Max pooling; also returns the per-output argmax (flat index within the sample).
pub(crate) fn max_pool_forward(x: &Tensor, g: &Geom) -> (Tensor, Vec<u32>) {
    let (n, c) = (x.batch(), g.cin);
    let mut out = Tensor::zeros([n, g.oh, g.ow, c]);
    let mut arg = vec![0u32; out.data().len()];
    let olen = g.oh * g.ow * c;
    for i in 0..n {
        let xs = x.sample(i);
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..g.kh {
                        let Some(iy) = g.iy(oy, ky) else { continue };
                        for kx in 0..g.kw {
                            let Some(ix) = g.ix(ox, kx) else { continue };
                            let idx = (iy * g.w + ix) * c + ch;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = i * olen + (oy * g.ow + ox) * c + ch;
                    out.data_mut()[o] = best;
                    arg[o] = best_idx as u32;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool_backward(x_shape: [usize; 4], dy: &Tensor, arg: &[u32]) -> Tensor {
    let mut dx = Tensor::zeros(x_shape);
    let ilen = x_shape[1] * x_shape[2] * x_shape[3];
    let olen = dy.sample_len();
    for i in 0..x_shape[0] {
        for o in 0..olen {
            let idx = i * olen + o;
            dx.data_mut()[i * ilen + arg[idx] as usize] += dy.data()[idx];
        }
    }
    dx
}

fn window_count(g: &Geom, oy: usize, ox: usize) -> usize {
    let rows = (0..g.kh).filter(|&ky| g.iy(oy, ky).is_some()).count();
    let cols = (0..g.kw).filter(|&kx| g.ix(ox, kx).is_some()).count();
    rows * cols
}

pub(crate) fn avg_pool_forward(x: &Tensor, g: &Geom) -> Tensor {
    let (n, c) = (x.batch(), g.cin);
    let mut out = Tensor::zeros([n, g.oh, g.ow, c]);
    let olen = g.oh * g.ow * c;
    for i in 0..n {
        let xs = x.sample(i);
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = &mut out.data_mut()[i * olen + (oy * g.ow + ox) * c..][..c];
                for ky in 0..g.kh {
                    let Some(iy) = g.iy(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.ix(ox, kx) else { continue };
                        let src = &xs[(iy * g.w + ix) * c..][..c];
                        o.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
                let inv = 1.0 / window_count(g, oy, ox) as f32;
                o.iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(x_shape: [usize; 4], dy: &Tensor, g: &Geom) -> Tensor {
    let c = g.cin;
    let mut dx = Tensor::zeros(x_shape);
    let ilen = x_shape[1] * x_shape[2] * x_shape[3];
    let olen = g.oh * g.ow * c;
    for i in 0..x_shape[0] {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let inv = 1.0 / window_count(g, oy, ox) as f32;
                let d = &dy.data()[i * olen + (oy * g.ow + ox) * c..][..c];
                for ky in 0..g.kh {
                    let Some(iy) = g.iy(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.ix(ox, kx) else { continue };
                        let dst = &mut dx.data_mut()[i * ilen + (iy * g.w + ix) * c..][..c];
                        dst.iter_mut().zip(d).for_each(|(a, b)| *a += b * inv);
                    }
                }
            }
        }
    }
    dx
}

/// Per-channel batch mean and biased variance over `n, h, w`.
pub(crate) fn channel_moments(x: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let c = x.shape()[3];
    let count = (x.data().len() / c) as f64;
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    for px in x.data().chunks_exact(c) {
        for ch in 0..c {
            let v = px[ch] as f64;
            sum[ch] += v;
            sq[ch] += v * v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let var = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / count - m * m).max(0.0) as f32)
        .collect();
    (mean.into_iter().map(|m| m as f32).collect(), var)
}

pub(crate) fn affine_channels(x: &Tensor, scale: &[f32], shift: &[f32]) -> Tensor {
    let c = x.shape()[3];
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] = px[ch] * scale[ch] + shift[ch];
        }
    }
    out
}

/// Batch-norm input gradient given the batch statistics used in the forward pass.
pub(crate) fn batch_norm_backward(
    x: &Tensor,
    dy: &Tensor,
    mean: &[f32],
    inv_std: &[f32],
    gamma: Option<&[f32]>,
    mut dgamma: Option<&mut [f32]>,
    dbeta: &mut [f32],
) -> Tensor {
    let c = x.shape()[3];
    let count = (x.data().len() / c) as f32;
    let mut sum_dy = vec![0.0f32; c];
    let mut sum_dy_xhat = vec![0.0f32; c];
    for (px, d) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for ch in 0..c {
            let xhat = (px[ch] - mean[ch]) * inv_std[ch];
            sum_dy[ch] += d[ch];
            sum_dy_xhat[ch] += d[ch] * xhat;
        }
    }
    for ch in 0..c {
        dbeta[ch] += sum_dy[ch];
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[ch] += sum_dy_xhat[ch];
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    for ((px, d), o) in x
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dx.data_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let g = gamma.map_or(1.0, |g| g[ch]);
            let xhat = (px[ch] - mean[ch]) * inv_std[ch];
            o[ch] = g * inv_std[ch] / count * (count * d[ch] - sum_dy[ch] - xhat * sum_dy_xhat[ch]);
        }
    }
    dx
}
