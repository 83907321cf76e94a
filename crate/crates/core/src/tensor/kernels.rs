//! Slice-level forward and backward kernels.
//!
//! These are shape-agnostic helpers used by the tape. Feature maps are laid
//! out channel-major (`C × H × W`), kernels as `C_out × C_in × k × k`.

use std::borrow::Cow;

use super::{Result, TensorError};

/// `c = a · b + beta · c` for row-major operands, optionally reading `a` or
/// `b` transposed from their storage.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reached through these
    // strides lies inside the corresponding slice.
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

/// Resolved shapes of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (c_in, h, w) = match *input {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(TensorError::Rank {
                    op: "conv2d",
                    expected: 3,
                    found: input.to_vec(),
                })
            }
        };
        let (c_out, kc, kh, kw) = match *kernel {
            [a, b, c, d] => (a, b, c, d),
            _ => {
                return Err(TensorError::Rank {
                    op: "conv2d",
                    expected: 4,
                    found: kernel.to_vec(),
                })
            }
        };
        if kc != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "input channels",
                expected: kc,
                found: c_in,
            });
        }
        if kh != kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "kernel width",
                expected: kh,
                found: kw,
            });
        }
        if stride == 0 {
            return Err(TensorError::Config("conv2d stride must be positive".into()));
        }
        let k = kh;
        if k > h + 2 * pad {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "padded height",
                expected: k,
                found: h + 2 * pad,
            });
        }
        if k > w + 2 * pad {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "padded width",
                expected: k,
                found: w + 2 * pad,
            });
        }
        Ok(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h_out * self.w_out
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// 1×1, stride 1, no padding: the input already is its own column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds the input into a `(C_in·k·k) × (H_out·W_out)` matrix.
pub fn im2col<'a>(input: &'a [f64], g: &ConvGeometry) -> Cow<'a, [f64]> {
    if g.is_pointwise() {
        return Cow::Borrowed(input);
    }
    let p = g.positions();
    let mut cols = vec![0.0; g.patch_len() * p];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.w_out + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    Cow::Owned(cols)
}

/// Folds a column matrix back onto the input grid, accumulating into `out`.
pub fn col2im(cols: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    if g.is_pointwise() {
        for (o, c) in out.iter_mut().zip(cols) {
            *o += c;
        }
        return;
    }
    let p = g.positions();
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeometry,
) -> Vec<f64> {
    let p = g.positions();
    let mut out = vec![0.0; g.out_len()];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(p).enumerate() {
            chunk.fill(b[co]);
        }
    }
    let cols = im2col(input, g);
    gemm(g.c_out, g.patch_len(), p, kernel, false, &cols, false, &mut out, 1.0);
    out
}

/// Gradients of a convolution. Returns `(d_input, d_kernel, d_bias)`;
/// `d_input` is only computed when requested.
pub fn conv2d_backward(
    dout: &[f64],
    input: &[f64],
    kernel: &[f64],
    g: &ConvGeometry,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let p = g.positions();
    let cols = im2col(input, g);
    let mut dkernel = vec![0.0; g.c_out * g.patch_len()];
    gemm(g.c_out, p, g.patch_len(), dout, false, &cols, true, &mut dkernel, 0.0);
    let dbias = dout.chunks(p).map(|c| c.iter().sum()).collect();
    let dinput = need_input.then(|| {
        let mut dcols = vec![0.0; g.patch_len() * p];
        gemm(g.patch_len(), g.c_out, p, kernel, true, dout, false, &mut dcols, 0.0);
        let mut dx = vec![0.0; g.c_in * g.h * g.w];
        col2im(&dcols, g, &mut dx);
        dx
    });
    (dinput, dkernel, dbias)
}

/// Per-group statistics saved by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn group_norm_forward(
    x: &[f64],
    channels: usize,
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, GroupStats) {
    let spatial = x.len() / channels;
    let per_group = channels / groups;
    let n = (per_group * spatial) as f64;
    let mut y = vec![0.0; x.len()];
    let mut mean = Vec::with_capacity(groups);
    let mut rstd = Vec::with_capacity(groups);
    for gi in 0..groups {
        let range = gi * per_group * spatial..(gi + 1) * per_group * spatial;
        let xs = &x[range.clone()];
        let mu = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let r = 1.0 / (var + eps).sqrt();
        for c in gi * per_group..(gi + 1) * per_group {
            let (gm, bt) = (gamma[c], beta[c]);
            let off = c * spatial;
            for i in off..off + spatial {
                y[i] = gm * (x[i] - mu) * r + bt;
            }
        }
        mean.push(mu);
        rstd.push(r);
    }
    (y, GroupStats { mean, rstd })
}

/// Full group-norm backward: the mean and variance are treated as functions
/// of the input. Returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward(
    dy: &[f64],
    x: &[f64],
    channels: usize,
    groups: usize,
    gamma: &[f64],
    stats: &GroupStats,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let spatial = x.len() / channels;
    let per_group = channels / groups;
    let n = (per_group * spatial) as f64;
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for gi in 0..groups {
        let (mu, r) = (stats.mean[gi], stats.rstd[gi]);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in gi * per_group..(gi + 1) * per_group {
            let off = c * spatial;
            for i in off..off + spatial {
                let xhat = (x[i] - mu) * r;
                dgamma[c] += dy[i] * xhat;
                dbeta[c] += dy[i];
                let dxhat = dy[i] * gamma[c];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
        }
        for c in gi * per_group..(gi + 1) * per_group {
            let off = c * spatial;
            for i in off..off + spatial {
                let xhat = (x[i] - mu) * r;
                let dxhat = dy[i] * gamma[c];
                dx[i] = r / n * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle for the im2col path.
    fn naive_conv(input: &[f64], kernel: &[f64], bias: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.out_len()];
        for co in 0..g.c_out {
            for oy in 0..g.h_out {
                for ox in 0..g.w_out {
                    let mut acc = bias[co];
                    for ci in 0..g.c_in {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += input[(ci * g.h + iy as usize) * g.w + ix as usize]
                                    * kernel[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                            }
                        }
                    }
                    out[(co * g.h_out + oy) * g.w_out + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_summation() {
        for &(c_in, h, w, c_out, k, stride, pad) in &[
            (2, 5, 6, 3, 3, 1, 1),
            (3, 7, 7, 2, 3, 2, 1),
            (1, 4, 4, 1, 4, 4, 0),
            (2, 3, 3, 2, 1, 1, 0),
            (2, 6, 5, 3, 2, 2, 0),
        ] {
            let g = ConvGeometry::new(&[c_in, h, w], &[c_out, c_in, k, k], stride, pad).unwrap();
            let input: Vec<f64> = (0..c_in * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
            let kernel: Vec<f64> =
                (0..c_out * c_in * k * k).map(|i| ((i * 5) % 7) as f64 * 0.25 - 0.7).collect();
            let bias: Vec<f64> = (0..c_out).map(|i| i as f64 * 0.5).collect();
            let fast = conv2d_forward(&input, &kernel, Some(&bias), &g);
            let slow = naive_conv(&input, &kernel, &bias, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for any x, y.
        let g = ConvGeometry::new(&[2, 5, 5], &[1, 2, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols = im2col(&x, &g).into_owned();
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.91).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn geometry_rejects_bad_shapes() {
        assert!(matches!(
            ConvGeometry::new(&[3, 8, 8], &[4, 2, 3, 3], 1, 1),
            Err(TensorError::ShapeMismatch { dim: "input channels", .. })
        ));
        assert!(ConvGeometry::new(&[1, 2, 2], &[1, 1, 5, 5], 1, 0).is_err());
        assert!(ConvGeometry::new(&[1, 2, 2], &[1, 1, 1, 1], 0, 0).is_err());
        assert!(ConvGeometry::new(&[1, 2], &[1, 1, 1, 1], 1, 0).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
