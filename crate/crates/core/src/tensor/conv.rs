use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Gradients of a convolution with respect to its input (when requested),
/// weights and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Range of output positions `o` for which `o + k - pad` indexes the input.
#[inline]
fn valid_range(k: usize, pad: usize, len_in: usize, len_out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len_in + pad).saturating_sub(k).min(len_out);
    (lo, hi.max(lo))
}

/// `out[d] += sum_k taps[k] * inp[d + k - pad]`, skipping padded positions.
#[inline]
fn row_accumulate<T: Real>(out: &mut [T], inp: &[T], taps: &[T], pad: usize) {
    let n = out.len();
    if taps.len() == 3 && pad == 1 && inp.len() == n && n >= 2 {
        let (w0, w1, w2) = (taps[0], taps[1], taps[2]);
        out[0] += w1 * inp[0] + w2 * inp[1];
        for (((o, &a), &b), &c) in out[1..n - 1]
            .iter_mut()
            .zip(&inp[..n - 2])
            .zip(&inp[1..n - 1])
            .zip(&inp[2..])
        {
            *o += w0 * a + w1 * b + w2 * c;
        }
        out[n - 1] += w0 * inp[n - 2] + w1 * inp[n - 1];
        return;
    }
    for (k, &w) in taps.iter().enumerate() {
        let (d0, d1) = valid_range(k, pad, inp.len(), out.len());
        if d0 == d1 {
            continue;
        }
        let s0 = d0 + k - pad;
        let src = &inp[s0..s0 + (d1 - d0)];
        for (o, &x) in out[d0..d1].iter_mut().zip(src) {
            *o += w * x;
        }
    }
}

/// `taps_grad[k] += sum_d gout[d] * inp[d + k - pad]`.
#[inline]
fn row_tap_grads<T: Real>(taps_grad: &mut [T], gout: &[T], inp: &[T], pad: usize) {
    for (k, g) in taps_grad.iter_mut().enumerate() {
        let (d0, d1) = valid_range(k, pad, inp.len(), gout.len());
        if d0 == d1 {
            continue;
        }
        let s0 = d0 + k - pad;
        *g += dot(&gout[d0..d1], &inp[s0..s0 + (d1 - d0)]);
    }
}

/// `gin[d + k - pad] += taps[k] * gout[d]`.
#[inline]
fn row_input_grads<T: Real>(gin: &mut [T], gout: &[T], taps: &[T], pad: usize) {
    let n = gin.len();
    if taps.len() == 3 && pad == 1 && gout.len() == n && n >= 2 {
        let (w0, w1, w2) = (taps[0], taps[1], taps[2]);
        gin[0] += w0 * gout[1] + w1 * gout[0];
        for (((g, &a), &b), &c) in gin[1..n - 1]
            .iter_mut()
            .zip(&gout[2..])
            .zip(&gout[1..n - 1])
            .zip(&gout[..n - 2])
        {
            *g += w0 * a + w1 * b + w2 * c;
        }
        gin[n - 1] += w1 * gout[n - 1] + w2 * gout[n - 2];
        return;
    }
    for (k, &w) in taps.iter().enumerate() {
        let (d0, d1) = valid_range(k, pad, gin.len(), gout.len());
        if d0 == d1 {
            continue;
        }
        let s0 = d0 + k - pad;
        for (g, &x) in gin[s0..s0 + (d1 - d0)].iter_mut().zip(&gout[d0..d1]) {
            *g += w * x;
        }
    }
}

/// Receptive fields of every output position laid out as rows: row `p`
/// holds the `C_in * kA * kR * kD` input values (zero where padded) that
/// output position `p` sees, in the weight's memory order.
struct Patches<T> {
    rows: Vec<T>,
    width: usize,
}

/// Shapes of a stride-1 convolution over `[C, A, R, D]` with per-axis
/// kernel and padding.
#[derive(Clone, Copy)]
struct ConvShape {
    c_in: usize,
    c_out: usize,
    dims_in: [usize; 3],
    dims_out: [usize; 3],
    kernel: [usize; 3],
    pad: [usize; 3],
}

impl ConvShape {
    fn positions(&self) -> usize {
        self.dims_out.iter().product()
    }

    fn width(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn patches<T: Real>(&self, x: &[T]) -> Patches<T> {
        let [ai, ri, di] = self.dims_in;
        let [ao, ro, dout] = self.dims_out;
        let [ka, kr, kd] = self.kernel;
        let [pa, pr, pd] = self.pad;
        let width = self.width();
        let mut rows = vec![T::zero(); self.positions() * width];
        let mut p = 0;
        for a in 0..ao {
            for r in 0..ro {
                for d in 0..dout {
                    let row = &mut rows[p * width..(p + 1) * width];
                    // taps id with 0 <= d + id - pd < di
                    let id0 = pd.saturating_sub(d);
                    let id1 = (di + pd).saturating_sub(d).min(kd);
                    for ci in 0..self.c_in {
                        for ia in 0..ka {
                            let Some(a_in) = (a + ia).checked_sub(pa).filter(|&v| v < ai) else {
                                continue;
                            };
                            for ir in 0..kr {
                                let Some(r_in) = (r + ir).checked_sub(pr).filter(|&v| v < ri) else {
                                    continue;
                                };
                                if id0 >= id1 {
                                    continue;
                                }
                                let src = ((ci * ai + a_in) * ri + r_in) * di + d + id0 - pd;
                                let dst = ((ci * ka + ia) * kr + ir) * kd;
                                row[dst + id0..dst + id1].copy_from_slice(&x[src..src + (id1 - id0)]);
                            }
                        }
                    }
                    p += 1;
                }
            }
        }
        Patches { rows, width }
    }

    /// Adds patch-row gradients back onto the input positions they came
    /// from.
    fn scatter<T: Real>(&self, grad_rows: &[T], gx: &mut [T]) {
        let [ai, ri, di] = self.dims_in;
        let [ao, ro, dout] = self.dims_out;
        let [ka, kr, kd] = self.kernel;
        let [pa, pr, pd] = self.pad;
        let width = self.width();
        let mut p = 0;
        for a in 0..ao {
            for r in 0..ro {
                for d in 0..dout {
                    let row = &grad_rows[p * width..(p + 1) * width];
                    let id0 = pd.saturating_sub(d);
                    let id1 = (di + pd).saturating_sub(d).min(kd);
                    for ci in 0..self.c_in {
                        for ia in 0..ka {
                            let Some(a_in) = (a + ia).checked_sub(pa).filter(|&v| v < ai) else {
                                continue;
                            };
                            for ir in 0..kr {
                                let Some(r_in) = (r + ir).checked_sub(pr).filter(|&v| v < ri) else {
                                    continue;
                                };
                                if id0 >= id1 {
                                    continue;
                                }
                                let dst = ((ci * ai + a_in) * ri + r_in) * di + d + id0 - pd;
                                let src = ((ci * ka + ia) * kr + ir) * kd;
                                for (g, &v) in gx[dst..dst + (id1 - id0)].iter_mut().zip(&row[src + id0..src + id1]) {
                                    *g += v;
                                }
                            }
                        }
                    }
                    p += 1;
                }
            }
        }
    }

    fn forward<T: Real>(&self, x: &[T], w: &[T], b: &[T], y: &mut [T]) {
        let patches = self.patches(x);
        let n = self.positions();
        let width = patches.width;
        for (co, y_co) in y.chunks_exact_mut(n).enumerate() {
            let w_co = &w[co * width..(co + 1) * width];
            for (v, row) in y_co.iter_mut().zip(patches.rows.chunks_exact(width)) {
                *v = b[co] + dot(w_co, row);
            }
        }
    }

    fn backward<T: Real>(&self, x: &[T], w: &[T], gy: &[T], input_grad: bool) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
        let patches = self.patches(x);
        let n = self.positions();
        let width = patches.width;
        let mut gw = vec![T::zero(); self.c_out * width];
        let mut gb = vec![T::zero(); self.c_out];
        for co in 0..self.c_out {
            let gy_co = &gy[co * n..(co + 1) * n];
            gb[co] = gy_co.iter().copied().sum();
            let gw_co = &mut gw[co * width..(co + 1) * width];
            for (&g, row) in gy_co.iter().zip(patches.rows.chunks_exact(width)) {
                if g != T::zero() {
                    axpy(g, row, gw_co);
                }
            }
        }
        let gx = input_grad.then(|| {
            let mut grad_rows = vec![T::zero(); n * width];
            for (p, grow) in grad_rows.chunks_exact_mut(width).enumerate() {
                for co in 0..self.c_out {
                    let g = gy[co * n + p];
                    if g != T::zero() {
                        axpy(g, &w[co * width..(co + 1) * width], grow);
                    }
                }
            }
            let mut gx = vec![T::zero(); x.len()];
            self.scatter(&grad_rows, &mut gx);
            gx
        });
        (gw, gb, gx)
    }
}

/// `y += a * x`
#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (v, &u) in y.iter_mut().zip(x) {
        *v += a * u;
    }
}

/// Dot product with a fixed 8-lane accumulation order, so results do not
/// depend on how the compiler vectorizes.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn out_len(op: &'static str, dim: usize, len: usize, k: usize, pad: usize) -> Result<usize> {
    (len + 2 * pad)
        .checked_sub(k)
        .map(|n| n + 1)
        .ok_or(Error::DimensionUnderflow { op, dim, size: len })
}

struct Geom3 {
    c_in: usize,
    c_out: usize,
    dims_in: [usize; 3],
    dims_out: [usize; 3],
    kernel: [usize; 3],
}

fn conv3d_geometry<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, padding: usize) -> Result<Geom3> {
    input.expect_rank("conv3d input", 4)?;
    weight.expect_rank("conv3d weight", 5)?;
    let s = input.shape();
    let w = weight.shape();
    if w[1] != s[0] {
        return Err(Error::ShapeMismatch {
            op: "conv3d",
            expected: vec![w[0], s[0], w[2], w[3], w[4]],
            actual: w.to_vec(),
        });
    }
    let kernel = [w[2], w[3], w[4]];
    let mut dims_out = [0; 3];
    for i in 0..3 {
        dims_out[i] = out_len("conv3d", i + 1, s[i + 1], kernel[i], padding)?;
    }
    Ok(Geom3 {
        c_in: s[0],
        c_out: w[0],
        dims_in: [s[1], s[2], s[3]],
        dims_out,
        kernel,
    })
}

/// 3D convolution, stride 1, symmetric zero padding.
///
/// Shapes: input `[C_in, A, R, D]`, weight `[C_out, C_in, kA, kR, kD]`,
/// bias `[C_out]`.
pub fn conv3d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, padding: usize) -> Result<Tensor<T>> {
    let g = conv3d_geometry(input, weight, padding)?;
    bias.expect_shape("conv3d bias", &[g.c_out])?;
    let [ai, ri, di] = g.dims_in;
    let [ao, ro, dout] = g.dims_out;
    let [ka, kr, kd] = g.kernel;
    let mut out = Tensor::zeros(&[g.c_out, ao, ro, dout]);
    let (x, w, b) = (input.data(), weight.data(), bias.data());
    let y = out.data_mut();
    let plane_out = ao * ro * dout;

    for co in 0..g.c_out {
        let y_co = &mut y[co * plane_out..(co + 1) * plane_out];
        y_co.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..g.c_in {
            for ia in 0..ka {
                let (a0, a1) = valid_range(ia, padding, ai, ao);
                for ir in 0..kr {
                    let (r0, r1) = valid_range(ir, padding, ri, ro);
                    let t0 = (((co * g.c_in + ci) * ka + ia) * kr + ir) * kd;
                    let taps = &w[t0..t0 + kd];
                    for a in a0..a1 {
                        let a_in = a + ia - padding;
                        for r in r0..r1 {
                            let r_in = r + ir - padding;
                            let src = ((ci * ai + a_in) * ri + r_in) * di;
                            let dst = (a * ro + r) * dout;
                            row_accumulate(&mut y_co[dst..dst + dout], &x[src..src + di], taps, padding);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`conv3d`]. The input gradient is only computed when
/// `input_grad` is set (the first layer of a network does not need it).
pub fn conv3d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: usize,
    input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = conv3d_geometry(input, weight, padding)?;
    let [ai, ri, di] = g.dims_in;
    let [ao, ro, dout] = g.dims_out;
    let [ka, kr, kd] = g.kernel;
    grad_out.expect_shape("conv3d grad_out", &[g.c_out, ao, ro, dout])?;

    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[g.c_out]);
    let mut gx = input_grad.then(|| Tensor::zeros(input.shape()));
    let (x, w, gy) = (input.data(), weight.data(), grad_out.data());
    let plane_out = ao * ro * dout;

    for co in 0..g.c_out {
        let gy_co = &gy[co * plane_out..(co + 1) * plane_out];
        gb.data_mut()[co] = gy_co.iter().copied().sum();
        for ci in 0..g.c_in {
            for ia in 0..ka {
                let (a0, a1) = valid_range(ia, padding, ai, ao);
                for ir in 0..kr {
                    let (r0, r1) = valid_range(ir, padding, ri, ro);
                    let t0 = (((co * g.c_in + ci) * ka + ia) * kr + ir) * kd;
                    for a in a0..a1 {
                        let a_in = a + ia - padding;
                        for r in r0..r1 {
                            let r_in = r + ir - padding;
                            let src = ((ci * ai + a_in) * ri + r_in) * di;
                            let dst = (a * ro + r) * dout;
                            let gy_row = &gy_co[dst..dst + dout];
                            row_tap_grads(&mut gw.data_mut()[t0..t0 + kd], gy_row, &x[src..src + di], padding);
                            if let Some(gx) = gx.as_mut() {
                                row_input_grads(&mut gx.data_mut()[src..src + di], gy_row, &w[t0..t0 + kd], padding);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

fn conv1d_shape<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, padding: usize) -> Result<ConvShape> {
    input.expect_rank("conv1d input", 2)?;
    weight.expect_rank("conv1d weight", 3)?;
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let w = weight.shape();
    if w[1] != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            expected: vec![w[0], c_in, w[2]],
            actual: w.to_vec(),
        });
    }
    let len_out = out_len("conv1d", 1, len, w[2], padding)?;
    Ok(ConvShape {
        c_in,
        c_out: w[0],
        dims_in: [1, 1, len],
        dims_out: [1, 1, len_out],
        kernel: [1, 1, w[2]],
        pad: [0, 0, padding],
    })
}

/// 1D convolution, stride 1, symmetric zero padding.
///
/// Shapes: input `[C_in, L]`, weight `[C_out, C_in, K]`, bias `[C_out]`.
pub fn conv1d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, padding: usize) -> Result<Tensor<T>> {
    let g = conv1d_shape(input, weight, padding)?;
    bias.expect_shape("conv1d bias", &[g.c_out])?;
    let mut out = Tensor::zeros(&[g.c_out, g.dims_out[2]]);
    g.forward(input.data(), weight.data(), bias.data(), out.data_mut());
    Ok(out)
}

pub fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: usize,
    input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = conv1d_shape(input, weight, padding)?;
    grad_out.expect_shape("conv1d grad_out", &[g.c_out, g.dims_out[2]])?;
    let (gw, gb, gx) = g.backward(input.data(), weight.data(), grad_out.data(), input_grad);
    Ok(ConvGrads {
        input: gx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.c_out], gb)?,
    })
}
