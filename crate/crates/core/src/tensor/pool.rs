use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Max-pool output together with the flat input index each output came from.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// 3D max-pool without padding over `[C, A, R, D]`. Ties resolve to the
/// first element in scan order.
pub fn maxpool3d<T: Real>(input: &Tensor<T>, kernel: [usize; 3], stride: [usize; 3]) -> Result<Pooled<T>> {
    input.expect_rank("maxpool3d", 4)?;
    let s = input.shape();
    let (c, dims) = (s[0], [s[1], s[2], s[3]]);
    let mut out_dims = [0; 3];
    for i in 0..3 {
        if dims[i] < kernel[i] || stride[i] == 0 {
            return Err(Error::DimensionUnderflow {
                op: "maxpool3d",
                dim: i + 1,
                size: dims[i],
            });
        }
        out_dims[i] = (dims[i] - kernel[i]) / stride[i] + 1;
    }
    let [ao, ro, dout] = out_dims;
    let [_, ri, di] = dims;
    let x = input.data();
    let mut output = Tensor::zeros(&[c, ao, ro, dout]);
    let mut argmax = Vec::with_capacity(output.len());
    let y = output.data_mut();
    let mut o = 0;
    for ch in 0..c {
        for a in 0..ao {
            for r in 0..ro {
                for d in 0..dout {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for ka in 0..kernel[0] {
                        for kr in 0..kernel[1] {
                            let row = ((ch * dims[0] + a * stride[0] + ka) * ri + r * stride[1] + kr) * di;
                            for kd in 0..kernel[2] {
                                let idx = row + d * stride[2] + kd;
                                if best == usize::MAX || x[idx] > best_v {
                                    best = idx;
                                    best_v = x[idx];
                                }
                            }
                        }
                    }
                    y[o] = best_v;
                    argmax.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok(Pooled { output, argmax })
}

/// 1D max-pool over `[C, L]`. Padded positions never win.
pub fn maxpool1d<T: Real>(input: &Tensor<T>, kernel: usize, stride: usize, padding: usize) -> Result<Pooled<T>> {
    input.expect_rank("maxpool1d", 2)?;
    let (c, len) = (input.shape()[0], input.shape()[1]);
    if len + 2 * padding < kernel || stride == 0 || padding >= kernel {
        return Err(Error::DimensionUnderflow {
            op: "maxpool1d",
            dim: 1,
            size: len,
        });
    }
    let len_out = (len + 2 * padding - kernel) / stride + 1;
    let x = input.data();
    let mut output = Tensor::zeros(&[c, len_out]);
    let mut argmax = Vec::with_capacity(c * len_out);
    let y = output.data_mut();
    for ch in 0..c {
        let row = &x[ch * len..(ch + 1) * len];
        for j in 0..len_out {
            let start = (j * stride) as isize - padding as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + kernel as isize) as usize).min(len);
            let mut best = lo;
            for i in lo + 1..hi {
                if row[i] > row[best] {
                    best = i;
                }
            }
            y[ch * len_out + j] = row[best];
            argmax.push(ch * len + best);
        }
    }
    Ok(Pooled { output, argmax })
}

fn scatter_grad<T: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            op: "maxpool backward",
            expected: vec![argmax.len()],
            actual: grad_out.shape().to_vec(),
        });
    }
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(gx)
}

pub fn maxpool3d_backward<T: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    scatter_grad(input_shape, argmax, grad_out)
}

pub fn maxpool1d_backward<T: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    scatter_grad(input_shape, argmax, grad_out)
}
