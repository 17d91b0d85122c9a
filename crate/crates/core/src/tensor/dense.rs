use super::conv::dot;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// `W x + b` with `W: [out, in]`.
pub fn fully_connected<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    weight.expect_rank("fully_connected weight", 2)?;
    let (n_out, n_in) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != n_in {
        return Err(Error::ShapeMismatch {
            op: "fully_connected",
            expected: vec![n_in],
            actual: input.shape().to_vec(),
        });
    }
    bias.expect_shape("fully_connected bias", &[n_out])?;
    let x = input.data();
    let data = weight
        .data()
        .chunks_exact(n_in)
        .zip(bias.data())
        .map(|(row, &b)| b + dot(row, x))
        .collect();
    Tensor::new(vec![n_out], data)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn fully_connected_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    weight.expect_rank("fully_connected weight", 2)?;
    let (n_out, n_in) = (weight.shape()[0], weight.shape()[1]);
    grad_out.expect_shape("fully_connected grad_out", &[n_out])?;
    let x = input.data();
    let gy = grad_out.data();
    let mut gx = Tensor::zeros(&[n_in]);
    let mut gw = Tensor::zeros(&[n_out, n_in]);
    for (o, (w_row, gw_row)) in weight
        .data()
        .chunks_exact(n_in)
        .zip(gw.data_mut().chunks_exact_mut(n_in))
        .enumerate()
    {
        let g = gy[o];
        for ((gwv, &xv), (gxv, &wv)) in gw_row.iter_mut().zip(x).zip(gx.data_mut().iter_mut().zip(w_row)) {
            *gwv = g * xv;
            *gxv += g * wv;
        }
    }
    Ok((gx, gw, grad_out.clone().reshape(&[n_out])?))
}

pub fn relu_inplace<T: Real>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(grad: &mut Tensor<T>, output: &Tensor<T>) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}
