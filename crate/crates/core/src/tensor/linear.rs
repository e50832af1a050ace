use super::gemm::{gemm, Transpose};
use super::{LayerGradients, Real, Result, Tensor, TensorError};

fn check_weights<T: Real>(
    op: &'static str,
    inputs: usize,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<usize> {
    let [m, n] = weights.shape()[..] else {
        return Err(TensorError::invalid(op, format!("weights must be rank 2, got {:?}", weights.shape())));
    };
    if n != inputs {
        return Err(TensorError::shape(op, &[m, inputs], weights.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [m] {
            return Err(TensorError::shape(op, &[m], b.shape()));
        }
    }
    Ok(m)
}

/// `weights * input + bias` for a single input of any shape with `N`
/// elements; produces a length-`M` vector.
pub fn linear<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let n = input.len();
    let m = check_weights("linear", n, weights, Some(bias))?;
    let mut out = bias.data().to_vec();
    gemm(Transpose::No, Transpose::No, m, 1, n, T::one(), weights.data(), input.data(), T::one(), &mut out);
    Tensor::from_vec(&[m], out)
}

pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    output_grad: &Tensor<T>,
) -> Result<LayerGradients<T>> {
    let n = input.len();
    let m = check_weights("linear_backward", n, weights, None)?;
    if output_grad.len() != m {
        return Err(TensorError::shape("linear_backward", &[m], output_grad.shape()));
    }
    let mut weight_grad = Tensor::zeros(&[m, n]);
    gemm(Transpose::No, Transpose::No, m, n, 1, T::one(), output_grad.data(), input.data(), T::zero(), weight_grad.data_mut());
    let mut input_grad = vec![T::zero(); n];
    gemm(Transpose::Yes, Transpose::No, n, 1, m, T::one(), weights.data(), output_grad.data(), T::zero(), &mut input_grad);
    Ok(LayerGradients {
        weight_grad,
        bias_grad: Tensor::from_vec(&[m], output_grad.data().to_vec())?,
        input_grad: Tensor::from_vec(input.shape(), input_grad)?,
    })
}

/// Batched [`linear`]: `B x N` input rows to `B x M` output rows.
pub fn linear_batch<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, n] = input.shape()[..] else {
        return Err(TensorError::invalid("linear_batch", format!("input must be rank 2, got {:?}", input.shape())));
    };
    let m = check_weights("linear_batch", n, weights, Some(bias))?;
    let mut out = Vec::with_capacity(b * m);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    gemm(Transpose::No, Transpose::Yes, b, m, n, T::one(), input.data(), weights.data(), T::one(), &mut out);
    Tensor::from_vec(&[b, m], out)
}

/// Gradients of [`linear_batch`]; parameter gradients are summed over the
/// batch.
pub fn linear_batch_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    output_grad: &Tensor<T>,
) -> Result<LayerGradients<T>> {
    let [b, n] = input.shape()[..] else {
        return Err(TensorError::invalid("linear_batch_backward", "input must be rank 2"));
    };
    let m = check_weights("linear_batch_backward", n, weights, None)?;
    if output_grad.shape() != [b, m] {
        return Err(TensorError::shape("linear_batch_backward", &[b, m], output_grad.shape()));
    }
    let og = output_grad.data();
    let mut weight_grad = Tensor::zeros(&[m, n]);
    gemm(Transpose::Yes, Transpose::No, m, n, b, T::one(), og, input.data(), T::zero(), weight_grad.data_mut());
    let mut bias_grad = Tensor::zeros(&[m]);
    for row in og.chunks_exact(m) {
        for (acc, &v) in bias_grad.data_mut().iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut input_grad = Tensor::zeros(&[b, n]);
    gemm(Transpose::No, Transpose::No, b, n, m, T::one(), og, weights.data(), T::zero(), input_grad.data_mut());
    Ok(LayerGradients {
        weight_grad,
        bias_grad,
        input_grad,
    })
}
