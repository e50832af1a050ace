use super::{Real, Result, Tensor, TensorError};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place<T: Real>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor<T>, output_grad: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != output_grad.shape() {
        return Err(TensorError::shape("relu_backward", input.shape(), output_grad.shape()));
    }
    let mut g = output_grad.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}
