use super::{Real, Result, Tensor, TensorError};

/// Classical momentum SGD: `v <- mu * v - lr * g`, `theta <- theta + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T = f32> {
    momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> SgdState<T> {
    /// Zero velocity for each parameter shape.
    pub fn new<'a>(momentum: T, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        SgdState {
            momentum,
            velocity: shapes.into_iter().map(Tensor::zeros).collect(),
        }
    }

    pub fn momentum(&self) -> T {
        self.momentum
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], learning_rate: T) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(TensorError::invalid(
                "sgd_step",
                format!(
                    "expected {} parameters, got {} params and {} grads",
                    self.velocity.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.shape() != v.shape() || g.shape() != v.shape() {
                return Err(TensorError::shape("sgd_step", v.shape(), g.shape()));
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv - learning_rate * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}
