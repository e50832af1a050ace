use super::{Real, Result, Tensor, TensorError};

/// Flat input index of the winning element for every pooled output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

/// Max pooling over `window x window` regions with the given stride.
///
/// The windows must tile the input exactly; for the 2x2/stride-2 pooling of
/// the feature network this means even spatial sizes. Ties go to the first
/// element in row-major window order.
pub fn maxpool2d<T: Real>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndices)> {
    let (c, h, w) = input.dims3("maxpool2d")?;
    if window == 0 || stride == 0 {
        return Err(TensorError::invalid("maxpool2d", "window and stride must be positive"));
    }
    let tiles = |n: usize| n >= window && (n - window).is_multiple_of(stride);
    if !tiles(h) || !tiles(w) {
        return Err(TensorError::invalid(
            "maxpool2d",
            format!("{h}x{w} input is not tiled by a {window}x{window} window at stride {stride}"),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oy * stride + i) * w + ox * stride + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c, oh, ow], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each output gradient to the input element that won its window.
pub fn maxpool2d_backward<T: Real>(
    indices: &PoolIndices,
    output_grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    if output_grad.len() != indices.argmax.len() {
        return Err(TensorError::shape(
            "maxpool2d_backward",
            &[indices.argmax.len()],
            output_grad.shape(),
        ));
    }
    let mut grad = Tensor::zeros(&indices.input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in indices.argmax.iter().zip(output_grad.data()) {
        g[idx] += v;
    }
    Ok(grad)
}
