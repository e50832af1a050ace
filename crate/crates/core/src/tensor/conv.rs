use super::gemm::{gemm, Transpose};
use super::{LayerGradients, Real, Result, Tensor, TensorError};

/// Output length of a valid (unpadded) convolution along one axis.
///
/// Trailing input samples that do not fill a whole window are dropped.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input < kernel {
        return None;
    }
    Some((input - kernel) / stride + 1)
}

struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new<T: Real>(
        op: &'static str,
        input: &Tensor<T>,
        weights: &Tensor<T>,
        stride: usize,
    ) -> Result<Self> {
        let (channels, height, width) = input.dims3(op)?;
        let [filters, wc, kh, kw] = weights.shape()[..] else {
            return Err(TensorError::invalid(
                op,
                format!("expected rank-4 weights, got {:?}", weights.shape()),
            ));
        };
        if wc != channels {
            return Err(TensorError::shape(
                op,
                &[filters, channels, kh, kw],
                weights.shape(),
            ));
        }
        if stride == 0 {
            return Err(TensorError::invalid(op, "stride must be positive"));
        }
        let (Some(out_h), Some(out_w)) = (
            conv_output_len(height, kh, stride),
            conv_output_len(width, kw, stride),
        ) else {
            return Err(TensorError::invalid(
                op,
                format!("{height}x{width} input is smaller than the {kh}x{kw} kernel"),
            ));
        };
        Ok(ConvGeometry {
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            stride,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds the input into a `patch_len x positions` matrix.
    fn im2col<T: Real>(&self, input: &[T], cols: &mut Vec<T>) {
        let positions = self.positions();
        cols.clear();
        cols.resize(self.patch_len() * positions, T::zero());
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_h {
                        let src_row = &plane[(oy * self.stride + i) * self.width..];
                        let dst_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            *d = src_row[ox * self.stride + j];
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Inverse of [`im2col`](Self::im2col): scatters-and-adds columns back
    /// into an input-shaped buffer.
    fn col2im<T: Real>(&self, cols: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        let positions = self.positions();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut out[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let src = &cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_h {
                        let base = (oy * self.stride + i) * self.width + j;
                        let src_row = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, &v) in src_row.iter().enumerate() {
                            plane[base + ox * self.stride] += v;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Valid 2-D convolution (cross-correlation) of a `C x H x W` input with
/// `O x C x kh x kw` filters.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new("conv2d_forward", input, weights, stride)?;
    if bias.shape() != [g.filters] {
        return Err(TensorError::shape("conv2d_forward", &[g.filters], bias.shape()));
    }
    let positions = g.positions();
    let mut out = Vec::with_capacity(g.filters * positions);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, positions));
    }
    let mut cols = Vec::new();
    g.im2col(input.data(), &mut cols);
    gemm(
        Transpose::No,
        Transpose::No,
        g.filters,
        positions,
        g.patch_len(),
        T::one(),
        weights.data(),
        &cols,
        T::one(),
        &mut out,
    );
    Tensor::from_vec(&[g.filters, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d_forward`] given the gradient of its output.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    output_grad: &Tensor<T>,
) -> Result<LayerGradients<T>> {
    let mut weight_grad = Tensor::zeros(weights.shape());
    let mut bias_grad = Tensor::zeros(&[weights.shape().first().copied().unwrap_or(1).max(1)]);
    let mut input_grad = Tensor::zeros(input.shape());
    let mut scratch = Vec::new();
    conv2d_backward_into(
        input,
        weights,
        stride,
        output_grad,
        weight_grad.data_mut(),
        bias_grad.data_mut(),
        Some(input_grad.data_mut()),
        &mut scratch,
    )?;
    Ok(LayerGradients {
        weight_grad,
        bias_grad,
        input_grad,
    })
}

/// Accumulating backward pass used by the training loop: weight and bias
/// gradients are added to `weight_grad`/`bias_grad`, while `input_grad`
/// (when requested) is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_into<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    output_grad: &Tensor<T>,
    weight_grad: &mut [T],
    bias_grad: &mut [T],
    input_grad: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) -> Result<()> {
    let g = ConvGeometry::new("conv2d_backward", input, weights, stride)?;
    if output_grad.shape() != [g.filters, g.out_h, g.out_w] {
        return Err(TensorError::shape(
            "conv2d_backward",
            &[g.filters, g.out_h, g.out_w],
            output_grad.shape(),
        ));
    }
    let positions = g.positions();
    let og = output_grad.data();
    for (f, b) in bias_grad.iter_mut().enumerate() {
        *b += og[f * positions..(f + 1) * positions].iter().copied().sum::<T>();
    }
    g.im2col(input.data(), scratch);
    gemm(
        Transpose::No,
        Transpose::Yes,
        g.filters,
        g.patch_len(),
        positions,
        T::one(),
        og,
        scratch,
        T::one(),
        weight_grad,
    );
    if let Some(input_grad) = input_grad {
        gemm(
            Transpose::Yes,
            Transpose::No,
            g.patch_len(),
            positions,
            g.filters,
            T::one(),
            weights.data(),
            og,
            T::zero(),
            scratch,
        );
        g.col2im(scratch, input_grad);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::*;

    /// Direct nested-loop convolution.
    fn reference_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize) -> Vec<f64> {
        let [c, h, wd] = x.shape()[..] else { panic!() };
        let [o, _, kh, kw] = w.shape()[..] else { panic!() };
        let oh = (h - kh) / s + 1;
        let ow = (wd - kw) / s + 1;
        let mut out = vec![0.0; o * oh * ow];
        for f in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[f];
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                acc += w.data()[((f * c + ch) * kh + i) * kw + j]
                                    * x.data()[(ch * h + oy * s + i) * wd + ox * s + j];
                            }
                        }
                    }
                    out[(f * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn default_first_layer_shape() {
        let x = Tensor::<f32>::zeros(&[3, 119, 119]);
        let w = Tensor::<f32>::zeros(&[64, 3, 8, 8]);
        let b = Tensor::<f32>::zeros(&[64]);
        let y = conv2d_forward(&x, &w, &b, 4).unwrap();
        assert_eq!(y.shape(), &[64, 28, 28]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[1, 3, 3], |i| i as f64 - 4.0);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d_forward(&x, &w, &b, 1).unwrap().data(), x.data());
    }

    #[test]
    fn matches_nested_loop_reference() {
        for (seed, stride) in [(1, 1), (2, 2), (3, 3)] {
            let x = random(&[2, 5, 5], seed);
            let w = random(&[3, 2, 2, 2], seed + 100);
            let b = random(&[3], seed + 200);
            let y = conv2d_forward(&x, &w, &b, stride).unwrap();
            let expect = reference_conv(&x, &w, &b, stride);
            for (a, e) in y.data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros(&[2, 5, 5]);
        let w = Tensor::<f32>::zeros(&[3, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[3]);
        assert!(matches!(
            conv2d_forward(&x, &w, &b, 1),
            Err(TensorError::Shape { .. })
        ));
        let w = Tensor::<f32>::zeros(&[3, 2, 6, 6]);
        assert!(conv2d_forward(&x, &w, &b, 1).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let x = random(&[2, 6, 6], 7);
        let w = random(&[3, 2, 3, 3], 8);
        let g = conv2d_backward(&x, &w, 1, &Tensor::zeros(&[3, 4, 4])).unwrap();
        assert!(g.weight_grad.data().iter().all(|&v| v == 0.0));
        assert!(g.bias_grad.data().iter().all(|&v| v == 0.0));
        assert!(g.input_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case_weight_grad() {
        let x = Tensor::from_vec(&[1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![-2.0]).unwrap();
        let og = Tensor::from_vec(&[1, 1, 1], vec![0.5]).unwrap();
        let g = conv2d_backward(&x, &w, 1, &og).unwrap();
        assert_eq!(g.weight_grad.data(), &[1.5]);
        assert_eq!(g.bias_grad.data(), &[0.5]);
        assert_eq!(g.input_grad.data(), &[-1.0]);
    }

    #[test]
    fn output_grad_shape_is_checked() {
        let x = random(&[1, 4, 4], 1);
        let w = random(&[1, 1, 2, 2], 2);
        assert!(conv2d_backward(&x, &w, 1, &Tensor::zeros(&[1, 2, 2])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let stride = 1 + seed as usize % 2;
            let x = random(&[2, 6, 7], seed);
            let w = random(&[3, 2, 3, 2], seed + 50);
            let b = random(&[3], seed + 60);
            let probe = random(conv2d_forward(&x, &w, &b, stride).unwrap().shape(), seed + 70);
            let g = conv2d_backward(&x, &w, stride, &probe).unwrap();

            let nx = numeric_grad(&x, |x| dot(&conv2d_forward(x, &w, &b, stride).unwrap(), &probe));
            assert_grad_close(g.input_grad.data(), &nx);
            let nw = numeric_grad(&w, |w| dot(&conv2d_forward(&x, w, &b, stride).unwrap(), &probe));
            assert_grad_close(g.weight_grad.data(), &nw);
            let nb = numeric_grad(&b, |b| dot(&conv2d_forward(&x, &w, b, stride).unwrap(), &probe));
            assert_grad_close(g.bias_grad.data(), &nb);
        }
    }
}
