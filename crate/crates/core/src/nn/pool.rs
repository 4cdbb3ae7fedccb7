//! Max and average pooling.

use super::conv::{plan_axis, Padding};
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Argmax positions recorded by [`maxpool_forward`].
#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    /// Flat input index of the winning element for each output element.
    argmax: Vec<usize>,
}

impl MaxPoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, MaxPoolCache), NnError> {
    let (n, c, h, w) = input.dims4()?;
    let rows = plan_axis(h, window, stride, padding)?;
    let cols = plan_axis(w, window, stride, padding)?;
    let (oh, ow) = (rows.out, cols.out);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                // Row-major scan with strict comparison: first maximum wins.
                for i in 0..window {
                    let y = (oy * stride + i) as isize - rows.before as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for j in 0..window {
                        let xx = (ox * stride + j) as isize - cols.before as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let idx = base + y as usize * w + xx as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let out = Tensor::new(vec![n, c, oh, ow], out)?;
    out.debug_check_finite("maxpool_forward");
    Ok((
        out,
        MaxPoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each upstream gradient to the recorded argmax position.
pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &MaxPoolCache,
) -> Result<Tensor<T>, NnError> {
    if grad_out.len() != cache.argmax.len() || grad_out.shape()[..2] != cache.input_shape[..2] {
        return Err(NnError::ShapeMismatch {
            context: "maxpool_backward grad_out",
            expected: cache.input_shape.clone(),
            actual: grad_out.shape().to_vec(),
        });
    }
    let mut grad = Tensor::zeros(&cache.input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in cache.argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad)
}

/// Mean over non-overlapping or strided `window × window` regions, no padding.
pub fn avgpool_forward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) = input.dims4()?;
    let oh = plan_axis(h, window, stride, Padding::Valid)?.out;
    let ow = plan_axis(w, window, stride, Padding::Valid)?.out;
    let scale = T::one() / T::from_usize_lossy(window * window);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for i in 0..window {
                    let row = base + (oy * stride + i) * w + ox * stride;
                    for &v in &x[row..row + window] {
                        acc += v;
                    }
                }
                out.push(acc * scale);
            }
        }
    }
    let out = Tensor::new(vec![n, c, oh, ow], out)?;
    out.debug_check_finite("avgpool_forward");
    Ok(out)
}

/// Spreads each upstream gradient uniformly over its window.
pub fn avgpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    window: usize,
    stride: usize,
) -> Result<Tensor<T>, NnError> {
    let [n, c, h, w] = *input_shape else {
        return Err(NnError::Rank {
            expected: 4,
            shape: input_shape.to_vec(),
        });
    };
    let oh = plan_axis(h, window, stride, Padding::Valid)?.out;
    let ow = plan_axis(w, window, stride, Padding::Valid)?.out;
    grad_out.expect_shape(&[n, c, oh, ow], "avgpool_backward grad_out")?;
    let scale = T::one() / T::from_usize_lossy(window * window);
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let share = grad_out.data()[(plane * oh + oy) * ow + ox] * scale;
                for i in 0..window {
                    let row = base + (oy * stride + i) * w + ox * stride;
                    for v in &mut g[row..row + window] {
                        *v += share;
                    }
                }
            }
        }
    }
    Ok(grad)
}
