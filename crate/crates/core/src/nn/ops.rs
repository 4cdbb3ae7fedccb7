//! Elementwise, dense and channel-concatenation operators.

use super::tensor::{gemm, Scalar, Tensor};
use super::NnError;

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was positive.
pub fn relu_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    grad_out.expect_shape(input.shape(), "relu_backward grad_out")?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// `x·W + b` for `x` of shape N×D, `weight` D×K and `bias` of length K.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>, NnError> {
    let (n, d) = input.dims2()?;
    let (wd, k) = weight.dims2()?;
    if wd != d || bias.len() != k {
        return Err(NnError::ShapeMismatch {
            context: "dense weight",
            expected: vec![d, k],
            actual: vec![wd, bias.len()],
        });
    }
    let mut out = Tensor::zeros(&[n, k]);
    for row in out.data_mut().chunks_mut(k) {
        row.copy_from_slice(bias);
    }
    gemm(
        n,
        d,
        k,
        input.data(),
        false,
        weight.data(),
        false,
        out.data_mut(),
        true,
    );
    out.debug_check_finite("dense_forward");
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<DenseGrads<T>, NnError> {
    let (n, d) = input.dims2()?;
    let (_, k) = weight.dims2()?;
    grad_out.expect_shape(&[n, k], "dense_backward grad_out")?;
    let mut gw = Tensor::zeros(&[d, k]);
    gemm(
        d,
        n,
        k,
        input.data(),
        true,
        grad_out.data(),
        false,
        gw.data_mut(),
        false,
    );
    let mut gx = Tensor::zeros(&[n, d]);
    gemm(
        n,
        k,
        d,
        grad_out.data(),
        false,
        weight.data(),
        true,
        gx.data_mut(),
        false,
    );
    let mut gb = vec![T::zero(); k];
    for row in grad_out.data().chunks(k) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(DenseGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

/// Stacks N×Cᵢ×H×W tensors along the channel axis, preserving order.
pub fn concat_channels<T: Scalar>(inputs: &[Tensor<T>]) -> Result<Tensor<T>, NnError> {
    let first = inputs
        .first()
        .ok_or_else(|| NnError::InvalidArgument("concat of zero tensors".into()))?;
    let (n, _, h, w) = first.dims4()?;
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(NnError::SpatialMismatch {
                expected: vec![n, h, w],
                actual: vec![tn, th, tw],
            });
        }
        channels.push(tc);
    }
    let total: usize = channels.iter().sum();
    let mut data = Vec::with_capacity(n * total * h * w);
    for item in 0..n {
        for t in inputs {
            data.extend_from_slice(t.item(item));
        }
    }
    Tensor::new(vec![n, total, h, w], data)
}

/// Inverse of [`concat_channels`]: splits along channels into the given sizes.
pub fn split_channels<T: Scalar>(
    input: &Tensor<T>,
    sizes: &[usize],
) -> Result<Vec<Tensor<T>>, NnError> {
    let (n, c, h, w) = input.dims4()?;
    if sizes.iter().sum::<usize>() != c {
        return Err(NnError::ShapeMismatch {
            context: "split_channels sizes",
            expected: vec![c],
            actual: vec![sizes.iter().sum()],
        });
    }
    let plane = h * w;
    let mut parts: Vec<Vec<T>> = sizes
        .iter()
        .map(|&s| Vec::with_capacity(n * s * plane))
        .collect();
    for item in 0..n {
        let src = input.item(item);
        let mut offset = 0;
        for (part, &s) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&src[offset * plane..(offset + s) * plane]);
            offset += s;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::new(vec![n, s, h, w], d))
        .collect()
}
