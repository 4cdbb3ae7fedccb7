//! 2-D cross-correlation via im2col + GEMM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Scalar, Tensor};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(in / stride)`; odd padding puts the extra pixel
    /// at the bottom/right.
    Same,
    /// No padding; output extent `floor((in - k) / stride) + 1`.
    Valid,
}

/// Padding before/after and the resulting output extent along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisPlan {
    pub before: usize,
    pub after: usize,
    pub out: usize,
}

pub fn plan_axis(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<AxisPlan, NnError> {
    if stride == 0 || kernel == 0 {
        return Err(NnError::InvalidArgument(format!(
            "kernel {kernel} and stride {stride} must be positive"
        )));
    }
    match padding {
        Padding::Valid => {
            if input < kernel {
                return Err(NnError::OutputExtent {
                    input,
                    kernel,
                    stride,
                });
            }
            Ok(AxisPlan {
                before: 0,
                after: 0,
                out: (input - kernel) / stride + 1,
            })
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok(AxisPlan {
                before: total / 2,
                after: total - total / 2,
                out,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn new(
        (in_c, in_h, in_w): (usize, usize, usize),
        (k_h, k_w): (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self, NnError> {
        let rows = plan_axis(in_h, k_h, stride, padding)?;
        let cols = plan_axis(in_w, k_w, stride, padding)?;
        Ok(Self {
            in_c,
            in_h,
            in_w,
            k_h,
            k_w,
            stride,
            pad_top: rows.before,
            pad_left: cols.before,
            out_h: rows.out,
            out_w: cols.out,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let ohw = self.out_len();
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.k_h {
                for j in 0..self.k_w {
                    let row = ((c * self.k_h + i) * self.k_w + j) * ohw;
                    let dst = &mut cols[row..row + ohw];
                    for oy in 0..self.out_h {
                        let y = (oy * self.stride + i) as isize - self.pad_top as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if y < 0 || y >= self.in_h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * self.in_w..(y as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let xx = (ox * self.stride + j) as isize - self.pad_left as isize;
                            *v = if xx < 0 || xx >= self.in_w as isize {
                                T::zero()
                            } else {
                                src[xx as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let ohw = self.out_len();
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.k_h {
                for j in 0..self.k_w {
                    let row = ((c * self.k_h + i) * self.k_w + j) * ohw;
                    let src = &cols[row..row + ohw];
                    for oy in 0..self.out_h {
                        let y = (oy * self.stride + i) as isize - self.pad_top as isize;
                        if y < 0 || y >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.in_w..(y as usize + 1) * self.in_w];
                        for ox in 0..self.out_w {
                            let xx = (ox * self.stride + j) as isize - self.pad_left as isize;
                            if xx >= 0 && xx < self.in_w as isize {
                                dst[xx as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(ConvGeometry, usize, usize), NnError> {
    let (n, c, h, w) = input.dims4()?;
    let (oc, kc, kh, kw) = kernel.dims4()?;
    if kc != c {
        return Err(NnError::ChannelMismatch {
            expected: kc,
            actual: c,
        });
    }
    Ok((
        ConvGeometry::new((c, h, w), (kh, kw), stride, padding)?,
        n,
        oc,
    ))
}

/// Cross-correlates `input` (N×C×H×W) with `kernel` (OutC×C×KH×KW) and adds
/// `bias` per output channel.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let (g, n, oc) = geometry(input, kernel, stride, padding)?;
    if bias.len() != oc {
        return Err(NnError::ShapeMismatch {
            context: "conv2d bias",
            expected: vec![oc],
            actual: vec![bias.len()],
        });
    }
    let (ohw, plen) = (g.out_len(), g.patch_len());
    let in_len = g.in_c * g.in_h * g.in_w;
    let mut out = Tensor::zeros(&[n, oc, g.out_h, g.out_w]);
    out.data_mut()
        .par_chunks_mut(oc * ohw)
        .enumerate()
        .for_each_init(Vec::new, |cols, (item, dst)| {
            let x = &input.data()[item * in_len..(item + 1) * in_len];
            let cols: &[T] = if g.is_pointwise() && g.pad_top == 0 && g.pad_left == 0 {
                x
            } else {
                cols.resize(plen * ohw, T::zero());
                g.im2col(x, cols);
                cols
            };
            gemm(oc, plen, ohw, kernel.data(), false, cols, false, dst, false);
            for (o, row) in dst.chunks_mut(ohw).enumerate() {
                let b = bias[o];
                row.iter_mut().for_each(|v| *v += b);
            }
        });
    out.debug_check_finite("conv2d_forward");
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

/// Gradients of [`conv2d_forward`] with respect to its input, kernel and
/// bias, given the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Conv2dGrads<T>, NnError> {
    let (g, n, oc) = geometry(input, kernel, stride, padding)?;
    grad_out.expect_shape(&[n, oc, g.out_h, g.out_w], "conv2d_backward grad_out")?;
    let (ohw, plen) = (g.out_len(), g.patch_len());
    let in_len = g.in_c * g.in_h * g.in_w;

    let mut grad_bias = vec![T::zero(); oc];
    let mut grad_kernel = Tensor::zeros(kernel.shape());
    let mut grad_input = Tensor::zeros(input.shape());
    let mut cols = Vec::new();
    let mut dcols = vec![T::zero(); plen * ohw];
    let pointwise = g.is_pointwise() && g.pad_top == 0 && g.pad_left == 0;

    for item in 0..n {
        let dy = &grad_out.data()[item * oc * ohw..(item + 1) * oc * ohw];
        for (o, row) in dy.chunks(ohw).enumerate() {
            grad_bias[o] += row.iter().copied().sum::<T>();
        }
        let x = &input.data()[item * in_len..(item + 1) * in_len];
        let cols: &[T] = if pointwise {
            x
        } else {
            cols.resize(plen * ohw, T::zero());
            g.im2col(x, &mut cols);
            &cols
        };
        // dK += dY · colsᵀ
        gemm(
            oc,
            ohw,
            plen,
            dy,
            false,
            cols,
            true,
            grad_kernel.data_mut(),
            true,
        );
        let dx = &mut grad_input.data_mut()[item * in_len..(item + 1) * in_len];
        if pointwise {
            gemm(plen, oc, ohw, kernel.data(), true, dy, false, dx, false);
        } else {
            // dcols = Kᵀ · dY, scattered back onto the input grid
            gemm(
                plen,
                oc,
                ohw,
                kernel.data(),
                true,
                dy,
                false,
                &mut dcols,
                false,
            );
            g.col2im(&dcols, dx);
        }
    }
    grad_input.debug_check_finite("conv2d_backward");
    grad_kernel.debug_check_finite("conv2d_backward");
    Ok(Conv2dGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}
