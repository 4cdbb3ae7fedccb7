use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Row-wise softmax of an N×K tensor, stabilized by subtracting the row max.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (_, k) = logits.dims2()?;
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    probs.debug_check_finite("softmax");
    Ok(probs)
}

#[derive(Clone, Debug)]
pub struct SoftmaxCrossEntropy<T = f32> {
    /// Mean negative log-likelihood over the batch.
    pub loss: T,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / N`.
    pub grad_logits: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<SoftmaxCrossEntropy<T>, NnError> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            context: "softmax_cross_entropy labels",
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let probs = softmax(logits)?;
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        // -log p_y = log Σ exp(z - max) - (z_y - max)
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse: f64 = row
            .iter()
            .map(|&z| (z - max).to_f64().unwrap_or(f64::NAN).exp())
            .sum::<f64>()
            .ln();
        total += lse - (row[label] - max).to_f64().unwrap_or(f64::NAN);
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut grad = probs.clone();
    for (row, &label) in grad.data_mut().chunks_mut(k).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(SoftmaxCrossEntropy {
        loss: T::lit(total / n as f64),
        probs,
        grad_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::test_util::{central_diff, rand_tensor, rel_err};
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let logits = Tensor::full(&[2, 4], 0.3f32);
        let out = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!(out.probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-7));
        assert!((out.loss - 4f32.ln()).abs() < 1e-6);
        assert!((out.loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let logits = Tensor::new(vec![1, 4], vec![1000.0f32, 0.0, 0.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(out.loss.abs() < 1e-6);
        assert!(out.probs.all_finite() && out.grad_logits.all_finite());
        let out = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!((out.loss - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(NnError::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let logits = rand_tensor(&[3, 5], seed).map(|v| v * 3.0);
            let labels = [seed as usize % 5, 2, 4];
            let out = softmax_cross_entropy(&logits, &labels).unwrap();
            let num = central_diff(logits.data(), 1e-3, |v| {
                softmax_cross_entropy(&Tensor::new(vec![3, 5], v.to_vec()).unwrap(), &labels)
                    .unwrap()
                    .loss
            });
            assert!(rel_err(out.grad_logits.data(), &num) < 1e-3);
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(values in proptest::collection::vec(-1000.0f32..1000.0, 12)) {
            let probs = softmax(&Tensor::new(vec![3, 4], values).unwrap()).unwrap();
            for row in probs.data().chunks(4) {
                let s: f64 = row.iter().map(|&p| p as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
