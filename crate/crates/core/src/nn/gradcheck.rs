//! Finite-difference verification of analytic input and parameter
//! gradients.
//!
//! The network under test is copied to `f64`. The scalar objective is a
//! fixed random projection `<r, f(x)>` of the network output, so for a
//! linear network the central difference is exact up to rounding. Every
//! checked input or parameter entry is perturbed by `±h` and the central difference is
//! compared against the backward pass of `r`.
//!
//! ReLU and max-pool make the network piecewise smooth. When `x ± h` lands
//! on a different piece than `x` (the activation pattern changes), the step
//! is shrunk tenfold, up to [`MAX_STEP_REDUCTIONS`] times.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::Sequential;
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

pub const MAX_STEP_REDUCTIONS: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check at most this many randomly chosen entries of the input and of each
    /// parameter tensor; `None` checks every entry.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries whose step had to be shrunk to stay on one smooth piece.
    pub reduced_steps: usize,
    /// Entries still crossing a kink at the smallest step.
    pub unresolved_kinks: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

fn objective_from(
    net: &Sequential<f64>,
    start: usize,
    input: &Tensor<f64>,
    projection: &Tensor<f64>,
) -> Result<(f64, Vec<u64>), NnError> {
    let mut pattern = Vec::new();
    let out = net.forward_from_pattern(start, input, &mut pattern)?;
    out.expect_shape(projection.shape(), "grad_check output")?;
    let value = out
        .data()
        .iter()
        .zip(projection.data())
        .map(|(a, b)| a * b)
        .sum();
    Ok((value, pattern))
}

/// Worst relative error between backpropagated and central-difference
/// gradients over the checked input and parameter entries. The input is
/// reported under the name `input`.
pub fn grad_check<T: Scalar>(
    net: &Sequential<T>,
    input: &Tensor<T>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let mut net: Sequential<f64> = net.cast();
    let input: Tensor<f64> = input.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    net.zero_grad();
    let out = net.forward_train(&input)?;
    let projection = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let input_grad = net.backward(&projection)?;

    // Input of each top-level layer, so a perturbation in layer i only
    // re-runs layers i.. .
    let mut acts = Vec::with_capacity(net.layers.len());
    let mut cur = input;
    for layer in &net.layers {
        let next = layer.forward(&cur)?;
        acts.push(cur);
        cur = next;
    }

    let mut report = GradCheckReport::default();
    if let Some(first) = acts.first() {
        let mut x = first.clone();
        let indices = choose(&mut rng, x.len(), opts.max_per_tensor);
        let (_, base) = objective_from(&net, 0, &x, &projection)?;
        for e in indices {
            let orig = x.data()[e];
            let numeric = central_difference(
                opts.h,
                &base,
                &mut report,
                |v| {
                    x.data_mut()[e] = v;
                    let r = objective_from(&net, 0, &x, &projection);
                    x.data_mut()[e] = orig;
                    r
                },
                orig,
            )?;
            report.record("input", e, input_grad.data()[e], numeric);
        }
    }
    for (li, act) in acts.iter().enumerate() {
        let count = net.layers[li].params().len();
        for pi in 0..count {
            let (len, name, analytic) = {
                let p = &net.layers[li].params()[pi];
                (p.value.len(), p.name.clone(), p.grad.data().to_vec())
            };
            let indices = choose(&mut rng, len, opts.max_per_tensor);
            let (_, base) = objective_from(&net, li, act, &projection)?;
            for e in indices {
                let orig = net.layers[li].params()[pi].value.data()[e];
                let numeric = central_difference(
                    opts.h,
                    &base,
                    &mut report,
                    |v| {
                        net.layers[li].params_mut()[pi].value.data_mut()[e] = v;
                        let r = objective_from(&net, li, act, &projection);
                        net.layers[li].params_mut()[pi].value.data_mut()[e] = orig;
                        r
                    },
                    orig,
                )?;
                report.record(&name, e, analytic[e], numeric);
            }
        }
    }
    Ok(report)
}

fn choose(rng: &mut ChaCha8Rng, len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(k) if k < len => {
            let mut idx = sample(rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Central difference of `eval` around `orig`, shrinking the step while
/// either side lands on a different activation pattern than `base`.
fn central_difference(
    h: f64,
    base: &[u64],
    report: &mut GradCheckReport,
    mut eval: impl FnMut(f64) -> Result<(f64, Vec<u64>), NnError>,
    orig: f64,
) -> Result<f64, NnError> {
    let mut h = h;
    let mut reductions = 0;
    loop {
        let (plus, p_plus) = eval(orig + h)?;
        let (minus, p_minus) = eval(orig - h)?;
        let numeric = (plus - minus) / (2.0 * h);
        let smooth = p_plus == base && p_minus == base;
        if smooth || reductions == MAX_STEP_REDUCTIONS {
            if !smooth {
                report.unresolved_kinks += 1;
            }
            if reductions > 0 {
                report.reduced_steps += 1;
            }
            return Ok(numeric);
        }
        reductions += 1;
        h /= 10.0;
    }
}

impl GradCheckReport {
    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((name.to_string(), index));
        }
    }
}
