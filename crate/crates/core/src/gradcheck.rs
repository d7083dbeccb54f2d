//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Perturbation step.
    pub h: f64,
    /// Elements probed per input tensor (all of them when smaller).
    pub max_per_tensor: usize,
    /// Seeds the output weighting and the probed elements.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            max_per_tensor: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖∞ / max(‖numeric‖∞, 1e-12)` over the probed
    /// elements.
    pub rel_error: f64,
    pub checked: usize,
    /// Probes left out because the perturbation moved a (leaky) ReLU input
    /// across zero, where the function is not differentiable.
    pub skipped: usize,
    /// `(input, element)` of the largest absolute discrepancy.
    pub worst: (usize, usize),
}

/// Compares the reverse-mode gradient of `Σ r ⊙ f(inputs)` (fixed random
/// `r`) with central differences. `f` records its computation on the
/// given tape from the input leaves and returns the output.
pub fn grad_check(
    inputs: &[Tensor<f64>],
    config: &GradCheckConfig,
    mut f: impl FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: Option<Tensor<f64>> = None;

    let mut eval = |values: &[Tensor<f64>], grads: bool, weights: &mut Option<Tensor<f64>>, rng: &mut ChaCha8Rng| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| tape.leaf(t.detached().with_requires_grad(grads)))
            .collect();
        let out = f(&mut tape, &vars)?;
        let shape = tape.value(out).shape().to_vec();
        let r = weights
            .get_or_insert_with(|| {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                Tensor::new(&shape, data).expect("sized")
            })
            .clone();
        let rv = tape.constant(r);
        let prod = tape.mul(out, rv)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).data()[0];
        let pattern = kink_pattern(&tape);
        let g = if grads {
            tape.backward(loss)?;
            vars.iter()
                .zip(values)
                .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
                .collect()
        } else {
            Vec::new()
        };
        Ok::<_, crate::error::Error>((value, g, pattern))
    };

    let (_, analytic, base) = eval(inputs, true, &mut weights, &mut rng)?;
    let mut probe = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut worst_diff: f64 = 0.0;
    let mut max_numeric: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst = (0, 0);
    let mut values: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detached).collect();
    for ti in 0..inputs.len() {
        let n = inputs[ti].numel();
        let picks: Vec<usize> = if n <= config.max_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut probe, n, config.max_per_tensor).into_vec()
        };
        for i in picks {
            let x0 = values[ti].data()[i];
            values[ti].data_mut()[i] = x0 + config.h;
            let (up, _, p_up) = eval(&values, false, &mut weights, &mut rng)?;
            values[ti].data_mut()[i] = x0 - config.h;
            let (down, _, p_down) = eval(&values, false, &mut weights, &mut rng)?;
            values[ti].data_mut()[i] = x0;
            if p_up != base || p_down != base {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * config.h);
            let diff = (analytic[ti][i] - numeric).abs();
            if diff > worst_diff {
                worst_diff = diff;
                worst = (ti, i);
            }
            max_numeric = max_numeric.max(numeric.abs());
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        rel_error: worst_diff / max_numeric.max(1e-12),
        checked,
        skipped,
        worst,
    })
}

/// Signs of every (leaky) ReLU input on the tape.
fn kink_pattern(tape: &Tape<f64>) -> Vec<bool> {
    tape.vars()
        .filter(|&v| matches!(tape.op_name(v), "relu" | "leaky_relu"))
        .flat_map(|v| tape.value(v).data().iter().map(|&y| y > 0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_gradient_is_exact_to_fd_precision() {
        let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let r = grad_check(&[x], &GradCheckConfig::default(), |t, v| t.mul(v[0], v[0])).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // scale's forward is exact; feed a function whose output ignores
        // the perturbation path to provoke a mismatch: sum(detach(x)·x)
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = grad_check(&[x], &GradCheckConfig::default(), |t, v| {
            let d = t.detach(v[0]);
            t.mul(d, v[0])
        })
        .unwrap();
        assert!(r.rel_error > 0.1, "{r:?}");
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let x = Tensor::from_f64(&[2], &[1e-4, 1.0]).unwrap();
        let r = grad_check(&[x], &GradCheckConfig::default(), |t, v| Ok(t.relu(v[0]))).unwrap();
        assert_eq!((r.checked, r.skipped), (1, 1));
        assert!(r.rel_error < 1e-9);
    }

    #[test]
    fn probes_are_capped() {
        let x = Tensor::from_f64(&[10], &[0.1; 10]).unwrap();
        let cfg = GradCheckConfig { max_per_tensor: 4, ..GradCheckConfig::default() };
        let r = grad_check(&[x], &cfg, |t, v| Ok(t.tanh(v[0]))).unwrap();
        assert_eq!(r.checked, 4);
    }
}
