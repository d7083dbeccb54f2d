//! Per-channel batch normalization over NCHW tensors.

use crate::autodiff::tape::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How batch normalization picks its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running averages are updated.
    Train,
    /// Batch statistics; running averages are left untouched. Used when a
    /// network is evaluated inside another network's update step.
    TrainFrozen,
    /// Running statistics only.
    Eval,
}

impl BnMode {
    pub fn uses_batch_stats(self) -> bool {
        !matches!(self, BnMode::Eval)
    }
}

/// Running mean/variance buffers of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BnMode,
        config: BnConfig,
    ) -> Result<Var> {
        const OP: &str = "batch_norm2d";
        let x = self.value(input);
        let (n, c, h, w) = x.dims4(OP)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(
                    OP,
                    format!("{name} shape {:?} does not match {c} channels", self.value(v).shape()),
                ));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(OP, "running statistics do not match channel count"));
        }
        if mode.uses_batch_stats() && n < 2 {
            return Err(Error::domain(OP, "training mode needs a batch of at least 2"));
        }
        let plane = h * w;
        let count = n * plane;
        let count_t = T::from_usize(count).unwrap();
        let eps = T::from_f64_lossy(config.eps);
        let momentum = T::from_f64_lossy(config.momentum);
        let xd = x.data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();

        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if mode.uses_batch_stats() {
            for b in 0..n {
                for (ch, m) in mean.iter_mut().enumerate() {
                    let s = (b * c + ch) * plane;
                    *m += xd[s..s + plane].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count_t);
            for b in 0..n {
                for ch in 0..c {
                    let s = (b * c + ch) * plane;
                    let mu = mean[ch];
                    var[ch] += xd[s..s + plane].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count_t);
        } else {
            mean.copy_from_slice(&stats.mean);
            var.copy_from_slice(&stats.var);
        }

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let s = (b * c + ch) * plane;
                for i in s..s + plane {
                    let xh = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gd[ch] * xh + bd[ch];
                }
            }
        }

        if mode == BnMode::Train {
            let unbias = if count > 1 {
                count_t / T::from_usize(count - 1).unwrap()
            } else {
                T::one()
            };
            for ch in 0..c {
                stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * mean[ch];
                stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * var[ch] * unbias;
            }
        }

        let value = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(
            value,
            Op::BatchNorm2d {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode.uses_batch_stats(),
            },
            &[input, gamma, beta],
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm2d_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    g: &[T],
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
) {
    let shape = sink.value(input).shape().to_vec();
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let s = (b * c + ch) * plane;
            for i in s..s + plane {
                dgamma[ch] += g[i] * xhat[i];
                dbeta[ch] += g[i];
            }
        }
    }
    if sink.wants(input) {
        let gd = sink.value(gamma).data().to_vec();
        let mut dx = vec![T::zero(); g.len()];
        if batch_stats {
            // dx = γ·σ⁻¹/M · (M·g − Σg − x̂·Σ(g·x̂))
            let m = T::from_usize(n * plane).unwrap();
            for b in 0..n {
                for ch in 0..c {
                    let s = (b * c + ch) * plane;
                    let k = gd[ch] * inv_std[ch] / m;
                    for i in s..s + plane {
                        dx[i] = k * (m * g[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                    }
                }
            }
        } else {
            for b in 0..n {
                for ch in 0..c {
                    let s = (b * c + ch) * plane;
                    let k = gd[ch] * inv_std[ch];
                    for i in s..s + plane {
                        dx[i] = k * g[i];
                    }
                }
            }
        }
        sink.add(input, dx);
    }
    sink.add(gamma, dgamma);
    sink.add(beta, dbeta);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: Tensor<f64>, mode: BnMode, cfg: BnConfig, stats: &mut RunningStats<f64>) -> Tensor<f64> {
        let c = x.shape()[1];
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::ones(&[c]));
        let b = tape.constant(Tensor::full(&[c], 0.25));
        let y = tape.batch_norm2d(xv, g, b, stats, mode, cfg).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut stats = RunningStats::new(2);
        let y = run(Tensor::full(&[3, 2, 2, 2], 7.0), BnMode::Train, BnConfig::default(), &mut stats);
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn two_samples_normalize_to_unit_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[2, 1, 1, 1], &[1.0, 3.0]).unwrap());
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut stats = RunningStats::new(1);
        let cfg = BnConfig { eps: 0.0, momentum: 0.1 };
        let y = tape.batch_norm2d(x, g, b, &mut stats, BnMode::Train, cfg).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.0, 1.0]);
        // mean 2, unbiased variance 2
        assert!((stats.mean[0] - 0.2).abs() < 1e-15);
        assert!((stats.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn training_mode_rejects_single_item_batch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 4, 4]));
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut stats = RunningStats::new(1);
        let r = tape.batch_norm2d(x, g, b, &mut stats, BnMode::Train, BnConfig::default());
        assert!(matches!(r, Err(Error::Domain { .. })));
        assert!(tape
            .batch_norm2d(x, g, b, &mut stats, BnMode::Eval, BnConfig::default())
            .is_ok());
    }

    #[test]
    fn eval_mode_uses_running_stats_only() {
        let mut stats = RunningStats { mean: vec![1.0], var: vec![4.0] };
        let cfg = BnConfig { eps: 0.0, momentum: 0.1 };
        let y = run(Tensor::from_f64(&[1, 1, 1, 2], &[3.0, 5.0]).unwrap(), BnMode::Eval, cfg, &mut stats);
        assert_eq!(y.data(), &[1.25, 2.25]);
        assert_eq!(stats.mean, vec![1.0]);
    }

    #[test]
    fn frozen_training_mode_keeps_running_stats() {
        let mut stats = RunningStats::new(1);
        let before = stats.clone();
        run(Tensor::from_f64(&[2, 1, 1, 2], &[3.0, 5.0, 1.0, 0.0]).unwrap(), BnMode::TrainFrozen, BnConfig::default(), &mut stats);
        assert_eq!(stats, before);
    }
}
