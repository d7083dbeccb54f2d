//! Scalar training objectives.

use crate::autodiff::pointwise::stable_sigmoid;
use crate::autodiff::tape::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_targets<T: Scalar>(op: &'static str, n: usize, targets: &[T]) -> Result<()> {
    if n == 0 {
        return Err(Error::domain(op, "empty batch"));
    }
    if targets.len() != n {
        return Err(Error::shape(
            op,
            format!("{n} predictions but {} targets", targets.len()),
        ));
    }
    if targets.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
        return Err(Error::domain(op, "targets must lie in [0, 1]"));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    /// Binary cross-entropy on probabilities, averaged over all elements.
    ///
    /// Probabilities are clamped to `[ε, 1 − ε]` (machine epsilon) before the
    /// logarithm so saturated predictions give a large but finite loss.
    pub fn bce(&mut self, probs: Var, targets: &[T]) -> Result<Var> {
        const OP: &str = "bce_loss";
        let p = self.value(probs);
        check_targets(OP, p.numel(), targets)?;
        if p.data().iter().any(|&y| !(y >= T::zero() && y <= T::one())) {
            return Err(Error::domain(OP, "predictions must lie in [0, 1]"));
        }
        let eps = T::epsilon();
        let n = T::from_usize(p.numel()).unwrap();
        let total: T = p
            .data()
            .iter()
            .zip(targets)
            .map(|(&y, &t)| {
                let y = y.max(eps).min(T::one() - eps);
                t * y.ln() + (T::one() - t) * (T::one() - y).ln()
            })
            .sum();
        let value = Tensor::scalar(-total / n);
        Ok(self.push(
            value,
            Op::Bce {
                probs,
                targets: targets.to_vec(),
            },
            &[probs],
        ))
    }

    /// Binary cross-entropy on pre-sigmoid logits in the fused
    /// `max(z,0) − z·t + ln(1 + e^−|z|)` form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        const OP: &str = "bce_with_logits";
        let z = self.value(logits);
        check_targets(OP, z.numel(), targets)?;
        let n = T::from_usize(z.numel()).unwrap();
        let total: T = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / n);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Sum of squared differences divided by the batch extent (axis 0):
    /// the per-image squared L2 norm averaged over images.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        const OP: &str = "mse_loss";
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(Error::shape(OP, format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let n = T::from_usize(p.shape()[0]).unwrap();
        let total: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(total / n);
        Ok(self.push(value, Op::Mse { pred, target }, &[pred, target]))
    }
}

pub(crate) fn bce_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: T, probs: Var, targets: &[T]) {
    let p = sink.value(probs).data();
    let eps = T::epsilon();
    let n = T::from_usize(p.len()).unwrap();
    let dx = p
        .iter()
        .zip(targets)
        .map(|(&y, &t)| {
            if y < eps || y > T::one() - eps {
                T::zero()
            } else {
                -g * (t / y - (T::one() - t) / (T::one() - y)) / n
            }
        })
        .collect();
    sink.add(probs, dx);
}

pub(crate) fn bce_with_logits_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: T, logits: Var, targets: &[T]) {
    let z = sink.value(logits).data();
    let n = T::from_usize(z.len()).unwrap();
    let dx = z
        .iter()
        .zip(targets)
        .map(|(&z, &t)| g * (stable_sigmoid(z) - t) / n)
        .collect();
    sink.add(logits, dx);
}

pub(crate) fn mse_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: T, pred: Var, target: Var) {
    let p = sink.value(pred);
    let n = T::from_usize(p.shape()[0]).unwrap();
    let two = T::one() + T::one();
    let d: Vec<T> = p
        .data()
        .iter()
        .zip(sink.value(target).data())
        .map(|(&a, &b)| g * two * (a - b) / n)
        .collect();
    if sink.wants(target) {
        sink.add(target, d.iter().map(|&v| -v).collect());
    }
    sink.add(pred, d);
}
