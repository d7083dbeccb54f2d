//! Fully connected (affine) layer.

use crate::autodiff::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::autodiff::tape::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// `input · weight + bias` with `input: N×F`, `weight: F×U`, `bias: U`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "fully_connected";
        let (n, f) = self.value(input).dims2(OP)?;
        let (wf, u) = self.value(weight).dims2(OP)?;
        if wf != f {
            return Err(Error::shape(
                OP,
                format!("input has {f} features but weight expects {wf}"),
            ));
        }
        if self.value(bias).shape() != [u] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?} does not match {u} units", self.value(bias).shape()),
            ));
        }
        let mut out = vec![T::zero(); n * u];
        gemm_nn(n, f, u, self.value(input).data(), self.value(weight).data(), &mut out, false);
        let b = self.value(bias).data();
        for row in out.chunks_exact_mut(u) {
            row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
        }
        let value = Tensor::new(&[n, u], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }
}

pub(crate) fn linear_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: &[T], input: Var, weight: Var, bias: Var) {
    let (n, f) = (sink.value(input).shape()[0], sink.value(input).shape()[1]);
    let u = sink.value(weight).shape()[1];
    if sink.wants(bias) {
        let mut db = vec![T::zero(); u];
        for row in g.chunks_exact(u) {
            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
        }
        sink.add(bias, db);
    }
    if sink.wants(weight) {
        let mut dw = vec![T::zero(); f * u];
        gemm_tn(f, n, u, sink.value(input).data(), g, &mut dw, false);
        sink.add(weight, dw);
    }
    if sink.wants(input) {
        let mut dx = vec![T::zero(); n * f];
        gemm_nt(n, u, f, g, sink.value(weight).data(), &mut dx, false);
        sink.add(input, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input_through() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap());
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = tape.constant(Tensor::new(&[3, 3], eye).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.fully_connected(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn small_affine_case() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::from_f64(&[2, 1], &[1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[1], &[0.5]).unwrap());
        let y = tape.fully_connected(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5]);
    }

    #[test]
    fn inner_dimension_mismatch_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let w = tape.constant(Tensor::zeros(&[2, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.fully_connected(x, w, b), Err(Error::Shape { .. })));
    }
}
