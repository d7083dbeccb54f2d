//! Element-wise activations, arithmetic, reductions, reshaping and pooling.

use crate::autodiff::tape::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Logistic function evaluated without overflowing `exp`.
#[inline]
pub fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    fn map_unary(&mut self, input: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape as input");
        self.push(value, op, &[input])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        self.map_unary(
            input,
            |v| if v >= T::zero() { v } else { s * v },
            Op::LeakyRelu { input, slope: s },
        )
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.map_unary(input, |v| v.max(T::zero()), Op::Relu { input })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.map_unary(input, |v| v.tanh(), Op::Tanh { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.map_unary(input, stable_sigmoid, Op::Sigmoid { input })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::from_f64_lossy(factor);
        self.map_unary(input, |v| v * f, Op::Scale { input, factor: f })
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("add", lhs, rhs)?;
        let a = self.value(lhs);
        let data = a.data().iter().zip(self.value(rhs).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(a.shape(), data)?;
        Ok(self.push(value, Op::Add { lhs, rhs }, &[lhs, rhs]))
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("mul", lhs, rhs)?;
        let a = self.value(lhs);
        let data = a.data().iter().zip(self.value(rhs).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(a.shape(), data)?;
        Ok(self.push(value, Op::Mul { lhs, rhs }, &[lhs, rhs]))
    }

    /// Element-wise `|lhs − rhs|`, symmetric in its arguments.
    pub fn abs_diff(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("abs_diff", lhs, rhs)?;
        let a = self.value(lhs);
        let data = a
            .data()
            .iter()
            .zip(self.value(rhs).data())
            .map(|(&x, &y)| (x - y).abs())
            .collect();
        let value = Tensor::new(a.shape(), data)?;
        Ok(self.push(value, Op::AbsDiff { lhs, rhs }, &[lhs, rhs]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: T = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { input }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let s: T = x.data().iter().copied().sum::<T>() / T::from_usize(x.numel()).unwrap();
        self.push(Tensor::scalar(s), Op::Mean { input }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { input }, &[input]))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    /// Average pooling without padding; trailing rows/columns that do not
    /// fill a whole window are dropped.
    pub fn avg_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        const OP: &str = "avg_pool2d";
        let x = self.value(input);
        let (n, c, h, w) = x.dims4(OP)?;
        if kernel == 0 || stride == 0 {
            return Err(Error::domain(OP, "kernel and stride must be positive"));
        }
        if h < kernel || w < kernel {
            return Err(Error::domain(
                OP,
                format!("{h}x{w} input is smaller than the {kernel}x{kernel} window"),
            ));
        }
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let area = T::from_usize(kernel * kernel).unwrap();
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in xd.chunks_exact(h * w) {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = T::zero();
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            s += plane[(y * stride + ky) * w + xo * stride + kx];
                        }
                    }
                    out.push(s / area);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::AvgPool2d { input, kernel, stride }, &[input]))
    }
}

pub(crate) fn leaky_relu_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: &[T], input: Var, slope: T) {
    let x = sink.value(input).data();
    let dx = x
        .iter()
        .zip(g)
        .map(|(&v, &gv)| if v >= T::zero() { gv } else { gv * slope })
        .collect();
    sink.add(input, dx);
}

pub(crate) fn relu_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: &[T], input: Var) {
    let x = sink.value(input).data();
    let dx = x
        .iter()
        .zip(g)
        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
        .collect();
    sink.add(input, dx);
}

pub(crate) fn tanh_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: &[T], input: Var, out: &Tensor<T>) {
    let dx = out
        .data()
        .iter()
        .zip(g)
        .map(|(&y, &gv)| gv * (T::one() - y * y))
        .collect();
    sink.add(input, dx);
}

pub(crate) fn sigmoid_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: &[T], input: Var, out: &Tensor<T>) {
    let dx = out
        .data()
        .iter()
        .zip(g)
        .map(|(&y, &gv)| gv * y * (T::one() - y))
        .collect();
    sink.add(input, dx);
}

pub(crate) fn mul_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: &[T], lhs: Var, rhs: Var) {
    if sink.wants(lhs) {
        let r = sink.value(rhs).data();
        let d = g.iter().zip(r).map(|(&gv, &v)| gv * v).collect();
        sink.add(lhs, d);
    }
    if sink.wants(rhs) {
        let l = sink.value(lhs).data();
        let d = g.iter().zip(l).map(|(&gv, &v)| gv * v).collect();
        sink.add(rhs, d);
    }
}

pub(crate) fn abs_diff_backward<T: Scalar>(sink: &mut GradSink<'_, T>, g: &[T], lhs: Var, rhs: Var) {
    let a = sink.value(lhs).data();
    let b = sink.value(rhs).data();
    let signed: Vec<T> = a
        .iter()
        .zip(b)
        .zip(g)
        .map(|((&x, &y), &gv)| {
            if x > y {
                gv
            } else if x < y {
                -gv
            } else {
                T::zero()
            }
        })
        .collect();
    if sink.wants(rhs) {
        sink.add(rhs, signed.iter().map(|&v| -v).collect());
    }
    sink.add(lhs, signed);
}

pub(crate) fn avg_pool2d_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    g: &[T],
    input: Var,
    kernel: usize,
    stride: usize,
    out: &Tensor<T>,
) {
    let shape = sink.value(input).shape().to_vec();
    let (h, w) = (shape[2], shape[3]);
    let (oh, ow) = (out.shape()[2], out.shape()[3]);
    let area = T::from_usize(kernel * kernel).unwrap();
    let mut dx = vec![T::zero(); sink.value(input).numel()];
    for (plane, gp) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
        for y in 0..oh {
            for xo in 0..ow {
                let v = gp[y * ow + xo] / area;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        plane[(y * stride + ky) * w + xo * stride + kx] += v;
                    }
                }
            }
        }
    }
    sink.add(input, dx);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape<f64>, v: &[f64]) -> Var {
        tape.leaf(Tensor::from_f64(&[v.len()], v).unwrap().with_requires_grad(true))
    }

    #[test]
    fn leaky_relu_values_and_slope_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = vec_leaf(&mut tape, &[-1.0, 0.0, 2.0]);
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[-0.2, 0.0, 2.0]);

        tape.reset();
        let x = vec_leaf(&mut tape, &[-3.0]);
        let y = tape.leaky_relu(x, 0.2);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.2]);
    }

    #[test]
    fn leaky_relu_is_identity_on_nonnegative_input() {
        let mut tape = Tape::<f32>::new();
        let data = vec![0.0, 0.5, 3.0, 100.0];
        let x = tape.constant(Tensor::new(&[4], data.clone()).unwrap());
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn standard_activations() {
        let mut tape = Tape::<f32>::new();
        let z = tape.constant(Tensor::zeros(&[1]));
        let t = tape.tanh(z);
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(t).data(), &[0.0]);
        assert_eq!(tape.value(s).data(), &[0.5]);

        let big = tape.constant(Tensor::from_f64(&[2], &[1e4, -1e4]).unwrap());
        let sb = tape.sigmoid(big);
        let v = tape.value(sb).data();
        assert!(v[0].is_finite() && v[0] <= 1.0 && v[0] > 0.99);
        assert!(v[1].is_finite() && v[1] >= 0.0 && v[1] < 0.01);

        let r = tape.constant(Tensor::from_f64(&[2], &[-2.0, 5.0]).unwrap());
        let rr = tape.relu(r);
        assert_eq!(tape.value(rr).data(), &[0.0, 5.0]);
    }

    #[test]
    fn abs_diff_is_symmetric() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[3], &[0.0, 2.0, 0.5]).unwrap());
        let ab = tape.abs_diff(a, b).unwrap();
        let ba = tape.abs_diff(b, a).unwrap();
        assert_eq!(tape.value(ab).data(), tape.value(ba).data());
        assert_eq!(tape.value(ab).data(), &[1.0, 4.0, 0.0]);
    }

    #[test]
    fn avg_pool_floor_mode_collapses_odd_extent() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap());
        let p = tape.avg_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(p).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(p).data(), &[3.0]);
    }
}
