//! Strided 2-D convolution and its transpose, lowered to matrix products.

use crate::autodiff::kernels::{
    batch_to_channel_major, channel_to_batch_major, col2im, gemm_nn, gemm_nt, gemm_tn, im2col, Window,
};
use crate::autodiff::tape::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_square(op: &'static str, kh: usize, kw: usize) -> Result<usize> {
    if kh != kw {
        return Err(Error::shape(op, format!("kernel must be square, got {kh}x{kw}")));
    }
    Ok(kh)
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::shape(
            op,
            format!("bias shape {:?} does not match {channels} output channels", bias.shape()),
        ));
    }
    Ok(())
}

fn bias_grad<T: Scalar>(g: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (n * channels + c) * plane;
            *acc += g[start..start + plane].iter().copied().sum::<T>();
        }
    }
    db
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], batch: usize, plane: usize) {
    let channels = bias.len();
    for n in 0..batch {
        for (c, &b) in bias.iter().enumerate() {
            let start = (n * channels + c) * plane;
            out[start..start + plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_extent(input: usize, kernel: usize, stride: usize, padding: usize, output_padding: usize) -> Option<usize> {
    let full = (input.checked_sub(1)? * stride + kernel + output_padding) as isize - 2 * padding as isize;
    (full > 0).then_some(full as usize)
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of an NCHW input with an `[O, I, K, K]` weight.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let x = self.value(input);
        let w = self.value(weight);
        let (n, c, h, wd) = x.dims4(OP)?;
        let (o, i, kh, kw) = w.dims4(OP)?;
        let k = check_square(OP, kh, kw)?;
        if i != c {
            return Err(Error::shape(
                OP,
                format!("input has {c} channels but weight expects {i}"),
            ));
        }
        check_bias(OP, self.value(bias), o)?;
        if stride == 0 {
            return Err(Error::domain(OP, "stride must be at least 1"));
        }
        let window = Window {
            channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            padding,
        };
        let (oh, ow) = window
            .output_extent()
            .ok_or_else(|| Error::domain(OP, format!("{h}x{wd} input yields an empty output for kernel {k}")))?;
        let plane = oh * ow;
        let cols = im2col(x.data(), n, &window);
        let mut tmp = vec![T::zero(); o * n * plane];
        gemm_nn(o, window.rows(), n * plane, w.data(), &cols, &mut tmp, false);
        let mut out = channel_to_batch_major(&tmp, n, o, plane);
        add_bias(&mut out, self.value(bias).data(), n, plane);
        let value = Tensor::new(&[n, o, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
                batch: n,
                cols,
            },
            &[input, weight, bias],
        ))
    }

    /// Transposed convolution (the input-gradient operator of
    /// [`Tape::conv2d`]); the weight is laid out `[C_in, C_out, K, K]`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let x = self.value(input);
        let w = self.value(weight);
        let (n, cin, h, wd) = x.dims4(OP)?;
        let (wi, cout, kh, kw) = w.dims4(OP)?;
        let k = check_square(OP, kh, kw)?;
        if wi != cin {
            return Err(Error::shape(
                OP,
                format!("input has {cin} channels but weight expects {wi}"),
            ));
        }
        check_bias(OP, self.value(bias), cout)?;
        if stride == 0 {
            return Err(Error::domain(OP, "stride must be at least 1"));
        }
        if output_padding >= stride {
            return Err(Error::domain(OP, "output_padding must be smaller than stride"));
        }
        let oh = conv_transpose_extent(h, k, stride, padding, output_padding)
            .ok_or_else(|| Error::domain(OP, "empty output"))?;
        let ow = conv_transpose_extent(wd, k, stride, padding, output_padding)
            .ok_or_else(|| Error::domain(OP, "empty output"))?;
        let window = Window {
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            padding,
        };
        if window.output_extent() != Some((h, wd)) {
            return Err(Error::domain(
                OP,
                format!("padding {padding} too large for kernel {k} on a {h}x{wd} input"),
            ));
        }
        let input_cm = batch_to_channel_major(x.data(), n, cin, h * wd);
        let mut cols = vec![T::zero(); window.rows() * n * h * wd];
        gemm_tn(window.rows(), cin, n * h * wd, w.data(), &input_cm, &mut cols, false);
        let mut out = col2im(&cols, n, &window);
        add_bias(&mut out, self.value(bias).data(), n, oh * ow);
        let value = Tensor::new(&[n, cout, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                window,
                batch: n,
                input_cm,
            },
            &[input, weight, bias],
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    g: &[T],
    input: Var,
    weight: Var,
    bias: Var,
    window: &Window,
    batch: usize,
    cols: &[T],
) {
    let o = sink.value(weight).shape()[0];
    let (oh, ow) = window.output_extent().expect("validated in forward");
    let plane = oh * ow;
    let np = batch * plane;
    if sink.wants(bias) {
        sink.add(bias, bias_grad(g, batch, o, plane));
    }
    let want_w = sink.wants(weight);
    let want_x = sink.wants(input);
    if !want_w && !want_x {
        return;
    }
    let g_cm = batch_to_channel_major(g, batch, o, plane);
    if want_w {
        let mut dw = vec![T::zero(); o * window.rows()];
        gemm_nt(o, np, window.rows(), &g_cm, cols, &mut dw, false);
        sink.add(weight, dw);
    }
    if want_x {
        let mut dcols = vec![T::zero(); window.rows() * np];
        gemm_tn(window.rows(), o, np, sink.value(weight).data(), &g_cm, &mut dcols, false);
        sink.add(input, col2im(&dcols, batch, window));
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    g: &[T],
    input: Var,
    weight: Var,
    bias: Var,
    window: &Window,
    batch: usize,
    input_cm: &[T],
) {
    let cout = window.channels;
    let cin = sink.value(weight).shape()[0];
    let plane_out = window.height * window.width;
    if sink.wants(bias) {
        sink.add(bias, bias_grad(g, batch, cout, plane_out));
    }
    let want_w = sink.wants(weight);
    let want_x = sink.wants(input);
    if !want_w && !want_x {
        return;
    }
    let (h, w) = window.output_extent().expect("validated in forward");
    let np = batch * h * w;
    let gcols = im2col(g, batch, window);
    if want_x {
        let mut dx_cm = vec![T::zero(); cin * np];
        gemm_nn(cin, window.rows(), np, sink.value(weight).data(), &gcols, &mut dx_cm, false);
        sink.add(input, channel_to_batch_major(&dx_cm, batch, cin, h * w));
    }
    if want_w {
        let mut dw = vec![T::zero(); cin * window.rows()];
        gemm_nt(cin, np, window.rows(), input_cm, &gcols, &mut dw, false);
        sink.add(weight, dw);
    }
}
