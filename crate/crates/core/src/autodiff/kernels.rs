//! Raw numeric kernels over flat slices: matrix products and the
//! im2col/col2im lowering used by both convolution directions.

use crate::scalar::Scalar;

/// `c (+)= a · b` with `a: m×k`, `b: k×n`, `c: m×n`, all row-major.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    for (i, crow) in c.chunks_exact_mut(n).enumerate() {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c (+)= aᵀ · b` with `a: k×m`, `b: k×n`, `c: m×n`.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += api * bv;
            }
        }
    }
}

/// `c (+)= a · bᵀ` with `a: m×k`, `b: n×k`, `c: m×n`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, c, accumulate);
}

/// Transposes a `rows×cols` row-major matrix.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Geometry of a strided, zero-padded square-kernel sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    /// Output extents, or `None` when the window does not fit.
    pub fn output_extent(&self) -> Option<(usize, usize)> {
        let ph = self.height + 2 * self.padding;
        let pw = self.width + 2 * self.padding;
        if self.stride == 0 || ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_positions(&self) -> usize {
        let (oh, ow) = self.output_extent().expect("window validated by caller");
        oh * ow
    }
}

/// Lowers `batch` NCHW images into a `(C·K·K) × (batch·OH·OW)` matrix.
pub fn im2col<T: Scalar>(input: &[T], batch: usize, win: &Window) -> Vec<T> {
    let (oh, ow) = win.output_extent().expect("window validated by caller");
    let positions = oh * ow;
    let cols_n = batch * positions;
    let (h, w, k, s, p) = (win.height, win.width, win.kernel, win.stride, win.padding);
    let mut cols = vec![T::zero(); win.rows() * cols_n];
    let img_size = win.channels * h * w;
    for n in 0..batch {
        let img = &input[n * img_size..(n + 1) * img_size];
        for c in 0..win.channels {
            let plane = &img[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * cols_n + n * positions..row * cols_n + (n + 1) * positions];
                    for y in 0..oh {
                        let iy = (y * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut dst[y * ow..(y + 1) * ow];
                        for (x, d) in dst_row.iter_mut().enumerate() {
                            let ix = (x * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back into NCHW images, summing overlaps.
pub fn col2im<T: Scalar>(cols: &[T], batch: usize, win: &Window) -> Vec<T> {
    let (oh, ow) = win.output_extent().expect("window validated by caller");
    let positions = win.out_positions();
    let cols_n = batch * positions;
    let (h, w, k, s, p) = (win.height, win.width, win.kernel, win.stride, win.padding);
    let img_size = win.channels * h * w;
    let mut out = vec![T::zero(); batch * img_size];
    for n in 0..batch {
        let img = &mut out[n * img_size..(n + 1) * img_size];
        for c in 0..win.channels {
            let plane = &mut img[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * cols_n + n * positions..row * cols_n + (n + 1) * positions];
                    for y in 0..oh {
                        let iy = (y * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src_row = &src[y * ow..(y + 1) * ow];
                        for (x, &v) in src_row.iter().enumerate() {
                            let ix = (x * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[N, C, P]` → `[C, N·P]`.
pub fn batch_to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * p..(b * c + ch + 1) * p];
            out[ch * n * p + b * p..ch * n * p + (b + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `[C, N·P]` → `[N, C, P]`.
pub fn channel_to_batch_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * p..(b * c + ch + 1) * p]
                .copy_from_slice(&x[ch * n * p + b * p..ch * n * p + (b + 1) * p]);
        }
    }
    out
}
