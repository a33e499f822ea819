//! GEMM and convolution lowering (im2col / col2im).

use crate::tensor::Real;

/// `c = a·b + beta·c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
/// A `true` transpose flag means the slice holds the transposed operand
/// (`a` stored as k×m, `b` stored as n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    a_trans: bool,
    b: &[Real],
    b_trans: bool,
    c: &mut [Real],
    beta: Real,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the strides above describe exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are asserted above.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn valid(&self) -> bool {
        self.stride >= 1
            && self.kernel >= 1
            && self.height + 2 * self.padding >= self.kernel
            && self.width + 2 * self.padding >= self.kernel
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub(crate) fn col_len(&self) -> usize {
        self.col_rows() * self.col_cols()
    }

    /// Unfold one image `[C, H, W]` into `[C·k·k, H'·W']`.
    pub(crate) fn im2col(&self, image: &[Real], cols: &mut [Real]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let pad = self.padding as isize;
        for ch in 0..self.channels {
            let plane = &image[ch * self.height * self.width..(ch + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oi in 0..oh {
                        let y = (oi * self.stride) as isize + ki as isize - pad;
                        let line = &mut dst[oi * ow..(oi + 1) * ow];
                        if y < 0 || y >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for (oj, out) in line.iter_mut().enumerate() {
                            let x = (oj * self.stride) as isize + kj as isize - pad;
                            *out = if x < 0 || x >= self.width as isize {
                                0.0
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add columns back into an image.
    pub(crate) fn col2im(&self, cols: &[Real], image: &mut [Real]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        let pad = self.padding as isize;
        for ch in 0..self.channels {
            let plane =
                &mut image[ch * self.height * self.width..(ch + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oi in 0..oh {
                        let y = (oi * self.stride) as isize + ki as isize - pad;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let dst =
                            &mut plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for oj in 0..ow {
                            let x = (oj * self.stride) as isize + kj as isize - pad;
                            if x >= 0 && x < self.width as isize {
                                dst[x as usize] += src[oi * ow + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward: `input [B, C, H, W]`, `kernels [F, C, k, k]`.
pub(crate) fn conv_forward(
    geo: &ConvGeometry,
    batch: usize,
    filters: usize,
    input: &[Real],
    kernels: &[Real],
    out: &mut [Real],
) {
    let in_len = geo.channels * geo.height * geo.width;
    let out_len = filters * geo.col_cols();
    let mut cols = vec![0.0; geo.col_len()];
    for b in 0..batch {
        geo.im2col(&input[b * in_len..(b + 1) * in_len], &mut cols);
        gemm(
            filters,
            geo.col_rows(),
            geo.col_cols(),
            kernels,
            false,
            &cols,
            false,
            &mut out[b * out_len..(b + 1) * out_len],
            0.0,
        );
    }
}

/// Gradients of [`conv_forward`]: accumulates into `grad_input` and `grad_kernels`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    geo: &ConvGeometry,
    batch: usize,
    filters: usize,
    input: &[Real],
    kernels: &[Real],
    grad_out: &[Real],
    grad_input: Option<&mut [Real]>,
    grad_kernels: Option<&mut [Real]>,
) {
    let in_len = geo.channels * geo.height * geo.width;
    let out_len = filters * geo.col_cols();
    let mut cols = vec![0.0; geo.col_len()];
    if let Some(gk) = grad_kernels {
        for b in 0..batch {
            geo.im2col(&input[b * in_len..(b + 1) * in_len], &mut cols);
            gemm(
                filters,
                geo.col_cols(),
                geo.col_rows(),
                &grad_out[b * out_len..(b + 1) * out_len],
                false,
                &cols,
                true,
                gk,
                1.0,
            );
        }
    }
    if let Some(gi) = grad_input {
        for b in 0..batch {
            gemm(
                geo.col_rows(),
                filters,
                geo.col_cols(),
                kernels,
                true,
                &grad_out[b * out_len..(b + 1) * out_len],
                false,
                &mut cols,
                0.0,
            );
            geo.col2im(&cols, &mut gi[b * in_len..(b + 1) * in_len]);
        }
    }
}

/// Transposed convolution forward. `geo` describes the *output* image (the
/// conv that this op is the adjoint of); `input [B, F, H', W']`.
pub(crate) fn deconv_forward(
    geo: &ConvGeometry,
    batch: usize,
    filters: usize,
    input: &[Real],
    kernels: &[Real],
    out: &mut [Real],
) {
    let out_len = geo.channels * geo.height * geo.width;
    let in_len = filters * geo.col_cols();
    let mut cols = vec![0.0; geo.col_len()];
    out.fill(0.0);
    for b in 0..batch {
        gemm(
            geo.col_rows(),
            filters,
            geo.col_cols(),
            kernels,
            true,
            &input[b * in_len..(b + 1) * in_len],
            false,
            &mut cols,
            0.0,
        );
        geo.col2im(&cols, &mut out[b * out_len..(b + 1) * out_len]);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn deconv_backward(
    geo: &ConvGeometry,
    batch: usize,
    filters: usize,
    input: &[Real],
    kernels: &[Real],
    grad_out: &[Real],
    grad_input: Option<&mut [Real]>,
    grad_kernels: Option<&mut [Real]>,
) {
    let out_len = geo.channels * geo.height * geo.width;
    let in_len = filters * geo.col_cols();
    let mut cols = vec![0.0; geo.col_len()];
    let mut gi = grad_input;
    let mut gk = grad_kernels;
    for b in 0..batch {
        geo.im2col(&grad_out[b * out_len..(b + 1) * out_len], &mut cols);
        if let Some(gi) = gi.as_deref_mut() {
            gemm(
                filters,
                geo.col_rows(),
                geo.col_cols(),
                kernels,
                false,
                &cols,
                false,
                &mut gi[b * in_len..(b + 1) * in_len],
                1.0,
            );
        }
        if let Some(gk) = gk.as_deref_mut() {
            gemm(
                filters,
                geo.col_cols(),
                geo.col_rows(),
                &input[b * in_len..(b + 1) * in_len],
                false,
                &cols,
                true,
                gk,
                1.0,
            );
        }
    }
}
