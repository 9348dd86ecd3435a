//! im2col / col2im lowering used by the convolution layers.
//!
//! Column layout: row `(c * k + ki) * k + kj`, column `(n * out_h + oy) * out_w + ox`.
//! `col2im` is the exact adjoint of `im2col` for the same geometry.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad_lo: usize,
    pub pad_hi: usize,
}

impl Geometry {
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + self.pad_lo + self.pad_hi;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

pub(crate) fn im2col(input: ArrayView4<f64>, g: &Geometry) -> Array2<f64> {
    let (n, c, h, w) = input.dim();
    let oh = g.out_len(h).expect("validated geometry");
    let ow = g.out_len(w).expect("validated geometry");
    let k = g.kernel;
    let rows = c * k * k;
    let ncols = n * oh * ow;
    let input = input.as_standard_layout();
    let x = input.as_slice().expect("standard layout");
    let mut cols = vec![0.0; rows * ncols];
    let pad = g.pad_lo as isize;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ch * k + ki) * k + kj;
                let row = &mut cols[r * ncols..(r + 1) * ncols];
                for s in 0..n {
                    let img = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &img[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut row[(s * oh + oy) * ow..(s * oh + oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((rows, ncols), cols).expect("sized above")
}

pub(crate) fn col2im(cols: ArrayView2<f64>, shape: (usize, usize, usize, usize), g: &Geometry) -> Array4<f64> {
    let (n, c, h, w) = shape;
    let oh = g.out_len(h).expect("validated geometry");
    let ow = g.out_len(w).expect("validated geometry");
    let k = g.kernel;
    let ncols = n * oh * ow;
    debug_assert_eq!(cols.dim(), (c * k * k, ncols));
    let cols = cols.as_standard_layout();
    let src_all = cols.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * c * h * w];
    let pad = g.pad_lo as isize;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ch * k + ki) * k + kj;
                let row = &src_all[r * ncols..(r + 1) * ncols];
                for s in 0..n {
                    let img = &mut out[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut img[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[(s * oh + oy) * ow..(s * oh + oy + 1) * ow];
                        for (ox, v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec(shape, out).expect("sized above")
}
