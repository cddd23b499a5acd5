use ndarray::{Array2, Array4, ArrayView4};

use crate::error::{Error, Result};

/// Geometry of one convolution applied to an NHWC batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let k = self.kernel;
        (
            (self.in_h + 2 * self.padding - k) / self.stride + 1,
            (self.in_w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn source(&self, o: usize, kk: usize) -> Option<usize> {
        (o * self.stride + kk).checked_sub(self.padding)
    }
}

/// Patch matrix of shape `(batch * out_h * out_w, in_ch * k * k)`.
///
/// Columns are ordered channel-major, then kernel row, then kernel column,
/// matching the rows of [`unroll_conv`].
pub fn im2col(x: ArrayView4<f64>, g: &ConvGeom) -> Array2<f64> {
    let (n, h, w, c) = x.dim();
    debug_assert_eq!((h, w, c), (g.in_h, g.in_w, g.in_ch));
    let (oh, ow) = g.out_hw();
    let k = g.kernel;
    let mut cols = Array2::zeros((n * oh * ow, c * k * k));
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = cols.row_mut((b * oh + oy) * ow + ox);
                for ky in 0..k {
                    let Some(iy) = g.source(oy, ky).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = g.source(ox, kx).filter(|&v| v < w) else {
                            continue;
                        };
                        for ci in 0..c {
                            row[(ci * k + ky) * k + kx] = x[[b, iy, ix, ci]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the input.
pub fn col2im(cols: &Array2<f64>, batch: usize, g: &ConvGeom) -> Array4<f64> {
    let (oh, ow) = g.out_hw();
    let k = g.kernel;
    let mut x = Array4::zeros((batch, g.in_h, g.in_w, g.in_ch));
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = cols.row((b * oh + oy) * ow + ox);
                for ky in 0..k {
                    let Some(iy) = g.source(oy, ky).filter(|&v| v < g.in_h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = g.source(ox, kx).filter(|&v| v < g.in_w) else {
                            continue;
                        };
                        for ci in 0..g.in_ch {
                            x[[b, iy, ix, ci]] += row[(ci * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Unrolls `(out_ch, in_ch, k, k)` kernels into an `(in_ch*k*k, out_ch)`
/// matrix, one column per filter.
pub fn unroll_conv(kernels: &Array4<f64>) -> Array2<f64> {
    let (o, c, kh, kw) = kernels.dim();
    Array2::from_shape_fn((c * kh * kw, o), |(r, f)| {
        let (ci, rest) = (r / (kh * kw), r % (kh * kw));
        kernels[[f, ci, rest / kw, rest % kw]]
    })
}

/// Inverse of [`unroll_conv`].
pub fn reroll_conv(w: &Array2<f64>, in_ch: usize, kernel: usize) -> Result<Array4<f64>> {
    let rows = in_ch * kernel * kernel;
    if w.nrows() != rows {
        return Err(Error::dims(rows.to_string(), w.nrows().to_string()));
    }
    Ok(Array4::from_shape_fn(
        (w.ncols(), in_ch, kernel, kernel),
        |(f, ci, ky, kx)| w[[(ci * kernel + ky) * kernel + kx, f]],
    ))
}
