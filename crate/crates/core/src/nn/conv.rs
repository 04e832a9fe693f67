use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernel geometry shared by `im2col` and its adjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Output spatial size for an `h x w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if self.k_h > ph || self.k_w > pw || self.k_h == 0 || self.k_w == 0 {
            return Err(Error::dim(format!(
                "kernel {}x{} does not fit padded input {ph}x{pw}",
                self.k_h, self.k_w
            )));
        }
        Ok(((ph - self.k_h) / self.stride + 1, (pw - self.k_w) / self.stride + 1))
    }
}

fn nchw(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(Error::dim(format!("expected a batch x channels x H x W tensor, got {s:?}"))),
    }
}

/// Expands receptive fields into columns.
///
/// Returns a `(c_in * k_h * k_w) x (batch * |T|)` matrix whose column
/// `n * |T| + t` is the flattened patch of sample `n` at output location `t`
/// (row-major over the output grid). Rows are ordered channel, kernel row,
/// kernel column. Padding contributes zeros.
pub fn im2col(x: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let (b, c, h, w) = nchw(x)?;
    let (oh, ow) = geom.output_dims(h, w)?;
    let spatial = oh * ow;
    let rows = c * geom.k_h * geom.k_w;
    let cols = b * spatial;
    let mut out = vec![0.0; rows * cols];
    let xd = x.data();
    for n in 0..b {
        for ch in 0..c {
            let plane = &xd[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
            for ki in 0..geom.k_h {
                for kj in 0..geom.k_w {
                    let r = (ch * geom.k_h + ki) * geom.k_w + kj;
                    let row = &mut out[r * cols + n * spatial..r * cols + (n + 1) * spatial];
                    for oy in 0..oh {
                        let iy = (oy * geom.stride + ki) as isize - geom.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * geom.stride + kj) as isize - geom.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                row[oy * ow + ox] = plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[rows, cols], out)
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im(cols: &Tensor, input_shape: &[usize], geom: ConvGeometry) -> Result<Tensor> {
    let (b, c, h, w) = match *input_shape {
        [b, c, h, w] => (b, c, h, w),
        _ => return Err(Error::dim("col2im needs a 4-d input shape")),
    };
    let (oh, ow) = geom.output_dims(h, w)?;
    let spatial = oh * ow;
    let ncols = b * spatial;
    if cols.shape() != [c * geom.k_h * geom.k_w, ncols] {
        return Err(Error::dim(format!(
            "col2im: columns {:?} do not match input {input_shape:?}",
            cols.shape()
        )));
    }
    let mut out = Tensor::zeros(input_shape);
    let od = out.data_mut();
    let cd = cols.data();
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * h * w;
            for ki in 0..geom.k_h {
                for kj in 0..geom.k_w {
                    let r = (ch * geom.k_h + ki) * geom.k_w + kj;
                    let row = &cd[r * ncols + n * spatial..r * ncols + (n + 1) * spatial];
                    for oy in 0..oh {
                        let iy = (oy * geom.stride + ki) as isize - geom.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * geom.stride + kj) as isize - geom.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                od[base + iy as usize * w + ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
