//! 2D convolution and its adjoint, lowered to GEMM through im2col.
//!
//! Weights use the `O x I x k x k` layout for both ops. A transposed
//! convolution with weight `W` is the input-gradient pass of the ordinary
//! convolution with the same `W`, so it maps `O` channels back to `I`.

use crate::error::{cfg_err, dim_err, Result};
use crate::scalar::{matmul, Scalar};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Spatial geometry shared by a convolution and its adjoint.
///
/// `(h, w)` is the large side (conv input / transposed-conv output) and
/// `(ho, wo)` the small side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

fn out_extent(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    (n + 2 * padding).checked_sub(k).map(|v| v / stride + 1)
}

fn im2col<T: Scalar>(x: &[T], c: usize, g: &Geometry, cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride as isize, g.padding as isize);
    let hw_out = g.ho * g.wo;
    for ci in 0..c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw_out;
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ky as isize - p;
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the image.
fn col2im<T: Scalar>(cols: &[T], c: usize, g: &Geometry, x: &mut [T]) {
    let (k, s, p) = (g.k, g.stride as isize, g.padding as isize);
    let hw_out = g.ho * g.wo;
    for ci in 0..c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw_out;
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, hw: usize) {
    let c = bias.len();
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            let start = (b * c + ch) * hw;
            out[start..start + hw].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let s = g.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, d) in db.iter_mut().enumerate() {
            let start = (b * c + ch) * hw;
            *d += g.data()[start..start + hw].iter().copied().sum::<T>();
        }
    }
    Tensor::from_vec(&[c], db).expect("bias shape")
}

fn check_4d(op: &'static str, what: &str, shape: &[usize]) -> Result<()> {
    if shape.len() != 4 {
        return Err(dim_err(op, format!("{what} must be 4-D, got {shape:?}")));
    }
    Ok(())
}

fn check_bias<T: Scalar>(op: &'static str, tape: &Tape<T>, b: Option<Var>, channels: usize) -> Result<()> {
    if let Some(b) = b {
        if tape.shape(b) != [channels] {
            return Err(dim_err(
                op,
                format!("bias shape {:?}, expected [{channels}]", tape.shape(b)),
            ));
        }
    }
    Ok(())
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    geom: &Geometry,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let ck = c * geom.k * geom.k;
    let hw = geom.ho * geom.wo;
    let mut cols = vec![T::zero(); ck * hw];
    let mut dcols = vec![T::zero(); ck * hw];
    let mut dx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.numel()]);
    let plane_in = c * geom.h * geom.w;
    for b in 0..n {
        let gout = &g.data()[b * o * hw..(b + 1) * o * hw];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[b * plane_in..(b + 1) * plane_in], c, geom, &mut cols);
            matmul(o, hw, ck, gout, false, &cols, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            matmul(ck, o, hw, w.data(), true, gout, false, &mut dcols, false);
            col2im(&dcols, c, geom, &mut dx[b * plane_in..(b + 1) * plane_in]);
        }
    }
    (
        dx.map(|d| Tensor::from_vec(x.shape(), d).unwrap()),
        dw.map(|d| Tensor::from_vec(w.shape(), d).unwrap()),
        bias_grad(g),
    )
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    geom: &Geometry,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let (n, ci) = (x.shape()[0], x.shape()[1]);
    let co = w.shape()[1];
    let ck = co * geom.k * geom.k;
    let hw = geom.ho * geom.wo;
    let plane_out = co * geom.h * geom.w;
    let mut gcols = vec![T::zero(); ck * hw];
    let mut dx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.numel()]);
    for b in 0..n {
        im2col(&g.data()[b * plane_out..(b + 1) * plane_out], co, geom, &mut gcols);
        let xin = &x.data()[b * ci * hw..(b + 1) * ci * hw];
        if let Some(dx) = dx.as_mut() {
            matmul(ci, ck, hw, w.data(), false, &gcols, false, &mut dx[b * ci * hw..(b + 1) * ci * hw], false);
        }
        if let Some(dw) = dw.as_mut() {
            matmul(ci, hw, ck, xin, false, &gcols, true, dw, true);
        }
    }
    (
        dx.map(|d| Tensor::from_vec(x.shape(), d).unwrap()),
        dw.map(|d| Tensor::from_vec(w.shape(), d).unwrap()),
        bias_grad(g),
    )
}

impl<T: Scalar> Tape<T> {
    /// 2D cross-correlation of an `N x C x H x W` input with an `O x C x k x k` weight.
    ///
    /// Output extent is `floor((H + 2p - k) / stride) + 1`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_4d(OP, "input", &xs)?;
        check_4d(OP, "weight", &ws)?;
        if ws[2] != ws[3] {
            return Err(cfg_err(OP, format!("kernel must be square, got {ws:?}")));
        }
        if stride == 0 {
            return Err(cfg_err(OP, "stride must be >= 1"));
        }
        if ws[1] != xs[1] {
            return Err(dim_err(
                OP,
                format!("input has {} channels, weight expects {}", xs[1], ws[1]),
            ));
        }
        check_bias(OP, self, b, ws[0])?;
        let k = ws[2];
        let (Some(ho), Some(wo)) = (
            out_extent(xs[2], k, stride, padding),
            out_extent(xs[3], k, stride, padding),
        ) else {
            return Err(cfg_err(
                OP,
                format!("kernel {k} larger than padded input {:?}", &xs[2..]),
            ));
        };
        let geom = Geometry {
            k,
            stride,
            padding,
            h: xs[2],
            w: xs[3],
            ho,
            wo,
        };
        let (n, c, o) = (xs[0], xs[1], ws[0]);
        let ck = c * k * k;
        let hw = ho * wo;
        let mut cols = vec![T::zero(); ck * hw];
        let mut out = vec![T::zero(); n * o * hw];
        let plane_in = c * xs[2] * xs[3];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bi in 0..n {
                im2col(&xv[bi * plane_in..(bi + 1) * plane_in], c, &geom, &mut cols);
                matmul(o, ck, hw, wv, false, &cols, false, &mut out[bi * o * hw..(bi + 1) * o * hw], false);
            }
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), n, hw);
        }
        let value = Tensor::from_vec(&[n, o, ho, wo], out)?;
        self.push(value, Op::Conv2d { x, w, b, geom }, OP)
    }

    /// Transposed convolution: `N x I x h x w` input, `I x O x k x k` weight.
    ///
    /// Output extent is `(h - 1) * stride - 2p + k + output_padding`, with
    /// `output_padding < stride`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_4d(OP, "input", &xs)?;
        check_4d(OP, "weight", &ws)?;
        if ws[2] != ws[3] {
            return Err(cfg_err(OP, format!("kernel must be square, got {ws:?}")));
        }
        if stride == 0 || output_padding >= stride {
            return Err(cfg_err(OP, "need stride >= 1 and output_padding < stride"));
        }
        if ws[0] != xs[1] {
            return Err(dim_err(
                OP,
                format!("input has {} channels, weight expects {}", xs[1], ws[0]),
            ));
        }
        check_bias(OP, self, b, ws[1])?;
        let k = ws[2];
        let extent = |n: usize| ((n - 1) * stride + k + output_padding).checked_sub(2 * padding);
        let (Some(h), Some(wd)) = (extent(xs[2]), extent(xs[3])) else {
            return Err(cfg_err(OP, "padding exceeds output extent"));
        };
        if h == 0 || wd == 0 {
            return Err(cfg_err(OP, "empty output"));
        }
        let geom = Geometry {
            k,
            stride,
            padding,
            h,
            w: wd,
            ho: xs[2],
            wo: xs[3],
        };
        let (n, ci, co) = (xs[0], xs[1], ws[1]);
        let ck = co * k * k;
        let hw = xs[2] * xs[3];
        let plane_out = co * h * wd;
        let mut cols = vec![T::zero(); ck * hw];
        let mut out = vec![T::zero(); n * plane_out];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bi in 0..n {
                matmul(ck, ci, hw, wv, true, &xv[bi * ci * hw..(bi + 1) * ci * hw], false, &mut cols, false);
                col2im(&cols, co, &geom, &mut out[bi * plane_out..(bi + 1) * plane_out]);
            }
        }
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data(), n, h * wd);
        }
        let value = Tensor::from_vec(&[n, co, h, wd], out)?;
        self.push(value, Op::ConvTranspose2d { x, w, b, geom }, OP)
    }
}
