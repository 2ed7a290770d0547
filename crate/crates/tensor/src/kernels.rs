//! Raw forward/backward kernels on NCHW tensors. No autodiff bookkeeping here.

use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeom {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x_shape.len(), 4, "conv2d input must be NCHW");
        assert_eq!(w_shape.len(), 4, "conv2d weight must be OIHW");
        assert_eq!(x_shape[1], w_shape[1], "conv2d channel mismatch: input {x_shape:?}, weight {w_shape:?}");
        assert!(stride >= 1);
        let g = Self {
            c_in: x_shape[1],
            h: x_shape[2],
            w: x_shape[3],
            c_out: w_shape[0],
            kh: w_shape[2],
            kw: w_shape[3],
            stride,
            pad,
        };
        assert!(g.h + 2 * pad >= g.kh && g.w + 2 * pad >= g.kw, "conv2d kernel larger than padded input");
        g
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` for which `ox*stride + kx - pad` lands inside `[0, w)`.
    fn valid_cols(&self, kx: usize, wo: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = ((self.w as isize - 1 - off).div_euclid(s) + 1).min(wo as isize);
        let lo = lo.min(wo as isize).max(0) as usize;
        (lo, hi.max(lo as isize) as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Conv2dGeom, col: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kx, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = (lo + kx) - g.pad;
                        drow[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, d) in drow[lo..hi].iter_mut().enumerate() {
                            *d = src[(ox + lo) * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Conv2dGeom, x: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kx, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    for ox in lo..hi {
                        x[base + ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let g = Conv2dGeom::new(x.shape(), w.shape(), stride, pad);
    let n = x.dim(0);
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let k = g.k();
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * plane;
    let mut out = vec![T::zero(); n * out_sz];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    let wm = MatRef::new(w.data(), g.c_out, k);
    for b in 0..n {
        let xb = &x.data()[b * in_sz..(b + 1) * in_sz];
        let colm = if g.is_pointwise() {
            MatRef::new(xb, k, plane)
        } else {
            im2col(xb, &g, &mut col);
            MatRef::new(&col, k, plane)
        };
        let ob = &mut out[b * out_sz..(b + 1) * out_sz];
        gemm(T::one(), wm, colm, T::zero(), ob);
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                for v in &mut ob[o * plane..(o + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(&[n, g.c_out, ho, wo], out)
}

pub fn conv2d_backward_input<T: Scalar>(
    grad: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let g = Conv2dGeom::new(x_shape, w.shape(), stride, pad);
    let n = x_shape[0];
    let plane = g.out_h() * g.out_w();
    let k = g.k();
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * plane;
    let mut gx = vec![T::zero(); n * in_sz];
    let wt = MatRef::new(w.data(), g.c_out, k).t();
    let mut col = vec![T::zero(); k * plane];
    for b in 0..n {
        let gb = MatRef::new(&grad.data()[b * out_sz..(b + 1) * out_sz], g.c_out, plane);
        let gxb = &mut gx[b * in_sz..(b + 1) * in_sz];
        if g.is_pointwise() {
            gemm(T::one(), wt, gb, T::zero(), gxb);
        } else {
            gemm(T::one(), wt, gb, T::zero(), &mut col);
            col2im(&col, &g, gxb);
        }
    }
    Tensor::new(x_shape, gx)
}

pub fn conv2d_backward_weight<T: Scalar>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let g = Conv2dGeom::new(x.shape(), w_shape, stride, pad);
    let n = x.dim(0);
    let plane = g.out_h() * g.out_w();
    let k = g.k();
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * plane;
    let mut gw = vec![T::zero(); g.c_out * k];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    for b in 0..n {
        let xb = &x.data()[b * in_sz..(b + 1) * in_sz];
        let colt = if g.is_pointwise() {
            MatRef::new(xb, k, plane).t()
        } else {
            im2col(xb, &g, &mut col);
            MatRef::new(&col, k, plane).t()
        };
        let gb = MatRef::new(&grad.data()[b * out_sz..(b + 1) * out_sz], g.c_out, plane);
        gemm(T::one(), gb, colt, T::one(), &mut gw);
    }
    Tensor::new(w_shape, gw)
}

/// Sum of the gradient over batch and spatial positions, per output channel.
pub fn channel_sum<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (grad.dim(0), grad.dim(1));
    let plane: usize = grad.shape()[2..].iter().product();
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let s = (b * c + ch) * plane;
            *o += grad.data()[s..s + plane].iter().copied().sum();
        }
    }
    Tensor::new(&[c], out)
}

/// 2x2/stride-2 max pooling with ceil-mode output size. Returns the pooled
/// tensor and the flat input index of each selected maximum.
pub fn max_pool2x2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let d = x.data();
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                    if iy < h && ix < w {
                        let i = base + iy * w + ix;
                        if d[i] > d[best] {
                            best = i;
                        }
                    }
                }
                out.push(d[best]);
                arg.push(best as u32);
            }
        }
    }
    (Tensor::new(&[n, c, ho, wo], out), arg)
}

pub fn upsample_nearest2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let mut out = vec![T::zero(); n * c * 4 * h * w];
    for nc in 0..n * c {
        let src = &x.data()[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * 4 * h * w..(nc + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(&[n, c, 2 * h, 2 * w], out)
}

pub fn upsample_nearest2x_backward<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let (n, c, h2, w2) = (grad.dim(0), grad.dim(1), grad.dim(2), grad.dim(3));
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = vec![T::zero(); n * c * h * w];
    for nc in 0..n * c {
        let src = &grad.data()[nc * h2 * w2..(nc + 1) * h2 * w2];
        let dst = &mut out[nc * h * w..(nc + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Interpolation taps along one axis for half-pixel-centred bilinear resizing.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, ho: usize, wo: usize) -> Tensor<T> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut out = vec![T::zero(); n * c * ho * wo];
    for nc in 0..n * c {
        let src = &x.data()[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy1, fy0) = (T::lit(fy), T::lit(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx1, fx0) = (T::lit(fx), T::lit(1.0 - fx));
                dst[oy * wo + ox] = fy0 * (fx0 * src[y0 * w + x0] + fx1 * src[y0 * w + x1])
                    + fy1 * (fx0 * src[y1 * w + x0] + fx1 * src[y1 * w + x1]);
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

pub fn resize_bilinear_backward<T: Scalar>(grad: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c, ho, wo) = (grad.dim(0), grad.dim(1), grad.dim(2), grad.dim(3));
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut out = vec![T::zero(); n * c * h * w];
    for nc in 0..n * c {
        let src = &grad.data()[nc * ho * wo..(nc + 1) * ho * wo];
        let dst = &mut out[nc * h * w..(nc + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy1, fy0) = (T::lit(fy), T::lit(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx1, fx0) = (T::lit(fx), T::lit(1.0 - fx));
                let gv = src[oy * wo + ox];
                dst[y0 * w + x0] += gv * fy0 * fx0;
                dst[y0 * w + x1] += gv * fy0 * fx1;
                dst[y1 * w + x0] += gv * fy1 * fx0;
                dst[y1 * w + x1] += gv * fy1 * fx1;
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}
