//! Differentiable operations on [`Var`].

use std::rc::Rc;

use crate::kernels;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tape::Var;
use crate::tensor::Tensor;

fn prefix_split(full: &[usize], prefix: &[usize]) -> usize {
    assert!(
        prefix.len() <= full.len() && full[..prefix.len()] == *prefix,
        "broadcast prefix {prefix:?} does not match {full:?}"
    );
    full[prefix.len()..].iter().product()
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let yc = Rc::clone(&y);
        self.tape.op(y, &[self], move |g, _| {
            let d: Vec<T> = x
                .data()
                .iter()
                .zip(yc.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                .collect();
            vec![Some(Tensor::new(g.shape(), d))]
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        let y = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape.op(Rc::new(y), &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        let y = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape.op(Rc::new(y), &[self, other], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))])
    }

    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, |p, q| p * q);
        self.tape.op(Rc::new(y), &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |gi, bi| gi * bi)),
                needs[1].then(|| g.zip_map(&a, |gi, ai| gi * ai)),
            ]
        })
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|v| v * c);
        self.tape.op(Rc::new(y), &[self], move |g, _| vec![Some(g.map(|v| v * c))])
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|v| v + c);
        self.tape.op(Rc::new(y), &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(|v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        self.unary(
            move |v| if v > T::zero() { v } else { v * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t, T> {
        self.unary(
            |v| v.max(T::zero()) + (-v.abs()).exp().ln_1p(),
            |x, _| T::one() / (T::one() + (-x).exp()),
        )
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|v| v.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'t, T> {
        self.unary(|v| v.ln(), |x, _| T::one() / x)
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|v| v * v, |x, _| x + x)
    }

    /// `x^(-1/2)`
    pub fn rsqrt(self) -> Var<'t, T> {
        self.unary(|v| T::one() / v.sqrt(), |_, y| -T::lit(0.5) * y * y * y)
    }

    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape.op(Rc::new(Tensor::scalar(x.sum())), &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.data()[0]))]
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().len();
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    /// Sums over all axes after the first `keep`.
    pub fn sum_trailing(self, keep: usize) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let outer: usize = shape[..keep].iter().product();
        let inner: usize = shape[keep..].iter().product();
        let y: Vec<T> = x.data().chunks(inner.max(1)).map(|c| c.iter().copied().sum()).collect();
        let y = Tensor::new(&shape[..keep], y[..outer].to_vec());
        self.tape.op(Rc::new(y), &[self], move |g, _| {
            let mut d = Vec::with_capacity(outer * inner);
            for &gv in g.data() {
                d.extend(std::iter::repeat_n(gv, inner));
            }
            vec![Some(Tensor::new(&shape, d))]
        })
    }

    pub fn mean_trailing(self, keep: usize) -> Var<'t, T> {
        let inner: usize = self.shape()[keep..].iter().product();
        self.sum_trailing(keep).scale(T::one() / T::lit(inner as f64))
    }

    /// Elementwise product with `s` broadcast over the trailing axes; the
    /// shape of `s` must be a prefix of the shape of `self`.
    pub fn mul_prefix(self, s: Var<'t, T>) -> Var<'t, T> {
        let (x, sv) = (self.value(), s.value());
        let inner = prefix_split(x.shape(), sv.shape());
        let mut y = x.as_ref().clone();
        for (chunk, &f) in y.data_mut().chunks_mut(inner).zip(sv.data()) {
            for v in chunk {
                *v *= f;
            }
        }
        self.tape.op(Rc::new(y), &[self, s], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = g.clone();
                for (chunk, &f) in gx.data_mut().chunks_mut(inner).zip(sv.data()) {
                    for v in chunk {
                        *v *= f;
                    }
                }
                gx
            });
            let gs = needs[1].then(|| {
                let d: Vec<T> = g
                    .data()
                    .chunks(inner)
                    .zip(x.data().chunks(inner))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                    .collect();
                Tensor::new(sv.shape(), d)
            });
            vec![gx, gs]
        })
    }

    /// Adds `s` broadcast over the trailing axes (shape of `s` is a prefix).
    pub fn add_prefix(self, s: Var<'t, T>) -> Var<'t, T> {
        let (x, sv) = (self.value(), s.value());
        let inner = prefix_split(x.shape(), sv.shape());
        let s_shape = sv.shape().to_vec();
        let mut y = x.as_ref().clone();
        for (chunk, &f) in y.data_mut().chunks_mut(inner).zip(sv.data()) {
            for v in chunk {
                *v += f;
            }
        }
        self.tape.op(Rc::new(y), &[self, s], move |g, needs| {
            let gs = needs[1].then(|| {
                let d: Vec<T> = g.data().chunks(inner).map(|c| c.iter().copied().sum()).collect();
                Tensor::new(&s_shape, d)
            });
            vec![Some(g.clone()), gs]
        })
    }

    /// Adds a per-channel bias `b[C]` to `x[N, C, ...]`.
    pub fn add_channel_bias(self, b: Var<'t, T>) -> Var<'t, T> {
        let (x, bv) = (self.value(), b.value());
        let c = x.dim(1);
        assert_eq!(bv.shape(), &[c], "channel bias shape");
        let plane: usize = x.shape()[2..].iter().product();
        let mut y = x.as_ref().clone();
        for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let f = bv.data()[i % c];
            for v in chunk {
                *v += f;
            }
        }
        self.tape.op(Rc::new(y), &[self, b], move |g, needs| {
            vec![Some(g.clone()), needs[1].then(|| kernels::channel_sum(g))]
        })
    }

    /// `a[M,K] @ b[K,N]`
    pub fn matmul(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert!(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul shapes {:?} {:?}", a.shape(), b.shape());
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        let mut y = vec![T::zero(); m * n];
        gemm(T::one(), MatRef::new(a.data(), m, k), MatRef::new(b.data(), k, n), T::zero(), &mut y);
        self.tape.op(Rc::new(Tensor::new(&[m, n], y)), &[self, other], move |g, needs| {
            let gm = MatRef::new(g.data(), m, n);
            let ga = needs[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                gemm(T::one(), gm, MatRef::new(b.data(), k, n).t(), T::zero(), &mut d);
                Tensor::new(&[m, k], d)
            });
            let gb = needs[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                gemm(T::one(), MatRef::new(a.data(), m, k).t(), gm, T::zero(), &mut d);
                Tensor::new(&[k, n], d)
            });
            vec![ga, gb]
        })
    }

    /// Fully connected layer `x[N,I] @ w[O,I]^T + b[O]`.
    pub fn linear(self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Var<'t, T> {
        let (x, wv) = (self.value(), w.value());
        assert!(x.ndim() == 2 && wv.ndim() == 2 && x.dim(1) == wv.dim(1), "linear shapes {:?} {:?}", x.shape(), wv.shape());
        let (n, i, o) = (x.dim(0), x.dim(1), wv.dim(0));
        let mut y = vec![T::zero(); n * o];
        gemm(T::one(), MatRef::new(x.data(), n, i), MatRef::new(wv.data(), o, i).t(), T::zero(), &mut y);
        let mut parents = vec![self, w];
        if let Some(b) = b {
            let bv = b.value();
            assert_eq!(bv.shape(), &[o], "linear bias shape");
            for row in y.chunks_mut(o) {
                for (v, &bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
            parents.push(b);
        }
        let has_bias = b.is_some();
        self.tape.op(Rc::new(Tensor::new(&[n, o], y)), &parents, move |g, needs| {
            let gm = MatRef::new(g.data(), n, o);
            let gx = needs[0].then(|| {
                let mut d = vec![T::zero(); n * i];
                gemm(T::one(), gm, MatRef::new(wv.data(), o, i), T::zero(), &mut d);
                Tensor::new(&[n, i], d)
            });
            let gw = needs[1].then(|| {
                let mut d = vec![T::zero(); o * i];
                gemm(T::one(), gm.t(), MatRef::new(x.data(), n, i), T::zero(), &mut d);
                Tensor::new(&[o, i], d)
            });
            let mut out = vec![gx, gw];
            if has_bias {
                out.push(needs[2].then(|| {
                    let mut d = vec![T::zero(); o];
                    for row in g.data().chunks(o) {
                        for (a, &v) in d.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::new(&[o], d)
                }));
            }
            out
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = x.as_ref().clone().reshape(shape);
        self.tape.op(Rc::new(y), &[self], move |g, _| vec![Some(g.clone().reshape(&old))])
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let y = x.narrow(axis, start, len);
        self.tape.op(Rc::new(y), &[self], move |g, _| {
            let full = shape[axis];
            let mut parts: Vec<Tensor<T>> = Vec::new();
            let mut zshape = shape.clone();
            if start > 0 {
                zshape[axis] = start;
                parts.push(Tensor::zeros(&zshape));
            }
            parts.push(g.clone());
            if start + len < full {
                zshape[axis] = full - start - len;
                parts.push(Tensor::zeros(&zshape));
            }
            let refs: Vec<&Tensor<T>> = parts.iter().collect();
            vec![Some(Tensor::cat(&refs, axis))]
        })
    }

    pub fn cat(parts: &[Var<'t, T>], axis: usize) -> Var<'t, T> {
        let vals: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::cat(&refs, axis);
        let sizes: Vec<usize> = vals.iter().map(|v| v.dim(axis)).collect();
        parts[0].tape.op(Rc::new(y), parts, move |g, needs| {
            let mut start = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let r = need.then(|| g.narrow(axis, start, len));
                    start += len;
                    r
                })
                .collect()
        })
    }

    pub fn conv2d(self, w: Var<'t, T>, bias: Option<Var<'t, T>>, stride: usize, pad: usize) -> Var<'t, T> {
        let (x, wv) = (self.value(), w.value());
        let bv = bias.map(|b| b.value());
        let y = kernels::conv2d_forward(&x, &wv, bv.as_deref(), stride, pad);
        let mut parents = vec![self, w];
        parents.extend(bias);
        self.tape.op(Rc::new(y), &parents, move |g, needs| {
            let mut out = vec![
                needs[0].then(|| kernels::conv2d_backward_input(g, &wv, x.shape(), stride, pad)),
                needs[1].then(|| kernels::conv2d_backward_weight(g, &x, wv.shape(), stride, pad)),
            ];
            if needs.len() > 2 {
                out.push(needs[2].then(|| kernels::channel_sum(g)));
            }
            out
        })
    }

    /// 2x2 max pooling, stride 2, ceil mode.
    pub fn max_pool2x2(self) -> Var<'t, T> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let (y, arg) = kernels::max_pool2x2(&x);
        self.tape.op(Rc::new(y), &[self], move |g, _| {
            let mut d = Tensor::zeros(&in_shape);
            let dd = d.data_mut();
            for (&i, &gv) in arg.iter().zip(g.data()) {
                dd[i as usize] += gv;
            }
            vec![Some(d)]
        })
    }

    /// Global max over the spatial axes of `x[N,C,H,W]`, giving `[N,C]`.
    pub fn global_max_pool(self) -> Var<'t, T> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let (n, c) = (in_shape[0], in_shape[1]);
        let plane: usize = in_shape[2..].iter().product();
        let mut vals = Vec::with_capacity(n * c);
        let mut arg = Vec::with_capacity(n * c);
        for (i, chunk) in x.data().chunks(plane).enumerate() {
            let (j, v) = chunk
                .iter()
                .enumerate()
                .fold((0, chunk[0]), |(bj, bv), (j, &v)| if v > bv { (j, v) } else { (bj, bv) });
            vals.push(v);
            arg.push(i * plane + j);
        }
        self.tape.op(Rc::new(Tensor::new(&[n, c], vals)), &[self], move |g, _| {
            let mut d = Tensor::zeros(&in_shape);
            for (&i, &gv) in arg.iter().zip(g.data()) {
                d.data_mut()[i] += gv;
            }
            vec![Some(d)]
        })
    }

    pub fn upsample_nearest2x(self) -> Var<'t, T> {
        let y = kernels::upsample_nearest2x(&self.value());
        self.tape.op(Rc::new(y), &[self], |g, _| vec![Some(kernels::upsample_nearest2x_backward(g))])
    }

    pub fn resize_bilinear(self, h: usize, w: usize) -> Var<'t, T> {
        let x = self.value();
        let (h0, w0) = (x.dim(2), x.dim(3));
        if (h0, w0) == (h, w) {
            return self;
        }
        let y = kernels::resize_bilinear(&x, h, w);
        self.tape.op(Rc::new(y), &[self], move |g, _| {
            vec![Some(kernels::resize_bilinear_backward(g, h0, w0))]
        })
    }

    /// Batch normalization over `[N,C,...]`, per channel. With `running`
    /// statistics the op is a fixed affine map (inference); without, batch
    /// statistics are used and returned so the caller can track them.
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: T,
        running: Option<(&Tensor<T>, &Tensor<T>)>,
    ) -> (Var<'t, T>, Option<(Tensor<T>, Tensor<T>)>) {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        let count = T::lit((n * plane) as f64);
        let (gv, bv) = (gamma.value(), beta.value());

        let (mean, var, batch_stats) = match running {
            Some((m, v)) => (m.clone(), v.clone(), false),
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for (i, chunk) in x.data().chunks(plane).enumerate() {
                    mean[i % c] += chunk.iter().copied().sum::<T>();
                }
                for m in &mut mean {
                    *m /= count;
                }
                for (i, chunk) in x.data().chunks(plane).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
                for v in &mut var {
                    *v /= count;
                }
                (Tensor::new(&[c], mean), Tensor::new(&[c], var), true)
            }
        };
        let inv_std: Vec<T> = var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.as_ref().clone();
        let mut y = x.as_ref().clone();
        for (i, (hc, yc)) in xhat.data_mut().chunks_mut(plane).zip(y.data_mut().chunks_mut(plane)).enumerate() {
            let ch = i % c;
            let (m, s, gm, bt) = (mean.data()[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
            for (h, yv) in hc.iter_mut().zip(yc.iter_mut()) {
                *h = (*h - m) * s;
                *yv = *h * gm + bt;
            }
        }
        let out = self.tape.op(Rc::new(y), &[self, gamma, beta], move |g, needs| {
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for (i, (gc, hc)) in g.data().chunks(plane).zip(xhat.data().chunks(plane)).enumerate() {
                for (&gg, &h) in gc.iter().zip(hc) {
                    sum_g[i % c] += gg;
                    sum_gx[i % c] += gg * h;
                }
            }
            let gx = needs[0].then(|| {
                let mut d = g.clone();
                for (i, (dc, hc)) in d.data_mut().chunks_mut(plane).zip(xhat.data().chunks(plane)).enumerate() {
                    let ch = i % c;
                    let k = gv.data()[ch] * inv_std[ch];
                    for (dv, &h) in dc.iter_mut().zip(hc) {
                        *dv = if batch_stats {
                            k * (*dv - sum_g[ch] / count - h * sum_gx[ch] / count)
                        } else {
                            k * *dv
                        };
                    }
                }
                d
            });
            vec![
                gx,
                needs[1].then(|| Tensor::new(&[c], sum_gx.clone())),
                needs[2].then(|| Tensor::new(&[c], sum_g.clone())),
            ]
        });
        (out, if running.is_none() { Some((mean, var)) } else { None })
    }

    /// Mean softmax cross-entropy of `logits[N,C]` against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let (n, c) = (x.dim(0), x.dim(1));
        assert_eq!(labels.len(), n, "one label per row");
        let probs = softmax_rows(&x);
        let mut loss = T::zero();
        for (row, &l) in probs.data().chunks(c).zip(labels) {
            assert!(l < c, "label {l} out of range for {c} classes");
            loss -= row[l].max(T::min_positive_value()).ln();
        }
        loss /= T::lit(n as f64);
        let labels = labels.to_vec();
        self.tape.op(Rc::new(Tensor::scalar(loss)), &[self], move |g, _| {
            let s = g.data()[0] / T::lit(n as f64);
            let mut d = probs.clone();
            for (row, &l) in d.data_mut().chunks_mut(c).zip(&labels) {
                row[l] -= T::one();
                for v in row.iter_mut() {
                    *v *= s;
                }
            }
            vec![Some(d)]
        })
    }

    /// `w / sigma` where `sigma = u^T W v` for `W = w` flattened to
    /// `[out, rest]`. `u` and `v` are treated as constants (they come from
    /// power iteration), so the gradient is exact for the given vectors.
    pub fn spectral_normalize(self, u: &Tensor<T>, v: &Tensor<T>) -> Var<'t, T> {
        let w = self.value();
        let rows = w.dim(0);
        let cols = w.len() / rows;
        assert_eq!(u.len(), rows);
        assert_eq!(v.len(), cols);
        let mut sigma = T::zero();
        for (r, row) in w.data().chunks(cols).enumerate() {
            let dot: T = row.iter().zip(v.data()).map(|(&a, &b)| a * b).sum();
            sigma += u.data()[r] * dot;
        }
        let sigma = sigma.max(T::lit(1e-12));
        let y = w.map(|x| x / sigma);
        let (u, v) = (u.clone(), v.clone());
        self.tape.op(Rc::new(y), &[self], move |g, _| {
            let gw: T = g.data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum();
            let k = gw / (sigma * sigma);
            let mut d = g.map(|x| x / sigma);
            for (r, row) in d.data_mut().chunks_mut(cols).enumerate() {
                let ur = u.data()[r];
                for (x, &vc) in row.iter_mut().zip(v.data()) {
                    *x -= k * ur * vc;
                }
            }
            vec![Some(d)]
        })
    }
}

/// Row-wise softmax of a `[N, C]` tensor.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.dim(1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}
