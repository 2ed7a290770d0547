//! Small layer helpers over [`ParamSet`]: each layer records the ids of its
//! tensors and runs on parameters bound to a tape.

use loopgan_tensor::{Bound, ParamId, ParamSet, Tensor, Var};
use rand::Rng;

use crate::real::Real;

pub fn kaiming_std(fan_in: usize, gain: f64) -> f64 {
    gain / (fan_in as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// `std` is the init standard deviation; `None` means Kaiming with ReLU gain.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        std: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let std = std.unwrap_or_else(|| kaiming_std(cin * k * k, 2f64.sqrt()));
        let weight = params.add(format!("{name}.weight"), Tensor::randn(&[cout, cin, k, k], std, rng));
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { weight, bias, stride, pad: k / 2 }
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(p.var(self.weight), self.bias.map(|b| p.var(b)), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        std: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let std = std.unwrap_or_else(|| kaiming_std(fan_in, 2f64.sqrt()));
        let weight = params.add(format!("{name}.weight"), Tensor::randn(&[fan_out, fan_in], std, rng));
        let bias = Some(params.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Self { weight, bias }
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.linear(p.var(self.weight), self.bias.map(|b| p.var(b)))
    }
}

/// Batch norm whose running statistics live in a separate buffer set.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Pending running-stat updates collected during a training forward pass.
#[derive(Default)]
pub struct BnUpdates<T> {
    pub entries: Vec<(ParamId, ParamId, Tensor<T>, Tensor<T>)>,
}

impl<T: Real> BnUpdates<T> {
    pub fn apply(self, buffers: &mut ParamSet<T>) {
        let m = T::lit(BN_MOMENTUM);
        for (mean_id, var_id, mean, var) in self.entries {
            let n = T::one() - m;
            let rm = buffers.get_mut(mean_id);
            *rm = rm.zip_map(&mean, |a, b| a * n + b * m);
            let rv = buffers.get_mut(var_id);
            *rv = rv.zip_map(&var, |a, b| a * n + b * m);
        }
    }
}

impl BatchNorm {
    pub fn new<T: Real>(params: &mut ParamSet<T>, buffers: &mut ParamSet<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(&[c])),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::ones(&[c])),
        }
    }

    /// Uses batch statistics when `updates` is given, running statistics otherwise.
    pub fn forward<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        buffers: &ParamSet<T>,
        x: Var<'t, T>,
        updates: Option<&mut BnUpdates<T>>,
    ) -> Var<'t, T> {
        let eps = T::lit(BN_EPS);
        let (g, b) = (p.var(self.gamma), p.var(self.beta));
        match updates {
            Some(u) => {
                let (y, stats) = x.batch_norm(g, b, eps, None);
                let (mean, var) = stats.expect("batch statistics");
                u.entries.push((self.running_mean, self.running_var, mean, var));
                y
            }
            None => {
                x.batch_norm(g, b, eps, Some((buffers.get(self.running_mean), buffers.get(self.running_var)))).0
            }
        }
    }
}

/// Spectrally normalized convolution; `u`/`v` power-iteration vectors are
/// kept in a buffer set and refreshed by [`SnConv2d::power_iterate`].
#[derive(Clone, Debug)]
pub struct SnConv2d {
    pub conv: Conv2d,
    pub u: ParamId,
    pub v: ParamId,
}

impl SnConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        buffers: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(params, name, cin, cout, k, stride, true, None, rng);
        let u = unit(Tensor::randn(&[cout], 1.0, rng));
        let rest = cin * k * k;
        let w = params.get(conv.weight).clone();
        let v = unit(mat_t_vec(&w, &u, rest));
        let u_id = buffers.add(format!("{name}.sn_u"), u);
        let v_id = buffers.add(format!("{name}.sn_v"), v);
        let out = Self { conv, u: u_id, v: v_id };
        for _ in 0..10 {
            out.power_iterate(params, buffers);
        }
        out
    }

    /// One power-iteration step on the current weight.
    pub fn power_iterate<T: Real>(&self, params: &ParamSet<T>, buffers: &mut ParamSet<T>) {
        let w = params.get(self.conv.weight);
        let rest = w.len() / w.dim(0);
        let u = buffers.get(self.u).clone();
        let v = unit(mat_t_vec(w, &u, rest));
        let u = unit(mat_vec(w, &v, rest));
        *buffers.get_mut(self.v) = v;
        *buffers.get_mut(self.u) = u;
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, buffers: &ParamSet<T>, x: Var<'t, T>) -> Var<'t, T> {
        let w = p.var(self.conv.weight).spectral_normalize(buffers.get(self.u), buffers.get(self.v));
        x.conv2d(w, self.conv.bias.map(|b| p.var(b)), self.conv.stride, self.conv.pad)
    }
}

fn unit<T: Real>(t: Tensor<T>) -> Tensor<T> {
    let norm = t.data().iter().map(|&x| x * x).sum::<T>().sqrt().max(T::lit(1e-12));
    t.map(|x| x / norm)
}

fn mat_vec<T: Real>(w: &Tensor<T>, v: &Tensor<T>, cols: usize) -> Tensor<T> {
    let d = w.data().chunks(cols).map(|row| row.iter().zip(v.data()).map(|(&a, &b)| a * b).sum()).collect();
    Tensor::new(&[w.dim(0)], d)
}

fn mat_t_vec<T: Real>(w: &Tensor<T>, u: &Tensor<T>, cols: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); cols];
    for (row, &ur) in w.data().chunks(cols).zip(u.data()) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += ur * x;
        }
    }
    Tensor::new(&[cols], out)
}

/// Leaky ReLU followed by the `sqrt(2)` gain used in style-based generators.
pub fn lrelu_gain<'t, T: Real>(x: Var<'t, T>) -> Var<'t, T> {
    x.leaky_relu(T::lit(0.2)).scale(T::lit(2f64.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use loopgan_tensor::Tape;

    #[test]
    fn power_iteration_converges_to_top_singular_value() {
        let mut rng = crate::real::rng_for(1, &[]);
        let (mut p, mut b) = (ParamSet::<f64>::new(), ParamSet::new());
        let sn = SnConv2d::new(&mut p, &mut b, "c", 3, 4, 3, 1, &mut rng);
        for _ in 0..200 {
            sn.power_iterate(&p, &mut b);
        }
        let tape = Tape::new();
        let bound = p.bind(&tape, false);
        let w = bound.var(sn.conv.weight).spectral_normalize(b.get(sn.u), b.get(sn.v)).value();
        // the normalized matrix has unit top singular value: |W v| = 1
        let wv = mat_vec(&w, b.get(sn.v), 27);
        let norm: f64 = wv.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6, "{norm}");
        // and no other unit vector is stretched further
        for _ in 0..20 {
            let x = unit(Tensor::<f64>::randn(&[27], 1.0, &mut rng));
            let n: f64 = mat_vec(&w, &x, 27).data().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let (mut p, mut b) = (ParamSet::<f64>::new(), ParamSet::new());
        let bn = BatchNorm::new(&mut p, &mut b, "bn", 2);
        let tape = Tape::new();
        let bound = p.bind(&tape, false);
        let x = tape.constant(Tensor::new(&[2, 2, 1, 1], vec![1.0, 3.0, 3.0, 5.0]));
        let mut u = BnUpdates::default();
        bn.forward(&bound, &b, x, Some(&mut u));
        u.apply(&mut b);
        assert_eq!(b.get(bn.running_mean).data(), &[0.2, 0.4]);
        assert!((b.get(bn.running_var).data()[0] - 1.0).abs() < 1e-12);
    }
}
