use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Only the parameter set handed to [`Adam::step`]
/// is ever touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub first_moment: ParamSet<T>,
    pub second_moment: ParamSet<T>,
    pub steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        Self { config, first_moment: params.zeros_like(), second_moment: params.zeros_like(), steps: 0 }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>]) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(c.eps);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = &mut params.values_mut()[i];
            let m = &mut self.first_moment.values_mut()[i];
            let v = &mut self.second_moment.values_mut()[i];
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            for (((pv, mv), vv), &gv) in
                p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                *pv -= step_size * *mv / (vv.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("x", Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &ps);
        for _ in 0..2000 {
            let tape = Tape::new();
            let b = ps.bind(&tape, true);
            let loss = b.var(id).add_scalar(-1.0).square().sum();
            let mut g = tape.backward(loss);
            let grads = b.grads(&mut g);
            opt.step(&mut ps, &grads);
        }
        for &v in ps.get(id).data() {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }
}
