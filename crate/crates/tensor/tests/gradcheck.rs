//! Central-difference checks of every differentiable op, in f64.

use loopgan_tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Compares analytic gradients of `f` with respect to each input against
/// central differences, over every coordinate.
fn check<F>(inputs: Vec<Tensor<f64>>, f: F)
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&vars);
    // random projection turns any output into a scalar
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let proj = Tensor::<f64>::randn(&out.shape(), 1.0, &mut rng);
    let loss = out.mul(tape.constant(proj.clone())).sum();
    let grads = tape.backward(loss);

    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&vars);
        out.value().data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };

    let h = 1e-6;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape()));
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let tol = 1e-5 * (1.0 + numeric.abs().max(a.abs()));
            assert!((a - numeric).abs() < tol, "input {k} coord {i}: analytic {a} vs numeric {numeric}");
        }
    }
}

fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn elementwise_ops() {
    check(vec![rnd(&[3, 4], 1), rnd(&[3, 4], 2)], |v| v[0].mul(v[1]).add(v[0]).sub(v[1].scale(0.3)));
    check(vec![rnd(&[5], 3)], |v| v[0].tanh().add(v[0].softplus()).add(v[0].exp().scale(0.1)));
    check(vec![rnd(&[6], 4)], |v| v[0].leaky_relu(0.2).add(v[0].square()));
    check(vec![rnd(&[6], 5).map(|x| x.abs() + 0.5)], |v| v[0].rsqrt().add(v[0].ln()));
}

#[test]
fn reductions_and_broadcasts() {
    check(vec![rnd(&[2, 3, 4], 6)], |v| v[0].sum_trailing(1).square());
    check(vec![rnd(&[2, 3, 4], 7)], |v| v[0].mean_trailing(2).mean());
    check(vec![rnd(&[2, 3, 2, 2], 8), rnd(&[2, 3], 9)], |v| v[0].mul_prefix(v[1]));
    check(vec![rnd(&[2, 3, 2, 2], 10), rnd(&[2], 11)], |v| v[0].add_prefix(v[1]).square());
    check(vec![rnd(&[2, 3, 2, 2], 12), rnd(&[3], 13)], |v| v[0].add_channel_bias(v[1]).square());
}

#[test]
fn matrix_ops() {
    check(vec![rnd(&[3, 4], 14), rnd(&[4, 2], 15)], |v| v[0].matmul(v[1]));
    check(vec![rnd(&[3, 4], 16), rnd(&[5, 4], 17), rnd(&[5], 18)], |v| v[0].linear(v[1], Some(v[2])));
}

#[test]
fn shape_ops() {
    check(vec![rnd(&[2, 3, 5], 19)], |v| v[0].narrow(2, 1, 3).square());
    check(vec![rnd(&[2, 2, 3], 20), rnd(&[2, 1, 3], 21)], |v| Var::cat(&[v[0], v[1]], 1).square());
    check(vec![rnd(&[2, 6], 22)], |v| v[0].reshape(&[3, 4]).square());
}

#[test]
fn convolution_and_resampling() {
    check(vec![rnd(&[2, 2, 5, 6], 23), rnd(&[3, 2, 3, 3], 24), rnd(&[3], 25)], |v| {
        v[0].conv2d(v[1], Some(v[2]), 1, 1)
    });
    check(vec![rnd(&[1, 2, 7, 6], 26), rnd(&[2, 2, 3, 3], 27)], |v| v[0].conv2d(v[1], None, 2, 1));
    check(vec![rnd(&[1, 3, 4, 4], 28), rnd(&[2, 3, 1, 1], 29)], |v| v[0].conv2d(v[1], None, 1, 0));
    check(vec![rnd(&[2, 2, 5, 7], 30)], |v| v[0].max_pool2x2());
    check(vec![rnd(&[2, 2, 3, 4], 31)], |v| v[0].upsample_nearest2x());
    check(vec![rnd(&[1, 2, 4, 7], 32)], |v| v[0].resize_bilinear(8, 13));
    check(vec![rnd(&[2, 3, 2, 3], 33)], |v| v[0].global_max_pool());
}

#[test]
fn normalization_and_losses() {
    check(vec![rnd(&[4, 3, 2, 2], 34), rnd(&[3], 35), rnd(&[3], 36)], |v| {
        v[0].batch_norm(v[1], v[2], 1e-5, None).0
    });
    let m = Tensor::new(&[3], vec![0.1, -0.2, 0.3]);
    let s = Tensor::new(&[3], vec![1.5, 0.7, 2.0]);
    check(vec![rnd(&[4, 3, 2, 2], 37), rnd(&[3], 38), rnd(&[3], 39)], move |v| {
        v[0].batch_norm(v[1], v[2], 1e-5, Some((&m, &s))).0
    });
    check(vec![rnd(&[4, 5], 40)], |v| v[0].cross_entropy(&[0, 4, 2, 2]));
    // power iteration yields u, v with u^T W v > 0; keep sigma positive here too
    let u = rnd(&[3], 41).map(f64::abs);
    let w = rnd(&[6], 42).map(f64::abs);
    check(vec![rnd(&[3, 2, 1, 3], 43).map(|x| x.abs() + 0.1)], move |v| v[0].spectral_normalize(&u, &w));
}

#[test]
fn constants_record_no_backward() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::ones(&[2, 2]));
    let y = x.tanh().sum();
    assert!(!y.requires_grad());
    let grads = tape.backward(y);
    assert!(grads.get(x).is_none());
}
