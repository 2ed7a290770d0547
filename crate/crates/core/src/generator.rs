//! Style-based mel generator: a 6-layer mapping network `z -> w` and a
//! synthesis network of modulated convolutions growing a learned `4 x 13`
//! constant through four x2 blocks to `64 x 208`, cropped to `64 x 200`.

use std::path::Path;

use loopgan_tensor::{Bound, ParamId, ParamSet, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::melpipe::{MelClip, N_FRAMES, N_MELS};
use crate::nn::lrelu_gain;
use crate::real::{rng_for, Real};

pub const Z_DIM: usize = 32;
pub const W_DIM: usize = 64;
pub const MAPPING_LAYERS: usize = 6;
pub const SYNTHESIS_BLOCKS: usize = 4;
const BASE_H: usize = 4;
const BASE_W: usize = 13;
const CROP: usize = (BASE_W << SYNTHESIS_BLOCKS) - N_FRAMES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_layers: usize,
    /// Constant-input channels followed by the output channels of each block.
    pub channels: Vec<usize>,
    /// Learning-rate multiplier of the mapping network.
    pub mapping_lr_mul: f64,
    pub noise: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            z_dim: Z_DIM,
            w_dim: W_DIM,
            mapping_layers: MAPPING_LAYERS,
            channels: vec![64, 64, 32, 16, 8],
            mapping_lr_mul: 0.01,
            noise: false,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim != Z_DIM {
            return Err(Error::Config(format!("latent length must be {Z_DIM}, got {} (long latents collapse)", self.z_dim)));
        }
        if self.w_dim != W_DIM {
            return Err(Error::Config(format!("style length must be {W_DIM}, got {}", self.w_dim)));
        }
        if self.mapping_layers != MAPPING_LAYERS {
            return Err(Error::Config(format!("mapping network has {MAPPING_LAYERS} layers, got {}", self.mapping_layers)));
        }
        if self.channels.len() != SYNTHESIS_BLOCKS + 1 || self.channels.contains(&0) {
            return Err(Error::Config(format!("need {} nonzero channel counts, got {:?}", SYNTHESIS_BLOCKS + 1, self.channels)));
        }
        if !(self.mapping_lr_mul > 0.0) {
            return Err(Error::Config("mapping learning-rate multiplier must be positive".into()));
        }
        Ok(())
    }
}

/// Modulated convolution: per-sample input scaling by an affine style,
/// shared-weight convolution, optional demodulation, noise, bias.
#[derive(Clone, Debug)]
struct ModConv {
    affine_w: ParamId,
    affine_b: ParamId,
    weight: ParamId,
    bias: ParamId,
    noise: Option<ParamId>,
    cin: usize,
    cout: usize,
    k: usize,
    demod: bool,
}

impl ModConv {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        demod: bool,
        noise: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            affine_w: ps.add(format!("{name}.affine.weight"), Tensor::randn(&[cin, W_DIM], 1.0, rng)),
            affine_b: ps.add(format!("{name}.affine.bias"), Tensor::ones(&[cin])),
            weight: ps.add(format!("{name}.weight"), Tensor::randn(&[cout, cin, k, k], 1.0, rng)),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            noise: noise.then(|| ps.add(format!("{name}.noise_strength"), Tensor::zeros(&[1]))),
            cin,
            cout,
            k,
            demod,
        }
    }

    fn forward<'t, T: Real, R: Rng>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        w: Var<'t, T>,
        noise_rng: Option<&mut R>,
    ) -> Var<'t, T> {
        let n = x.dim(0);
        let mut style = w
            .linear(p.var(self.affine_w).scale(T::lit(1.0 / (W_DIM as f64).sqrt())), Some(p.var(self.affine_b)));
        if !self.demod {
            style = style.scale(T::lit(1.0 / ((self.cin * self.k * self.k) as f64).sqrt()));
        }
        let weight = p.var(self.weight);
        let weight = if self.demod { weight.scale(T::lit(1.0 / ((self.cin * self.k * self.k) as f64).sqrt())) } else { weight };
        let mut y = x.mul_prefix(style).conv2d(weight, None, 1, self.k / 2);
        if self.demod {
            let wsq = weight.square().reshape(&[self.cout, self.cin, self.k * self.k]).sum_trailing(2);
            let d = style.square().linear(wsq, None).add_scalar(T::lit(1e-8)).rsqrt();
            y = y.mul_prefix(d);
        }
        if let (Some(id), Some(rng)) = (self.noise, noise_rng) {
            let (h, wd) = (y.dim(2), y.dim(3));
            let plane = Tensor::<T>::randn(&[n, 1, h, wd], 1.0, rng);
            let mut full = Vec::with_capacity(n * self.cout * h * wd);
            for s in plane.data().chunks(h * wd) {
                for _ in 0..self.cout {
                    full.extend_from_slice(s);
                }
            }
            let noise = x.tape().constant(Tensor::new(&[1, n * self.cout * h * wd], full));
            let scaled = noise.mul_prefix(p.var(id)).reshape(&[n, self.cout, h, wd]);
            y = y.add(scaled);
        }
        y.add_channel_bias(p.var(self.bias))
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv_a: ModConv,
    conv_b: ModConv,
    to_mel: ModConv,
}

#[derive(Clone, Debug)]
struct Layout {
    mapping: Vec<(ParamId, ParamId)>,
    constant: ParamId,
    conv0: ModConv,
    to_mel0: ModConv,
    blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    config: GeneratorConfig,
    params: ParamSet<T>,
    ema: ParamSet<T>,
    layout: Layout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorHeader {
    pub z_dim: usize,
    pub w_dim: usize,
    pub blocks: usize,
    pub ema_decay: f64,
    pub step: usize,
    pub config: GeneratorConfig,
}

/// `n` latents, latent `i` drawn from its own stream so batches of any
/// size agree on shared indices.
pub fn sample_latents<T: Real>(seed: u64, start: usize, n: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * Z_DIM);
    for i in start..start + n {
        let z = Tensor::<T>::randn(&[Z_DIM], 1.0, &mut rng_for(seed, &[0x1a7e, i as u64]));
        data.extend_from_slice(z.data());
    }
    Tensor::new(&[n, Z_DIM], data)
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, &[0x6e4]);
        let mut ps = ParamSet::new();
        let mut mapping = Vec::new();
        for i in 0..MAPPING_LAYERS {
            let fan_in = if i == 0 { Z_DIM } else { W_DIM };
            let w = ps.add(format!("mapping.fc{i}.weight"), Tensor::randn(&[W_DIM, fan_in], 1.0 / config.mapping_lr_mul, &mut rng));
            let b = ps.add(format!("mapping.fc{i}.bias"), Tensor::zeros(&[W_DIM]));
            mapping.push((w, b));
        }
        let ch = &config.channels;
        let constant = ps.add("synthesis.const", Tensor::randn(&[1, ch[0], BASE_H, BASE_W], 1.0, &mut rng));
        let conv0 = ModConv::new(&mut ps, "synthesis.b0.conv", ch[0], ch[0], 3, true, config.noise, &mut rng);
        let to_mel0 = ModConv::new(&mut ps, "synthesis.b0.to_mel", ch[0], 1, 1, false, false, &mut rng);
        let blocks = (1..=SYNTHESIS_BLOCKS)
            .map(|b| Block {
                conv_a: ModConv::new(&mut ps, &format!("synthesis.b{b}.conv_a"), ch[b - 1], ch[b], 3, true, config.noise, &mut rng),
                conv_b: ModConv::new(&mut ps, &format!("synthesis.b{b}.conv_b"), ch[b], ch[b], 3, true, config.noise, &mut rng),
                to_mel: ModConv::new(&mut ps, &format!("synthesis.b{b}.to_mel"), ch[b], 1, 1, false, false, &mut rng),
            })
            .collect();
        let ema = ps.clone();
        Ok(Self { config, params: ps, ema, layout: Layout { mapping, constant, conv0, to_mel0, blocks } })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn ema(&self) -> &ParamSet<T> {
        &self.ema
    }

    pub fn ema_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.ema
    }

    pub fn update_ema(&mut self, decay: f64) {
        self.ema.ema_update(&self.params, T::lit(decay));
    }

    /// `[N, 32] -> [N, 64]`: pixel norm, then six equalized dense layers.
    pub fn map<'t>(&self, p: &Bound<'t, T>, z: Var<'t, T>) -> Var<'t, T> {
        let norm = z.square().mean_trailing(1).add_scalar(T::lit(1e-8)).rsqrt();
        let mut x = z.mul_prefix(norm);
        let lr = self.config.mapping_lr_mul;
        for (i, &(w, b)) in self.layout.mapping.iter().enumerate() {
            let fan_in = if i == 0 { Z_DIM } else { W_DIM };
            let w = p.var(w).scale(T::lit(lr / (fan_in as f64).sqrt()));
            x = lrelu_gain(x.linear(w, Some(p.var(b).scale(T::lit(lr)))));
        }
        x
    }

    /// `[N, 64]` styles to `[N, 1, 64, 200]` mels in `[-1, 1]`.
    pub fn synthesize<'t, R: Rng>(&self, p: &Bound<'t, T>, w: Var<'t, T>, mut noise_rng: Option<&mut R>) -> Var<'t, T> {
        let n = w.dim(0);
        let c = p.var(self.layout.constant);
        let mut x = Var::cat(&vec![c; n], 0);
        x = lrelu_gain(self.layout.conv0.forward(p, x, w, noise_rng.as_deref_mut()));
        let mut img = self.layout.to_mel0.forward(p, x, w, None::<&mut R>);
        for b in &self.layout.blocks {
            x = x.upsample_nearest2x();
            x = lrelu_gain(b.conv_a.forward(p, x, w, noise_rng.as_deref_mut()));
            x = lrelu_gain(b.conv_b.forward(p, x, w, noise_rng.as_deref_mut()));
            img = img.upsample_nearest2x().add(b.to_mel.forward(p, x, w, None::<&mut R>));
        }
        debug_assert_eq!(img.shape(), vec![n, 1, N_MELS, N_FRAMES + CROP]);
        img.narrow(3, CROP / 2, N_FRAMES).tanh()
    }

    pub fn forward<'t, R: Rng>(&self, p: &Bound<'t, T>, z: Var<'t, T>, noise_rng: Option<&mut R>) -> Var<'t, T> {
        let w = self.map(p, z);
        self.synthesize(p, w, noise_rng)
    }

    /// Style codes for explicit latents using the training weights.
    pub fn map_latents(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        check_latents(z)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        Ok(self.map(&p, tape.constant(z.clone())).value().as_ref().clone())
    }

    /// Mels for explicit latents with either the training or the EMA weights.
    pub fn render(&self, z: &Tensor<T>, use_ema: bool) -> Result<Tensor<T>> {
        check_latents(z)?;
        let tape = Tape::new();
        let p = if use_ema { &self.ema } else { &self.params }.bind(&tape, false);
        let mut noise = self.config.noise.then(|| rng_for(self.config.seed, &[0x9015e]));
        Ok(self.forward(&p, tape.constant(z.clone()), noise.as_mut()).value().as_ref().clone())
    }

    /// `n` clips from the EMA weights; deterministic in `seed`.
    pub fn generate_batch(&self, seed: u64, n: usize) -> Result<Vec<MelClip<T>>> {
        if n == 0 {
            return Err(Error::Config("batch must contain at least one clip".into()));
        }
        let mut out = Vec::with_capacity(n);
        let chunk = 16;
        let mut start = 0;
        while start < n {
            let m = chunk.min(n - start);
            let mel = self.render(&sample_latents(seed, start, m), true)?;
            for i in 0..m {
                out.push(MelClip::from_batch(&mel, i, "generated", &format!("gen-{seed}-{}", start + i))?);
            }
            start += m;
        }
        Ok(out)
    }

    pub fn header(&self, ema_decay: f64, step: usize) -> GeneratorHeader {
        GeneratorHeader { z_dim: Z_DIM, w_dim: W_DIM, blocks: SYNTHESIS_BLOCKS, ema_decay, step, config: self.config.clone() }
    }

    pub fn save(&self, path: &Path, ema_decay: f64, step: usize) -> Result<()> {
        checkpoint::save(path, &self.header(ema_decay, step), &[("gen", &self.params), ("gen_ema", &self.ema)])
    }

    pub fn load(path: &Path) -> Result<(Self, GeneratorHeader)> {
        let loaded = checkpoint::load::<T>(path)?;
        let header: GeneratorHeader = loaded.header()?;
        let mut g = Self::new(header.config.clone())?;
        loaded.restore("gen", &mut g.params)?;
        loaded.restore("gen_ema", &mut g.ema)?;
        Ok((g, header))
    }
}

fn check_latents<T: Real>(z: &Tensor<T>) -> Result<()> {
    if z.ndim() != 2 || z.dim(1) != Z_DIM {
        return Err(Error::Shape(format!("latents must be [N, {Z_DIM}], got {:?}", z.shape())));
    }
    if !z.is_finite() {
        return Err(Error::Input("latent contains non-finite values".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn small() -> GeneratorConfig {
        GeneratorConfig { channels: vec![8, 8, 4, 4, 2], seed: 5, ..Default::default() }
    }

    #[test]
    fn long_latents_are_rejected() {
        let cfg = GeneratorConfig { z_dim: 512, ..Default::default() };
        assert!(matches!(Generator::<f32>::new(cfg), Err(Error::Config(_))));
        let cfg = GeneratorConfig { channels: vec![8, 8, 8], ..Default::default() };
        assert!(Generator::<f32>::new(cfg).is_err());
    }

    #[test]
    fn mapping_is_deterministic_and_injective_in_practice() {
        let g = Generator::<f64>::new(small()).unwrap();
        let zero = Tensor::zeros(&[1, Z_DIM]);
        let a = g.map_latents(&zero).unwrap();
        assert_eq!(a.shape(), &[1, W_DIM]);
        assert!(a.is_finite());
        assert_eq!(a, g.map_latents(&zero).unwrap());
        let z = sample_latents::<f64>(1, 0, 200);
        let w = g.map_latents(&z).unwrap();
        for pair in w.data().chunks(2 * W_DIM) {
            assert_ne!(pair[..W_DIM], pair[W_DIM..]);
        }
        let mut bad = zero.clone();
        bad.data_mut()[3] = f64::NAN;
        assert!(matches!(g.map_latents(&bad), Err(Error::Input(_))));
        assert!(matches!(g.map_latents(&Tensor::zeros(&[1, 512])), Err(Error::Shape(_))));
    }

    #[test]
    fn output_contract_and_determinism() {
        let g = Generator::<f32>::new(small()).unwrap();
        let z = sample_latents::<f32>(0, 0, 3);
        let a = g.render(&z, false).unwrap();
        assert_eq!(a.shape(), &[3, 1, 64, 200]);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, g.render(&z, false).unwrap());
        let big = sample_latents::<f32>(0, 0, 3).map(|v| v * 100.0);
        assert!(g.render(&big, false).unwrap().data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn batches_agree_on_shared_indices() {
        let g = Generator::<f32>::new(small()).unwrap();
        let a = g.generate_batch(7, 20).unwrap();
        let b = g.generate_batch(7, 3).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a[..3], b[..]);
        assert_ne!(a[0], g.generate_batch(8, 1).unwrap()[0]);
        assert!(g.generate_batch(7, 0).is_err());
    }

    #[test]
    fn style_gradient_matches_finite_difference() {
        let g = Generator::<f64>::new(small()).unwrap();
        let z = sample_latents::<f64>(2, 0, 2);
        let w0 = g.map_latents(&z).unwrap();
        let f = |w: &Tensor<f64>| {
            let tape = Tape::new();
            let p = g.params().bind(&tape, false);
            g.synthesize(&p, tape.constant(w.clone()), None::<&mut ChaCha8Rng>).value().mean()
        };
        let tape = Tape::new();
        let p = g.params().bind(&tape, false);
        let w = tape.leaf(w0.clone());
        let out = g.synthesize(&p, w, None::<&mut ChaCha8Rng>).mean();
        let grad = tape.backward(out).get(w).unwrap().clone();
        let mut rng = rng_for(3, &[]);
        for _ in 0..5 {
            let i = rng.gen_range(0..w0.len());
            let h = 1e-5;
            let (mut a, mut b) = (w0.clone(), w0.clone());
            a.data_mut()[i] += h;
            b.data_mut()[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let an = grad.data()[i];
            assert!(an != 0.0);
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(1e-8), "coord {i}: {fd} vs {an}");
        }
    }

    #[test]
    fn latent_gradient_is_nonzero() {
        let g = Generator::<f64>::new(small()).unwrap();
        let tape = Tape::new();
        let p = g.params().bind(&tape, false);
        let z = tape.leaf(sample_latents(4, 0, 1));
        let out = g.forward(&p, z, None::<&mut ChaCha8Rng>).mean();
        let grad = tape.backward(out).get(z).unwrap().clone();
        assert!(grad.max_abs() > 0.0);
    }

    #[test]
    fn noise_injection_is_switchable() {
        let g = Generator::<f32>::new(GeneratorConfig { noise: true, ..small() }).unwrap();
        let z = sample_latents::<f32>(0, 0, 2);
        let a = g.render(&z, false).unwrap();
        assert_eq!(a.shape(), &[2, 1, 64, 200]);
        assert!(g.params().find("synthesis.b1.conv_a.noise_strength").is_some());
        assert!(Generator::<f32>::new(small()).unwrap().params().find("synthesis.b1.conv_a.noise_strength").is_none());
    }

    #[test]
    fn ema_converges_to_fixed_weights() {
        let mut g = Generator::<f64>::new(small()).unwrap();
        for v in g.params_mut().values_mut() {
            *v = v.map(|x| x + 1.0);
        }
        for _ in 0..2000 {
            g.update_ema(0.99);
        }
        let gap = g.params().values().iter().zip(g.ema().values()).map(|(a, b)| a.zip_map(b, |x, y| x - y).max_abs()).fold(0.0, f64::max);
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = Generator::<f32>::new(small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.safetensors");
        g.save(&path, 0.999, 12).unwrap();
        let (h, header) = Generator::<f32>::load(&path).unwrap();
        assert_eq!(header.step, 12);
        assert_eq!(header.z_dim, 32);
        assert_eq!(h.params(), g.params());
        assert_eq!(h.ema(), g.ema());
    }
}
