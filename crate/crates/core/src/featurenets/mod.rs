//! Feature networks: a plain VGG-style general embedder and a residual
//! short-chunk CNN tagger, both exposing four pooled feature taps.

mod train;

use std::path::Path;

use loopgan_tensor::{Bound, ParamSet, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::melpipe::{MelClip, CHUNK_FRAMES, N_FRAMES, N_MELS};
use crate::nn::{BatchNorm, BnUpdates, Conv2d, Linear};
use crate::real::{rng_for, Real};

pub use train::{average_precision, roc_auc, train_classifier, ClassifierTrainConfig, EvalReport};

pub const N_TAPS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    General,
    DomainSpecific,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub kind: NetKind,
    /// Channels per stage: 4 for the general net, 6 for the tagger.
    pub widths: Vec<usize>,
    /// Width of the penultimate fully connected layer (the general net's embedding).
    pub hidden: usize,
    pub class_count: usize,
    pub seed: u64,
}

impl NetConfig {
    pub fn scnn(class_count: usize) -> Self {
        Self { kind: NetKind::DomainSpecific, widths: vec![16, 32, 64, 128, 128, 128], hidden: 128, class_count, seed: 0 }
    }

    pub fn general(class_count: usize, embedding_dim: usize) -> Self {
        Self { kind: NetKind::General, widths: vec![16, 32, 64, 128], hidden: embedding_dim, class_count, seed: 0 }
    }

    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.widths = widths.to_vec();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let stages = match self.kind {
            NetKind::General => 4,
            NetKind::DomainSpecific => 6,
        };
        if self.widths.len() != stages || self.widths.contains(&0) {
            return Err(Error::Config(format!("{:?} net needs {stages} nonzero widths, got {:?}", self.kind, self.widths)));
        }
        if self.class_count < 2 && self.kind == NetKind::DomainSpecific {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {}", self.class_count)));
        }
        if self.class_count == 0 || self.hidden == 0 {
            return Err(Error::Config("class count and hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Channels and spatial size of one feature tap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

fn ceil_half(x: usize) -> usize {
    x.div_ceil(2)
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    skip: Option<Conv2d>,
}

#[derive(Clone, Debug)]
enum Layers {
    Scnn { blocks: Vec<ResBlock>, fc1: Linear, fc2: Linear },
    General { convs: Vec<Conv2d>, fc_embed: Linear, fc_out: Linear },
}

#[derive(Clone, Debug)]
pub struct FeatureNetwork<T> {
    config: NetConfig,
    params: ParamSet<T>,
    buffers: ParamSet<T>,
    layers: Layers,
}

/// Outputs of a full forward pass over `[B, 1, 64, 100]` chunks.
pub struct NetForward<'t, T: Real> {
    pub taps: Vec<Var<'t, T>>,
    pub embedding: Var<'t, T>,
    pub logits: Var<'t, T>,
}

/// Residual short-chunk CNN: six conv-BN-ReLU-conv-BN blocks with skip
/// connections and 2x2 pooling, then global max and two dense layers.
pub fn build_scnn<T: Real>(config: NetConfig) -> Result<FeatureNetwork<T>> {
    if config.kind != NetKind::DomainSpecific {
        return Err(Error::Config("build_scnn needs a domain-specific config".into()));
    }
    FeatureNetwork::new(config)
}

/// VGG-style plain stack: four conv-ReLU-pool stages, a dense embedding and
/// a classification layer used only during pretraining.
pub fn build_general<T: Real>(config: NetConfig) -> Result<FeatureNetwork<T>> {
    if config.kind != NetKind::General {
        return Err(Error::Config("build_general needs a general config".into()));
    }
    FeatureNetwork::new(config)
}

impl<T: Real> FeatureNetwork<T> {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, &[0xfea7]);
        let mut params = ParamSet::new();
        let mut buffers = ParamSet::new();
        let w = &config.widths;
        let layers = match config.kind {
            NetKind::DomainSpecific => {
                let mut blocks = Vec::new();
                let mut cin = 1;
                for (i, &c) in w.iter().enumerate() {
                    let name = format!("block{i}");
                    blocks.push(ResBlock {
                        conv1: Conv2d::new(&mut params, &format!("{name}.conv1"), cin, c, 3, 1, false, None, &mut rng),
                        bn1: BatchNorm::new(&mut params, &mut buffers, &format!("{name}.bn1"), c),
                        conv2: Conv2d::new(&mut params, &format!("{name}.conv2"), c, c, 3, 1, false, None, &mut rng),
                        bn2: BatchNorm::new(&mut params, &mut buffers, &format!("{name}.bn2"), c),
                        skip: (cin != c)
                            .then(|| Conv2d::new(&mut params, &format!("{name}.skip"), cin, c, 1, 1, false, Some((1.0 / cin as f64).sqrt()), &mut rng)),
                    });
                    cin = c;
                }
                let fc1 = Linear::new(&mut params, "fc1", cin, config.hidden, None, &mut rng);
                let fc2 = Linear::new(&mut params, "fc2", config.hidden, config.class_count, Some((1.0 / config.hidden as f64).sqrt()), &mut rng);
                Layers::Scnn { blocks, fc1, fc2 }
            }
            NetKind::General => {
                let mut convs = Vec::new();
                let mut cin = 1;
                for (i, &c) in w.iter().enumerate() {
                    convs.push(Conv2d::new(&mut params, &format!("conv{i}"), cin, c, 3, 1, true, None, &mut rng));
                    cin = c;
                }
                let (h, wd) = (N_MELS >> 4, CHUNK_FRAMES.div_ceil(16));
                let flat = cin * h * wd;
                let fc_embed = Linear::new(&mut params, "fc_embed", flat, config.hidden, None, &mut rng);
                let fc_out =
                    Linear::new(&mut params, "fc_out", config.hidden, config.class_count, Some((1.0 / config.hidden as f64).sqrt()), &mut rng);
                Layers::General { convs, fc_embed, fc_out }
            }
        };
        Ok(Self { config, params, buffers, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn kind(&self) -> NetKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamSet<T> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.buffers
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.hidden
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    /// Digest over weights and normalization statistics.
    pub fn digest(&self) -> String {
        format!("{}{}", &self.params.digest()[..32], &self.buffers.digest()[..32])
    }

    pub fn scale_specs(&self) -> [ScaleSpec; N_TAPS] {
        let (mut h, mut w) = (N_MELS, CHUNK_FRAMES);
        std::array::from_fn(|k| {
            h = ceil_half(h);
            w = ceil_half(w);
            ScaleSpec { channels: self.config.widths[k], height: h, width: w }
        })
    }

    fn stage<'t>(&self, p: &Bound<'t, T>, k: usize, x: Var<'t, T>, bn: &mut Option<&mut BnUpdates<T>>) -> Var<'t, T> {
        match &self.layers {
            Layers::Scnn { blocks, .. } => {
                let b = &blocks[k];
                let h = b.bn1.forward(p, &self.buffers, b.conv1.forward(p, x), bn.as_deref_mut()).relu();
                let h = b.bn2.forward(p, &self.buffers, b.conv2.forward(p, h), bn.as_deref_mut());
                let skip = match &b.skip {
                    Some(s) => s.forward(p, x),
                    None => x,
                };
                h.add(skip).relu().max_pool2x2()
            }
            Layers::General { convs, .. } => convs[k].forward(p, x).relu().max_pool2x2(),
        }
    }

    /// The four taps only; later stages are skipped.
    pub fn forward_taps<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>, mut bn: Option<&mut BnUpdates<T>>) -> Vec<Var<'t, T>> {
        let mut taps = Vec::with_capacity(N_TAPS);
        let mut h = x;
        for k in 0..N_TAPS {
            h = self.stage(p, k, h, &mut bn);
            taps.push(h);
        }
        taps
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>, mut bn: Option<&mut BnUpdates<T>>) -> NetForward<'t, T> {
        let taps = self.forward_taps(p, x, bn.as_deref_mut());
        let last = taps[N_TAPS - 1];
        let (embedding, logits) = match &self.layers {
            Layers::Scnn { blocks, fc1, fc2 } => {
                let mut h = last;
                for k in N_TAPS..blocks.len() {
                    h = self.stage(p, k, h, &mut bn);
                }
                let e = fc1.forward(p, h.global_max_pool());
                (e, fc2.forward(p, e.relu()))
            }
            Layers::General { fc_embed, fc_out, .. } => {
                let n = last.dim(0);
                let flat = last.reshape(&[n, last.value().len() / n]);
                let e = fc_embed.forward(p, flat);
                (e, fc_out.forward(p, e.relu()))
            }
        };
        NetForward { taps, embedding, logits }
    }
}

fn check_chunk_batch<T: Real>(x: &Var<'_, T>) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1..] != [1, N_MELS, CHUNK_FRAMES] {
        return Err(Error::Shape(format!("feature networks take [B, 1, 64, 100] chunks, got {s:?}")));
    }
    Ok(())
}

/// Stacks the first chunks of every clip, then the second chunks:
/// `[2N, 1, 64, 100]`.
pub fn chunk_batch<T: Real>(clips: &[&MelClip<T>]) -> Tensor<T> {
    let mut data = Vec::with_capacity(clips.len() * N_MELS * N_FRAMES);
    for half in 0..2 {
        for c in clips {
            for row in c.values().chunks(N_FRAMES) {
                data.extend_from_slice(&row[half * CHUNK_FRAMES..(half + 1) * CHUNK_FRAMES]);
            }
        }
    }
    Tensor::new(&[2 * clips.len(), 1, N_MELS, CHUNK_FRAMES], data)
}

/// Same layout as [`chunk_batch`] for a `[N, 1, 64, 200]` variable.
pub fn split_clip_var<'t, T: Real>(clips: Var<'t, T>) -> Var<'t, T> {
    let a = clips.narrow(3, 0, CHUNK_FRAMES);
    let b = clips.narrow(3, CHUNK_FRAMES, CHUNK_FRAMES);
    Var::cat(&[a, b], 0)
}

/// A feature network whose weights can no longer change. Gradients still
/// flow to the input.
#[derive(Clone, Debug)]
pub struct FrozenAdapter<T> {
    net: FeatureNetwork<T>,
    digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterHeader {
    pub kind: NetKind,
    pub scale_specs: Vec<ScaleSpec>,
    pub digest: String,
    pub dtype: String,
    pub config: NetConfig,
    pub train_config: Option<ClassifierTrainConfig>,
    pub corpus_id: Option<String>,
    pub tags: Vec<String>,
    pub report: Option<EvalReport>,
}

pub fn freeze<T: Real>(net: FeatureNetwork<T>) -> FrozenAdapter<T> {
    let digest = net.digest();
    FrozenAdapter { net, digest }
}

impl<T: Real> FrozenAdapter<T> {
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Recomputed from the weights; always equal to [`Self::digest`].
    pub fn current_digest(&self) -> String {
        self.net.digest()
    }

    pub fn net(&self) -> &FeatureNetwork<T> {
        &self.net
    }

    pub fn kind(&self) -> NetKind {
        self.net.kind()
    }

    pub fn scale_specs(&self) -> [ScaleSpec; N_TAPS] {
        self.net.scale_specs()
    }

    pub fn cast<U: Real>(&self) -> FrozenAdapter<U> {
        let net = FeatureNetwork {
            config: self.net.config.clone(),
            params: self.net.params.cast(),
            buffers: self.net.buffers.cast(),
            layers: self.net.layers.clone(),
        };
        freeze(net)
    }

    /// Feature maps at the four taps for `[B, 1, 64, 100]` chunks.
    pub fn extract_scales<'t>(&self, tape: &'t Tape<T>, chunks: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        check_chunk_batch(&chunks)?;
        let p = self.net.params.bind(tape, false);
        Ok(self.net.forward_taps(&p, chunks, None))
    }

    /// Embedding and class probabilities, no gradients.
    fn eval_chunks(&self, chunks: Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let tape = Tape::new();
        let p = self.net.params.bind(&tape, false);
        let out = self.net.forward(&p, tape.constant(chunks), None);
        let probs = loopgan_tensor::softmax_rows(&out.logits.value());
        (out.embedding.value().as_ref().clone(), probs)
    }

    /// Per-clip embeddings and class posteriors: each is the mean over the
    /// clip's two chunks. Returned row-major in f64.
    pub fn clip_outputs(&self, clips: &[&MelClip<T>], batch: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut emb = Vec::with_capacity(clips.len());
        let mut prob = Vec::with_capacity(clips.len());
        for group in clips.chunks(batch.max(1)) {
            let n = group.len();
            let (e, p) = self.eval_chunks(chunk_batch(group));
            let (de, dp) = (e.len() / (2 * n), p.len() / (2 * n));
            for i in 0..n {
                let avg = |t: &Tensor<T>, d: usize| -> Vec<f64> {
                    (0..d).map(|j| 0.5 * (t.data()[i * d + j].as_f64() + t.data()[(n + i) * d + j].as_f64())).collect()
                };
                emb.push(avg(&e, de));
                prob.push(avg(&p, dp));
            }
        }
        (emb, prob)
    }

    pub fn save(&self, path: &Path, extra: AdapterMeta) -> Result<()> {
        let header = AdapterHeader {
            kind: self.kind(),
            scale_specs: self.scale_specs().to_vec(),
            digest: self.digest.clone(),
            dtype: T::DTYPE.to_string(),
            config: self.net.config.clone(),
            train_config: extra.train_config,
            corpus_id: extra.corpus_id,
            tags: extra.tags,
            report: extra.report,
        };
        checkpoint::save(path, &header, &[("params", &self.net.params), ("buffers", &self.net.buffers)])
    }

    pub fn load(path: &Path) -> Result<(Self, AdapterHeader)> {
        let loaded = checkpoint::load::<T>(path)?;
        let header: AdapterHeader = loaded.header()?;
        let mut net = FeatureNetwork::new(header.config.clone())?;
        loaded.restore("params", &mut net.params)?;
        loaded.restore("buffers", &mut net.buffers)?;
        let adapter = freeze(net);
        if T::DTYPE == header.dtype && adapter.digest != header.digest {
            return Err(Error::format(path.display().to_string(), "weight digest does not match header"));
        }
        Ok((adapter, header))
    }
}

/// Provenance stored alongside adapter weights.
#[derive(Clone, Debug, Default)]
pub struct AdapterMeta {
    pub train_config: Option<ClassifierTrainConfig>,
    pub corpus_id: Option<String>,
    pub tags: Vec<String>,
    pub report: Option<EvalReport>,
}

#[cfg(test)]
mod tests;
