//! Alternating adversarial training of the generator against discriminator
//! heads on frozen projections (or, in baseline mode, against a plain mel
//! discriminator), with periodic evaluation and checkpoints.

mod eval;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use loopgan_tensor::{Adam, AdamConfig, ParamSet, Tape, Tensor, Var};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::discriminators::{loss_d, loss_g, DiscriminatorConfig, Discriminators, GanLossReport, LossForm, HEAD_WIDTH};
use crate::error::{Error, Result};
use crate::featurenets::FrozenAdapter;
use crate::generator::{Generator, GeneratorConfig, Z_DIM};
use crate::melpipe::{clips_to_tensor, MelClip};
use crate::metrics::{DC_K, IS_SPLITS};
use crate::projector::{build_projectors, ProjectorMode, ProjectorStack};
use crate::real::{derive_seed, rng_for, Real};

pub use eval::{EvalRecord, Evaluator, MetricValues, TAU_FACTOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Projected,
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, lr: 0.002, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    fn validate(&self, side: &str) -> Result<()> {
        let ok = self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid {side} optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Real-batch selection.
    pub data: u64,
    /// Generator and discriminator initialization and training latents.
    pub model: u64,
    /// Random CCM/CSM weights.
    pub projector: u64,
    /// Evaluation latents, the D&C embedder and the split-half partition.
    pub metric: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 0, model: 0, projector: 0, metric: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Ignored in baseline mode.
    pub projector: ProjectorMode,
    pub batch_size: usize,
    pub g_optimizer: OptimizerConfig,
    pub d_optimizer: OptimizerConfig,
    pub total_steps: usize,
    pub ema_decay: f64,
    /// Evaluate (and checkpoint) every this many steps; 0 disables both.
    pub eval_every: usize,
    pub eval_samples: usize,
    pub seeds: Seeds,
    /// The generator seed is replaced by one derived from `seeds.model`.
    pub generator: GeneratorConfig,
    pub head_width: usize,
    pub loss_form: LossForm,
    /// Keep the projected features of each real clip after first use.
    pub cache_real_features: bool,
    pub is_splits: usize,
    pub dc_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Projected,
            projector: ProjectorMode::General,
            batch_size: 16,
            g_optimizer: OptimizerConfig::default(),
            d_optimizer: OptimizerConfig::default(),
            total_steps: 10_000,
            ema_decay: 0.999,
            eval_every: 500,
            eval_samples: 256,
            seeds: Seeds::default(),
            generator: GeneratorConfig::default(),
            head_width: HEAD_WIDTH,
            loss_form: LossForm::Sum,
            cache_real_features: false,
            is_splits: IS_SPLITS,
            dc_k: DC_K,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::Config("batch size and total steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("EMA decay {} outside [0, 1)", self.ema_decay)));
        }
        if self.head_width == 0 {
            return Err(Error::Config("head width must be positive".into()));
        }
        self.g_optimizer.validate("generator")?;
        self.d_optimizer.validate("discriminator")?;
        self.generator.validate()
    }

    fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig { seed: derive_seed(self.seeds.model, &[0x6e]), ..self.generator.clone() }
    }
}

/// Everything a run reads besides its config.
#[derive(Clone, Copy)]
pub struct TrainInputs<'a, T> {
    /// Real clips the discriminator sees and metrics compare against.
    pub real: &'a [&'a MelClip<T>],
    pub corpus_id: &'a str,
    pub general: Option<&'a FrozenAdapter<T>>,
    pub domain: Option<&'a FrozenAdapter<T>>,
}

/// Mutable training state; cloned for in-memory rollback.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub step: usize,
    pub generator: Generator<T>,
    pub g_adam: Adam<T>,
    pub discriminators: Discriminators<T>,
    pub d_adam: Adam<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub dtype: String,
    pub corpus_id: String,
    pub n_real: usize,
    pub frozen_digests: BTreeMap<String, String>,
    pub split_half_fad: Option<f64>,
    pub tau: Option<f64>,
    pub records: Vec<EvalRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub final_step: usize,
    /// Caller-supplied launch settings (paths, export options).
    #[serde(default)]
    pub launch: Option<serde_json::Value>,
}

impl RunManifest {
    /// First evaluated step whose FAD is at most `tau`.
    pub fn steps_to_threshold(&self, tau: f64) -> Option<usize> {
        self.records.iter().find(|r| r.fad <= tau).map(|r| r.step)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,seconds,fad,is\n");
        for r in &self.records {
            let is = r.inception_score.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.step, r.seconds, r.fad, is));
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::format("run manifest", e))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let csv = dir.join(CURVES_FILE);
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("run manifest", e))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURVES_FILE: &str = "curves.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    step: usize,
    seconds: f64,
    dtype: String,
    config: TrainConfig,
    discriminator: DiscriminatorConfig,
    g_adam_steps: u64,
    d_adam_steps: u64,
    frozen_digests: BTreeMap<String, String>,
    records: Vec<EvalRecord>,
    checkpoints: Vec<PathBuf>,
}

pub struct Trainer<'a, T> {
    config: TrainConfig,
    inputs: TrainInputs<'a, T>,
    projectors: Vec<ProjectorStack<T>>,
    evaluator: Option<Evaluator<T>>,
    state: TrainState<T>,
    snapshot: TrainState<T>,
    cache: Option<Vec<Option<Vec<Tensor<T>>>>>,
    frozen: BTreeMap<String, String>,
    records: Vec<EvalRecord>,
    checkpoints: Vec<PathBuf>,
    out_dir: Option<PathBuf>,
    launch: Option<serde_json::Value>,
    seconds_before: f64,
    started: Instant,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(config: TrainConfig, inputs: TrainInputs<'a, T>, out_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        if inputs.real.is_empty() {
            return Err(Error::Config("no real clips to train on".into()));
        }
        let projectors = match config.mode {
            TrainMode::Projected => build_projectors(config.projector, inputs.general, inputs.domain, config.seeds.projector)?,
            TrainMode::Baseline => Vec::new(),
        };
        let evaluator = if config.eval_every > 0 {
            let general = inputs.general.ok_or_else(|| Error::Config("evaluation needs the general feature network".into()))?;
            Some(Evaluator::new(
                general,
                inputs.domain,
                inputs.real,
                config.eval_samples,
                config.seeds.metric,
                config.dc_k,
                config.is_splits,
            )?)
        } else {
            None
        };
        let generator = Generator::new(config.generator_config())?;
        let disc_seed = derive_seed(config.seeds.model, &[0xd]);
        let discriminators = match config.mode {
            TrainMode::Projected => {
                let specs: Vec<_> = projectors.iter().flat_map(|p| p.output_specs()).collect();
                Discriminators::projected(&specs, config.head_width, disc_seed)?
            }
            TrainMode::Baseline => Discriminators::baseline(config.head_width, disc_seed)?,
        };
        let state = TrainState {
            step: 0,
            g_adam: Adam::new(config.g_optimizer.adam(), generator.params()),
            d_adam: Adam::new(config.d_optimizer.adam(), discriminators.params()),
            generator,
            discriminators,
        };
        let mut frozen = BTreeMap::new();
        for (i, p) in projectors.iter().enumerate() {
            let d = p.digests();
            frozen.insert(format!("projector{i}.feature_net"), d.feature_net);
            frozen.insert(format!("projector{i}.ccm"), d.ccm);
            frozen.insert(format!("projector{i}.csm"), d.csm);
        }
        if let Some(g) = inputs.general {
            frozen.insert("general_net".into(), g.digest().to_string());
        }
        if let Some(d) = inputs.domain {
            frozen.insert("domain_net".into(), d.digest().to_string());
        }
        if let Some(e) = &evaluator {
            frozen.insert("dc_embedder".into(), e.dc_embedder().digest().to_string());
        }
        let cache = config.cache_real_features.then(|| vec![None; inputs.real.len()]);
        Ok(Self {
            snapshot: state.clone(),
            config,
            inputs,
            projectors,
            evaluator,
            state,
            cache,
            frozen,
            records: Vec::new(),
            checkpoints: Vec::new(),
            out_dir: out_dir.map(Path::to_path_buf),
            launch: None,
            seconds_before: 0.0,
            started: Instant::now(),
        })
    }

    /// Rebuilds a trainer from a checkpoint written by [`Trainer::run`].
    pub fn resume(checkpoint_path: &Path, inputs: TrainInputs<'a, T>, out_dir: Option<&Path>) -> Result<Self> {
        let loaded = checkpoint::load::<T>(checkpoint_path)?;
        let header: CheckpointHeader = loaded.header()?;
        let mut t = Self::new(header.config.clone(), inputs, out_dir)?;
        for (name, digest) in &header.frozen_digests {
            if t.frozen.get(name) != Some(digest) {
                return Err(Error::Config(format!("frozen component {name} differs from the one the checkpoint was trained with")));
            }
        }
        if t.state.discriminators.config() != &header.discriminator {
            return Err(Error::Config("discriminator layout differs from the checkpoint".into()));
        }
        let s = &mut t.state;
        s.step = header.step;
        loaded.restore("gen", s.generator.params_mut())?;
        loaded.restore("gen_ema", s.generator.ema_mut())?;
        loaded.restore("g_adam_m", &mut s.g_adam.first_moment)?;
        loaded.restore("g_adam_v", &mut s.g_adam.second_moment)?;
        s.g_adam.steps = header.g_adam_steps;
        loaded.restore("disc", s.discriminators.params_mut())?;
        loaded.restore("disc_sn", s.discriminators.buffers_mut())?;
        loaded.restore("d_adam_m", &mut s.d_adam.first_moment)?;
        loaded.restore("d_adam_v", &mut s.d_adam.second_moment)?;
        s.d_adam.steps = header.d_adam_steps;
        t.snapshot = t.state.clone();
        t.records = header.records;
        t.checkpoints = header.checkpoints;
        t.seconds_before = header.seconds;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Attaches settings that are recorded verbatim in the manifest.
    pub fn set_launch(&mut self, launch: serde_json::Value) {
        self.launch = Some(launch);
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainState<T> {
        &mut self.state
    }

    pub fn step_count(&self) -> usize {
        self.state.step
    }

    pub fn generator(&self) -> &Generator<T> {
        &self.state.generator
    }

    pub fn discriminators(&self) -> &Discriminators<T> {
        &self.state.discriminators
    }

    pub fn projectors(&self) -> &[ProjectorStack<T>] {
        &self.projectors
    }

    pub fn evaluator(&self) -> Option<&Evaluator<T>> {
        self.evaluator.as_ref()
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    /// Digests of every frozen component, recorded when training started.
    pub fn frozen_digests(&self) -> &BTreeMap<String, String> {
        &self.frozen
    }

    /// The same digests recomputed from the current weights.
    pub fn current_frozen_digests(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (i, p) in self.projectors.iter().enumerate() {
            let d = p.digests();
            out.insert(format!("projector{i}.feature_net"), d.feature_net);
            out.insert(format!("projector{i}.ccm"), d.ccm);
            out.insert(format!("projector{i}.csm"), d.csm);
        }
        if let Some(g) = self.inputs.general {
            out.insert("general_net".into(), g.current_digest());
        }
        if let Some(d) = self.inputs.domain {
            out.insert("domain_net".into(), d.current_digest());
        }
        if let Some(e) = &self.evaluator {
            out.insert("dc_embedder".into(), e.dc_embedder().digest().to_string());
        }
        out
    }

    fn seconds(&self) -> f64 {
        self.seconds_before + self.started.elapsed().as_secs_f64()
    }

    /// Discriminator inputs for mels `[N, 1, 64, 200]`.
    pub fn features<'t>(&self, tape: &'t Tape<T>, mels: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        match self.config.mode {
            TrainMode::Baseline => Ok(vec![mels]),
            TrainMode::Projected => crate::projector::project_all(&self.projectors, tape, mels),
        }
    }

    fn real_features<'t>(&mut self, tape: &'t Tape<T>, idx: &[usize]) -> Result<Vec<Var<'t, T>>> {
        let Some(cache) = self.cache.as_mut() else {
            let clips: Vec<&MelClip<T>> = idx.iter().map(|&i| self.inputs.real[i]).collect();
            let x = tape.constant(clips_to_tensor(&clips));
            return self.features(tape, x);
        };
        for &i in idx {
            if cache[i].is_none() {
                let clip = self.inputs.real[i];
                let one = Tape::new();
                let x = one.constant(clips_to_tensor(&[clip]));
                let f = match self.config.mode {
                    TrainMode::Baseline => vec![x],
                    TrainMode::Projected => crate::projector::project_all(&self.projectors, &one, x)?,
                };
                cache[i] = Some(f.iter().map(|v| v.value().as_ref().clone()).collect());
            }
        }
        let n_feats = cache[idx[0]].as_ref().map_or(0, Vec::len);
        Ok((0..n_feats)
            .map(|f| {
                let parts: Vec<&Tensor<T>> = idx.iter().map(|&i| &cache[i].as_ref().expect("filled above")[f]).collect();
                tape.constant(Tensor::cat(&parts, 0))
            })
            .collect())
    }

    fn batch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.inputs.real.len();
        let b = self.config.batch_size;
        let mut rng = rng_for(self.config.seeds.data, &[step as u64]);
        if b <= n {
            sample(&mut rng, n, b).into_vec()
        } else {
            (0..b).map(|_| rng.gen_range(0..n)).collect()
        }
    }

    fn latents(&self, step: usize, phase: u64) -> Tensor<T> {
        let mut rng = rng_for(self.config.seeds.model, &[0x7a, step as u64, phase]);
        Tensor::randn(&[self.config.batch_size, Z_DIM], 1.0, &mut rng)
    }

    /// `loss_G`, its per-head terms and its gradient for the given latents
    /// under the current weights, with `params` standing in for the
    /// generator's own when given.
    pub fn generator_loss(&self, z: &Tensor<T>, params: Option<&ParamSet<T>>) -> Result<(f64, Vec<f64>, Vec<Option<Tensor<T>>>)> {
        let g = &self.state.generator;
        let tape = Tape::new();
        let pg = params.unwrap_or(g.params()).bind(&tape, true);
        let mut noise = g.config().noise.then(|| rng_for(self.config.seeds.model, &[0x9015e]));
        let fake = g.forward(&pg, tape.constant(z.clone()), noise.as_mut());
        let feats = self.features(&tape, fake)?;
        let d = &self.state.discriminators;
        let pd = d.params().bind(&tape, false);
        let (loss, terms) = loss_g(&d.forward(&pd, &feats)?)?;
        let value = loss.item().as_f64();
        let mut grads = tape.backward(loss);
        Ok((value, terms, pg.grads(&mut grads)))
    }

    fn diverged(&mut self, step: usize) -> Error {
        self.state = self.snapshot.clone();
        log::warn!("non-finite values at step {step}; rolled back to step {}", self.snapshot.step);
        Error::TrainingDiverged { step, restored_step: self.snapshot.step }
    }

    /// One discriminator update on a fresh fake batch, then one generator
    /// update on another fresh fake batch, then the EMA update.
    pub fn train_step(&mut self) -> Result<GanLossReport> {
        let step = self.state.step;
        let idx = self.batch_indices(step);

        // discriminator
        self.state.discriminators.power_iterate();
        let fake = self.state.generator.render(&self.latents(step, 0), false)?;
        let (loss_d_value, d_terms, d_grads) = {
            let tape = Tape::new();
            let real = self.real_features(&tape, &idx)?;
            let fake = self.features(&tape, tape.constant(fake))?;
            let d = &self.state.discriminators;
            let p = d.params().bind(&tape, true);
            let (loss, terms) = loss_d(&d.forward(&p, &real)?, &d.forward(&p, &fake)?, self.config.loss_form)?;
            let value = loss.item().as_f64();
            let mut grads = tape.backward(loss);
            (value, terms, p.grads(&mut grads))
        };
        if !loss_d_value.is_finite() {
            return Err(self.diverged(step));
        }
        let s = &mut self.state;
        s.d_adam.step(s.discriminators.params_mut(), &d_grads);

        // generator
        let (loss_g_value, g_terms, g_grads) = self.generator_loss(&self.latents(step, 1), None)?;
        if !loss_g_value.is_finite() {
            return Err(self.diverged(step));
        }
        let s = &mut self.state;
        s.g_adam.step(s.generator.params_mut(), &g_grads);
        let decay = self.config.ema_decay.min((1.0 + step as f64) / (10.0 + step as f64));
        s.generator.update_ema(decay);
        if !s.generator.params().is_finite() || !s.discriminators.params().is_finite() {
            return Err(self.diverged(step));
        }
        s.step += 1;
        Ok(GanLossReport { loss_d: loss_d_value, loss_g: loss_g_value, d_terms, g_terms })
    }

    /// Evaluates the EMA generator and appends a record.
    pub fn evaluate(&mut self) -> Result<EvalRecord> {
        let evaluator = self.evaluator.as_ref().ok_or_else(|| Error::Config("evaluation is disabled".into()))?;
        if self.current_frozen_digests() != self.frozen {
            return Err(Error::Numerical("a frozen component changed during training".into()));
        }
        let m = evaluator.evaluate(&self.state.generator)?;
        let record = EvalRecord {
            step: self.state.step,
            seconds: self.seconds(),
            fad: m.fad,
            inception_score: m.inception_score,
            density: m.density,
            coverage: m.coverage,
        };
        log::info!(
            "step {} ({:.0} s): FAD {:.4} IS {:?} D {:.3} C {:.3}",
            record.step,
            record.seconds,
            record.fad,
            record.inception_score,
            record.density,
            record.coverage
        );
        if let Some(last) = self.records.last() {
            if last.step == record.step {
                self.records.pop();
            }
        }
        self.records.push(record.clone());
        Ok(record)
    }

    /// Writes the full training state to `path`.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let s = &self.state;
        let header = CheckpointHeader {
            step: s.step,
            seconds: self.seconds(),
            dtype: T::DTYPE.to_string(),
            config: self.config.clone(),
            discriminator: s.discriminators.config().clone(),
            g_adam_steps: s.g_adam.steps,
            d_adam_steps: s.d_adam.steps,
            frozen_digests: self.frozen.clone(),
            records: self.records.clone(),
            checkpoints: self.checkpoints.clone(),
        };
        checkpoint::save(
            path,
            &header,
            &[
                ("gen", s.generator.params()),
                ("gen_ema", s.generator.ema()),
                ("g_adam_m", &s.g_adam.first_moment),
                ("g_adam_v", &s.g_adam.second_moment),
                ("disc", s.discriminators.params()),
                ("disc_sn", s.discriminators.buffers()),
                ("d_adam_m", &s.d_adam.first_moment),
                ("d_adam_v", &s.d_adam.second_moment),
            ],
        )
    }

    fn eval_point(&mut self) -> Result<()> {
        if self.evaluator.is_none() {
            return Ok(());
        }
        self.evaluate()?;
        self.snapshot = self.state.clone();
        if let Some(dir) = self.out_dir.clone() {
            let path = dir.join(format!("ckpt_{:07}.safetensors", self.state.step));
            if !self.checkpoints.contains(&path) {
                self.checkpoints.push(path.clone());
            }
            self.save_checkpoint(&path)?;
            self.manifest().save(&dir)?;
        }
        Ok(())
    }

    /// Trains until `step` (capped at the configured total), evaluating and
    /// checkpointing at every multiple of `eval_every`.
    pub fn run_until(&mut self, step: usize) -> Result<()> {
        let target = step.min(self.config.total_steps);
        let every = self.config.eval_every;
        if every > 0 && self.records.last().map_or(true, |r| r.step < self.state.step) && self.state.step % every == 0 {
            self.eval_point()?;
        }
        while self.state.step < target {
            self.train_step()?;
            let at_eval = every > 0 && (self.state.step % every == 0 || self.state.step == self.config.total_steps);
            if at_eval {
                self.eval_point()?;
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            config: self.config.clone(),
            dtype: T::DTYPE.to_string(),
            corpus_id: self.inputs.corpus_id.to_string(),
            n_real: self.inputs.real.len(),
            frozen_digests: self.frozen.clone(),
            split_half_fad: self.evaluator.as_ref().map(Evaluator::split_half_fad),
            tau: self.evaluator.as_ref().map(Evaluator::tau),
            records: self.records.clone(),
            checkpoints: self.checkpoints.clone(),
            final_step: self.state.step,
            launch: self.launch.clone(),
        }
    }

    /// Trains to the configured total and returns the manifest, which is
    /// also written to the output directory when one is set.
    pub fn run(mut self) -> Result<RunManifest> {
        self.run_until(self.config.total_steps)?;
        let manifest = self.manifest();
        if let Some(dir) = &self.out_dir {
            manifest.save(dir)?;
            self.state.generator.save(&dir.join(GENERATOR_FILE), self.config.ema_decay, self.state.step)?;
        }
        Ok(manifest)
    }
}

pub const GENERATOR_FILE: &str = "generator.safetensors";

/// The generator (training and EMA weights) stored in a trainer checkpoint,
/// with the step it was saved at.
pub fn generator_from_checkpoint<T: Real>(path: &Path) -> Result<(Generator<T>, usize)> {
    let loaded = checkpoint::load::<T>(path)?;
    let header: CheckpointHeader = loaded.header()?;
    let mut g = Generator::new(header.config.generator_config())?;
    loaded.restore("gen", g.params_mut())?;
    loaded.restore("gen_ema", g.ema_mut())?;
    Ok((g, header.step))
}

pub fn run<T: Real>(config: TrainConfig, inputs: TrainInputs<'_, T>, out_dir: Option<&Path>) -> Result<RunManifest> {
    Trainer::new(config, inputs, out_dir)?.run()
}
