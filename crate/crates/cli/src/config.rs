use std::path::{Path, PathBuf};

use loopgan_core::discriminators::LossForm;
use loopgan_core::generator::GeneratorConfig;
use loopgan_core::projector::ProjectorMode;
use loopgan_core::trainer::{OptimizerConfig, OptimizerKind, Seeds, TrainConfig, TrainMode};
use loopgan_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::SplitArg;

/// Flat run description: every training knob plus the paths a run reads
/// and writes. Missing keys take the trainer defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub real_split: SplitArg,
    pub general_net: Option<PathBuf>,
    pub domain_net: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub dtype: Dtype,

    pub mode: TrainMode,
    pub projector: ProjectorMode,
    pub batch_size: usize,
    pub total_steps: usize,
    pub ema_decay: f64,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub seed_data: u64,
    pub seed_model: u64,
    pub seed_projector: u64,
    pub seed_metric: u64,
    pub g_lr: f64,
    pub d_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub gen_channels: Vec<usize>,
    pub mapping_lr_mul: f64,
    pub noise: bool,
    pub head_width: usize,
    pub loss_form: LossForm,
    pub cache_real_features: bool,
    pub is_splits: usize,
    pub dc_k: usize,

    /// Clips written to `<out_dir>/samples` after training.
    pub export_clips: usize,
    pub export_seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            corpus: PathBuf::from("corpus"),
            real_split: SplitArg::Train,
            general_net: None,
            domain_net: None,
            out_dir: PathBuf::from("runs/default"),
            resume: None,
            dtype: Dtype::F32,
            mode: t.mode,
            projector: t.projector,
            batch_size: t.batch_size,
            total_steps: t.total_steps,
            ema_decay: t.ema_decay,
            eval_every: t.eval_every,
            eval_samples: t.eval_samples,
            seed_data: t.seeds.data,
            seed_model: t.seeds.model,
            seed_projector: t.seeds.projector,
            seed_metric: t.seeds.metric,
            g_lr: t.g_optimizer.lr,
            d_lr: t.d_optimizer.lr,
            adam_beta1: t.g_optimizer.beta1,
            adam_beta2: t.g_optimizer.beta2,
            adam_eps: t.g_optimizer.eps,
            gen_channels: t.generator.channels.clone(),
            mapping_lr_mul: t.generator.mapping_lr_mul,
            noise: t.generator.noise,
            head_width: t.head_width,
            loss_form: t.loss_form,
            cache_real_features: t.cache_real_features,
            is_splits: t.is_splits,
            dc_k: t.dc_k,
            export_clips: 0,
            export_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        let opt = |lr| OptimizerConfig { kind: OptimizerKind::Adam, lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps };
        TrainConfig {
            mode: self.mode,
            projector: self.projector,
            batch_size: self.batch_size,
            g_optimizer: opt(self.g_lr),
            d_optimizer: opt(self.d_lr),
            total_steps: self.total_steps,
            ema_decay: self.ema_decay,
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
            seeds: Seeds { data: self.seed_data, model: self.seed_model, projector: self.seed_projector, metric: self.seed_metric },
            generator: GeneratorConfig {
                channels: self.gen_channels.clone(),
                mapping_lr_mul: self.mapping_lr_mul,
                noise: self.noise,
                ..GeneratorConfig::default()
            },
            head_width: self.head_width,
            loss_form: self.loss_form,
            cache_real_features: self.cache_real_features,
            is_splits: self.is_splits,
            dc_k: self.dc_k,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_trainer() {
        assert_eq!(RunConfig::default().train_config(), TrainConfig::default());
    }

    #[test]
    fn toml_round_trips_and_rejects_unknown_keys() {
        let cfg = RunConfig { mode: TrainMode::Baseline, gen_channels: vec![8, 8, 8, 4, 4], ..RunConfig::default() };
        assert_eq!(toml::from_str::<RunConfig>(&cfg.to_toml()).unwrap(), cfg);
        let partial: RunConfig = toml::from_str("mode = \"baseline\"\ntotal_steps = 12\n").unwrap();
        assert_eq!(partial.total_steps, 12);
        assert!(toml::from_str::<RunConfig>("total_step = 12\n").is_err());
    }
}
