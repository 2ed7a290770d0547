use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurenets::{FrozenAdapter, NetKind};
use crate::generator::Generator;
use crate::melpipe::MelClip;
use crate::metrics::{
    class_posteriors, embed_for_dc, embed_for_fad, fad, inception_score, split_half_fad, EmbeddingSet, RandomEmbedder,
    RealNeighborhoods, Source,
};
use crate::real::{derive_seed, Real};

/// Multiplier on the real split-half FAD giving the convergence threshold.
pub const TAU_FACTOR: f64 = 1.5;

/// Metrics at one evaluation point. `seconds` is wall-clock training time
/// and is the only field that differs between identical replays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub seconds: f64,
    pub fad: f64,
    pub inception_score: Option<f64>,
    pub density: f64,
    pub coverage: f64,
}

impl EvalRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_metrics(&self, other: &Self) -> bool {
        Self { seconds: 0.0, ..self.clone() } == Self { seconds: 0.0, ..other.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub fad: f64,
    pub inception_score: Option<f64>,
    pub density: f64,
    pub coverage: f64,
}

/// Fixed evaluation setup: embedders, the real reference set's embeddings
/// and the latents used for every evaluation.
#[derive(Clone, Debug)]
pub struct Evaluator<T> {
    fad_net: FrozenAdapter<T>,
    classifier: Option<FrozenAdapter<T>>,
    dc_embedder: RandomEmbedder<T>,
    real_fad: EmbeddingSet,
    real_dc: RealNeighborhoods,
    n_samples: usize,
    latent_seed: u64,
    is_splits: usize,
    split_half: f64,
}

impl<T: Real> Evaluator<T> {
    pub fn new(
        general: &FrozenAdapter<T>,
        classifier: Option<&FrozenAdapter<T>>,
        real: &[&MelClip<T>],
        n_samples: usize,
        metric_seed: u64,
        k: usize,
        is_splits: usize,
    ) -> Result<Self> {
        if general.kind() != NetKind::General {
            return Err(Error::Config("FAD is measured in the general network's embedding space".into()));
        }
        if n_samples < 2 {
            return Err(Error::Config("evaluation needs at least 2 generated clips".into()));
        }
        if classifier.is_some() && n_samples < is_splits {
            return Err(Error::Config(format!("{n_samples} samples cannot fill {is_splits} IS splits")));
        }
        let dc_embedder = RandomEmbedder::new(derive_seed(metric_seed, &[0xdc]));
        let real_fad = embed_for_fad(general, real, Source::Real)?;
        let split_half = split_half_fad(&real_fad, metric_seed)?;
        let real_dc = RealNeighborhoods::new(embed_for_dc(&dc_embedder, real, Source::Real)?, k)?;
        Ok(Self {
            fad_net: general.clone(),
            classifier: classifier.cloned(),
            dc_embedder,
            real_fad,
            real_dc,
            n_samples,
            latent_seed: derive_seed(metric_seed, &[0xe7a1]),
            is_splits,
            split_half,
        })
    }

    /// FAD between two random halves of the real set.
    pub fn split_half_fad(&self) -> f64 {
        self.split_half
    }

    pub fn tau(&self) -> f64 {
        TAU_FACTOR * self.split_half
    }

    pub fn dc_embedder(&self) -> &RandomEmbedder<T> {
        &self.dc_embedder
    }

    /// Scores a set of clips against the real reference set.
    pub fn score_clips(&self, clips: &[&MelClip<T>]) -> Result<MetricValues> {
        let fake_fad = embed_for_fad(&self.fad_net, clips, Source::Generated)?;
        let dc = self.real_dc.score(&embed_for_dc(&self.dc_embedder, clips, Source::Generated)?)?;
        let inception_score = match &self.classifier {
            Some(c) => Some(inception_score(&class_posteriors(c, clips), self.is_splits)?),
            None => None,
        };
        Ok(MetricValues { fad: fad(&self.real_fad, &fake_fad)?, inception_score, density: dc.density, coverage: dc.coverage })
    }

    /// Scores `n_samples` clips from the generator's EMA weights; the
    /// latents are the same at every call.
    pub fn evaluate(&self, generator: &Generator<T>) -> Result<MetricValues> {
        let clips = generator.generate_batch(self.latent_seed, self.n_samples)?;
        self.score_clips(&clips.iter().collect::<Vec<_>>())
    }
}
