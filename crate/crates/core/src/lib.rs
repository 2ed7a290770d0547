pub mod checkpoint;
pub mod discriminators;
pub mod dsp;
pub mod error;
pub mod featurenets;
pub mod generator;
pub mod melpipe;
pub mod metrics;
pub mod nn;
pub mod projector;
pub mod real;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;

pub type MelClipF32 = melpipe::MelClip<f32>;
pub type MelClipF64 = melpipe::MelClip<f64>;
pub type CorpusF32 = melpipe::Corpus<f32>;
pub type CorpusF64 = melpipe::Corpus<f64>;
pub type FrozenAdapterF32 = featurenets::FrozenAdapter<f32>;
pub type FrozenAdapterF64 = featurenets::FrozenAdapter<f64>;
pub type GeneratorF32 = generator::Generator<f32>;
pub type GeneratorF64 = generator::Generator<f64>;
pub type DiscriminatorsF32 = discriminators::Discriminators<f32>;
pub type DiscriminatorsF64 = discriminators::Discriminators<f64>;
pub type TrainerF32<'a> = trainer::Trainer<'a, f32>;
pub type TrainerF64<'a> = trainer::Trainer<'a, f64>;
