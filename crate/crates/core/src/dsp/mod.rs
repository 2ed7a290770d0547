//! Signal-processing primitives shared by the data pipeline and audio export.

pub mod griffin_lim;
pub mod mel;
pub mod resample;
pub mod stft;
pub mod vocoder;

pub use griffin_lim::{griffin_lim, mel_to_linear};
pub use mel::MelFilterbank;
pub use resample::resample;
pub use stft::Stft;
pub use vocoder::phase_vocoder;
