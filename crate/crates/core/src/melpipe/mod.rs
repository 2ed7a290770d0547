//! Loop ingestion: one-bar segmentation, tempo normalization to 120 BPM,
//! log-mel extraction and the two one-second chunks fed to feature networks.

mod corpus;
mod ingest;
mod synthetic;

use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::dsp::{griffin_lim, mel_to_linear, phase_vocoder, MelFilterbank, Stft};
use crate::error::{Error, Result};
use crate::real::Real;
use loopgan_tensor::Tensor;

pub use corpus::{read_clip, write_clip, Corpus, CorpusEntry, CorpusManifest, Split};
pub use ingest::{ingest_dir, read_wav, LoopMetadata};
pub use synthetic::{make_general_corpus, make_synthetic_corpus, synth_class_loop, SyntheticSpec};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 512;
pub const HOP: usize = 160;
pub const N_MELS: usize = 64;
pub const N_FRAMES: usize = 200;
pub const CHUNK_FRAMES: usize = N_FRAMES / 2;
pub const TARGET_BPM: f64 = 120.0;
/// One 4/4 bar at 120 BPM.
pub const CLIP_SAMPLES: usize = 32_000;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8000.0;
pub const MIN_SEGMENT_SECS: f64 = 0.1;
pub const PIPELINE_VERSION: &str = "melpipe-1";

/// A mono loop with its tempo and label.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioLoop<T> {
    samples: Vec<T>,
    sample_rate: u32,
    bpm: f64,
    tag: String,
    source_id: String,
}

impl<T: Real> AudioLoop<T> {
    pub fn new(
        samples: Vec<T>,
        sample_rate: u32,
        bpm: f64,
        tag: impl Into<String>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Input("loop has no samples".into()));
        }
        if !(40.0..=300.0).contains(&bpm) {
            return Err(Error::Input(format!("bpm {bpm} outside [40, 300]")));
        }
        if samples.iter().any(|s| !Float::is_finite(*s)) {
            return Err(Error::Input("non-finite sample".into()));
        }
        Ok(Self { samples, sample_rate, bpm, tag: tag.into(), source_id: source_id.into() })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn bpm(&self) -> f64 {
        self.bpm
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Length of one 4/4 bar at this loop's tempo.
    pub fn bar_secs(&self) -> f64 {
        4.0 * 60.0 / self.bpm
    }
}

/// Global log-mel range of the training split, mapped onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub log_min: f64,
    pub log_max: f64,
}

impl NormStats {
    pub fn normalize(&self, v: f64) -> f64 {
        let span = (self.log_max - self.log_min).max(1e-9);
        (2.0 * (v - self.log_min) / span - 1.0).clamp(-1.0, 1.0)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.log_min + (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (self.log_max - self.log_min)
    }

    pub fn from_range<'a>(values: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for vs in values {
            for &v in vs {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            return Self { log_min: 0.0, log_max: 1.0 };
        }
        Self { log_min: lo, log_max: hi }
    }
}

/// Unnormalized `log(1 + mel)` matrix, `(64, 200)` row-major by mel bin.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMel {
    pub values: Vec<f64>,
}

impl LogMel {
    pub fn normalize<T: Real>(&self, stats: &NormStats, tag: &str, source_id: &str) -> MelClip<T> {
        let values = self.values.iter().map(|&v| T::lit(stats.normalize(v))).collect();
        MelClip { values, tag: tag.to_string(), source_id: source_id.to_string() }
    }
}

/// One loop as a normalized `(64 mel, 200 frame)` log-mel matrix.
#[derive(Clone, PartialEq)]
pub struct MelClip<T> {
    values: Vec<T>,
    tag: String,
    source_id: String,
}

impl<T> fmt::Debug for MelClip<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MelClip").field("tag", &self.tag).field("source_id", &self.source_id).finish()
    }
}

impl<T: Real> MelClip<T> {
    pub fn new(values: Vec<T>, tag: impl Into<String>, source_id: impl Into<String>) -> Result<Self> {
        if values.len() != N_MELS * N_FRAMES {
            return Err(Error::Shape(format!("mel clip needs {} values, got {}", N_MELS * N_FRAMES, values.len())));
        }
        let one = T::one();
        if values.iter().any(|&v| !Float::is_finite(v) || v > one || v < -one) {
            return Err(Error::Input("mel clip values must be finite and inside [-1, 1]".into()));
        }
        Ok(Self { values, tag: tag.into(), source_id: source_id.into() })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn bpm(&self) -> f64 {
        TARGET_BPM
    }

    pub fn at(&self, mel: usize, frame: usize) -> T {
        self.values[mel * N_FRAMES + frame]
    }

    /// Builds a clip from row `index` of a `[N, 1, 64, 200]` batch, clamping
    /// into `[-1, 1]`.
    pub fn from_batch(batch: &Tensor<T>, index: usize, tag: &str, source_id: &str) -> Result<Self> {
        let per = N_MELS * N_FRAMES;
        if batch.ndim() != 4 || batch.shape()[1..] != [1, N_MELS, N_FRAMES] {
            return Err(Error::Shape(format!("expected [N, 1, 64, 200], got {:?}", batch.shape())));
        }
        let slice = &batch.data()[index * per..(index + 1) * per];
        let one = T::one();
        Self::new(slice.iter().map(|&v| v.max(-one).min(one)).collect(), tag, source_id)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn cast<U: Real>(&self) -> MelClip<U> {
        MelClip {
            values: self.values.iter().map(|&v| U::lit(v.as_f64())).collect(),
            tag: self.tag.clone(),
            source_id: self.source_id.clone(),
        }
    }
}

/// Stacks clips into a `[N, 1, 64, 200]` tensor.
pub fn clips_to_tensor<T: Real>(clips: &[&MelClip<T>]) -> Tensor<T> {
    let mut data = Vec::with_capacity(clips.len() * N_MELS * N_FRAMES);
    for c in clips {
        data.extend_from_slice(&c.values);
    }
    Tensor::new(&[clips.len(), 1, N_MELS, N_FRAMES], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChunkIndex {
    First,
    Second,
}

/// One second of a clip: frames `[0, 100)` or `[100, 200)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk<T> {
    values: Vec<T>,
    index: ChunkIndex,
}

impl<T: Real> Chunk<T> {
    pub fn new(values: Vec<T>, index: ChunkIndex) -> Result<Self> {
        if values.len() != N_MELS * CHUNK_FRAMES {
            return Err(Error::Shape(format!("chunk needs {} values, got {}", N_MELS * CHUNK_FRAMES, values.len())));
        }
        Ok(Self { values, index })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn index(&self) -> ChunkIndex {
        self.index
    }

    /// `[1, 1, 64, 100]` tensor for a feature network.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, 1, N_MELS, CHUNK_FRAMES], self.values.clone())
    }
}

pub fn split_chunks<T: Real>(clip: &MelClip<T>) -> (Chunk<T>, Chunk<T>) {
    let mut a = Vec::with_capacity(N_MELS * CHUNK_FRAMES);
    let mut b = Vec::with_capacity(N_MELS * CHUNK_FRAMES);
    for row in clip.values.chunks(N_FRAMES) {
        a.extend_from_slice(&row[..CHUNK_FRAMES]);
        b.extend_from_slice(&row[CHUNK_FRAMES..]);
    }
    (Chunk { values: a, index: ChunkIndex::First }, Chunk { values: b, index: ChunkIndex::Second })
}

/// Reassembles the `(64, 200)` values from a first and second chunk.
pub fn concat_chunks<T: Real>(first: &Chunk<T>, second: &Chunk<T>) -> Result<Vec<T>> {
    if first.index != ChunkIndex::First || second.index != ChunkIndex::Second {
        return Err(Error::Input("chunks must be given in time order".into()));
    }
    let mut out = Vec::with_capacity(N_MELS * N_FRAMES);
    for (ra, rb) in first.values.chunks(CHUNK_FRAMES).zip(second.values.chunks(CHUNK_FRAMES)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    Ok(out)
}

/// Downbeats every `240 / bpm` seconds from the start, as metadata implies.
pub fn uniform_downbeats<T: Real>(audio: &AudioLoop<T>) -> Vec<f64> {
    let bar = audio.bar_secs();
    let dur = audio.duration_secs();
    let tol = 1.0 / audio.sample_rate as f64;
    let mut grid = Vec::new();
    let mut i = 0usize;
    loop {
        let t = i as f64 * bar;
        if t > dur + tol {
            break;
        }
        grid.push(t);
        i += 1;
    }
    grid
}

/// Cuts `audio` at consecutive downbeats, one output per inter-downbeat interval.
pub fn segment_one_bar<T: Real>(audio: &AudioLoop<T>, downbeats: &[f64]) -> Result<Vec<AudioLoop<T>>> {
    if downbeats.len() < 2 {
        return Err(Error::NoBeats);
    }
    let sr = audio.sample_rate as f64;
    let dur = audio.duration_secs();
    let tol = 1.0 / sr;
    if downbeats.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Input("downbeats must be sorted ascending".into()));
    }
    if downbeats[0] < -tol || downbeats[downbeats.len() - 1] > dur + tol {
        return Err(Error::Input("downbeats must lie within the loop".into()));
    }
    let mut out = Vec::with_capacity(downbeats.len() - 1);
    for (i, w) in downbeats.windows(2).enumerate() {
        let secs = w[1] - w[0];
        if secs < MIN_SEGMENT_SECS {
            return Err(Error::SegmentTooShort { seconds: secs });
        }
        let a = ((w[0] * sr).round().max(0.0) as usize).min(audio.samples.len());
        let b = ((w[1] * sr).round().max(0.0) as usize).min(audio.samples.len());
        out.push(AudioLoop {
            samples: audio.samples[a..b].to_vec(),
            sample_rate: audio.sample_rate,
            bpm: audio.bpm,
            tag: audio.tag.clone(),
            source_id: if downbeats.len() == 2 { audio.source_id.clone() } else { format!("{}#bar{i}", audio.source_id) },
        });
    }
    Ok(out)
}

/// Result of [`time_stretch`]; `extreme_ratio` is set when the duration
/// ratio fell outside `[0.5, 2.0]` (the audio is still produced).
#[derive(Clone, Debug)]
pub struct Stretched<T> {
    pub audio: AudioLoop<T>,
    pub extreme_ratio: Option<f64>,
}

impl<T> Stretched<T> {
    pub fn warning(&self) -> Option<Error> {
        self.extreme_ratio.map(|ratio| Error::ExtremeStretch { ratio })
    }
}

/// Re-times a segment to `target_bpm`; the output lasts
/// `duration * bpm / target_bpm`, rounded to the nearest sample.
pub fn time_stretch<T: Real>(segment: &AudioLoop<T>, target_bpm: f64) -> Result<Stretched<T>> {
    if !(target_bpm > 0.0) {
        return Err(Error::Input("target bpm must be positive".into()));
    }
    let ratio = segment.bpm / target_bpm;
    let out_len = (segment.samples.len() as f64 * ratio).round() as usize;
    let extreme_ratio = (!(0.5..=2.0).contains(&ratio)).then_some(ratio);
    if let Some(r) = extreme_ratio {
        log::warn!("{}: stretch ratio {r:.3} outside [0.5, 2.0]", segment.source_id);
    }
    let samples = phase_vocoder(&segment.samples, 1.0 / ratio, out_len);
    Ok(Stretched {
        audio: AudioLoop { samples, bpm: target_bpm, ..segment.clone() },
        extreme_ratio,
    })
}

/// STFT magnitude -> mel filterbank -> `log(1 + x)`, cached per instance.
pub struct MelExtractor<T: Real> {
    stft: Stft<T>,
    filterbank: MelFilterbank<T>,
}

impl<T: Real> Default for MelExtractor<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> MelExtractor<T> {
    pub fn new() -> Self {
        Self { stft: Stft::new(N_FFT, HOP), filterbank: MelFilterbank::new(SAMPLE_RATE, N_FFT, N_MELS, F_MIN, F_MAX) }
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }

    pub fn stft(&self) -> &Stft<T> {
        &self.stft
    }

    /// Requires exactly 32000 samples at 16 kHz. Centred STFT gives 201
    /// frames; the last is dropped.
    pub fn log_mel(&self, segment: &AudioLoop<T>) -> Result<LogMel> {
        if segment.sample_rate != SAMPLE_RATE || segment.samples.len() != CLIP_SAMPLES {
            return Err(Error::Shape(format!(
                "mel input must be {CLIP_SAMPLES} samples at {SAMPLE_RATE} Hz, got {} at {}",
                segment.samples.len(),
                segment.sample_rate
            )));
        }
        let mag = self.stft.magnitude(&segment.samples, true);
        let mut values = vec![0.0; N_MELS * N_FRAMES];
        for (f, frame) in mag.iter().take(N_FRAMES).enumerate() {
            for (m, v) in self.filterbank.apply(frame).into_iter().enumerate() {
                values[m * N_FRAMES + f] = v.as_f64().ln_1p();
            }
        }
        Ok(LogMel { values })
    }

    pub fn mel_spectrogram(&self, segment: &AudioLoop<T>, stats: &NormStats) -> Result<MelClip<T>> {
        Ok(self.log_mel(segment)?.normalize(stats, &segment.tag, &segment.source_id))
    }
}

pub fn mel_spectrogram<T: Real>(segment: &AudioLoop<T>, stats: &NormStats) -> Result<MelClip<T>> {
    MelExtractor::new().mel_spectrogram(segment, stats)
}

pub const GRIFFIN_LIM_ITERS: usize = 60;

impl<T: Real> MelExtractor<T> {
    /// Audio for a normalized clip: undo the normalization and `log(1 + x)`,
    /// map mel magnitudes to linear bins with the filterbank pseudo-inverse
    /// and recover phase with Griffin-Lim. Returns 32000 samples at 16 kHz.
    pub fn invert(&self, clip: &MelClip<T>, stats: &NormStats, iters: usize, seed: u64) -> Vec<T> {
        let frames: Vec<Vec<T>> = (0..=N_FRAMES)
            .map(|f| {
                let f = f.min(N_FRAMES - 1);
                (0..N_MELS).map(|m| T::lit(stats.denormalize(clip.at(m, f).as_f64()).exp_m1().max(0.0))).collect()
            })
            .collect();
        let mag = mel_to_linear(&self.filterbank, &frames);
        griffin_lim(&self.stft, &mag, iters, CLIP_SAMPLES, seed)
    }
}

/// Pads with silence or trims to exactly one 120 BPM bar.
pub fn fit_to_clip<T: Real>(audio: AudioLoop<T>) -> AudioLoop<T> {
    let mut audio = audio;
    audio.samples.resize(CLIP_SAMPLES, T::zero());
    audio
}

/// Full pipeline for one loop: segment (uniform grid unless given), stretch
/// to 120 BPM, fit to 32000 samples, log-mel.
pub fn loop_to_log_mels<T: Real>(
    extractor: &MelExtractor<T>,
    audio: &AudioLoop<T>,
    downbeats: Option<&[f64]>,
) -> Result<Vec<(LogMel, String)>> {
    let grid = match downbeats {
        Some(g) => g.to_vec(),
        None => uniform_downbeats(audio),
    };
    segment_one_bar(audio, &grid)?
        .into_iter()
        .map(|seg| {
            let st = time_stretch(&seg, TARGET_BPM)?;
            let fitted = fit_to_clip(st.audio);
            Ok((extractor.log_mel(&fitted)?, fitted.source_id))
        })
        .collect()
}

#[cfg(test)]
mod tests;
