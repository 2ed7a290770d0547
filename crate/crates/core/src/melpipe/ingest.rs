use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{loop_to_log_mels, AudioLoop, Corpus, MelExtractor, SAMPLE_RATE};
use crate::dsp::resample;
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-file metadata, read from `<stem>.json` next to the wav or, failing
/// that, parsed from a `<anything>_<bpm>bpm.wav` file name with the parent
/// directory as tag.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopMetadata {
    pub bpm: f64,
    pub tag: String,
    #[serde(default)]
    pub downbeats: Option<Vec<f64>>,
}

impl LoopMetadata {
    pub fn for_wav(path: &Path) -> Result<Self> {
        let sidecar = path.with_extension("json");
        if sidecar.exists() {
            let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            return serde_json::from_str(&text).map_err(|e| Error::format(sidecar.display().to_string(), e));
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let bpm = stem
            .split(['_', '-', ' '])
            .filter_map(|tok| tok.to_ascii_lowercase().strip_suffix("bpm").and_then(|n| n.parse::<f64>().ok()))
            .last()
            .ok_or_else(|| Error::Input(format!("{}: no sidecar and no tempo in file name", path.display())))?;
        let tag = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or("untagged")
            .to_string();
        Ok(Self { bpm, tag, downbeats: None })
    }
}

/// Reads 16/24/32-bit PCM or float wav, mixes to mono and resamples to 16 kHz.
pub fn read_wav<T: Real>(path: &Path, meta: &LoopMetadata) -> Result<AudioLoop<T>> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let bad = |e: hound::Error| Error::format(path.display().to_string(), e);
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            reader.into_samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>().map_err(bad)?
        }
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(bad)?
        }
    };
    let mono: Vec<T> = interleaved
        .chunks(channels)
        .map(|c| T::lit(c.iter().sum::<f64>() / channels as f64))
        .collect();
    let samples = if spec.sample_rate == SAMPLE_RATE { mono } else { resample(&mono, spec.sample_rate, SAMPLE_RATE) };
    let source_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("loop").to_string();
    AudioLoop::new(samples, SAMPLE_RATE, meta.bpm, meta.tag.clone(), source_id)
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Walks `dir` recursively and runs every wav through the mel pipeline.
/// Files that fail segmentation are skipped with a warning.
pub fn ingest_dir<T: Real>(dir: &Path, split_seed: u64, split_ratio: [f64; 3]) -> Result<Corpus<T>> {
    let mut wavs = Vec::new();
    collect_wavs(dir, &mut wavs)?;
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::Input(format!("no wav files under {}", dir.display())));
    }
    let extractor = MelExtractor::<T>::new();
    let mut items = Vec::new();
    for path in &wavs {
        let meta = LoopMetadata::for_wav(path)?;
        let audio = read_wav::<T>(path, &meta)?;
        match loop_to_log_mels(&extractor, &audio, meta.downbeats.as_deref()) {
            Ok(mels) => items.extend(mels.into_iter().map(|(lm, id)| (lm, meta.tag.clone(), id))),
            Err(e @ (Error::NoBeats | Error::SegmentTooShort { .. })) => {
                log::warn!("skipping {}: {e}", path.display());
            }
            Err(e) => return Err(e),
        }
    }
    Corpus::from_log_mels(items, split_seed, split_ratio)
}
