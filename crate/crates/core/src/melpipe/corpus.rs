use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LogMel, MelClip, NormStats, N_FRAMES, N_MELS, PIPELINE_VERSION, TARGET_BPM};
use crate::error::{Error, Result};
use crate::real::{rng_for, stable_hash, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub path: String,
    pub tag: String,
    pub split: Split,
    pub bpm: f64,
    pub source_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusHeader {
    corpus_id: String,
    pipeline_version: String,
    stats: NormStats,
    tags: Vec<String>,
    split_ratio: [f64; 3],
    n_clips: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub corpus_id: String,
    /// Normalization range, computed on the training split only.
    pub stats: NormStats,
    /// Sorted distinct tags; a clip's class label is its index here.
    pub tags: Vec<String>,
    pub split_ratio: [f64; 3],
    pub entries: Vec<CorpusEntry>,
}

/// Normalized clips plus their manifest. `clips[i]` belongs to `entries[i]`.
#[derive(Clone, Debug)]
pub struct Corpus<T> {
    pub manifest: CorpusManifest,
    pub clips: Vec<MelClip<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipSidecar {
    shape: [usize; 2],
    tag: String,
    bpm: f64,
    source_id: String,
    pipeline_version: String,
}

/// Writes `<stem>.f32` (little-endian float32, row-major (64, 200)) and the
/// `<stem>.json` sidecar.
pub fn write_clip<T: Real>(stem: &Path, clip: &MelClip<T>) -> Result<()> {
    let mut bytes = Vec::with_capacity(clip.values().len() * 4);
    for v in clip.values() {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    let blob = stem.with_extension("f32");
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    let side = ClipSidecar {
        shape: [N_MELS, N_FRAMES],
        tag: clip.tag().to_string(),
        bpm: TARGET_BPM,
        source_id: clip.source_id().to_string(),
        pipeline_version: PIPELINE_VERSION.to_string(),
    };
    let json = stem.with_extension("json");
    fs::write(&json, serde_json::to_vec_pretty(&side).expect("sidecar serializes")).map_err(|e| Error::io(&json, e))
}

pub fn read_clip<T: Real>(stem: &Path) -> Result<MelClip<T>> {
    let json = stem.with_extension("json");
    let side: ClipSidecar = serde_json::from_slice(&fs::read(&json).map_err(|e| Error::io(&json, e))?)
        .map_err(|e| Error::format(json.display().to_string(), e))?;
    if side.shape != [N_MELS, N_FRAMES] {
        return Err(Error::Shape(format!("{}: clip shape {:?}", json.display(), side.shape)));
    }
    let blob = stem.with_extension("f32");
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != N_MELS * N_FRAMES * 4 {
        return Err(Error::Shape(format!("{}: {} bytes", blob.display(), bytes.len())));
    }
    let values = bytes.chunks_exact(4).map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)).collect();
    MelClip::new(values, side.tag, side.source_id)
}

fn split_counts(n: usize, ratio: [f64; 3]) -> (usize, usize) {
    let total: f64 = ratio.iter().sum();
    let train = ((n as f64) * ratio[0] / total).round() as usize;
    let val = ((n as f64) * ratio[1] / total).round() as usize;
    let train = train.min(n);
    (train, val.min(n - train))
}

impl<T: Real> Corpus<T> {
    /// Assigns stratified splits, fits normalization on the training split
    /// and normalizes every clip.
    pub fn from_log_mels(items: Vec<(LogMel, String, String)>, split_seed: u64, split_ratio: [f64; 3]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Input("corpus has no clips".into()));
        }
        if split_ratio.iter().any(|r| *r < 0.0) || split_ratio.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("invalid split ratio {split_ratio:?}")));
        }
        let tags: Vec<String> = items.iter().map(|(_, t, _)| t.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut splits = vec![Split::Test; items.len()];
        for tag in &tags {
            let mut idx: Vec<usize> = (0..items.len()).filter(|&i| &items[i].1 == tag).collect();
            idx.shuffle(&mut rng_for(split_seed, &[stable_hash(tag)]));
            let (n_train, n_val) = split_counts(idx.len(), split_ratio);
            for (k, &i) in idx.iter().enumerate() {
                splits[i] = if k < n_train {
                    Split::Train
                } else if k < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
        let train_rows = items.iter().zip(&splits).filter(|(_, s)| **s == Split::Train).map(|(it, _)| it.0.values.as_slice());
        let stats = NormStats::from_range(train_rows);
        let mut clips = Vec::with_capacity(items.len());
        let mut entries = Vec::with_capacity(items.len());
        for (i, ((lm, tag, source_id), split)) in items.into_iter().zip(splits).enumerate() {
            clips.push(lm.normalize(&stats, &tag, &source_id));
            entries.push(CorpusEntry { path: format!("clips/{i:06}"), tag, split, bpm: TARGET_BPM, source_id });
        }
        let mut manifest = CorpusManifest { corpus_id: String::new(), stats, tags, split_ratio, entries };
        manifest.corpus_id = corpus_digest(&manifest, &clips);
        Ok(Self { manifest, clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.tags.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.manifest.entries[i].split == split).collect()
    }

    pub fn clips_in(&self, split: Split) -> Vec<&MelClip<T>> {
        self.indices(split).into_iter().map(|i| &self.clips[i]).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        let tag = &self.manifest.entries[i].tag;
        self.manifest.tags.iter().position(|t| t == tag).expect("tag listed in manifest")
    }

    /// Keeps only `indices`, preserving normalization and the original split tags.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let entries: Vec<CorpusEntry> = indices.iter().map(|&i| self.manifest.entries[i].clone()).collect();
        let clips: Vec<MelClip<T>> = indices.iter().map(|&i| self.clips[i].clone()).collect();
        let tags = entries.iter().map(|e| e.tag.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut manifest = CorpusManifest { corpus_id: String::new(), tags, entries, ..self.manifest.clone() };
        manifest.corpus_id = corpus_digest(&manifest, &clips);
        Self { manifest, clips }
    }

    /// Writes `corpus.json`, `manifest.jsonl` and one blob + sidecar per clip.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let clip_dir = dir.join("clips");
        fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
        for (entry, clip) in self.manifest.entries.iter().zip(&self.clips) {
            write_clip(&dir.join(&entry.path), clip)?;
        }
        let mut lines = Vec::new();
        for e in &self.manifest.entries {
            serde_json::to_writer(&mut lines, e).expect("entry serializes");
            lines.write_all(b"\n").expect("write to vec");
        }
        let mpath = dir.join("manifest.jsonl");
        fs::write(&mpath, lines).map_err(|e| Error::io(&mpath, e))?;
        let header = CorpusHeader {
            corpus_id: self.manifest.corpus_id.clone(),
            pipeline_version: PIPELINE_VERSION.to_string(),
            stats: self.manifest.stats,
            tags: self.manifest.tags.clone(),
            split_ratio: self.manifest.split_ratio,
            n_clips: self.len(),
        };
        let hpath = dir.join("corpus.json");
        fs::write(&hpath, serde_json::to_vec_pretty(&header).expect("header serializes")).map_err(|e| Error::io(&hpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let hpath = dir.join("corpus.json");
        let header: CorpusHeader = serde_json::from_slice(&fs::read(&hpath).map_err(|e| Error::io(&hpath, e))?)
            .map_err(|e| Error::format(hpath.display().to_string(), e))?;
        let mpath = dir.join("manifest.jsonl");
        let file = fs::File::open(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&mpath, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str::<CorpusEntry>(&line).map_err(|e| Error::format(mpath.display().to_string(), e))?);
        }
        if entries.len() != header.n_clips {
            return Err(Error::format("corpus", format!("{} entries but header says {}", entries.len(), header.n_clips)));
        }
        let clips = entries.iter().map(|e| read_clip(&dir.join(&e.path))).collect::<Result<Vec<_>>>()?;
        let manifest = CorpusManifest {
            corpus_id: header.corpus_id,
            stats: header.stats,
            tags: header.tags,
            split_ratio: header.split_ratio,
            entries,
        };
        Ok(Self { manifest, clips })
    }
}

fn corpus_digest<T: Real>(manifest: &CorpusManifest, clips: &[MelClip<T>]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&manifest.stats).expect("stats serialize"));
    for (e, c) in manifest.entries.iter().zip(clips) {
        h.update(serde_json::to_vec(e).expect("entry serializes"));
        for v in c.values() {
            h.update((v.as_f64() as f32).to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}
