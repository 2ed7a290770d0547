//! Procedural one-bar loops used as a desk-scale corpus.
//!
//! Each class is a fixed pattern family (kick pattern, noise-burst pattern
//! and envelope, chord and voicing). Clips of a class vary in tempo,
//! velocity, dropped hits, detuning and noise, so classes overlap in
//! low-level statistics but remain separable.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{loop_to_log_mels, AudioLoop, Corpus, MelExtractor, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::real::{derive_seed, rng_for, Real};

const STEPS: usize = 16;
const CLASS_DOMAIN: u64 = 0xC1A5_5E5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_clips: usize,
    pub n_classes: usize,
    /// Extra non-loop classes (noise, sweeps, random tones), used for the
    /// broad corpus the general feature network is trained on.
    pub n_distractors: usize,
}

#[derive(Clone, Copy, Debug)]
enum Voicing {
    Pad,
    Arpeggio,
    Stabs,
}

struct ClassRecipe {
    kick: [bool; STEPS],
    hats: [bool; STEPS],
    hat_decay: f64,
    hat_brightness: f64,
    kick_hz: f64,
    chord_hz: Vec<f64>,
    voicing: Voicing,
    harmonics: usize,
    levels: [f64; 3],
}

fn midi_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

fn pattern(rng: &mut ChaCha8Rng, density: f64) -> [bool; STEPS] {
    let mut p = [false; STEPS];
    for s in p.iter_mut() {
        *s = rng.gen_bool(density);
    }
    p
}

fn recipe(class: usize) -> ClassRecipe {
    let mut rng = rng_for(CLASS_DOMAIN, &[class as u64]);
    let mut kick = pattern(&mut rng, 0.3);
    kick[0] = true;
    let mut hats = pattern(&mut rng, 0.45);
    hats[(class * 3 + 2) % STEPS] = true;
    let root = 45.0 + ((class * 7) % 36) as f64;
    const CHORDS: [[f64; 3]; 4] = [[0.0, 4.0, 7.0], [0.0, 3.0, 7.0], [0.0, 5.0, 7.0], [0.0, 7.0, 12.0]];
    let chord = CHORDS[(class / 3 + class) % CHORDS.len()];
    let voicing = match class % 3 {
        0 => Voicing::Pad,
        1 => Voicing::Arpeggio,
        _ => Voicing::Stabs,
    };
    ClassRecipe {
        kick,
        hats,
        hat_decay: rng.gen_range(0.02..0.18),
        hat_brightness: rng.gen_range(0.2..0.95),
        kick_hz: rng.gen_range(45.0..75.0),
        chord_hz: chord.iter().map(|&i| midi_hz(root + i)).collect(),
        voicing,
        harmonics: rng.gen_range(1..5),
        levels: [rng.gen_range(0.4..0.8), rng.gen_range(0.1..0.35), rng.gen_range(0.2..0.45)],
    }
}

fn tone(out: &mut [f64], start: usize, len: usize, hz: f64, harmonics: usize, amp: f64, decay: f64, phase: f64) {
    let sr = SAMPLE_RATE as f64;
    let end = (start + len).min(out.len());
    let attack = (0.005 * sr) as usize;
    for (k, o) in out[start..end].iter_mut().enumerate() {
        let t = k as f64 / sr;
        let env = (k as f64 / attack.max(1) as f64).min(1.0) * (-t / decay).exp();
        let mut v = 0.0;
        for h in 1..=harmonics {
            let f = hz * h as f64;
            if f < 7500.0 {
                v += (2.0 * PI * f * t + phase * h as f64).sin() / h as f64;
            }
        }
        *o += amp * env * v;
    }
}

/// Renders one bar of class `class` at a clip-specific tempo.
pub fn synth_class_loop<T: Real>(class: usize, clip_seed: u64) -> AudioLoop<T> {
    let r = recipe(class);
    let mut rng = rng_for(clip_seed, &[1]);
    let sr = SAMPLE_RATE as f64;
    let bpm: f64 = rng.gen_range(96.0..144.0);
    let bar = 240.0 / bpm;
    let n = (bar * sr).round() as usize;
    let step = n as f64 / STEPS as f64;
    let detune = 1.0 + rng.gen_range(-0.01..0.01);
    let mut out = vec![0.0f64; n];

    for s in 0..STEPS {
        let at = (s as f64 * step + rng.gen_range(-0.004..0.004) * sr).max(0.0) as usize;
        if at >= n {
            continue;
        }
        if r.kick[s] && (s == 0 || rng.gen_bool(0.9)) {
            let vel = rng.gen_range(0.7..1.0) * r.levels[0];
            let len = (0.25 * sr) as usize;
            let mut phase = 0.0;
            for k in 0..len.min(n - at) {
                let t = k as f64 / sr;
                let f = r.kick_hz * detune + 90.0 * (-t / 0.03).exp();
                phase += 2.0 * PI * f / sr;
                out[at + k] += vel * (-t / 0.12).exp() * phase.sin();
            }
        }
        if r.hats[s] && rng.gen_bool(0.9) {
            let vel = rng.gen_range(0.6..1.0) * r.levels[1];
            let len = (r.hat_decay * 5.0 * sr) as usize;
            let mut lp = 0.0;
            for k in 0..len.min(n - at) {
                let t = k as f64 / sr;
                let w: f64 = rng.gen_range(-1.0..1.0);
                lp += (1.0 - r.hat_brightness) * (w - lp);
                let hp = w - lp;
                out[at + k] += vel * (-t / r.hat_decay).exp() * hp;
            }
        }
    }

    let amp = r.levels[2] * rng.gen_range(0.75..1.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    match r.voicing {
        Voicing::Pad => {
            for &hz in &r.chord_hz {
                tone(&mut out, 0, n, hz * detune, r.harmonics, amp / 2.0, bar * 2.0, phase);
            }
        }
        Voicing::Arpeggio => {
            let eighth = n / 8;
            for e in 0..8 {
                let hz = r.chord_hz[e % r.chord_hz.len()] * detune;
                tone(&mut out, e * eighth, eighth, hz, r.harmonics, amp, 0.12, phase);
            }
        }
        Voicing::Stabs => {
            for s in (0..STEPS).filter(|s| s % 4 == 2 || (*s == 7 && rng.gen_bool(0.5))) {
                for &hz in &r.chord_hz {
                    tone(&mut out, (s as f64 * step) as usize, (step * 2.0) as usize, hz * detune, r.harmonics, amp / 2.0, 0.08, phase);
                }
            }
        }
    }

    for v in &mut out {
        *v += 0.002 * rng.gen_range(-1.0..1.0);
    }
    finish(out, bpm, format!("class-{class:02}"), format!("synth-{clip_seed:016x}"))
}

/// Renders one non-loop distractor clip; the family is `kind % 4`.
fn synth_distractor<T: Real>(kind: usize, clip_seed: u64) -> AudioLoop<T> {
    let mut rng = rng_for(clip_seed, &[2]);
    let sr = SAMPLE_RATE as f64;
    let bpm: f64 = rng.gen_range(96.0..144.0);
    let n = (240.0 / bpm * sr).round() as usize;
    let mut out = vec![0.0f64; n];
    match kind % 4 {
        0 => {
            let coef = 0.05 + 0.2 * (kind / 4) as f64 % 0.9;
            let mut lp = 0.0;
            for o in out.iter_mut() {
                lp += coef * (rng.gen_range(-1.0..1.0) - lp);
                *o = lp * 2.0;
            }
        }
        1 => {
            let (f0, f1): (f64, f64) = (rng.gen_range(100.0..3000.0), rng.gen_range(100.0..3000.0));
            let mut phase = 0.0;
            for (k, o) in out.iter_mut().enumerate() {
                let f = f0 + (f1 - f0) * k as f64 / n as f64;
                phase += 2.0 * PI * f / sr;
                *o = 0.5 * phase.sin();
            }
        }
        2 => {
            for _ in 0..rng.gen_range(2..6) {
                let hz = rng.gen_range(80.0..4000.0);
                let at = rng.gen_range(0..n);
                tone(&mut out, at, n - at, hz, 1, 0.3, rng.gen_range(0.05..1.0), 0.0);
            }
        }
        _ => {
            let period = rng.gen_range(200..4000);
            for k in (0..n).step_by(period) {
                out[k] = 0.9;
            }
        }
    }
    finish(out, bpm, format!("other-{kind:02}"), format!("distractor-{clip_seed:016x}"))
}

fn finish<T: Real>(mut out: Vec<f64>, bpm: f64, tag: String, source_id: String) -> AudioLoop<T> {
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        for v in &mut out {
            *v *= 0.95 / peak;
        }
    }
    AudioLoop::new(out.into_iter().map(T::lit).collect(), SAMPLE_RATE, bpm, tag, source_id)
        .expect("synthetic loop satisfies invariants")
}

fn build<T: Real>(spec: SyntheticSpec, domain: u64) -> Result<Corpus<T>> {
    if spec.n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", spec.n_classes)));
    }
    let total = spec.n_classes + spec.n_distractors;
    if spec.n_clips < total {
        return Err(Error::TooFewClips { n_clips: spec.n_clips, n_classes: total });
    }
    let extractor = MelExtractor::<T>::new();
    let mut items = Vec::with_capacity(spec.n_clips);
    for i in 0..spec.n_clips {
        let class = i % total;
        let clip_seed = derive_seed(spec.seed, &[domain, i as u64]);
        let audio = if class < spec.n_classes {
            synth_class_loop::<T>(class, clip_seed)
        } else {
            synth_distractor::<T>(class - spec.n_classes, clip_seed)
        };
        for (lm, source_id) in loop_to_log_mels(&extractor, &audio, None)? {
            items.push((lm, audio.tag().to_string(), source_id));
        }
    }
    Corpus::from_log_mels(items, derive_seed(spec.seed, &[domain, u64::MAX]), [0.8, 0.1, 0.1])
}

/// `n_clips` one-bar loops, clip `i` drawn from class `i % n_classes`.
pub fn make_synthetic_corpus<T: Real>(seed: u64, n_clips: usize, n_classes: usize) -> Result<Corpus<T>> {
    build(SyntheticSpec { seed, n_clips, n_classes, n_distractors: 0 }, 0)
}

/// Loop classes pooled with distractor classes, from a seed domain disjoint
/// from [`make_synthetic_corpus`].
pub fn make_general_corpus<T: Real>(spec: SyntheticSpec) -> Result<Corpus<T>> {
    build(spec, 1)
}
