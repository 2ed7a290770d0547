use super::*;
use crate::dsp::stft::dominant_bin;
use proptest::prelude::*;
use std::f64::consts::PI;

fn sine(hz: f64, secs: f64, bpm: f64) -> AudioLoop<f64> {
    let n = (secs * SAMPLE_RATE as f64).round() as usize;
    let s = (0..n).map(|i| 0.5 * (2.0 * PI * hz * i as f64 / SAMPLE_RATE as f64).sin()).collect();
    AudioLoop::new(s, SAMPLE_RATE, bpm, "t", "sine").unwrap()
}

#[test]
fn four_bars_at_120_give_four_two_second_segments() {
    let audio = sine(220.0, 8.0, 120.0);
    let segs = segment_one_bar(&audio, &uniform_downbeats(&audio)).unwrap();
    assert_eq!(segs.len(), 4);
    for (i, s) in segs.iter().enumerate() {
        assert_eq!(s.samples().len(), 32_000);
        assert_eq!(s.source_id(), format!("sine#bar{i}"));
    }
}

#[test]
fn bar_at_140_stretches_to_two_seconds() {
    let audio = sine(220.0, 12.0 / 7.0, 140.0);
    let segs = segment_one_bar(&audio, &uniform_downbeats(&audio)).unwrap();
    assert_eq!(segs.len(), 1);
    let secs = segs[0].duration_secs();
    assert!((secs - 12.0 / 7.0).abs() < 1e-3, "{secs}");
    let st = time_stretch(&segs[0], TARGET_BPM).unwrap();
    assert!(st.extreme_ratio.is_none());
    let expect = (segs[0].samples().len() as f64 * 140.0 / 120.0).round() as usize;
    assert_eq!(st.audio.samples().len(), expect);
    assert!((st.audio.samples().len() as i64 - 32_000).abs() <= 1);
}

#[test]
fn segmentation_rejects_bad_grids() {
    let audio = sine(220.0, 2.0, 120.0);
    assert!(matches!(segment_one_bar(&audio, &[0.0]), Err(Error::NoBeats)));
    assert!(matches!(segment_one_bar(&audio, &[1.0, 0.5]), Err(Error::Input(_))));
    assert!(matches!(segment_one_bar(&audio, &[0.0, 3.0]), Err(Error::Input(_))));
    assert!(matches!(segment_one_bar(&audio, &[0.0, 0.05]), Err(Error::SegmentTooShort { .. })));
}

#[test]
fn stretch_preserves_pitch() {
    let audio = sine(440.0, 240.0 / 100.0, 100.0);
    let st = time_stretch(&audio, 120.0).unwrap();
    let out = st.audio.samples();
    assert_eq!(out.len(), (audio.samples().len() as f64 * 100.0 / 120.0).round() as usize);
    let mid = &out[out.len() / 2 - 4096..out.len() / 2 + 4096];
    let bin = dominant_bin(mid);
    let expect = (440.0 * 8192.0 / SAMPLE_RATE as f64).round() as i64;
    assert!((bin as i64 - expect).abs() <= 1, "bin {bin} vs {expect}");
}

#[test]
fn extreme_stretch_warns_but_produces_audio() {
    let audio = sine(440.0, 240.0 / 50.0, 50.0);
    let st = time_stretch(&audio, 120.0).unwrap();
    assert!(matches!(st.warning(), Some(Error::ExtremeStretch { .. })));
    assert_eq!(st.audio.samples().len(), (audio.samples().len() as f64 * 50.0 / 120.0).round() as usize);
}

#[test]
fn silence_maps_to_floor() {
    let ex = MelExtractor::<f64>::new();
    let audio = AudioLoop::new(vec![0.0; CLIP_SAMPLES], SAMPLE_RATE, 120.0, "s", "silence").unwrap();
    let stats = NormStats { log_min: 0.0, log_max: 2.0 };
    let clip = ex.mel_spectrogram(&audio, &stats).unwrap();
    assert!(clip.values().iter().all(|&v| v == -1.0));
}

#[test]
fn tone_peaks_at_nearest_filter() {
    let ex = MelExtractor::<f64>::new();
    let audio = sine(1000.0, 2.0, 120.0);
    let lm = ex.log_mel(&audio).unwrap();
    let want = ex.filterbank().nearest_filter(1000.0);
    for f in [10, 100, 190] {
        let col: Vec<f64> = (0..N_MELS).map(|m| lm.values[m * N_FRAMES + f]).collect();
        let arg = col.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(arg, want, "frame {f}");
    }
}

#[test]
fn white_noise_is_broadband() {
    use rand::Rng;
    let mut rng = crate::real::rng_for(3, &[]);
    let s = (0..CLIP_SAMPLES).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let audio = AudioLoop::<f64>::new(s, SAMPLE_RATE, 120.0, "n", "noise").unwrap();
    let ex = MelExtractor::new();
    let lm = ex.log_mel(&audio).unwrap();
    let stats = NormStats::from_range([lm.values.as_slice()]);
    let clip = lm.normalize::<f64>(&stats, "n", "noise");
    let above = (0..N_MELS)
        .filter(|&m| (0..N_FRAMES).map(|f| clip.at(m, f)).sum::<f64>() / N_FRAMES as f64 > -1.0 + 1e-3)
        .count();
    assert!(above as f64 >= 0.9 * N_MELS as f64, "{above}");
}

#[test]
fn wrong_length_is_a_shape_error() {
    let ex = MelExtractor::<f64>::new();
    let audio = sine(100.0, 1.0, 120.0);
    assert!(matches!(ex.log_mel(&audio), Err(Error::Shape(_))));
}

#[test]
fn synthetic_corpus_is_deterministic_and_covers_classes() {
    let a = make_synthetic_corpus::<f32>(11, 12, 4).unwrap();
    let b = make_synthetic_corpus::<f32>(11, 12, 4).unwrap();
    assert_eq!(a.manifest.corpus_id, b.manifest.corpus_id);
    assert_eq!(a.num_classes(), 4);
    assert!(a.clips.iter().all(|c| c.values().iter().all(|v| (-1.0..=1.0).contains(v))));
    let c = make_synthetic_corpus::<f32>(12, 12, 4).unwrap();
    assert_ne!(a.manifest.corpus_id, c.manifest.corpus_id);
    assert!(matches!(make_synthetic_corpus::<f32>(1, 3, 4), Err(Error::TooFewClips { .. })));
}

#[test]
fn corpus_round_trips_through_disk() {
    let corpus = make_synthetic_corpus::<f32>(5, 6, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.save(dir.path()).unwrap();
    let back = Corpus::<f32>::load(dir.path()).unwrap();
    assert_eq!(back.manifest, corpus.manifest);
    assert_eq!(back.clips, corpus.clips);
}

#[test]
fn ingest_reads_wav_with_sidecar_and_name_tempo() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("house");
    std::fs::create_dir(&sub).unwrap();
    let write = |path: &std::path::Path, sr: u32, secs: f64, channels: u16| {
        let spec = hound::WavSpec { channels, sample_rate: sr, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for i in 0..(secs * sr as f64) as usize {
            let v = (0.3 * (2.0 * PI * 330.0 * i as f64 / sr as f64).sin() * 32767.0) as i16;
            for _ in 0..channels {
                w.write_sample(v).unwrap();
            }
        }
        w.finalize().unwrap();
    };
    write(&sub.join("a_120bpm.wav"), 44_100, 4.0, 2);
    write(&dir.path().join("b.wav"), 16_000, 2.0, 1);
    std::fs::write(dir.path().join("b.json"), r#"{"bpm": 120, "tag": "techno"}"#).unwrap();
    let corpus = ingest_dir::<f32>(dir.path(), 0, [1.0, 0.0, 0.0]).unwrap();
    assert_eq!(corpus.len(), 3);
    assert_eq!(corpus.manifest.tags, vec!["house".to_string(), "techno".to_string()]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn chunks_concatenate_back(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = crate::real::rng_for(seed, &[]);
        let v: Vec<f32> = (0..N_MELS * N_FRAMES).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let clip = MelClip::new(v.clone(), "t", "p").unwrap();
        let (a, b) = split_chunks(&clip);
        prop_assert_eq!(a.values().len(), N_MELS * CHUNK_FRAMES);
        prop_assert_eq!(concat_chunks(&a, &b).unwrap(), v);
    }

    #[test]
    fn stretch_length_rule(bpm in 60.0f64..240.0, len in 2000usize..20000) {
        let audio = AudioLoop::new(vec![0.1f64; len], SAMPLE_RATE, bpm, "t", "x").unwrap();
        let st = time_stretch(&audio, 120.0).unwrap();
        prop_assert_eq!(st.audio.samples().len(), (len as f64 * bpm / 120.0).round() as usize);
    }
}

#[test]
fn inverted_audio_keeps_the_dominant_band() {
    let ex = MelExtractor::<f64>::new();
    let tone: Vec<f64> = (0..CLIP_SAMPLES).map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16_000.0).sin()).collect();
    let audio = AudioLoop::new(tone, SAMPLE_RATE, 120.0, "tone", "t").unwrap();
    let log_mel = ex.log_mel(&audio).unwrap();
    let stats = NormStats::from_range([log_mel.values.as_slice()]);
    let clip: MelClip<f64> = log_mel.normalize(&stats, "tone", "t");
    let y = ex.invert(&clip, &stats, 20, 0);
    assert_eq!(y.len(), CLIP_SAMPLES);
    let back = ex.log_mel(&AudioLoop::new(y, SAMPLE_RATE, 120.0, "tone", "t").unwrap()).unwrap();
    let loudest = |v: &[f64]| (0..N_MELS).max_by(|&a, &b| v[a * N_FRAMES + 100].total_cmp(&v[b * N_FRAMES + 100])).unwrap();
    assert_eq!(loudest(&back.values), loudest(&log_mel.values));
}
