use std::path::Path;

use image::{Rgb, RgbImage};
use loopgan_core::melpipe::{MelClip, N_FRAMES, N_MELS, SAMPLE_RATE};
use loopgan_core::{Error, Real, Result};

/// Bump when the color ramp or the value scaling below changes.
pub const COLORMAP_VERSION: &str = "spectro-v1";

/// Pixels per mel bin and per frame.
const SCALE: u32 = 2;

/// Dark purple through teal to yellow, evenly spaced.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Maps a normalized log-mel value in `[-1, 1]` to a color. Normalized
/// values are already log-compressed, so the scale is linear in them and
/// identical for every clip.
pub fn color(v: f64) -> Rgb<u8> {
    let t = ((v + 1.0) / 2.0).clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let c = |k: usize| (RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Time runs left to right, mel bins bottom (low) to top (high).
pub fn spectrogram_image<T: Real>(clip: &MelClip<T>) -> RgbImage {
    RgbImage::from_fn(N_FRAMES as u32 * SCALE, N_MELS as u32 * SCALE, |x, y| {
        let mel = N_MELS - 1 - (y / SCALE) as usize;
        color(clip.at(mel, (x / SCALE) as usize).as_f64())
    })
}

pub fn write_png<T: Real>(path: &Path, clip: &MelClip<T>) -> Result<()> {
    spectrogram_image(clip).save(path).map_err(|e| Error::format(path.display().to_string(), e))
}

/// 16-bit mono at the pipeline's sample rate, peak-normalized to -1 dBFS
/// when louder than that.
pub fn write_wav<T: Real>(path: &Path, samples: &[T]) -> Result<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.as_f64().abs()));
    let ceiling = 10f64.powf(-1.0 / 20.0);
    let gain = if peak > ceiling { ceiling / peak } else { 1.0 };
    let wav_err = |e: hound::Error| Error::format(path.display().to_string(), e);
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for s in samples {
        w.write_sample((s.as_f64() * gain * i16::MAX as f64).round() as i16).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints_and_clamping() {
        assert_eq!(color(-1.0), Rgb([68, 1, 84]));
        assert_eq!(color(1.0), Rgb([253, 231, 37]));
        assert_eq!(color(5.0), color(1.0));
        assert_eq!(color(0.0), Rgb([33, 145, 140]));
    }

    #[test]
    fn low_mel_bins_are_drawn_at_the_bottom() {
        let mut v = vec![-1.0f32; N_MELS * N_FRAMES];
        v[..N_FRAMES].fill(1.0);
        let img = spectrogram_image(&MelClip::new(v, "t", "t").unwrap());
        assert_eq!(img.dimensions(), (400, 128));
        assert_eq!(*img.get_pixel(10, 127), color(1.0));
        assert_eq!(*img.get_pixel(10, 0), color(-1.0));
    }
}
