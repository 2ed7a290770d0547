//! Offline band-limited resampling for audio ingest.

use std::f64::consts::PI;

use crate::real::Real;

const HALF_TAPS: isize = 24;

/// Resamples with a Hann-windowed sinc kernel, low-passed at the lower of the
/// two Nyquist frequencies.
pub fn resample<T: Real>(x: &[T], from_hz: u32, to_hz: u32) -> Vec<T> {
    if from_hz == to_hz || x.is_empty() {
        return x.to_vec();
    }
    let ratio = to_hz as f64 / from_hz as f64;
    let cutoff = ratio.min(1.0);
    let out_len = ((x.len() as f64) * ratio).round() as usize;
    let half = (HALF_TAPS as f64 / cutoff).ceil() as isize;
    (0..out_len)
        .map(|j| {
            let pos = j as f64 / ratio;
            let centre = pos.floor() as isize;
            let mut acc = 0.0;
            for i in (centre - half + 1)..=(centre + half) {
                if i < 0 || i >= x.len() as isize {
                    continue;
                }
                let d = pos - i as f64;
                let arg = d * cutoff;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                let win = 0.5 + 0.5 * (PI * d / (half as f64 + 1.0)).cos();
                acc += x[i as usize].as_f64() * cutoff * sinc * win;
            }
            T::lit(acc)
        })
        .collect()
}
