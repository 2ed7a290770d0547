//! Phase-vocoder time stretching.

use std::f64::consts::PI;

use num_traits::Float;
use rustfft::num_complex::Complex;

use super::stft::Stft;
use crate::real::Real;

const PV_FFT: usize = 1024;
const PV_HOP: usize = 256;

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// Changes duration by playing the spectral frames back at `speed` (frames
/// advanced per output frame) with phase accumulation, so pitch is kept.
/// The result is trimmed or zero-padded to exactly `out_len` samples.
pub fn phase_vocoder<T: Real>(x: &[T], speed: f64, out_len: usize) -> Vec<T> {
    assert!(speed > 0.0, "speed must be positive");
    if (speed - 1.0).abs() < 1e-12 {
        let mut y = x.to_vec();
        y.resize(out_len, T::zero());
        return y;
    }
    let stft = Stft::<T>::new(PV_FFT, PV_HOP);
    let spec = stft.forward(x, true);
    let n_frames = spec.len();
    let n_bins = stft.n_bins();
    if n_frames == 0 {
        return vec![T::zero(); out_len];
    }
    let advance: Vec<f64> = (0..n_bins).map(|k| 2.0 * PI * PV_HOP as f64 * k as f64 / PV_FFT as f64).collect();
    let zero = vec![Complex::new(T::zero(), T::zero()); n_bins];
    let mut phase: Vec<f64> = spec[0].iter().map(|c| c.arg().as_f64()).collect();
    let mut out = Vec::new();
    let mut t = 0.0f64;
    while t < n_frames as f64 {
        let i = t.floor() as usize;
        let alpha = t - i as f64;
        let a = &spec[i];
        let b = if i + 1 < n_frames { &spec[i + 1] } else { &zero };
        let frame: Vec<Complex<T>> = (0..n_bins)
            .map(|k| {
                let mag = (1.0 - alpha) * a[k].norm().as_f64() + alpha * b[k].norm().as_f64();
                Complex::new(T::lit(mag * phase[k].cos()), T::lit(mag * phase[k].sin()))
            })
            .collect();
        out.push(frame);
        for k in 0..n_bins {
            let d = b[k].arg().as_f64() - a[k].arg().as_f64() - advance[k];
            phase[k] += advance[k] + wrap_phase(d);
        }
        t += speed;
    }
    let y = stft.inverse(&out, out_len, true);
    y.into_iter().map(|v| if Float::is_finite(v) { v } else { T::zero() }).collect()
}
