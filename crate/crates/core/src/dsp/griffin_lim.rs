//! Mel inversion: filterbank pseudo-inverse followed by Griffin-Lim phase
//! reconstruction.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rustfft::num_complex::Complex;

use super::mel::MelFilterbank;
use super::stft::Stft;
use crate::real::{rng_for, Real};

/// Maps mel magnitudes (`[frame][mel]`) back to non-negative linear
/// magnitudes (`[frame][bin]`) through the Moore-Penrose pseudo-inverse.
pub fn mel_to_linear<T: Real>(fb: &MelFilterbank<T>, mel: &[Vec<T>]) -> Vec<Vec<T>> {
    let (m, k) = (fb.n_mels(), fb.n_bins());
    let w = DMatrix::<f64>::from_row_iterator(m, k, fb.weights().iter().map(|v| v.as_f64()));
    let pinv = w.pseudo_inverse(1e-10).expect("pseudo-inverse of filterbank");
    mel.iter()
        .map(|frame| {
            let v = nalgebra::DVector::from_iterator(m, frame.iter().map(|x| x.as_f64()));
            let lin = &pinv * v;
            lin.iter().map(|&x| T::lit(x.max(0.0))).collect()
        })
        .collect()
}

/// Iterative phase retrieval for a magnitude spectrogram (`[frame][bin]`).
pub fn griffin_lim<T: Real>(stft: &Stft<T>, mag: &[Vec<T>], n_iter: usize, length: usize, seed: u64) -> Vec<T> {
    let mut rng = rng_for(seed, &[0x6711]);
    let mut phase: Vec<Vec<Complex<T>>> = mag
        .iter()
        .map(|f| {
            f.iter()
                .map(|_| {
                    let p: f64 = rng.gen_range(-PI..PI);
                    Complex::new(T::lit(p.cos()), T::lit(p.sin()))
                })
                .collect()
        })
        .collect();
    let combine = |phase: &[Vec<Complex<T>>]| -> Vec<Vec<Complex<T>>> {
        mag.iter().zip(phase).map(|(m, p)| m.iter().zip(p).map(|(&a, &u)| u * a).collect()).collect()
    };
    for _ in 0..n_iter {
        let y = stft.inverse(&combine(&phase), length, true);
        let spec = stft.forward(&y, true);
        for (p, s) in phase.iter_mut().zip(spec) {
            for (pv, sv) in p.iter_mut().zip(s) {
                let n = sv.norm();
                *pv = if n > T::lit(1e-12) { sv / n } else { Complex::new(T::one(), T::zero()) };
            }
        }
    }
    stft.inverse(&combine(&phase), length, true)
}

/// Spectral convergence `||S| - M|_F / |M|_F` between a signal's STFT
/// magnitude and a target magnitude.
pub fn spectral_convergence<T: Real>(stft: &Stft<T>, signal: &[T], target: &[Vec<T>]) -> f64 {
    let got = stft.magnitude(signal, true);
    let (mut num, mut den) = (0.0, 0.0);
    for (g, t) in got.iter().zip(target) {
        for (&a, &b) in g.iter().zip(t) {
            num += (a.as_f64() - b.as_f64()).powi(2);
            den += b.as_f64().powi(2);
        }
    }
    (num / den.max(1e-30)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn griffin_lim_reduces_spectral_error() {
        let stft = Stft::<f64>::new(512, 160);
        let x: Vec<f64> = (0..8000)
            .map(|i| {
                let t = i as f64 / 16000.0;
                (2.0 * PI * 440.0 * t).sin() * 0.5 + (2.0 * PI * 1250.0 * t).sin() * 0.25
            })
            .collect();
        let mag = stft.magnitude(&x, true);
        let rough = griffin_lim(&stft, &mag, 0, x.len(), 1);
        let refined = griffin_lim(&stft, &mag, 30, x.len(), 1);
        let e0 = spectral_convergence(&stft, &rough, &mag);
        let e1 = spectral_convergence(&stft, &refined, &mag);
        assert!(e1 < 0.5 * e0, "{e0} -> {e1}");
    }
}
