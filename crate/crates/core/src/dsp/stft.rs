use std::f64::consts::PI;
use std::sync::Arc;

use num_traits::Float;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::real::Real;

/// Periodic Hann window.
pub fn hann_window<T: Real>(n: usize) -> Vec<T> {
    (0..n).map(|i| T::lit(0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())).collect()
}

/// Short-time Fourier transform with a Hann window and optional centring
/// (reflect padding by `n_fft / 2` on both sides).
pub struct Stft<T: Real> {
    n_fft: usize,
    hop: usize,
    window: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Stft<T> {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        assert!(n_fft >= 2 && hop >= 1);
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann_window(n_fft),
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize, center: bool) -> usize {
        let padded = if center { len + self.n_fft } else { len };
        if padded < self.n_fft {
            0
        } else {
            1 + (padded - self.n_fft) / self.hop
        }
    }

    fn pad(&self, x: &[T], center: bool) -> Vec<T> {
        if !center {
            return x.to_vec();
        }
        let p = self.n_fft / 2;
        let mut out = Vec::with_capacity(x.len() + 2 * p);
        if x.len() > p {
            out.extend((1..=p).rev().map(|i| x[i]));
            out.extend_from_slice(x);
            out.extend((0..p).map(|i| x[x.len() - 2 - i]));
        } else {
            out.resize(p, T::zero());
            out.extend_from_slice(x);
            out.resize(x.len() + 2 * p, T::zero());
        }
        out
    }

    /// Complex spectra, one `Vec` of `n_fft/2 + 1` bins per frame.
    pub fn forward(&self, x: &[T], center: bool) -> Vec<Vec<Complex<T>>> {
        let padded = self.pad(x, center);
        let frames = self.n_frames(x.len(), center);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.n_fft];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fwd.get_inplace_scratch_len()];
        (0..frames)
            .map(|f| {
                let start = f * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(padded[start + i] * self.window[i], T::zero());
                }
                self.fwd.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Magnitude spectrogram laid out `[frame][bin]`.
    pub fn magnitude(&self, x: &[T], center: bool) -> Vec<Vec<T>> {
        self.forward(x, center)
            .into_iter()
            .map(|frame| frame.into_iter().map(|c| c.norm()).collect())
            .collect()
    }

    /// Weighted overlap-add inverse, trimmed or zero-padded to `length`.
    pub fn inverse(&self, frames: &[Vec<Complex<T>>], length: usize, center: bool) -> Vec<T> {
        let n = self.n_fft;
        let total = n + self.hop * frames.len().saturating_sub(1);
        let mut out = vec![T::zero(); total];
        let mut norm = vec![T::zero(); total];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.inv.get_inplace_scratch_len()];
        let scale = T::one() / T::lit(n as f64);
        for (f, spec) in frames.iter().enumerate() {
            assert_eq!(spec.len(), self.n_bins(), "frame bin count");
            for k in 0..n {
                buf[k] = if k < spec.len() { spec[k] } else { spec[n - k].conj() };
            }
            buf[0].im = T::zero();
            if n % 2 == 0 {
                buf[n / 2].im = T::zero();
            }
            self.inv.process_with_scratch(&mut buf, &mut scratch);
            let start = f * self.hop;
            for i in 0..n {
                out[start + i] += buf[i].re * scale * self.window[i];
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        let floor = T::lit(1e-8);
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > floor {
                *o /= *w;
            }
        }
        let offset = if center { n / 2 } else { 0 };
        let mut y: Vec<T> = out.into_iter().skip(offset).take(length).collect();
        y.resize(length, T::zero());
        y
    }
}

/// Index of the largest magnitude bin of a real signal's spectrum.
pub fn dominant_bin<T: Real>(x: &[T]) -> usize {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(x.len());
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft.process(&mut buf);
    let half = x.len() / 2 + 1;
    let mut best = 0;
    for k in 1..half {
        if Float::abs(buf[k].norm()) > buf[best].norm() {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_for_two_seconds() {
        let s = Stft::<f32>::new(512, 160);
        assert_eq!(s.n_frames(32000, true), 201);
    }

    #[test]
    fn inverse_reconstructs_signal() {
        let s = Stft::<f64>::new(512, 128);
        let x: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.031).sin() + 0.3 * (i as f64 * 0.17).cos()).collect();
        let spec = s.forward(&x, true);
        let y = s.inverse(&spec, x.len(), true);
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "max error {err}");
    }
}
