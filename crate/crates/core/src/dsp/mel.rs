use crate::real::Real;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, area-normalized, as a dense `[n_mels][n_bins]` matrix.
#[derive(Clone, Debug)]
pub struct MelFilterbank<T> {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<T>,
    centers_hz: Vec<f64>,
}

impl<T: Real> MelFilterbank<T> {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> =
            (0..n_mels + 2).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64)).collect();
        let bin_hz: Vec<f64> = (0..n_bins).map(|k| k as f64 * sample_rate as f64 / n_fft as f64).collect();
        let mut weights = vec![T::zero(); n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let area = 2.0 / (hi - lo);
            for (k, &f) in bin_hz.iter().enumerate() {
                let up = (f - lo) / (c - lo);
                let down = (hi - f) / (hi - c);
                let w = up.min(down).max(0.0);
                weights[m * n_bins + k] = T::lit(w * area);
            }
        }
        Self { n_mels, n_bins, weights, centers_hz: edges[1..=n_mels].to_vec() }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Index of the filter whose centre frequency is closest to `hz`.
    pub fn nearest_filter(&self, hz: f64) -> usize {
        let mut best = 0;
        for (i, &c) in self.centers_hz.iter().enumerate() {
            if (c - hz).abs() < (self.centers_hz[best] - hz).abs() {
                best = i;
            }
        }
        best
    }

    /// Applies the filterbank to one magnitude frame.
    pub fn apply(&self, frame: &[T]) -> Vec<T> {
        assert_eq!(frame.len(), self.n_bins);
        self.weights
            .chunks(self.n_bins)
            .map(|row| row.iter().zip(frame).map(|(&w, &x)| w * x).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 440.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_cover_band_with_unit_area() {
        let fb = MelFilterbank::<f64>::new(16000, 512, 64, 0.0, 8000.0);
        assert_eq!(fb.centers_hz().len(), 64);
        assert!(fb.centers_hz().windows(2).all(|w| w[0] < w[1]));
        // every filter catches at least one FFT bin
        for row in fb.weights().chunks(fb.n_bins()) {
            assert!(row.iter().any(|&w| w > 0.0));
        }
    }
}
