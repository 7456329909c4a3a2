//! Log-Mel spectrograms of one-second clips.
//!
//! STFT: 2048-point FFT, hop 512, periodic Hann window, reflect-padded by
//! half a window on both sides, giving 87 frames for 44 100 samples.
//! Filterbank: 128 Slaney-scale triangles over 0-22 050 Hz, area-normalized.
//! Scaling: power to dB relative to the clip maximum, floored at -80 dB, then
//! min-max rescaled to [0, 1].

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Waveform, TARGET_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_FFT: usize = 2048;
pub const HOP: usize = 512;
pub const N_MELS: usize = 128;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const CLIP_SAMPLES: usize = TARGET_RATE as usize;
pub const N_FRAMES: usize = CLIP_SAMPLES / HOP + 1;
pub const TOP_DB: f64 = 80.0;

const _: () = assert!(N_FRAMES == 87);

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney (auditory toolbox) Hz to Mel.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// `n_mels + 2` band edges in Hz, equally spaced on the Mel scale.
pub fn mel_edges_hz(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// One triangular filter stored sparsely.
#[derive(Clone, Debug)]
pub struct MelFilter {
    pub first_bin: usize,
    pub weights: Vec<f64>,
}

/// Slaney-normalized triangular filterbank over `N_BINS` FFT bins.
pub fn mel_filterbank(sample_rate: f64, n_fft: usize, n_mels: usize) -> Vec<MelFilter> {
    let n_bins = n_fft / 2 + 1;
    let edges = mel_edges_hz(n_mels, 0.0, sample_rate / 2.0);
    let freqs: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate / n_fft as f64)
        .collect();
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let enorm = 2.0 / (right - left);
            let dense: Vec<f64> = freqs
                .iter()
                .map(|&f| {
                    let lower = (f - left) / (center - left);
                    let upper = (right - f) / (right - center);
                    lower.min(upper).max(0.0) * enorm
                })
                .collect();
            let first = dense.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = dense.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            MelFilter {
                first_bin: first,
                weights: dense[first..=last.max(first)].to_vec(),
            }
        })
        .collect()
}

/// A 128 x 87 log-Mel matrix, band-major, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn from_values(values: Vec<f32>) -> Result<Self> {
        if values.len() != N_MELS * N_FRAMES {
            return Err(Error::dim(format!(
                "mel spectrogram needs {} values, got {}",
                N_MELS * N_FRAMES,
                values.len()
            )));
        }
        Ok(Self { values })
    }

    pub fn shape(&self) -> (usize, usize) {
        (N_MELS, N_FRAMES)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, band: usize, frame: usize) -> f32 {
        self.values[band * N_FRAMES + frame]
    }

    /// `[1, 128, 87]` network input.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, N_MELS, N_FRAMES], self.values.clone()).expect("fixed shape")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        Self::from_values(t.data().to_vec())
    }
}

/// Reusable STFT + filterbank state.
pub struct MelFrontend {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFrontend {
    pub fn new() -> Self {
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();
        Self {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window,
            filters: mel_filterbank(TARGET_RATE as f64, N_FFT, N_MELS),
        }
    }

    /// Process-wide shared instance.
    pub fn shared() -> &'static MelFrontend {
        static FRONTEND: OnceLock<MelFrontend> = OnceLock::new();
        FRONTEND.get_or_init(MelFrontend::new)
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    fn check(w: &Waveform) -> Result<()> {
        if w.sample_rate != TARGET_RATE || w.samples.len() != CLIP_SAMPLES {
            return Err(Error::dim(format!(
                "mel spectrogram needs {CLIP_SAMPLES} samples at {TARGET_RATE} Hz, got {} at {} Hz",
                w.samples.len(),
                w.sample_rate
            )));
        }
        Ok(())
    }

    /// Power spectrogram `[N_BINS][N_FRAMES]` (bin-major).
    pub fn power_spectrogram(&self, w: &Waveform) -> Result<Vec<f64>> {
        Self::check(w)?;
        let pad = N_FFT / 2;
        let n = w.samples.len();
        let padded: Vec<f64> = (0..n + 2 * pad)
            .map(|i| {
                let j = i as isize - pad as isize;
                let k = if j < 0 {
                    -j
                } else if j >= n as isize {
                    2 * (n as isize - 1) - j
                } else {
                    j
                };
                w.samples[k as usize] as f64
            })
            .collect();
        let mut power = vec![0.0; N_BINS * N_FRAMES];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..N_FRAMES {
            let frame = &padded[t * HOP..t * HOP + N_FFT];
            for ((b, &x), &win) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(x * win, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..N_BINS {
                power[k * N_FRAMES + t] = buf[k].norm_sqr();
            }
        }
        Ok(power)
    }

    /// Mel-band power `[N_MELS][N_FRAMES]` before any log scaling.
    pub fn mel_power(&self, w: &Waveform) -> Result<Vec<f64>> {
        let power = self.power_spectrogram(w)?;
        let mut mel = vec![0.0; N_MELS * N_FRAMES];
        for (m, f) in self.filters.iter().enumerate() {
            let row = &mut mel[m * N_FRAMES..(m + 1) * N_FRAMES];
            for (i, &wt) in f.weights.iter().enumerate() {
                let bin = &power[(f.first_bin + i) * N_FRAMES..][..N_FRAMES];
                row.iter_mut().zip(bin).for_each(|(r, &p)| *r += wt * p);
            }
        }
        Ok(mel)
    }

    pub fn mel_spectrogram(&self, w: &Waveform) -> Result<MelSpectrogram> {
        let mel = self.mel_power(w)?;
        Ok(MelSpectrogram {
            values: normalize_db(&mel),
        })
    }
}

/// dB relative to the maximum, floored at `-TOP_DB`, rescaled to [0, 1].
/// A constant (including all-zero) input maps to all zeros.
fn normalize_db(power: &[f64]) -> Vec<f32> {
    let max = power.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; power.len()];
    }
    let floor = max * 10f64.powf(-TOP_DB / 10.0);
    let db: Vec<f64> = power
        .iter()
        .map(|&p| 10.0 * (p.max(floor) / max).log10())
        .collect();
    let lo = db.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.0; power.len()];
    }
    db.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
}

/// Log-Mel spectrogram of a one-second 44.1 kHz clip.
pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    MelFrontend::shared().mel_spectrogram(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64) -> Waveform {
        Waveform::new(
            (0..CLIP_SAMPLES)
                .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 44100.0).sin()) as f32)
                .collect(),
            TARGET_RATE,
        )
    }

    #[test]
    fn mel_scale_roundtrip_and_anchor() {
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        for hz in [0.0, 50.0, 999.0, 1000.0, 4000.0, 22050.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_is_128_by_87() {
        let s = mel_spectrogram(&tone(440.0, 0.5)).unwrap();
        assert_eq!(s.shape(), (128, 87));
        assert!(s.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_length_rejected() {
        let w = Waveform::new(vec![0.0; 44099], TARGET_RATE);
        assert!(matches!(mel_spectrogram(&w), Err(Error::Dimension(_))));
        let w = Waveform::new(vec![0.0; 44100], 48000);
        assert!(mel_spectrogram(&w).is_err());
    }

    #[test]
    fn silence_maps_to_zeros() {
        let s = mel_spectrogram(&Waveform::new(vec![0.0; CLIP_SAMPLES], TARGET_RATE)).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_lands_in_its_band() {
        let fb = MelFrontend::shared();
        let mel = fb.mel_power(&tone(1000.0, 0.5)).unwrap();
        let energy: Vec<f64> = (0..N_MELS)
            .map(|m| mel[m * N_FRAMES..(m + 1) * N_FRAMES].iter().sum())
            .collect();
        let argmax = energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // the band whose center is nearest 1 kHz, from the edge computation alone
        let edges = mel_edges_hz(N_MELS, 0.0, 22050.0);
        let nearest = (0..N_MELS)
            .min_by(|&a, &b| {
                (edges[a + 1] - 1000.0)
                    .abs()
                    .partial_cmp(&(edges[b + 1] - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        assert!(edges[argmax] < 1000.0 && 1000.0 < edges[argmax + 2]);
        assert!(argmax.abs_diff(nearest) <= 1);
    }

    #[test]
    fn filterbank_nonnegative_without_holes() {
        let fb = mel_filterbank(44100.0, N_FFT, N_MELS);
        let mut total = vec![0.0; N_BINS];
        for f in &fb {
            assert!(f.weights.iter().all(|&w| w >= 0.0));
            for (i, &w) in f.weights.iter().enumerate() {
                total[f.first_bin + i] += w;
            }
        }
        let edges = mel_edges_hz(N_MELS, 0.0, 22050.0);
        let bin_hz = 44100.0 / N_FFT as f64;
        for (k, &t) in total.iter().enumerate() {
            let f = k as f64 * bin_hz;
            if f >= edges[1] && f <= edges[N_MELS] {
                assert!(t > 0.0, "hole at bin {k}");
            }
        }
    }

    #[test]
    fn amplitude_scale_invariance() {
        let base = tone(700.0, 0.3);
        let a = mel_spectrogram(&base).unwrap();
        for c in [1e-3f32, 0.5, 3.0] {
            let scaled = Waveform::new(base.samples.iter().map(|s| s * c).collect(), TARGET_RATE);
            let b = mel_spectrogram(&scaled).unwrap();
            let worst = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(worst < 1e-5, "c={c}: {worst}");
        }
    }

    #[test]
    fn adding_tone_raises_band_energy() {
        let fb = MelFrontend::shared();
        let silent = fb
            .mel_power(&Waveform::new(vec![0.0; CLIP_SAMPLES], TARGET_RATE))
            .unwrap();
        let loud = fb.mel_power(&tone(2500.0, 0.1)).unwrap();
        let edges = mel_edges_hz(N_MELS, 0.0, 22050.0);
        let band = (0..N_MELS)
            .find(|&m| edges[m] < 2500.0 && 2500.0 < edges[m + 2] && edges[m + 1] <= 2500.0)
            .unwrap();
        let e = |v: &[f64]| -> f64 { v[band * N_FRAMES..(band + 1) * N_FRAMES].iter().sum() };
        assert!(e(&loud) > e(&silent));
    }
}
