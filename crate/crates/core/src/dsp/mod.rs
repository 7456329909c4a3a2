//! Audio ingestion and the fixed 128 x 87 log-Mel representation.

pub mod mel;
pub mod resample;
pub mod wav;

use std::path::Path;

use crate::error::{Error, Result};

pub use mel::{mel_spectrogram, MelFrontend, MelSpectrogram, N_FRAMES, N_MELS};
pub use resample::{resample, resample_to_44100};
pub use wav::{load_wav, write_wav_f32, write_wav_pcm16};

/// Sample rate every clip is converted to on ingestion.
pub const TARGET_RATE: u32 = 44_100;

/// Mono PCM audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, start + len)`; panics if out of range.
    pub fn segment(&self, start: usize, len: usize) -> Waveform {
        Waveform::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Loads a WAV file and converts it to 44.1 kHz mono.
pub fn load_clip(path: &Path) -> Result<Waveform> {
    resample_to_44100(&load_wav(path)?)
}

/// Exactly one second: shorter clips get trailing zeros, longer ones are truncated.
pub fn fit_to_one_second(w: &Waveform) -> Waveform {
    let n = w.sample_rate as usize;
    let mut samples = w.samples.clone();
    samples.resize(n, 0.0);
    Waveform::new(samples, w.sample_rate)
}

/// Non-overlapping consecutive chunks of `chunk_seconds`; a trailing partial
/// chunk is discarded.
pub fn chunk_clip(w: &Waveform, chunk_seconds: f64) -> Result<Vec<Waveform>> {
    if chunk_seconds <= 0.0 {
        return Err(Error::invalid("chunk length must be positive"));
    }
    let size = (chunk_seconds * w.sample_rate as f64).round() as usize;
    let count = w.samples.len() / size.max(1);
    if size == 0 || count == 0 {
        return Err(Error::Empty(format!(
            "clip of {:.3} s is shorter than one {chunk_seconds} s chunk",
            w.duration()
        )));
    }
    Ok((0..count).map(|i| w.segment(i * size, size)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_pads_and_truncates() {
        let exact = Waveform::new(vec![0.5; 44100], TARGET_RATE);
        assert_eq!(fit_to_one_second(&exact), exact);

        let short = Waveform::new(vec![0.5; 22050], TARGET_RATE);
        let f = fit_to_one_second(&short);
        assert_eq!(f.len(), 44100);
        assert!(f.samples[..22050].iter().all(|&s| s == 0.5));
        assert!(f.samples[22050..].iter().all(|&s| s == 0.0));

        let long = Waveform::new((0..50000).map(|i| i as f32).collect(), TARGET_RATE);
        let f = fit_to_one_second(&long);
        assert_eq!(f.samples, long.samples[..44100]);
    }

    #[test]
    fn chunking_counts() {
        let secs = |s: f64| Waveform::silence((s * 44100.0) as usize, TARGET_RATE);
        assert_eq!(chunk_clip(&secs(5.0), 1.0).unwrap().len(), 5);
        assert_eq!(chunk_clip(&secs(1.0), 1.0).unwrap().len(), 1);
        let c = chunk_clip(&secs(2.5), 1.0).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|w| w.len() == 44100));
        assert!(matches!(chunk_clip(&secs(0.5), 1.0), Err(Error::Empty(_))));
    }

    #[test]
    fn wav_roundtrip_through_own_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let amp = 0.6;
        let w = Waveform::new(
            (0..44100)
                .map(|i| (amp * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 44100.0).sin()) as f32)
                .collect(),
            TARGET_RATE,
        );
        write_wav_pcm16(&path, &w).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 44100);
        assert!((back.peak() - amp as f32).abs() < 1e-3);
        let f32_path = dir.path().join("tone32.wav");
        write_wav_f32(&f32_path, &w).unwrap();
        assert_eq!(load_wav(&f32_path).unwrap(), w);
    }
}
