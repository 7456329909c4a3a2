//! Polyphase windowed-sinc resampling.

use super::{Waveform, TARGET_RATE};
use crate::error::{Error, Result};

/// Taps per polyphase branch.
pub const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.9;
pub const MIN_INPUT_RATE: u32 = 8000;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// A rational-ratio resampler `up/down` with a Kaiser-windowed sinc bank.
pub struct Resampler {
    up: usize,
    down: usize,
    bank: Vec<[f64; TAPS]>,
}

impl Resampler {
    pub fn new(from_rate: u32, to_rate: u32) -> Result<Self> {
        if from_rate == 0 || to_rate == 0 {
            return Err(Error::invalid("sample rates must be positive"));
        }
        let g = gcd(from_rate as u64, to_rate as u64);
        let up = (to_rate as u64 / g) as usize;
        let down = (from_rate as u64 / g) as usize;
        // cutoff in cycles per input sample
        let cutoff = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
        let half = (TAPS / 2) as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let bank = (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                let mut taps = [0.0; TAPS];
                for (k, tap) in taps.iter_mut().enumerate() {
                    // distance from the output instant to input sample `base - (TAPS/2 - 1) + k`
                    let tau = frac + half - 1.0 - k as f64;
                    let arg = 2.0 * cutoff * tau;
                    let sinc = if arg.abs() < 1e-12 {
                        1.0
                    } else {
                        (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
                    };
                    let r = tau / half;
                    let window = if r.abs() <= 1.0 {
                        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                    } else {
                        0.0
                    };
                    *tap = 2.0 * cutoff * sinc * window;
                }
                let dc: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= dc);
                taps
            })
            .collect();
        Ok(Self { up, down, bank })
    }

    pub fn ratio(&self) -> (usize, usize) {
        (self.up, self.down)
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        let n_out = (input.len() * self.up).div_ceil(self.down);
        let lead = TAPS as isize / 2 - 1;
        (0..n_out)
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as isize;
                let taps = &self.bank[pos % self.up];
                let first = base - lead;
                let mut acc = 0.0f64;
                for (k, &t) in taps.iter().enumerate() {
                    let idx = first + k as isize;
                    if idx >= 0 && (idx as usize) < input.len() {
                        acc += t * input[idx as usize] as f64;
                    }
                }
                acc as f32
            })
            .collect()
    }
}

/// Converts any supported rate to 44.1 kHz. Input already at 44.1 kHz is returned as-is.
pub fn resample_to_44100(w: &Waveform) -> Result<Waveform> {
    resample(w, TARGET_RATE)
}

pub fn resample(w: &Waveform, to_rate: u32) -> Result<Waveform> {
    if w.sample_rate < MIN_INPUT_RATE {
        return Err(Error::Unsupported(format!(
            "sample rate {} Hz is below {MIN_INPUT_RATE} Hz",
            w.sample_rate
        )));
    }
    if w.sample_rate == to_rate {
        return Ok(w.clone());
    }
    let r = Resampler::new(w.sample_rate, to_rate)?;
    Ok(Waveform::new(r.process(&w.samples), to_rate))
}
