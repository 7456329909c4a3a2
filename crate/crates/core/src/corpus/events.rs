//! Synthetic clip collections for training embedding generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    make_topics, pseudo_word, synth_chirp, synth_fragment, synth_word, SynthConfig, ToneSignature, TopicConfig,
    CHIRP_SECONDS,
};
use crate::dsp::{Waveform, TARGET_RATE};
use crate::error::Result;
use crate::par;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// One-second tones, one frequency band per class (log-spaced 200 Hz to
/// 4 kHz), with jittered pitch, amplitude and phase plus a little noise.
pub fn synth_tone_dataset(n_classes: usize, per_class: usize, seed: u64) -> Vec<(Waveform, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = TARGET_RATE as usize;
    let mut out = Vec::with_capacity(n_classes * per_class);
    for c in 0..n_classes {
        let base = if n_classes == 1 {
            200.0
        } else {
            200.0 * 20f64.powf(c as f64 / (n_classes - 1) as f64)
        };
        for _ in 0..per_class {
            let f = base * rng.random_range(0.97..1.03);
            let amp = rng.random_range(0.2..0.8);
            let phase = rng.random_range(0.0..TAU);
            let samples = (0..n)
                .map(|i| {
                    let t = i as f64 / TARGET_RATE as f64;
                    (amp * (TAU * f * t + phase).sin() + 0.01 * rng.random_range(-1.0..1.0)) as f32
                })
                .collect();
            out.push((Waveform::new(samples, TARGET_RATE), format!("tone{c}")));
        }
    }
    out
}

pub const SOUND_EVENT_CLASSES: [&str; 8] = [
    "hum", "whistle", "noise", "sweep_up", "sweep_down", "clicks", "voice", "beeps",
];

fn sweep(len: usize, f0: f64, f1: f64, rate: f64) -> Vec<f64> {
    let k = (f1 - f0) / (len as f64 / rate);
    (0..len)
        .map(|i| {
            let t = i as f64 / rate;
            (TAU * (f0 * t + 0.5 * k * t * t)).sin()
        })
        .collect()
}

fn render_event<R: Rng>(class: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let rate = TARGET_RATE as f64;
    let tone = |f: f64| -> Vec<f64> { (0..len).map(|i| (TAU * f * i as f64 / rate).sin()).collect() };
    match class {
        0 => {
            let f0 = rng.random_range(50.0..120.0);
            (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    (1..=4).map(|h| (TAU * f0 * h as f64 * t).sin() / h as f64).sum::<f64>() / 2.0
                })
                .collect()
        }
        1 => {
            let f = rng.random_range(1500.0..3500.0);
            let depth = rng.random_range(0.0..30.0);
            (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    (TAU * f * t + depth / 6.0 * (TAU * 6.0 * t).sin()).sin()
                })
                .collect()
        }
        2 => (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        3 => sweep(len, rng.random_range(300.0..900.0), rng.random_range(2500.0..6000.0), rate),
        4 => sweep(len, rng.random_range(2500.0..6000.0), rng.random_range(300.0..900.0), rate),
        5 => {
            let period = (rng.random_range(0.02..0.08) * rate) as usize;
            let decay = 0.002 * rate;
            (0..len)
                .map(|i| {
                    let k = (i % period) as f64;
                    (-k / decay).exp() * if (i / period).is_multiple_of(2) { 1.0 } else { -1.0 }
                })
                .collect()
        }
        6 => {
            let tone = ToneSignature {
                pitch_scale: rng.random_range(0.6..2.5),
                tilt: rng.random_range(0.5..2.0),
            };
            let word = pseudo_word(rng.random_range(0..2000));
            synth_word(&word, &tone, len, TARGET_RATE)
                .into_iter()
                .map(|v| 2.0 * v as f64)
                .collect()
        }
        _ => {
            let on = tone(rng.random_range(800.0..1200.0));
            let gate = (0.05 * rate) as usize;
            on.into_iter()
                .enumerate()
                .map(|(i, v)| if (i / gate).is_multiple_of(2) { v } else { 0.0 })
                .collect()
        }
    }
}

/// Clips of generic sound events: each clip repeats events of its class with
/// random lengths (0.2 to 0.9 s) separated by short silences.
pub fn synth_sound_events(clips_per_class: usize, seconds: f64, seed: u64) -> Vec<(Waveform, String)> {
    let n = (seconds * TARGET_RATE as f64).round() as usize;
    let jobs: Vec<(usize, usize)> = (0..SOUND_EVENT_CLASSES.len())
        .flat_map(|c| (0..clips_per_class).map(move |k| (c, k)))
        .collect();
    par::map(&jobs, |&(class, k)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((class * clips_per_class + k) as u64 + 1);
        let mut samples = vec![0.0f32; n];
        let mut pos = (rng.random_range(0.0..0.2) * TARGET_RATE as f64) as usize;
        while pos < n {
            let len = ((rng.random_range(0.2..0.9) * TARGET_RATE as f64) as usize).min(n - pos);
            let amp = rng.random_range(0.2..0.6);
            let ev = render_event(class, len, &mut rng);
            let ramp = (0.005 * TARGET_RATE as f64) as usize;
            for (i, v) in ev.into_iter().enumerate() {
                let edge = i.min(len - 1 - i);
                let g = if edge < ramp { edge as f64 / ramp as f64 } else { 1.0 };
                samples[pos + i] = (amp * g * v) as f32;
            }
            pos += len + (rng.random_range(0.05..0.4) * TARGET_RATE as f64) as usize;
        }
        (Waveform::new(samples, TARGET_RATE), SOUND_EVENT_CLASSES[class].to_string())
    })
}

/// `per_word` spoken-style instances of `n_words` pseudo-words, each with a
/// random voice and duration of 0.25 to 0.75 s.
pub fn synth_word_clips(n_words: usize, per_word: usize, seed: u64) -> Vec<(Waveform, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_words * per_word);
    for w in 0..n_words {
        let word = pseudo_word(w);
        for _ in 0..per_word {
            let tone = ToneSignature {
                pitch_scale: rng.random_range(0.7..1.4),
                tilt: rng.random_range(0.5..2.0),
            };
            let len = (rng.random_range(0.25..0.75) * TARGET_RATE as f64) as usize;
            let samples = synth_word(&word, &tone, len, TARGET_RATE);
            out.push((Waveform::new(samples, TARGET_RATE), word.clone()));
        }
    }
    out
}

/// Long topical fragments (120 to 150 s) and chirp jingles for the
/// fragment-part recipe.
pub fn synth_fpc_material(
    n_fragments: usize,
    n_jingles: usize,
    n_topics: usize,
    seed: u64,
) -> Result<(Vec<Waveform>, Vec<Waveform>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<(usize, f64, u64)> = (0..n_fragments)
        .map(|i| (i % n_topics.max(1), rng.random_range(120.0..150.0), rng.random::<u64>()))
        .collect();
    let fragments = par::try_map(&specs, |&(topic, dur, s)| {
        let t = make_topics(topic + 1, &TopicConfig::default(), dur, true).pop().expect("k >= 1");
        synth_fragment(&t, s, &SynthConfig::default()).map(|f| f.audio)
    })?;
    let chirp = synth_chirp((CHIRP_SECONDS * TARGET_RATE as f64) as usize, TARGET_RATE);
    let jingles = (0..n_jingles)
        .map(|_| {
            let mut samples = vec![0.0f32; 2 * TARGET_RATE as usize];
            let mut pos = (rng.random_range(0.0..0.3) * TARGET_RATE as f64) as usize;
            while pos + chirp.len() <= samples.len() {
                samples[pos..pos + chirp.len()].copy_from_slice(&chirp);
                pos += chirp.len() + (rng.random_range(0.05..0.3) * TARGET_RATE as f64) as usize;
            }
            Waveform::new(samples, TARGET_RATE)
        })
        .collect();
    Ok((fragments, jingles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_sec_dataset, build_wc_dataset};

    #[test]
    fn tone_dataset_shape() {
        let clips = synth_tone_dataset(5, 4, 1);
        assert_eq!(clips.len(), 20);
        assert!(clips.iter().all(|(w, _)| w.len() == 44100 && w.peak() <= 1.0));
        assert_eq!(synth_tone_dataset(5, 4, 1), clips);
    }

    #[test]
    fn sound_events_cover_every_chunk() {
        let clips = synth_sound_events(2, 3.0, 7);
        assert_eq!(clips.len(), 16);
        for (w, label) in &clips {
            for c in w.samples.chunks_exact(44100) {
                assert!(c.iter().any(|&s| s.abs() > 0.01), "{label} has a silent second");
            }
            assert!(w.peak() <= 1.0);
        }
        let ds = build_sec_dataset(&clips).unwrap();
        assert_eq!(ds.len(), 48);
        assert_eq!(ds.n_classes(), 8);
    }

    #[test]
    fn word_clips_balanced() {
        let clips = synth_word_clips(20, 3, 2);
        let ds = build_wc_dataset(&clips, 2).unwrap();
        assert_eq!(ds.n_classes(), 20);
        assert_eq!(ds.class_counts(), vec![3; 20]);
    }
}
