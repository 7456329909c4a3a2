//! Synthetic topical audio with word-level transcripts, concatenated into
//! shows with known topic boundaries.
//!
//! A "word" is a short harmonic tone burst whose fundamental is keyed by the
//! word's hash and colored by its topic's tone signature. Fragments with the
//! cue flag open with a linear chirp token.

mod benchmark;
mod events;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, TARGET_RATE};
use crate::error::{Error, Result};

pub use benchmark::{
    load_show, make_benchmark, show_topic_sequence, BenchmarkConfig, CorpusManifest, LoadedShow,
    ShowEntry, Split, TokenRecord,
};
pub use events::{
    synth_fpc_material, synth_sound_events, synth_tone_dataset, synth_word_clips, SOUND_EVENT_CLASSES,
};

/// 64-bit FNV-1a.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-topic voice: fundamental multiplier and harmonic roll-off exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneSignature {
    pub pitch_scale: f64,
    pub tilt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub topic_id: usize,
    /// Words with unnormalized sampling weights.
    pub vocabulary: Vec<(String, f64)>,
    pub tone: ToneSignature,
    pub boundary_cue: bool,
    /// Target duration in seconds.
    pub duration: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub word_min_s: f64,
    pub word_max_s: f64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            word_min_s: 0.25,
            word_max_s: 0.75,
            sample_rate: TARGET_RATE,
        }
    }
}

pub const CHIRP_SECONDS: f64 = 0.5;
pub const CHIRP_F0: f64 = 500.0;
pub const CHIRP_F1: f64 = 4000.0;
const AMPLITUDE: f64 = 0.5;
const HARMONICS: usize = 8;
const RAMP_S: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    pub word: String,
    /// Span in seconds within the parent audio.
    pub t0: f64,
    pub t1: f64,
    /// Span in samples; `t0 = start / rate`.
    pub start: usize,
    pub len: usize,
    /// True for the chirp token that opens a cued fragment.
    pub cue: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fragment {
    pub topic_id: usize,
    pub tone: ToneSignature,
    pub tokens: Vec<WordToken>,
    pub audio: Waveform,
    pub duration: f64,
}

/// Fundamental in 100..400 Hz from the word hash, scaled by the topic pitch.
pub fn word_f0(word: &str, tone: &ToneSignature) -> f64 {
    (100 + fnv1a(word) % 300) as f64 * tone.pitch_scale
}

fn ramp(i: usize, len: usize, rate: u32) -> f64 {
    let r = ((RAMP_S * rate as f64) as usize).clamp(1, (len / 2).max(1));
    let edge = i.min(len - 1 - i);
    if edge >= r {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / r as f64).cos()
    }
}

/// Harmonic stack for `word` lasting `len` samples. Harmonic `h` has
/// amplitude `h^-tilt`; partials at or above Nyquist are skipped.
pub fn synth_word(word: &str, tone: &ToneSignature, len: usize, rate: u32) -> Vec<f32> {
    let f0 = word_f0(word, tone);
    let nyquist = rate as f64 / 2.0;
    let partials: Vec<(f64, f64)> = (1..=HARMONICS)
        .map(|h| (f0 * h as f64, (h as f64).powf(-tone.tilt)))
        .filter(|(f, _)| *f < nyquist)
        .collect();
    let norm: f64 = partials.iter().map(|(_, a)| a).sum();
    let tau = 2.0 * std::f64::consts::PI;
    (0..len)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let s: f64 = partials.iter().map(|(f, a)| a * (tau * f * t).sin()).sum();
            (AMPLITUDE * ramp(i, len, rate) * s / norm) as f32
        })
        .collect()
}

/// Linear sweep 500 -> 4000 Hz.
pub fn synth_chirp(len: usize, rate: u32) -> Vec<f32> {
    let dur = len as f64 / rate as f64;
    let k = (CHIRP_F1 - CHIRP_F0) / dur;
    let tau = 2.0 * std::f64::consts::PI;
    (0..len)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let phase = tau * (CHIRP_F0 * t + 0.5 * k * t * t);
            (AMPLITUDE * ramp(i, len, rate) * phase.sin()) as f32
        })
        .collect()
}

/// Re-synthesizes a token's samples from its description.
pub fn render_token(token: &WordToken, tone: &ToneSignature, rate: u32) -> Vec<f32> {
    if token.cue {
        synth_chirp(token.len, rate)
    } else {
        synth_word(&token.word, tone, token.len, rate)
    }
}

fn sample_word<'a, R: Rng>(vocab: &'a [(String, f64)], total: f64, rng: &mut R) -> &'a str {
    let mut x = rng.random_range(0.0..total);
    for (w, p) in vocab {
        if x < *p {
            return w;
        }
        x -= p;
    }
    &vocab[vocab.len() - 1].0
}

/// Draws words i.i.d. from the topic vocabulary until the next word would
/// overrun the target duration; the remainder is silence.
pub fn synth_fragment(topic: &TopicSpec, seed: u64, cfg: &SynthConfig) -> Result<Fragment> {
    let total: f64 = topic.vocabulary.iter().map(|(_, p)| p).sum();
    if topic.vocabulary.is_empty() || !(total > 0.0) || topic.vocabulary.iter().any(|(_, p)| *p < 0.0) {
        return Err(Error::invalid(format!("topic {} has an empty vocabulary", topic.topic_id)));
    }
    if !(cfg.word_min_s > 0.0 && cfg.word_min_s <= cfg.word_max_s && cfg.word_max_s <= 1.0) {
        return Err(Error::invalid("word durations must satisfy 0 < min <= max <= 1 s"));
    }
    let rate = cfg.sample_rate;
    let n_total = (topic.duration * rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![0.0f32; n_total];
    let mut tokens = Vec::new();
    let mut pos = 0usize;
    loop {
        let cue = topic.boundary_cue && tokens.is_empty();
        let word = sample_word(&topic.vocabulary, total, &mut rng).to_string();
        let len = if cue {
            (CHIRP_SECONDS * rate as f64).round() as usize
        } else if cfg.word_min_s == cfg.word_max_s {
            (cfg.word_min_s * rate as f64).round() as usize
        } else {
            let d = rng.random_range(cfg.word_min_s..=cfg.word_max_s);
            (d * rate as f64).round() as usize
        };
        if pos + len > n_total {
            break;
        }
        let token = WordToken {
            word,
            t0: pos as f64 / rate as f64,
            t1: (pos + len) as f64 / rate as f64,
            start: pos,
            len,
            cue,
        };
        samples[pos..pos + len].copy_from_slice(&render_token(&token, &topic.tone, rate));
        tokens.push(token);
        pos += len;
    }
    if tokens.is_empty() {
        return Err(Error::Empty(format!(
            "fragment of {} s holds no words",
            topic.duration
        )));
    }
    Ok(Fragment {
        topic_id: topic.topic_id,
        tone: topic.tone,
        tokens,
        audio: Waveform::new(samples, rate),
        duration: n_total as f64 / rate as f64,
    })
}

/// A token placed in show time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShowToken {
    #[serde(flatten)]
    pub token: WordToken,
    pub fragment: usize,
    pub topic_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentSpan {
    pub topic_id: usize,
    /// Token index range `[first, end)`.
    pub first_token: usize,
    pub end_token: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Show {
    pub tokens: Vec<ShowToken>,
    /// 1 on the first token of every non-initial fragment.
    pub labels: Vec<u8>,
    pub audio: Waveform,
    pub fragment_spans: Vec<FragmentSpan>,
}

impl Show {
    pub fn duration(&self) -> f64 {
        self.audio.duration()
    }

    pub fn boundaries(&self) -> Vec<bool> {
        self.labels.iter().map(|&y| y == 1).collect()
    }

    /// Samples of token `i`.
    pub fn token_audio(&self, i: usize) -> Waveform {
        let t = &self.tokens[i].token;
        self.audio.segment(t.start, t.len)
    }
}

/// Concatenates fragments in order until the running duration reaches
/// `target_duration`; the fragment that crosses the target is kept whole.
pub fn build_show(fragments: &[Fragment], target_duration: f64) -> Result<Show> {
    if fragments.len() < 2 {
        return Err(Error::invalid("a show needs at least 2 fragments"));
    }
    if let Some(w) = fragments.windows(2).find(|w| w[0].topic_id == w[1].topic_id) {
        return Err(Error::invalid(format!(
            "adjacent fragments share topic {}",
            w[0].topic_id
        )));
    }
    let rate = fragments[0].audio.sample_rate;
    if fragments.iter().any(|f| f.audio.sample_rate != rate) {
        return Err(Error::invalid("fragments have different sample rates"));
    }
    let mut samples: Vec<f32> = Vec::new();
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut spans = Vec::new();
    for (fi, f) in fragments.iter().enumerate() {
        if samples.len() as f64 / rate as f64 >= target_duration {
            break;
        }
        let offset = samples.len();
        let first = tokens.len();
        for (ti, t) in f.tokens.iter().enumerate() {
            let start = offset + t.start;
            tokens.push(ShowToken {
                token: WordToken {
                    word: t.word.clone(),
                    t0: start as f64 / rate as f64,
                    t1: (start + t.len) as f64 / rate as f64,
                    start,
                    len: t.len,
                    cue: t.cue,
                },
                fragment: fi,
                topic_id: f.topic_id,
            });
            labels.push(u8::from(ti == 0 && fi > 0));
        }
        samples.extend_from_slice(&f.audio.samples);
        spans.push(FragmentSpan {
            topic_id: f.topic_id,
            first_token: first,
            end_token: tokens.len(),
            start_s: offset as f64 / rate as f64,
            end_s: samples.len() as f64 / rate as f64,
        });
    }
    let duration = samples.len() as f64 / rate as f64;
    if duration < 0.1 * target_duration {
        return Err(Error::Empty(format!(
            "fragments exhausted at {duration:.1} s, under 10% of the {target_duration} s target"
        )));
    }
    Ok(Show {
        tokens,
        labels,
        audio: Waveform::new(samples, rate),
        fragment_spans: spans,
    })
}

/// Pronounceable pseudo-word for index `i`.
pub fn pseudo_word(i: usize) -> String {
    const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut n = i;
    let mut w = String::new();
    for _ in 0..3 {
        w.push_str(ONSETS[n % ONSETS.len()]);
        n /= ONSETS.len();
        w.push_str(VOWELS[n % VOWELS.len()]);
        n /= VOWELS.len();
    }
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicConfig {
    /// Words shared by every topic.
    pub shared_words: usize,
    /// Total probability mass of the shared words.
    pub shared_mass: f64,
    /// Topic-specific words per topic.
    pub topic_words: usize,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self {
            shared_words: 20,
            shared_mass: 0.4,
            topic_words: 25,
        }
    }
}

const PITCH_LADDER: [f64; 8] = [0.6, 0.8, 1.0, 1.25, 1.5, 1.8, 2.1, 2.5];
const TILT_LADDER: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// `k` topics with Zipf-weighted vocabularies: a common pool shared by all
/// topics plus a disjoint block of topic-specific words each.
pub fn make_topics(k: usize, cfg: &TopicConfig, duration: f64, boundary_cue: bool) -> Vec<TopicSpec> {
    let zipf = |n: usize, mass: f64| -> Vec<f64> {
        let h: f64 = (1..=n).map(|r| 1.0 / r as f64).sum();
        (1..=n).map(|r| mass / (r as f64 * h)).collect()
    };
    let shared = zipf(cfg.shared_words, cfg.shared_mass);
    let own = zipf(cfg.topic_words, 1.0 - cfg.shared_mass);
    (0..k)
        .map(|t| {
            let mut vocabulary: Vec<(String, f64)> = shared
                .iter()
                .enumerate()
                .map(|(i, &p)| (pseudo_word(i), p))
                .collect();
            let base = cfg.shared_words + t * cfg.topic_words;
            vocabulary.extend(own.iter().enumerate().map(|(i, &p)| (pseudo_word(base + i), p)));
            TopicSpec {
                topic_id: t,
                vocabulary,
                tone: ToneSignature {
                    pitch_scale: PITCH_LADDER[t % PITCH_LADDER.len()],
                    tilt: TILT_LADDER[(t / PITCH_LADDER.len() + t) % TILT_LADDER.len()],
                },
                boundary_cue,
                duration,
            }
        })
        .collect()
}
