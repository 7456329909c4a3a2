//! On-disk benchmark corpora of synthetic shows.
//!
//! Layout: `<out>/manifest.json` plus one `show_NNN/` directory per show with
//! `show.wav` (44.1 kHz mono PCM16), `tokens.jsonl` and `meta.json`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_show, make_topics, synth_fragment, FragmentSpan, Show, SynthConfig, TopicConfig};
use crate::digest::config_hash;
use crate::dsp::{load_wav, wav, Waveform};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_shows: usize,
    pub n_topics: usize,
    /// Target show length in seconds.
    pub show_duration: f64,
    pub fragment_min_s: f64,
    pub fragment_max_s: f64,
    pub audio_informative: bool,
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub synth: SynthConfig,
    pub topics: TopicConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_shows: 20,
            n_topics: 8,
            show_duration: 120.0,
            fragment_min_s: 15.0,
            fragment_max_s: 30.0,
            audio_informative: true,
            seed: 0,
            test_fraction: 0.25,
            val_fraction: 0.15,
            synth: SynthConfig::default(),
            topics: TopicConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if self.n_shows == 0 {
            return bad("n_shows", "must be at least 1".into());
        }
        if self.n_topics < 2 {
            return bad("n_topics", format!("needs at least 2 topics, got {}", self.n_topics));
        }
        if !(self.show_duration > 0.0) {
            return bad("show_duration", "must be positive".into());
        }
        if !(self.fragment_min_s >= 1.0 && self.fragment_min_s <= self.fragment_max_s) {
            return bad("fragment_min_s", "need 1 <= fragment_min_s <= fragment_max_s".into());
        }
        for (key, v) in [("test_fraction", self.test_fraction), ("val_fraction", self.val_fraction)] {
            if !(0.0..1.0).contains(&v) {
                return bad(key, format!("{v} is outside [0, 1)"));
            }
        }
        if self.test_fraction + self.val_fraction >= 1.0 {
            return bad("test_fraction", "test and validation fractions leave no training shows".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShowEntry {
    pub id: String,
    pub dir: PathBuf,
    pub split: Split,
    pub n_tokens: usize,
    pub n_boundaries: usize,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub config_hash: String,
    pub config: BenchmarkConfig,
    pub shows: Vec<ShowEntry>,
}

impl CorpusManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &ShowEntry> {
        self.shows.iter().filter(move |e| e.split == s)
    }
}

/// One line of `tokens.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub word: String,
    pub t0: f64,
    pub t1: f64,
    pub label: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ShowMeta {
    show_id: String,
    seed: u64,
    config_hash: String,
    topic_sequence: Vec<usize>,
    fragment_spans: Vec<FragmentSpan>,
}

/// A show read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedShow {
    pub id: String,
    pub tokens: Vec<TokenRecord>,
    pub audio: Waveform,
}

impl LoadedShow {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn boundaries(&self) -> Vec<bool> {
        self.tokens.iter().map(|t| t.label == 1).collect()
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.word.as_str()).collect()
    }

    /// Samples `[round(t0 * rate), round(t1 * rate))` of token `i`.
    pub fn token_audio(&self, i: usize) -> Result<Waveform> {
        let t = &self.tokens[i];
        let rate = self.audio.sample_rate as f64;
        let (a, b) = ((t.t0 * rate).round() as usize, (t.t1 * rate).round() as usize);
        if a >= b || b > self.audio.len() {
            return Err(Error::malformed(format!(
                "token {i} span [{}, {}) outside show audio of {:.3} s",
                t.t0,
                t.t1,
                self.audio.duration()
            )));
        }
        Ok(self.audio.segment(a, b - a))
    }
}

pub fn load_show(dir: &Path) -> Result<LoadedShow> {
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tpath = dir.join("tokens.jsonl");
    let text = std::fs::read_to_string(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let tokens = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str::<TokenRecord>(l)
                .map_err(|e| Error::malformed(format!("{}:{}: {e}", tpath.display(), n + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    if tokens.is_empty() {
        return Err(Error::Empty(format!("{} has no tokens", tpath.display())));
    }
    if tokens.iter().any(|t| t.label > 1) {
        return Err(Error::malformed(format!("{}: labels must be 0 or 1", tpath.display())));
    }
    let audio = load_wav(&dir.join("show.wav"))?;
    Ok(LoadedShow { id, tokens, audio })
}

/// Topic order for a show: uniform first topic, then uniform over the topics
/// that differ from the previous one.
pub fn show_topic_sequence<R: Rng>(n_topics: usize, len: usize, rng: &mut R) -> Vec<usize> {
    let mut seq: Vec<usize> = Vec::with_capacity(len);
    for _ in 0..len {
        seq.push(next_topic(n_topics, seq.last().copied(), rng));
    }
    seq
}

fn next_topic<R: Rng>(n_topics: usize, prev: Option<usize>, rng: &mut R) -> usize {
    match prev {
        None => rng.random_range(0..n_topics),
        Some(p) => {
            let t = rng.random_range(0..n_topics - 1);
            if t >= p {
                t + 1
            } else {
                t
            }
        }
    }
}

fn generate_show(cfg: &BenchmarkConfig, index: usize) -> Result<(Show, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let topics = make_topics(cfg.n_topics, &cfg.topics, cfg.fragment_min_s, cfg.audio_informative);
    let mut fragments = Vec::new();
    let mut total = 0.0;
    let mut prev: Option<usize> = None;
    while total < cfg.show_duration || fragments.len() < 2 {
        let topic = next_topic(cfg.n_topics, prev, &mut rng);
        let mut spec = topics[topic].clone();
        if cfg.fragment_min_s < cfg.fragment_max_s {
            spec.duration = rng.random_range(cfg.fragment_min_s..cfg.fragment_max_s);
        }
        let f = synth_fragment(&spec, rng.random(), &cfg.synth)?;
        total += f.duration;
        prev = Some(topic);
        fragments.push(f);
    }
    let topics = fragments.iter().map(|f| f.topic_id).collect();
    Ok((build_show(&fragments, cfg.show_duration)?, topics))
}

fn write_show(dir: &Path, show: &Show, meta: &ShowMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let wav_path = dir.join("show.wav");
    std::fs::write(&wav_path, wav::encode_pcm16(&show.audio)).map_err(|e| Error::io(&wav_path, e))?;
    let mut jsonl = Vec::new();
    for (t, &label) in show.tokens.iter().zip(&show.labels) {
        let rec = TokenRecord {
            word: t.token.word.clone(),
            t0: t.token.t0,
            t1: t.token.t1,
            label,
        };
        serde_json::to_writer(&mut jsonl, &rec)?;
        jsonl.push(b'\n');
    }
    let tpath = dir.join("tokens.jsonl");
    std::fs::write(&tpath, jsonl).map_err(|e| Error::io(&tpath, e))?;
    let mpath = dir.join("meta.json");
    let mut f = std::fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::to_writer_pretty(&mut f, meta)?;
    f.write_all(b"\n").map_err(|e| Error::io(&mpath, e))
}

/// Split assignment: a seeded shuffle, then `round(test_fraction * n)` test
/// shows and `round(val_fraction * n)` validation shows; at least one show is
/// always left for training.
pub fn assign_splits(cfg: &BenchmarkConfig) -> Vec<Split> {
    let n = cfg.n_shows;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_test = ((cfg.test_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let n_val = ((cfg.val_fraction * n as f64).round() as usize).min(n.saturating_sub(1 + n_test));
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_test {
            Split::Test
        } else if rank < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
    }
    splits
}

/// Generates the corpus into `out` and returns its manifest. Shows are built
/// in parallel; each show is a pure function of the config and its index.
pub fn make_benchmark(cfg: &BenchmarkConfig, out: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let splits = assign_splits(cfg);
    let indices: Vec<usize> = (0..cfg.n_shows).collect();
    let shows = par::try_map(&indices, |&i| {
        let (show, topics) = generate_show(cfg, i)?;
        let id = format!("show_{i:03}");
        let meta = ShowMeta {
            show_id: id.clone(),
            seed: cfg.seed,
            config_hash: hash.clone(),
            topic_sequence: topics[..show.fragment_spans.len()].to_vec(),
            fragment_spans: show.fragment_spans.clone(),
        };
        write_show(&out.join(&id), &show, &meta)?;
        Ok::<_, Error>(ShowEntry {
            id: id.clone(),
            dir: PathBuf::from(&id),
            split: splits[i],
            n_tokens: show.tokens.len(),
            n_boundaries: show.labels.iter().map(|&y| y as usize).sum(),
            duration: show.duration(),
        })
    })?;
    let manifest = CorpusManifest {
        seed: cfg.seed,
        config_hash: hash,
        config: cfg.clone(),
        shows,
    };
    let path = out.join(CorpusManifest::FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, informative: bool) -> BenchmarkConfig {
        BenchmarkConfig {
            n_shows: 10,
            n_topics: 5,
            show_duration: 12.0,
            fragment_min_s: 3.0,
            fragment_max_s: 5.0,
            audio_informative: informative,
            seed,
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn writes_all_shows_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_benchmark(&small(3, true), dir.path()).unwrap();
        assert_eq!(m.shows.len(), 10);
        for e in &m.shows {
            let s = load_show(&dir.path().join(&e.dir)).unwrap();
            assert_eq!(s.len(), e.n_tokens);
            assert!(e.duration >= 12.0 && e.duration < 17.0);
            let b = s.boundaries();
            assert!(!b[0]);
            assert_eq!(b.iter().filter(|&&x| x).count(), e.n_boundaries);
            for i in 0..s.len() {
                s.token_audio(i).unwrap();
            }
        }
        assert_eq!(m.split(Split::Test).count(), 3);
        assert_eq!(m.split(Split::Val).count(), 2);
        assert_eq!(m.split(Split::Train).count(), 5);
        assert_eq!(CorpusManifest::read(dir.path()).unwrap(), m);
    }

    #[test]
    fn byte_identical_rerun() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = BenchmarkConfig { n_shows: 3, ..small(11, true) };
        make_benchmark(&cfg, a.path()).unwrap();
        make_benchmark(&cfg, b.path()).unwrap();
        for rel in ["manifest.json", "show_000/show.wav", "show_002/tokens.jsonl", "show_001/meta.json"] {
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
    }

    /// Independent cue detector: a rising sweep crosses zero far more often in
    /// its last quarter than in its first.
    fn looks_like_chirp(w: &Waveform) -> bool {
        let q = w.len() / 4;
        let zc = |s: &[f32]| s.windows(2).filter(|p| (p[0] < 0.0) != (p[1] < 0.0)).count();
        let (a, b) = (zc(&w.samples[..q]), zc(&w.samples[w.len() - q..]));
        b as f64 > 2.5 * a.max(1) as f64
    }

    #[test]
    fn cues_only_when_informative() {
        for informative in [true, false] {
            let dir = tempfile::tempdir().unwrap();
            let cfg = BenchmarkConfig { n_shows: 2, ..small(5, informative) };
            let m = make_benchmark(&cfg, dir.path()).unwrap();
            for e in &m.shows {
                let s = load_show(&dir.path().join(&e.dir)).unwrap();
                let b = s.boundaries();
                for i in 0..s.len() {
                    let chirp = looks_like_chirp(&s.token_audio(i).unwrap());
                    assert_eq!(chirp, informative && (i == 0 || b[i]), "token {i}, informative {informative}");
                }
            }
        }
    }

    #[test]
    fn topic_sequences_never_repeat_adjacent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 2..6 {
            let s = show_topic_sequence(k, 200, &mut rng);
            assert!(s.windows(2).all(|w| w[0] != w[1]));
            assert!(s.iter().all(|&t| t < k));
        }
    }

    #[test]
    fn config_validation() {
        let bad = BenchmarkConfig { n_topics: 1, ..BenchmarkConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "n_topics"));
        let bad = BenchmarkConfig { test_fraction: 0.6, val_fraction: 0.5, ..BenchmarkConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn malformed_tokens_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tokens.jsonl"), "{\"word\":1}\n").unwrap();
        assert!(matches!(load_show(dir.path()), Err(Error::Malformed(_))));
    }
}
