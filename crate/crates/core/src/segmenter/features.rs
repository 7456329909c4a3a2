//! Per-token feature matrices: word embeddings and audio embeddings, stacked
//! in the fixed block order text, SEC, FPC, WC.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{fnv1a, LoadedShow};
use crate::dsp::{fit_to_one_second, MelFrontend};
use crate::error::{Error, Result};
use crate::generator::{GeneratorModel, TaskTag, EMBED_DIM};
use crate::par;
use crate::tensor::Tensor;

pub const WORD_DIM: usize = 300;

/// The three audio tasks in block order.
pub const AUDIO_TASKS: [TaskTag; 3] = [TaskTag::Sec, TaskTag::Fpc, TaskTag::Wc];

fn task_rank(t: &TaskTag) -> Option<usize> {
    AUDIO_TASKS.iter().position(|x| x == t)
}

/// Which blocks a feature matrix holds. Written as `TXT`, `SEC`, `TXT+SEC`,
/// ..., with `ALL` for text plus all three audio tasks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeatureConfig {
    pub text: bool,
    /// Audio tasks, kept in block order without repeats.
    pub audio: Vec<TaskTag>,
}

impl FeatureConfig {
    pub fn new(text: bool, mut audio: Vec<TaskTag>) -> Result<Self> {
        if let Some(t) = audio.iter().find(|t| task_rank(t).is_none()) {
            return Err(Error::invalid(format!("no feature block for task {t}")));
        }
        audio.sort_by_key(task_rank);
        audio.dedup();
        if !text && audio.is_empty() {
            return Err(Error::invalid("feature config selects no blocks"));
        }
        Ok(Self { text, audio })
    }

    pub fn text_only() -> Self {
        Self { text: true, audio: Vec::new() }
    }

    pub fn all() -> Self {
        Self { text: true, audio: AUDIO_TASKS.to_vec() }
    }

    pub fn dim(&self) -> usize {
        usize::from(self.text) * WORD_DIM + self.audio.len() * EMBED_DIM
    }
}

impl fmt::Display for FeatureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::all() {
            return f.write_str("ALL");
        }
        let mut parts: Vec<String> = Vec::new();
        if self.text {
            parts.push("TXT".into());
        }
        parts.extend(self.audio.iter().map(|t| t.to_string()));
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for FeatureConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::all());
        }
        let mut text = false;
        let mut audio = Vec::new();
        for part in s.split('+').map(str::trim) {
            match part.to_ascii_uppercase().as_str() {
                "TXT" if !text => text = true,
                "SEC" => audio.push(TaskTag::Sec),
                "FPC" => audio.push(TaskTag::Fpc),
                "WC" => audio.push(TaskTag::Wc),
                _ => return Err(Error::invalid(format!("bad feature block `{part}` in `{s}`"))),
            }
        }
        let n = audio.len();
        let cfg = Self::new(text, audio)?;
        if cfg.audio.len() != n {
            return Err(Error::invalid(format!("repeated feature block in `{s}`")));
        }
        Ok(cfg)
    }
}

impl Serialize for FeatureConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hash-mode word vector: 300 standard normals from a ChaCha8 stream seeded
/// with the word's FNV-1a hash, scaled to unit length.
pub fn word_embedding(word: &str) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word));
    let v: Vec<f64> = (0..WORD_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// Word vectors from an optional external table, falling back to hash mode.
#[derive(Clone, Debug, Default)]
pub struct WordEmbedder {
    table: HashMap<String, Vec<f32>>,
}

impl WordEmbedder {
    pub fn hashed() -> Self {
        Self::default()
    }

    /// Reads a text table: one word per line, a tab, then 300 floats separated
    /// by whitespace. Blank lines are skipped.
    pub fn from_table(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_table(&text).map_err(|e| match e {
            Error::Malformed(m) => Error::malformed(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse_table(text: &str) -> Result<Self> {
        let mut table = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::malformed(format!("line {}: missing tab", n + 1)))?;
            let v = rest
                .split_whitespace()
                .map(|x| x.parse::<f32>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| Error::malformed(format!("line {}: bad number", n + 1)))?;
            if v.len() != WORD_DIM || word.is_empty() {
                return Err(Error::malformed(format!(
                    "line {}: expected a word and {WORD_DIM} values, got {}",
                    n + 1,
                    v.len()
                )));
            }
            table.insert(word.to_string(), v);
        }
        Ok(Self { table })
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    pub fn embed(&self, word: &str) -> Vec<f32> {
        self.table.get(word).cloned().unwrap_or_else(|| word_embedding(word))
    }
}

/// Row-major `rows x cols` features for one show.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub config: FeatureConfig,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.rows, self.cols], self.data.clone()).expect("rows * cols == data.len()")
    }
}

/// Audio embeddings `[m, 30]` for every token of `show`: token audio is
/// zero-padded or cut to one second, turned into a mel spectrogram and run
/// through the generator.
pub fn embed_show_tokens(show: &LoadedShow, generator: &GeneratorModel) -> Result<Tensor<f32>> {
    let idx: Vec<usize> = (0..show.len()).collect();
    let rows = par::try_map(&idx, |&i| {
        let w = fit_to_one_second(&show.token_audio(i)?);
        let spec = MelFrontend::shared().mel_spectrogram(&w)?;
        Ok::<_, Error>(generator.embed(&spec)?.values)
    })?;
    let width = generator.meta.embedding_dim;
    Tensor::new(vec![rows.len(), width], rows.concat())
}

/// Stacks blocks for `words` in the fixed order. `audio` must hold one
/// `[m, 30]` tensor for every audio task in `cfg`; extra entries are ignored.
pub fn assemble_blocks(
    cfg: &FeatureConfig,
    words: &[&str],
    audio: &[(TaskTag, &Tensor<f32>)],
    embedder: &WordEmbedder,
) -> Result<FeatureMatrix> {
    let m = words.len();
    if m == 0 {
        return Err(Error::Empty("show has no tokens".into()));
    }
    let mut blocks: Vec<&Tensor<f32>> = Vec::with_capacity(cfg.audio.len());
    for task in &cfg.audio {
        let t = audio
            .iter()
            .find(|(tag, _)| tag == task)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::invalid(format!("no {task} embeddings supplied")))?;
        if t.shape() != [m, EMBED_DIM] {
            return Err(Error::dim(format!(
                "{task} embeddings {:?} for {m} tokens",
                t.shape()
            )));
        }
        blocks.push(t);
    }
    let cols = cfg.dim();
    let mut data = Vec::with_capacity(m * cols);
    for (i, w) in words.iter().enumerate() {
        if cfg.text {
            data.extend(embedder.embed(w));
        }
        for b in &blocks {
            data.extend_from_slice(&b.data()[i * EMBED_DIM..(i + 1) * EMBED_DIM]);
        }
    }
    Ok(FeatureMatrix { config: cfg.clone(), rows: m, cols, data })
}

/// Features for `show` from text (if `use_text`) and the given generators,
/// whose task tags choose the audio blocks.
pub fn assemble_features(
    show: &LoadedShow,
    generators: &[&GeneratorModel],
    use_text: bool,
    embedder: &WordEmbedder,
) -> Result<FeatureMatrix> {
    let mut tagged = Vec::with_capacity(generators.len());
    for g in generators {
        let tag: TaskTag = g.meta.task_tag.parse()?;
        tagged.push((tag, embed_show_tokens(show, g)?));
    }
    let cfg = FeatureConfig::new(use_text, tagged.iter().map(|(t, _)| t.clone()).collect())?;
    if cfg.audio.len() != tagged.len() {
        return Err(Error::invalid("two generators share a task tag"));
    }
    let refs: Vec<(TaskTag, &Tensor<f32>)> = tagged.iter().map(|(t, e)| (t.clone(), e)).collect();
    assemble_blocks(&cfg, &show.words(), &refs, embedder)
}
