//! Run configuration: one TOML document with nested sections, parsed strictly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{BenchmarkConfig, SynthConfig, TopicConfig};
use crate::error::{Error, Result};
use crate::generator::{TaskTag, TrainConfig, VggConfig, EMBED_DIM};
use crate::segmenter::{FeatureConfig, HyperGrid, SegTrainConfig};

pub const DEFAULT_METHODS: [&str; 7] = ["TXT", "SEC", "FPC", "TXT+SEC", "TXT+FPC", "TXT+WC", "ALL"];

fn default_methods() -> Vec<String> {
    DEFAULT_METHODS.iter().map(|s| s.to_string()).collect()
}

fn default_baseline() -> String {
    "TXT".into()
}

fn default_k() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Signed so that a negative value is reported rather than misparsed.
    pub seed: i64,
    #[serde(default)]
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_baseline")]
    pub baseline: String,
    /// WinPR window.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Optional word-vector table (word, tab, 300 floats per line).
    #[serde(default)]
    pub word_table: Option<PathBuf>,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub sec: GeneratorSection,
    #[serde(default)]
    pub fpc: GeneratorSection,
    #[serde(default)]
    pub wc: GeneratorSection,
    #[serde(default)]
    pub segmenter: SegmenterSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Existing corpus to use instead of generating one under `out_dir`.
    pub dir: Option<PathBuf>,
    pub n_shows: usize,
    pub n_topics: usize,
    pub show_duration: f64,
    pub fragment_min_s: f64,
    pub fragment_max_s: f64,
    pub audio_informative: bool,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub synth: SynthConfig,
    pub topics: TopicConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Self {
            dir: None,
            n_shows: b.n_shows,
            n_topics: b.n_topics,
            show_duration: b.show_duration,
            fragment_min_s: b.fragment_min_s,
            fragment_max_s: b.fragment_max_s,
            audio_informative: b.audio_informative,
            test_fraction: b.test_fraction,
            val_fraction: b.val_fraction,
            synth: b.synth,
            topics: b.topics,
        }
    }
}

impl CorpusSection {
    pub fn benchmark(&self, seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            n_shows: self.n_shows,
            n_topics: self.n_topics,
            show_duration: self.show_duration,
            fragment_min_s: self.fragment_min_s,
            fragment_max_s: self.fragment_max_s,
            audio_informative: self.audio_informative,
            seed,
            test_fraction: self.test_fraction,
            val_fraction: self.val_fraction,
            synth: self.synth,
            topics: self.topics.clone(),
        }
    }
}

/// Where a generator comes from and how it is trained. Data fields apply to
/// one task each: `clips_per_class`/`clip_seconds` to SEC, `fragments`,
/// `jingles` and `topics` to FPC, `words`/`per_word`/`min_samples` to WC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    /// Use this trained checkpoint as is.
    pub checkpoint: Option<PathBuf>,
    /// Train from a clip manifest instead of synthetic material.
    pub manifest: Option<PathBuf>,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub fragments: usize,
    pub jingles: usize,
    pub topics: usize,
    pub words: usize,
    pub per_word: usize,
    pub min_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub val_fraction: f64,
    pub vgg: VggConfig,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            manifest: None,
            clips_per_class: 12,
            clip_seconds: 5.0,
            fragments: 8,
            jingles: 4,
            topics: 8,
            words: 40,
            per_word: 6,
            min_samples: 2,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            val_fraction: 0.1,
            vgg: VggConfig::default(),
        }
    }
}

impl GeneratorSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            val_fraction: self.val_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterSection {
    pub epochs: usize,
    pub bptt: usize,
    pub grid: HyperGrid,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        let d = SegTrainConfig::default();
        Self { epochs: d.epochs, bptt: d.bptt, grid: d.grid }
    }
}

impl RunConfig {
    /// The seed, once validation has confirmed it is non-negative.
    pub fn seed(&self) -> u64 {
        self.seed.max(0) as u64
    }

    pub fn feature_configs(&self) -> Result<Vec<FeatureConfig>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn generator(&self, task: &TaskTag) -> &GeneratorSection {
        match task {
            TaskTag::Fpc => &self.fpc,
            TaskTag::Wc => &self.wc,
            _ => &self.sec,
        }
    }

    pub fn seg_train_config(&self) -> SegTrainConfig {
        SegTrainConfig {
            epochs: self.segmenter.epochs,
            bptt: self.segmenter.bptt,
            seed: self.seed(),
            k: self.k,
            grid: self.segmenter.grid.clone(),
        }
    }

    /// Audio tasks any method needs, in block order.
    pub fn needed_tasks(&self) -> Result<Vec<TaskTag>> {
        let cfgs = self.feature_configs()?;
        Ok(crate::segmenter::AUDIO_TASKS
            .iter()
            .filter(|t| cfgs.iter().any(|c| c.audio.contains(t)))
            .cloned()
            .collect())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [
            self.word_table.as_mut(),
            self.corpus.dir.as_mut(),
            self.sec.checkpoint.as_mut(),
            self.sec.manifest.as_mut(),
            self.fpc.checkpoint.as_mut(),
            self.fpc.manifest.as_mut(),
            self.wc.checkpoint.as_mut(),
            self.wc.manifest.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Every range and reference problem, each tagged with its key path.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |key: &str, msg: String| out.push((key.to_string(), msg));
        if self.seed < 0 {
            push("seed", format!("must be non-negative, got {}", self.seed));
        }
        if self.threads == Some(0) {
            push("threads", "must be at least 1".into());
        }
        if self.k == 0 {
            push("k", "must be at least 1".into());
        }
        if self.methods.is_empty() {
            push("methods", "needs at least one method".into());
        }
        let mut seen = std::collections::HashSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            match m.parse::<FeatureConfig>() {
                Ok(c) => {
                    if !seen.insert(c.to_string()) {
                        push(&format!("methods[{i}]"), format!("`{m}` listed twice"));
                    }
                }
                Err(e) => push(&format!("methods[{i}]"), e.to_string()),
            }
        }
        match self.baseline.parse::<FeatureConfig>() {
            Ok(b) if self.methods.len() > 1 && !seen.contains(&b.to_string()) => {
                push("baseline", format!("`{}` is not among the methods", self.baseline))
            }
            Err(e) => push("baseline", e.to_string()),
            _ => {}
        }
        match &self.corpus.dir {
            Some(d) if !d.join("manifest.json").is_file() => {
                push("corpus.dir", format!("{} has no manifest.json", d.display()))
            }
            Some(_) => {}
            None => {
                if let Err(Error::Config { key, message }) = self.corpus.benchmark(self.seed()).validate() {
                    push(&format!("corpus.{key}"), message);
                }
            }
        }
        if let Some(t) = &self.word_table {
            if !t.is_file() {
                push("word_table", format!("{} does not exist", t.display()));
            }
        }
        let needed = self.needed_tasks().unwrap_or_default();
        for task in &needed {
            let name = task.to_string().to_ascii_lowercase();
            let g = self.generator(task);
            if let Some(c) = &g.checkpoint {
                if !c.join("meta.json").is_file() {
                    push(&format!("{name}.checkpoint"), format!("{} has no meta.json", c.display()));
                }
                continue;
            }
            if let Some(m) = &g.manifest {
                if !m.is_file() {
                    push(&format!("{name}.manifest"), format!("{} does not exist", m.display()));
                }
            }
            if let Err(Error::Config { key, message }) = g.train_config(0).validate() {
                push(&format!("{name}.{key}"), message);
            }
            if let Err(e) = g.vgg.validate() {
                push(&format!("{name}.vgg"), e.to_string());
            }
            if g.vgg.embed_dim != EMBED_DIM {
                push(&format!("{name}.vgg.embed_dim"), format!("audio blocks are {EMBED_DIM} wide"));
            }
            if g.manifest.is_none() {
                let zero = match task {
                    TaskTag::Sec => (g.clips_per_class == 0 || !(g.clip_seconds >= 1.0)).then_some("clips_per_class"),
                    TaskTag::Fpc => (g.fragments == 0 || g.jingles == 0 || g.topics == 0).then_some("fragments"),
                    _ => (g.words < 2 || g.per_word < g.min_samples.max(2)).then_some("words"),
                };
                if let Some(k) = zero {
                    push(&format!("{name}.{k}"), "synthetic dataset would be empty or too small".into());
                }
            }
        }
        let seg = SegTrainConfig { k: self.k.max(1), ..self.seg_train_config() };
        if let Err(Error::Config { key, message }) = seg.validate() {
            push(&format!("segmenter.{key}"), message);
        }
        out
    }
}

fn toml_error(e: toml::de::Error) -> Error {
    let message = e.message().to_string();
    let key = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("unknown field"))
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".into());
    Error::Config { key, message: e.to_string().trim().to_string() }
}

/// Parses TOML text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(toml_error)?;
    cfg.resolve_paths(base);
    let problems = cfg.problems();
    if problems.is_empty() {
        return Ok(cfg);
    }
    let keys: Vec<&str> = problems.iter().map(|(k, _)| k.as_str()).collect();
    let message = problems
        .iter()
        .map(|(k, m)| format!("{k}: {m}"))
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::Config { key: keys.join(", "), message })
}

/// Reads, type-checks and range-checks a run config file.
pub fn validate_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}
