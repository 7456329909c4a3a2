//! `audioseg`: every workbench stage as a subcommand.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use audioseg_core::corpus::{load_show, make_benchmark, BenchmarkConfig, CorpusManifest, LoadedShow, Split};
use audioseg_core::dsp::{chunk_clip, fit_to_one_second, load_clip, write_wav_pcm16, MelFrontend, MelSpectrogram};
use audioseg_core::eval::{winpr, WinPRResult};
use audioseg_core::generator::{train_generator_with, ClipEntry, ClipManifest, GeneratorModel, TaskTag, VggConfig};
use audioseg_core::pipeline::{
    read_results, render_markdown, run_experiment, score_table, synthetic_clips,
    validate_config, with_macro, write_results, GeneratorSection, ResultRow,
};
use audioseg_core::segmenter::{
    assemble_blocks, embed_show_tokens, train_segmenter, FeatureConfig, HyperGrid, SegTrainConfig, SegmenterModel,
    TrainingShow, WordEmbedder,
};
use audioseg_core::stats::test_report;
use audioseg_core::tensor::{tnsr, Tensor};
use audioseg_core::{par, Error};

#[derive(Parser, Debug)]
#[command(name = "audioseg", version, about = "Audio-embedding topic segmentation workbench")]
struct Cli {
    /// Seed for every random choice (overrides the config file's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert WAV files to mel spectrogram TNSR files.
    Preprocess {
        /// WAV file or directory of WAV files.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory for `.tnsr` files.
        #[arg(long)]
        out: PathBuf,
        /// Split long clips into one-second chunks instead of truncating.
        #[arg(long)]
        chunk: bool,
    },
    /// Write a synthetic clip dataset (WAV files plus manifest.json) for a generator task.
    MakeDataset {
        /// SEC, FPC or WC.
        #[arg(long)]
        task: TaskTag,
        #[arg(long)]
        out: PathBuf,
        /// SEC: clips per sound-event class.
        #[arg(long)]
        clips_per_class: Option<usize>,
        /// WC: distinct words.
        #[arg(long)]
        words: Option<usize>,
        /// FPC: programme fragments.
        #[arg(long)]
        fragments: Option<usize>,
    },
    /// Generate a synthetic show corpus.
    MakeCorpus(MakeCorpusArgs),
    /// Train an embedding generator from a clip manifest.
    TrainGenerator(TrainGeneratorArgs),
    /// Compute audio embeddings for a corpus or a directory of clips.
    Embed {
        /// Generator checkpoint directory.
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus directory, or a directory of `.wav` / `.tnsr` clips.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a segmenter on a corpus's train and validation shows.
    TrainSeg(TrainSegArgs),
    /// Predict boundaries for one show.
    Predict {
        /// Segmenter checkpoint directory.
        #[arg(long)]
        ckpt: PathBuf,
        /// Show directory inside a corpus.
        #[arg(long)]
        show: PathBuf,
        /// JSONL output, one `{index, prob, boundary}` object per token.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        features: FeatureSources,
    },
    /// Score predictions against a corpus with WinPR@k.
    Eval {
        /// `PATH` or `METHOD=PATH`; a path is a prediction file named after its show or a directory of them.
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<String>,
        /// Corpus directory holding the reference labels.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Method name for predictions given without `METHOD=`.
        #[arg(long, default_value = "model")]
        method: String,
    },
    /// Friedman aligned ranks and Bonferroni-Dunn tests over a results table.
    Stats {
        /// Results table written by `eval` or `run`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "TXT")]
        baseline: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full experiment described by --config.
    Run {
        /// Config path (alternative to the global --config).
        path: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct MakeCorpusArgs {
    /// Number of shows.
    #[arg(long)]
    shows: usize,
    /// Number of topics.
    #[arg(long)]
    topics: usize,
    /// Target show length in seconds.
    #[arg(long)]
    duration: f64,
    /// Open every fragment with a chirp cue.
    #[arg(long)]
    audio_informative: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainGeneratorArgs {
    /// Task tag stored in the checkpoint (SEC, FPC, WC or a custom name).
    #[arg(long)]
    task: TaskTag,
    /// Clip manifest (see make-dataset).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Network shape as JSON (fields of the VGG config); defaults to the full network.
    #[arg(long)]
    vgg: Option<String>,
}

#[derive(Args, Debug)]
struct FeatureSources {
    /// `TASK=CHECKPOINT` for each audio block the features need.
    #[arg(long = "generator")]
    generators: Vec<String>,
    /// Word-vector table; hash vectors otherwise.
    #[arg(long)]
    word_table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainSegArgs {
    /// Corpus directory (see make-corpus).
    #[arg(long)]
    corpus: PathBuf,
    /// Feature blocks, e.g. `txt`, `txt+sec`, `all`.
    #[arg(long)]
    features: FeatureConfig,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sources: FeatureSources,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Hidden sizes to search, comma separated [default: 32,64,128].
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Learning rates to search [default: 0.001,0.0001].
    #[arg(long, value_delimiter = ',')]
    lr: Option<Vec<f64>>,
    /// Decision thresholds to search [default: 0.3,0.5,0.7].
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = par::set_threads(n) {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Core(Error::Io { path: path.to_path_buf(), source: e })
}

fn create_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    write_text(path, &(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n"))
}

/// Files in `dir` with extension `ext`, sorted by name.
fn files_with_ext(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn dispatch(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Preprocess { input, out, chunk } => preprocess(&input, &out, chunk),
        Command::MakeDataset { task, out, clips_per_class, words, fragments } => {
            let mut g = GeneratorSection::default();
            g.clips_per_class = clips_per_class.unwrap_or(g.clips_per_class);
            g.words = words.unwrap_or(g.words);
            g.fragments = fragments.unwrap_or(g.fragments);
            make_dataset(&task, &g, seed.unwrap_or(0), &out)
        }
        Command::MakeCorpus(a) => {
            let d = BenchmarkConfig::default();
            let cfg = BenchmarkConfig {
                n_shows: a.shows,
                n_topics: a.topics,
                show_duration: a.duration,
                audio_informative: a.audio_informative,
                seed: seed.unwrap_or(0),
                test_fraction: a.test_fraction.unwrap_or(d.test_fraction),
                val_fraction: a.val_fraction.unwrap_or(d.val_fraction),
                ..d
            };
            let m = make_benchmark(&cfg, &a.out)?;
            let count = |s: Split| m.split(s).count();
            println!(
                "{} shows ({} train, {} val, {} test) in {}",
                m.shows.len(),
                count(Split::Train),
                count(Split::Val),
                count(Split::Test),
                a.out.display()
            );
            Ok(())
        }
        Command::TrainGenerator(a) => train_generator_cmd(a, seed.unwrap_or(0)),
        Command::Embed { ckpt, input, out } => embed(&ckpt, &input, &out),
        Command::TrainSeg(a) => train_seg(a, seed.unwrap_or(0)),
        Command::Predict { ckpt, show, out, features } => predict(&ckpt, &show, &out, &features),
        Command::Eval { pred, reference, k, out, method } => eval(&pred, &reference, k, &out, &method),
        Command::Stats { results, baseline, out } => stats(&results, &baseline, &out),
        Command::Run { path } => {
            let path = path
                .or(cli.config)
                .ok_or_else(|| usage("run needs a config file (--config PATH)"))?;
            let mut cfg = validate_config(&path)?;
            if let Some(s) = seed {
                cfg.seed = i64::try_from(s).map_err(|_| usage("--seed is too large"))?;
            }
            if let (Some(n), None) = (cfg.threads, cli.threads) {
                if let Err(e) = par::set_threads(n) {
                    eprintln!("warning: could not size the thread pool: {e}");
                }
            }
            let report = run_experiment(&cfg, &log)?;
            print!("{}", render_markdown(&report));
            Ok(())
        }
    }
}

fn preprocess(input: &Path, out: &Path, chunk: bool) -> CliResult {
    let files = files_with_ext(input, "wav")?;
    if files.is_empty() {
        return Err(Error::Empty(format!("no .wav files in {}", input.display())).into());
    }
    create_dir(out)?;
    let written = par::try_map(&files, |f| -> Result<usize, Error> {
        let w = load_clip(f)?;
        let pieces = if chunk && w.duration() > 1.0 { chunk_clip(&w, 1.0)? } else { vec![fit_to_one_second(&w)] };
        let single = pieces.len() == 1;
        for (i, p) in pieces.iter().enumerate() {
            let spec = MelFrontend::shared().mel_spectrogram(p)?;
            let name = if single { format!("{}.tnsr", stem(f)) } else { format!("{}_{i:03}.tnsr", stem(f)) };
            tnsr::write(&out.join(name), &spec.to_tensor())?;
        }
        Ok(pieces.len())
    })?;
    println!("{} spectrograms from {} files", written.iter().sum::<usize>(), files.len());
    Ok(())
}

fn make_dataset(task: &TaskTag, g: &GeneratorSection, seed: u64, out: &Path) -> CliResult {
    if matches!(task, TaskTag::Custom(_)) {
        return Err(usage("--task must be sec, fpc or wc"));
    }
    let clips = synthetic_clips(task, g, seed)?;
    create_dir(&out.join("clips"))?;
    let entries = par::try_map(&clips.iter().enumerate().collect::<Vec<_>>(), |(i, (w, label))| {
        let rel = PathBuf::from("clips").join(format!("clip_{i:05}.wav"));
        write_wav_pcm16(&out.join(&rel), w)?;
        Ok::<_, Error>(ClipEntry { path: rel, label: label.clone() })
    })?;
    let manifest = ClipManifest { task: task.clone(), clips: entries };
    manifest.write(&out.join("manifest.json"))?;
    println!("{} {task} clips in {}", manifest.clips.len(), out.display());
    Ok(())
}

fn train_generator_cmd(a: TrainGeneratorArgs, seed: u64) -> CliResult {
    let vgg: VggConfig = match &a.vgg {
        Some(s) => serde_json::from_str(s).map_err(|e| usage(format!("--vgg: {e}")))?,
        None => VggConfig::default(),
    };
    let m = ClipManifest::read(&a.data)?;
    if m.task != a.task {
        return Err(usage(format!("manifest holds {} clips but --task is {}", m.task, a.task)));
    }
    let base = a.data.parent().unwrap_or(Path::new("."));
    let g = GeneratorSection {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        val_fraction: a.val_fraction,
        ..GeneratorSection::default()
    };
    let ds = m.build(base, seed, g.min_samples)?;
    let cfg = g.train_config(seed);
    eprintln!("{} items, {} classes", ds.len(), ds.n_classes());
    let out = train_generator_with(&ds, &vgg, &cfg, |l| {
        eprintln!(
            "epoch {:>4}  loss {:.4}  train {:.3}  val {:.3}",
            l.epoch, l.train_loss, l.train_accuracy, l.val_accuracy
        )
    })?;
    create_dir(&a.out)?;
    out.model.save(&a.out)?;
    println!(
        "saved {} generator to {} (best epoch {}, val accuracy {:.3})",
        a.task,
        a.out.display(),
        out.best_epoch,
        out.model.meta.val_accuracy
    );
    Ok(())
}

fn embed(ckpt: &Path, input: &Path, out: &Path) -> CliResult {
    let model = GeneratorModel::load(ckpt)?;
    create_dir(out)?;
    if input.join(CorpusManifest::FILE).is_file() {
        let m = CorpusManifest::read(input)?;
        for e in &m.shows {
            let show = load_show(&input.join(&e.dir))?;
            tnsr::write(&out.join(format!("{}.tnsr", e.id)), &embed_show_tokens(&show, &model)?)?;
        }
        println!("token embeddings for {} shows in {}", m.shows.len(), out.display());
        return Ok(());
    }
    let mut files = files_with_ext(input, "wav")?;
    files.extend(files_with_ext(input, "tnsr")?);
    if files.is_empty() {
        return Err(Error::Empty(format!("no corpus, .wav or .tnsr files in {}", input.display())).into());
    }
    let done = par::try_map(&files, |f| -> Result<(), Error> {
        let spec = if f.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            MelFrontend::shared().mel_spectrogram(&fit_to_one_second(&load_clip(f)?))?
        } else {
            MelSpectrogram::from_tensor(&tnsr::read(f)?)?
        };
        let e = model.embed(&spec)?;
        tnsr::write(&out.join(format!("{}.tnsr", stem(f))), &Tensor::from_vec(e.values))
    })?;
    println!("{} embeddings in {}", done.len(), out.display());
    Ok(())
}

fn load_generators(specs: &[String]) -> CliResult<Vec<(TaskTag, GeneratorModel)>> {
    specs
        .iter()
        .map(|s| {
            let (task, path) = s
                .split_once('=')
                .ok_or_else(|| usage(format!("--generator `{s}` is not TASK=CHECKPOINT")))?;
            let task: TaskTag = task.parse()?;
            Ok((task, GeneratorModel::load(Path::new(path))?))
        })
        .collect()
}

fn word_embedder(table: &Option<PathBuf>) -> CliResult<WordEmbedder> {
    Ok(match table {
        Some(p) => WordEmbedder::from_table(p)?,
        None => WordEmbedder::hashed(),
    })
}

fn show_features(
    show: &LoadedShow,
    fc: &FeatureConfig,
    generators: &[(TaskTag, GeneratorModel)],
    embedder: &WordEmbedder,
) -> CliResult<TrainingShow> {
    let mut audio = Vec::new();
    for task in &fc.audio {
        let g = generators
            .iter()
            .find(|(t, _)| t == task)
            .map(|(_, g)| g)
            .ok_or_else(|| usage(format!("features need --generator {}=CHECKPOINT", task.to_string().to_ascii_lowercase())))?;
        audio.push((task.clone(), embed_show_tokens(show, g)?));
    }
    let refs: Vec<(TaskTag, &Tensor<f32>)> = audio.iter().map(|(t, e)| (t.clone(), e)).collect();
    let fm = assemble_blocks(fc, &show.words(), &refs, embedder)?;
    Ok(TrainingShow::new(fm, show.tokens.iter().map(|t| t.label).collect())?)
}

fn train_seg(a: TrainSegArgs, seed: u64) -> CliResult {
    let m = CorpusManifest::read(&a.corpus)?;
    let generators = load_generators(&a.sources.generators)?;
    let embedder = word_embedder(&a.sources.word_table)?;
    let build = |split: Split| -> CliResult<Vec<TrainingShow>> {
        m.split(split)
            .map(|e| show_features(&load_show(&a.corpus.join(&e.dir))?, &a.features, &generators, &embedder))
            .collect()
    };
    let (train, val) = (build(Split::Train)?, build(Split::Val)?);
    let d = HyperGrid::default();
    let cfg = SegTrainConfig {
        epochs: a.epochs,
        seed,
        k: a.k,
        grid: HyperGrid {
            hidden: a.hidden.unwrap_or(d.hidden),
            lr: a.lr.unwrap_or(d.lr),
            tau: a.tau.unwrap_or(d.tau),
        },
        ..SegTrainConfig::default()
    };
    cfg.validate()?;
    let out = train_segmenter(&train, &val, &cfg)?;
    for g in &out.grid {
        eprintln!("u={:<4} lr={:<8} tau={}  val F1 {:.4} (epoch {})", g.u, g.lr, g.tau, g.val_f1, g.best_epoch);
    }
    create_dir(&a.out)?;
    out.model.save(&a.out)?;
    let meta = &out.model.meta;
    println!(
        "{}: u={} lr={} tau={} val F1 {:.4}; saved to {}",
        meta.feature_cfg,
        meta.u,
        meta.lr,
        meta.tau,
        meta.val_f1,
        a.out.display()
    );
    Ok(())
}

fn predict(ckpt: &Path, show_dir: &Path, out: &Path, sources: &FeatureSources) -> CliResult {
    let model = SegmenterModel::load(ckpt)?;
    let show = load_show(show_dir)?;
    let generators = load_generators(&sources.generators)?;
    let embedder = word_embedder(&sources.word_table)?;
    let ts = show_features(&show, &model.meta.feature_cfg, &generators, &embedder)?;
    let p = model.predict(&ts.features)?;
    let mut text = String::new();
    for (i, (&prob, &boundary)) in p.probs.iter().zip(&p.boundaries).enumerate() {
        text.push_str(&json!({ "index": i, "prob": prob, "boundary": boundary }).to_string());
        text.push('\n');
    }
    write_text(out, &text)?;
    println!(
        "{} tokens, {} predicted boundaries -> {}",
        p.probs.len(),
        p.boundaries.iter().filter(|&&b| b).count(),
        out.display()
    );
    Ok(())
}

fn read_prediction(path: &Path) -> CliResult<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(Error::from)?;
        let (index, boundary) = (v["index"].as_u64(), v["boundary"].as_bool());
        match (index, boundary) {
            (Some(i), Some(b)) if i as usize == out.len() => out.push(b),
            _ => {
                return Err(Error::Malformed(format!(
                    "{}:{}: expected {{index, prob, boundary}} with consecutive indices",
                    path.display(),
                    n + 1
                ))
                .into())
            }
        }
    }
    Ok(out)
}

fn eval(preds: &[String], reference: &Path, k: usize, out: &Path, default_method: &str) -> CliResult {
    let m = CorpusManifest::read(reference)?;
    let mut per_method: Vec<(String, Vec<ResultRow>)> = Vec::new();
    for spec in preds {
        let (method, path) = match spec.split_once('=') {
            Some((meth, p)) => (meth.to_string(), PathBuf::from(p)),
            None => (default_method.to_string(), PathBuf::from(spec)),
        };
        let files = if path.is_dir() { files_with_ext(&path, "jsonl")? } else { vec![path.clone()] };
        let idx = match per_method.iter().position(|(mm, _)| *mm == method) {
            Some(i) => i,
            None => {
                per_method.push((method.clone(), Vec::new()));
                per_method.len() - 1
            }
        };
        for f in files {
            let id = stem(&f);
            let entry = m
                .shows
                .iter()
                .find(|e| e.id == id)
                .ok_or_else(|| usage(format!("{} does not name a show in {}", f.display(), reference.display())))?;
            let show = load_show(&reference.join(&entry.dir))?;
            let hyp = read_prediction(&f)?;
            let w: WinPRResult = winpr(&show.boundaries(), &hyp, k)?;
            per_method[idx].1.push(ResultRow {
                show_id: id,
                method: method.clone(),
                precision: w.precision,
                recall: w.recall,
                f1: w.f1,
            });
        }
    }
    let mut rows = Vec::new();
    for (method, mut r) in per_method {
        if r.is_empty() {
            return Err(usage(format!("no prediction files for {method}")));
        }
        r.sort_by(|a, b| a.show_id.cmp(&b.show_id));
        let macro_row = with_macro(&method, r);
        let last = macro_row.last().expect("macro row");
        println!("{method}: P {:.4}  R {:.4}  F1 {:.4}", last.precision, last.recall, last.f1);
        rows.extend(macro_row);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_results(out, &rows)?;
    Ok(())
}

fn stats(results: &Path, baseline: &str, out: &Path) -> CliResult {
    let rows = read_results(results)?;
    let table = score_table(&rows)?;
    let report = test_report(&table, baseline)?;
    let value = serde_json::to_value(&report).map_err(Error::from)?;
    write_json(out, &value)?;
    println!(
        "Friedman aligned ranks: T = {:.4}, df = {}, p = {:.4e}",
        report.omnibus.statistic, report.omnibus.df, report.omnibus.p
    );
    for r in &report.post_hoc.rows {
        println!(
            "{:<16} avg rank {:.3}  z {:+.3}  p_adj {:.4e}  significant at {:?}",
            r.method, r.avg_rank, r.z, r.p_adjusted, r.significant_at
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
