//! Experiment orchestration: corpus, generators, embeddings, one segmenter
//! per feature configuration, WinPR@k scores, significance tests, reports.
//!
//! Every stage writes under `out_dir` and stamps its output with a hash of
//! the inputs that determine it; a rerun with the same hash reuses the
//! stored artifact.

mod config;
mod results;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_show, make_benchmark, synth_fpc_material, synth_sound_events, synth_word_clips, CorpusManifest,
    LoadedShow, Split,
};
use crate::digest::{config_hash, sha256_hex};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::eval::{improvement, winpr};
use crate::generator::{
    build_fpc_dataset, build_sec_dataset, build_wc_dataset, train_generator, ClipManifest, GeneratorModel,
    LabeledClipDataset, TaskTag,
};
use crate::par;
use crate::segmenter::{
    assemble_blocks, embed_show_tokens, train_segmenter, FeatureConfig, SegmenterModel, TrainingShow, WordEmbedder,
};
use crate::stats::{test_report, TestReport};
use crate::tensor::{tnsr, Tensor};

pub use config::{
    parse_config, validate_config, CorpusSection, GeneratorSection, RunConfig, SegmenterSection, DEFAULT_METHODS,
};
pub use results::{
    format_results, methods_of, parse_results, read_results, score_table, validate_rows, with_macro, write_results,
    ResultRow, HEADER, MACRO_ID,
};

/// Training clips for `task` from the section's synthetic recipe, paired
/// with labels. FPC material comes back as fragments (label `fragment`) and
/// jingles (label `jingle`).
pub fn synthetic_clips(task: &TaskTag, g: &GeneratorSection, seed: u64) -> Result<Vec<(Waveform, String)>> {
    Ok(match task {
        TaskTag::Fpc => {
            let (fragments, jingles) = synth_fpc_material(g.fragments, g.jingles, g.topics, seed)?;
            fragments
                .into_iter()
                .map(|w| (w, "fragment".to_string()))
                .chain(jingles.into_iter().map(|w| (w, "jingle".to_string())))
                .collect()
        }
        TaskTag::Wc => synth_word_clips(g.words, g.per_word, seed),
        _ => synth_sound_events(g.clips_per_class, g.clip_seconds, seed),
    })
}

/// Applies the task's dataset recipe to labelled clips.
pub fn dataset_from_clips(
    task: &TaskTag,
    clips: &[(Waveform, String)],
    g: &GeneratorSection,
    seed: u64,
) -> Result<LabeledClipDataset> {
    match task {
        TaskTag::Fpc => {
            let (jingles, fragments): (Vec<_>, Vec<_>) = clips.iter().partition(|(_, l)| l == "jingle");
            let f: Vec<Waveform> = fragments.into_iter().map(|(w, _)| w.clone()).collect();
            let j: Vec<Waveform> = jingles.into_iter().map(|(w, _)| w.clone()).collect();
            build_fpc_dataset(&f, &j, seed)
        }
        TaskTag::Wc => build_wc_dataset(clips, g.min_samples),
        _ => build_sec_dataset(clips),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates the corpus into `dir` unless a manifest with the same config
/// hash is already there.
pub fn ensure_corpus(cfg: &RunConfig, log: &dyn Fn(&str)) -> Result<(PathBuf, CorpusManifest)> {
    if let Some(dir) = &cfg.corpus.dir {
        return Ok((dir.clone(), CorpusManifest::read(dir)?));
    }
    let bench = cfg.corpus.benchmark(cfg.seed());
    let dir = cfg.out_dir.join("corpus");
    let hash = config_hash(&bench)?;
    if let Ok(m) = CorpusManifest::read(&dir) {
        if m.config_hash == hash {
            log(&format!("corpus: reusing {}", dir.display()));
            return Ok((dir, m));
        }
    }
    log(&format!("corpus: generating {} shows", bench.n_shows));
    let m = make_benchmark(&bench, &dir)?;
    Ok((dir, m))
}

/// Trains (or reuses, or loads) the generator for `task`. Returns the model
/// and a hash identifying it.
pub fn ensure_generator(cfg: &RunConfig, task: &TaskTag, log: &dyn Fn(&str)) -> Result<(GeneratorModel, String)> {
    let g = cfg.generator(task);
    if let Some(ckpt) = &g.checkpoint {
        let model = GeneratorModel::load(ckpt)?;
        let meta = std::fs::read(ckpt.join("meta.json")).map_err(|e| Error::io(ckpt, e))?;
        return Ok((model, sha256_hex(&meta)));
    }
    let manifest_digest = match &g.manifest {
        Some(p) => Some(sha256_hex(&std::fs::read(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let hash = config_hash(&(task.to_string(), g, cfg.seed(), manifest_digest))?;
    let dir = cfg.out_dir.join("generators").join(task.to_string().to_ascii_lowercase());
    if let Ok(model) = GeneratorModel::load(&dir) {
        if model.meta.config_hash.as_deref() == Some(hash.as_str()) {
            log(&format!("{task}: reusing generator at {}", dir.display()));
            return Ok((model, hash));
        }
    }
    let ds = match &g.manifest {
        Some(p) => {
            let m = ClipManifest::read(p)?;
            if &m.task != task {
                return Err(Error::invalid(format!("{} holds {} clips, not {task}", p.display(), m.task)));
            }
            m.build(p.parent().unwrap_or(Path::new(".")), cfg.seed(), g.min_samples)?
        }
        None => dataset_from_clips(task, &synthetic_clips(task, g, cfg.seed())?, g, cfg.seed())?,
    };
    log(&format!(
        "{task}: training generator on {} items, {} classes, {} epochs",
        ds.len(),
        ds.n_classes(),
        g.epochs
    ));
    let out = train_generator(&ds, &g.vgg, &g.train_config(cfg.seed()))?;
    let mut model = out.model;
    model.meta.config_hash = Some(hash.clone());
    log(&format!(
        "{task}: train accuracy {:.3}, validation accuracy {:.3} (epoch {})",
        model.meta.train_accuracy, model.meta.val_accuracy, out.best_epoch
    ));
    create_dir(&dir)?;
    model.save(&dir)?;
    Ok((model, hash))
}

#[derive(Serialize, Deserialize, PartialEq)]
struct EmbeddingStamp {
    generator_hash: String,
    corpus_hash: String,
    shows: Vec<String>,
}

/// Token embeddings `[m, 30]` for every show, cached as TNSR files.
pub fn ensure_embeddings(
    dir: &Path,
    shows: &[LoadedShow],
    generator: &GeneratorModel,
    generator_hash: &str,
    corpus_hash: &str,
    log: &dyn Fn(&str),
) -> Result<Vec<Tensor<f32>>> {
    let stamp = EmbeddingStamp {
        generator_hash: generator_hash.into(),
        corpus_hash: corpus_hash.into(),
        shows: shows.iter().map(|s| s.id.clone()).collect(),
    };
    let stamp_path = dir.join("stamp.json");
    let cached = std::fs::read_to_string(&stamp_path)
        .ok()
        .and_then(|t| serde_json::from_str::<EmbeddingStamp>(&t).ok())
        .is_some_and(|s| s == stamp);
    if cached {
        log(&format!("embeddings: reusing {}", dir.display()));
        return shows.iter().map(|s| tnsr::read(&dir.join(format!("{}.tnsr", s.id)))).collect();
    }
    create_dir(dir)?;
    let _ = std::fs::remove_file(&stamp_path);
    let mut out = Vec::with_capacity(shows.len());
    for s in shows {
        let e = embed_show_tokens(s, generator)?;
        tnsr::write(&dir.join(format!("{}.tnsr", s.id)), &e)?;
        out.push(e);
    }
    write_json(&stamp_path, &stamp)?;
    log(&format!("embeddings: wrote {} shows to {}", shows.len(), dir.display()));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterSummary {
    pub u: usize,
    pub lr: f64,
    pub tau: f64,
    pub val_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Relative F1 change over the baseline, in percent.
    pub improvement: Option<f64>,
    /// `**` for adjusted p < 0.01, `*` for adjusted p < 0.02.
    pub stars: String,
    pub p_adjusted: Option<f64>,
    pub segmenter: SegmenterSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config_hash: String,
    pub corpus_hash: String,
    pub k: usize,
    pub baseline: String,
    pub test_shows: Vec<String>,
    pub methods: Vec<MethodReport>,
    pub stats: Option<TestReport>,
    /// Why `stats` is absent, when it is.
    pub stats_note: Option<String>,
}

pub fn stars_for(p_adjusted: f64) -> &'static str {
    if p_adjusted < 0.01 {
        "**"
    } else if p_adjusted < 0.02 {
        "*"
    } else {
        ""
    }
}

/// Markdown table with Method, P, R, F1, Impr. columns.
pub fn render_markdown(r: &ExperimentReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "WinPR@{} on {} test shows (seed {}, baseline {})\n\n",
        r.k,
        r.test_shows.len(),
        r.seed,
        r.baseline
    ));
    s.push_str("| Method | P | R | F1 | Impr. |\n|---|---|---|---|---|\n");
    for m in &r.methods {
        let imp = match m.improvement {
            Some(v) => format!("{v:+.1}% {}", m.stars).trim_end().to_string(),
            None => "-".into(),
        };
        s.push_str(&format!(
            "| {} | {:.3} | {:.3} | {:.3} | {} |\n",
            m.method, m.precision, m.recall, m.f1, imp
        ));
    }
    match (&r.stats, &r.stats_note) {
        (Some(t), _) => s.push_str(&format!(
            "\nFriedman aligned ranks: T = {:.4}, df = {}, p = {:.3e}. Stars mark Bonferroni-Dunn adjusted p < 0.02 (*) and < 0.01 (**).\n",
            t.omnibus.statistic, t.omnibus.df, t.omnibus.p
        )),
        (None, Some(note)) => s.push_str(&format!("\nNo significance tests: {note}.\n")),
        (None, None) => {}
    }
    s
}

fn write_predictions(path: &Path, probs: &[f32], boundaries: &[bool]) -> Result<()> {
    #[derive(Serialize)]
    struct Line {
        index: usize,
        prob: f32,
        boundary: bool,
    }
    let mut text = String::new();
    for (i, (&prob, &boundary)) in probs.iter().zip(boundaries).enumerate() {
        text.push_str(&serde_json::to_string(&Line { index: i, prob, boundary })?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains or reuses the segmenter for one feature configuration.
#[allow(clippy::too_many_arguments)]
fn ensure_segmenter(
    dir: &Path,
    hash: &str,
    train: &[TrainingShow],
    val: &[TrainingShow],
    cfg: &RunConfig,
    log: &dyn Fn(&str),
    method: &str,
) -> Result<SegmenterModel> {
    if let Ok(m) = SegmenterModel::load(dir) {
        if m.meta.config_hash.as_deref() == Some(hash) {
            log(&format!("{method}: reusing segmenter at {}", dir.display()));
            return Ok(m);
        }
    }
    let out = train_segmenter(train, val, &cfg.seg_train_config())?;
    let mut model = out.model;
    model.meta.config_hash = Some(hash.to_string());
    create_dir(dir)?;
    model.save(dir)?;
    write_json(&dir.join("grid.json"), &out.grid)?;
    log(&format!(
        "{method}: u={} lr={} tau={} val F1 {:.3} (epoch {})",
        model.meta.u, model.meta.lr, model.meta.tau, model.meta.val_f1, model.meta.best_epoch
    ));
    Ok(model)
}

/// Runs the whole experiment and writes `results.tsv`, `report.json` and
/// `report.md` into `cfg.out_dir`.
pub fn run_experiment(cfg: &RunConfig, log: &dyn Fn(&str)) -> Result<ExperimentReport> {
    let problems = cfg.problems();
    if let Some((key, message)) = problems.into_iter().next() {
        return Err(Error::Config { key, message });
    }
    create_dir(&cfg.out_dir)?;
    let mut canonical = cfg.clone();
    canonical.out_dir = PathBuf::new();
    canonical.threads = None;
    let run_hash = config_hash(&canonical)?;

    let (corpus_dir, manifest) = ensure_corpus(cfg, log).map_err(|e| e.in_stage("make-corpus"))?;
    let shows = par::try_map(&manifest.shows, |e| load_show(&corpus_dir.join(&e.dir)))
        .map_err(|e| e.in_stage("load-corpus"))?;
    let split_of: Vec<Split> = manifest.shows.iter().map(|e| e.split).collect();
    let ids = |s: Split| -> Vec<usize> { (0..shows.len()).filter(|&i| split_of[i] == s).collect() };
    let (train_ix, val_ix, test_ix) = (ids(Split::Train), ids(Split::Val), ids(Split::Test));
    if train_ix.is_empty() || val_ix.is_empty() || test_ix.is_empty() {
        return Err(Error::invalid(format!(
            "corpus split has {} train, {} validation, {} test shows; each needs at least one",
            train_ix.len(),
            val_ix.len(),
            test_ix.len()
        ))
        .in_stage("load-corpus"));
    }

    let mut embeddings: BTreeMap<String, (Vec<Tensor<f32>>, String)> = BTreeMap::new();
    for task in cfg.needed_tasks()? {
        let (model, hash) = ensure_generator(cfg, &task, log).map_err(|e| e.in_stage("train-generator"))?;
        let dir = cfg.out_dir.join("embeddings").join(task.to_string().to_ascii_lowercase());
        let e = ensure_embeddings(&dir, &shows, &model, &hash, &manifest.config_hash, log)
            .map_err(|e| e.in_stage("embed"))?;
        embeddings.insert(task.to_string(), (e, hash));
    }

    let (embedder, table_digest) = match &cfg.word_table {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e).in_stage("train-seg"))?;
            (WordEmbedder::from_table(p).map_err(|e| e.in_stage("train-seg"))?, Some(sha256_hex(&bytes)))
        }
        None => (WordEmbedder::hashed(), None),
    };

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut models: Vec<(String, SegmenterModel)> = Vec::new();
    for fc in cfg.feature_configs()? {
        let method = fc.to_string();
        let features = |i: usize| -> Result<TrainingShow> {
            let audio: Vec<(TaskTag, &Tensor<f32>)> = fc
                .audio
                .iter()
                .map(|t| (t.clone(), &embeddings[&t.to_string()].0[i]))
                .collect();
            let fm = assemble_blocks(&fc, &shows[i].words(), &audio, &embedder)?;
            TrainingShow::new(fm, shows[i].tokens.iter().map(|t| t.label).collect())
        };
        let build = |ix: &[usize]| ix.iter().map(|&i| features(i)).collect::<Result<Vec<_>>>();
        let (train, val, test) = (|| Ok::<_, Error>((build(&train_ix)?, build(&val_ix)?, build(&test_ix)?)))()
            .map_err(|e| e.in_stage("assemble-features"))?;
        let gen_hashes: Vec<&str> = fc.audio.iter().map(|t| embeddings[&t.to_string()].1.as_str()).collect();
        let seg_hash = config_hash(&(
            &method,
            &cfg.segmenter,
            cfg.seed(),
            cfg.k,
            &manifest.config_hash,
            gen_hashes,
            &table_digest,
        ))?;
        let dir = cfg.out_dir.join("segmenters").join(&method);
        let model = ensure_segmenter(&dir, &seg_hash, &train, &val, cfg, log, &method)
            .map_err(|e| e.in_stage("train-seg"))?;

        let pred_dir = cfg.out_dir.join("predictions").join(&method);
        create_dir(&pred_dir).map_err(|e| e.in_stage("predict"))?;
        let mut per_show = Vec::with_capacity(test.len());
        for (&i, ts) in test_ix.iter().zip(&test) {
            let p = model.predict(&ts.features).map_err(|e| e.in_stage("predict"))?;
            write_predictions(&pred_dir.join(format!("{}.jsonl", shows[i].id)), &p.probs, &p.boundaries)
                .map_err(|e| e.in_stage("predict"))?;
            let reference = shows[i].boundaries();
            let w = winpr(&reference, &p.boundaries, cfg.k).map_err(|e| e.in_stage("eval"))?;
            per_show.push(ResultRow {
                show_id: shows[i].id.clone(),
                method: method.clone(),
                precision: w.precision,
                recall: w.recall,
                f1: w.f1,
            });
        }
        rows.extend(with_macro(&method, per_show));
        models.push((method, model));
    }
    write_results(&cfg.out_dir.join("results.tsv"), &rows).map_err(|e| e.in_stage("eval"))?;

    let baseline: String = cfg.baseline.parse::<FeatureConfig>()?.to_string();
    let (stats, stats_note) = if models.len() < 2 {
        (None, Some("only one method".to_string()))
    } else if test_ix.len() < 2 {
        (None, Some("fewer than two test shows".to_string()))
    } else {
        match score_table(&rows).and_then(|t| test_report(&t, &baseline)) {
            Ok(r) => (Some(r), None),
            Err(e @ Error::Degenerate(_)) => (None, Some(e.to_string())),
            Err(e) => return Err(e.in_stage("stats")),
        }
    };
    let macro_of = |m: &str| rows.iter().find(|r| r.method == m && r.show_id == MACRO_ID).expect("macro row");
    let base_f1 = models.iter().any(|(m, _)| *m == baseline).then(|| macro_of(&baseline).f1);
    let methods = models
        .iter()
        .map(|(m, model)| {
            let r = macro_of(m);
            let p_adj = stats
                .as_ref()
                .and_then(|s| s.post_hoc.rows.iter().find(|row| row.method == *m))
                .map(|row| row.p_adjusted);
            MethodReport {
                method: m.clone(),
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
                improvement: match base_f1 {
                    Some(b) if *m != baseline => improvement(b, r.f1).ok(),
                    _ => None,
                },
                stars: p_adj.map_or("", stars_for).to_string(),
                p_adjusted: p_adj,
                segmenter: SegmenterSummary {
                    u: model.meta.u,
                    lr: model.meta.lr,
                    tau: model.meta.tau,
                    val_f1: model.meta.val_f1,
                    best_epoch: model.meta.best_epoch,
                },
            }
        })
        .collect();
    let report = ExperimentReport {
        seed: cfg.seed(),
        config_hash: run_hash,
        corpus_hash: manifest.config_hash.clone(),
        k: cfg.k,
        baseline,
        test_shows: test_ix.iter().map(|&i| shows[i].id.clone()).collect(),
        methods,
        stats,
        stats_note,
    };
    write_json(&cfg.out_dir.join("report.json"), &report).map_err(|e| e.in_stage("report"))?;
    let md = cfg.out_dir.join("report.md");
    std::fs::write(&md, render_markdown(&report)).map_err(|e| Error::io(&md, e).in_stage("report"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(out: &Path, methods: &[&str]) -> RunConfig {
        let list = methods.iter().map(|m| format!("\"{m}\"")).collect::<Vec<_>>().join(", ");
        let text = format!(
            r#"
seed = 5
out_dir = "{}"
methods = [{list}]

[corpus]
n_shows = 6
n_topics = 4
show_duration = 20.0
fragment_min_s = 4.0
fragment_max_s = 6.0
test_fraction = 0.34
val_fraction = 0.17

[sec]
clips_per_class = 2
clip_seconds = 2.0
epochs = 1
lr = 0.001

[sec.vgg]
input_hw = [128, 87]
widths = [2, 2, 2, 2]
dense_hidden = 8
embed_dim = 30

[segmenter]
epochs = 2

[segmenter.grid]
hidden = [8]
lr = [0.01]
tau = [0.5]
"#,
            out.display()
        );
        parse_config(&text, out).unwrap()
    }

    #[test]
    fn single_method_has_no_stats() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), &["TXT"]);
        let r = run_experiment(&cfg, &|_| {}).unwrap();
        assert_eq!(r.methods.len(), 1);
        assert!(r.stats.is_none());
        let rows = read_results(&dir.path().join("results.tsv")).unwrap();
        assert_eq!(rows.len(), r.test_shows.len() + 1);
        assert!(dir.path().join("report.md").is_file());
    }

    #[test]
    fn two_methods_rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), &["TXT", "TXT+SEC"]);
        run_experiment(&cfg, &|_| {}).unwrap();
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        let (a, b) = (read("results.tsv"), read("report.json"));
        let r = run_experiment(&cfg, &|_| {}).unwrap();
        assert_eq!(read("results.tsv"), a);
        assert_eq!(read("report.json"), b);
        assert_eq!(r.methods[1].method, "TXT+SEC");
        assert!(r.methods[1].improvement.is_some() || r.methods[0].f1 == 0.0);
        let rows = read_results(&dir.path().join("results.tsv")).unwrap();
        assert_eq!(rows.len(), 2 * (r.test_shows.len() + 1));
    }

    #[test]
    fn failures_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path(), &["TXT"]);
        cfg.corpus.test_fraction = 0.0;
        let err = run_experiment(&cfg, &|_| {}).unwrap_err();
        assert!(matches!(&err, Error::Stage { stage, .. } if stage == "load-corpus"), "{err}");
    }

    #[test]
    fn markdown_layout() {
        let r = ExperimentReport {
            seed: 1,
            config_hash: "h".into(),
            corpus_hash: "c".into(),
            k: 10,
            baseline: "TXT".into(),
            test_shows: vec!["a".into(), "b".into()],
            methods: vec![MethodReport {
                method: "TXT+SEC".into(),
                precision: 0.874,
                recall: 0.761,
                f1: 0.813,
                improvement: Some(32.26),
                stars: "**".into(),
                p_adjusted: Some(0.001),
                segmenter: SegmenterSummary { u: 32, lr: 1e-3, tau: 0.5, val_f1: 0.8, best_epoch: 3 },
            }],
            stats: None,
            stats_note: Some("only one method".into()),
        };
        let md = render_markdown(&r);
        assert!(md.contains("| Method | P | R | F1 | Impr. |"));
        assert!(md.contains("| TXT+SEC | 0.874 | 0.761 | 0.813 | +32.3% ** |"), "{md}");
        assert_eq!(stars_for(0.015), "*");
        assert_eq!(stars_for(0.5), "");
    }
}
