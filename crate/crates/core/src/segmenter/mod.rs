//! LSTM boundary labeller over per-token feature sequences.
//!
//! One unidirectional LSTM layer feeds a single logit per token; training
//! minimizes class-weighted binary cross-entropy with truncated
//! backpropagation through time, and a small grid over hidden size, learning
//! rate and decision threshold is searched against validation WinPR@k F1.

mod features;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, CorpusEval};
use crate::par;
use crate::tensor::{
    init, lstm_step_projected, AdamState, Graph, LstmVars, ParamStore, Real, Tensor, Var,
};

pub use features::{
    assemble_blocks, assemble_features, embed_show_tokens, word_embedding, FeatureConfig, FeatureMatrix,
    WordEmbedder, AUDIO_TASKS, WORD_DIM,
};

pub const PARAM_NAMES: [&str; 5] = ["lstm.w_ih", "lstm.w_hh", "lstm.bias", "out.weight", "out.bias"];
const PARAM_DIR: &str = "params";
const META_FILE: &str = "segmenter.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub hidden: Vec<usize>,
    pub lr: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            hidden: vec![32, 64, 128],
            lr: vec![1e-3, 1e-4],
            tau: vec![0.3, 0.5, 0.7],
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {tau} must lie strictly between 0 and 1")))
    }
}

impl HyperGrid {
    pub fn single(hidden: usize, lr: f64, tau: f64) -> Self {
        Self { hidden: vec![hidden], lr: vec![lr], tau: vec![tau] }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: format!("grid.{key}"), message });
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one positive size".into());
        }
        if self.lr.is_empty() || self.lr.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("lr", "needs at least one positive finite rate".into());
        }
        if self.tau.is_empty() {
            return bad("tau", "needs at least one threshold".into());
        }
        if let Some(&t) = self.tau.iter().find(|&&t| check_tau(t).is_err()) {
            return bad("tau", format!("{t} is outside (0, 1)"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.hidden.len() * self.lr.len() * self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegTrainConfig {
    pub epochs: usize,
    /// Truncated-BPTT window in tokens.
    pub bptt: usize,
    pub seed: u64,
    /// WinPR window used for model selection.
    pub k: usize,
    pub grid: HyperGrid,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            bptt: 256,
            seed: 0,
            k: 10,
            grid: HyperGrid::default(),
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Err(Error::Config { key: key.into(), message: message.into() });
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.bptt == 0 {
            return bad("bptt", "must be at least 1");
        }
        if self.k == 0 {
            return bad("k", "must be at least 1");
        }
        self.grid.validate()
    }
}

/// Per-feature affine standardization fitted on training tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], scale: vec![1.0; n] }
    }

    /// Column means and inverse standard deviations; near-constant columns
    /// keep scale 1.
    pub fn fit(mats: &[&FeatureMatrix]) -> Result<Self> {
        let n = mats.first().ok_or_else(|| Error::Empty("no feature matrices".into()))?.cols;
        if mats.iter().any(|m| m.cols != n) {
            return Err(Error::dim("feature matrices differ in width"));
        }
        let count: usize = mats.iter().map(|m| m.rows).sum();
        let mut sum = vec![0.0f64; n];
        let mut sq = vec![0.0f64; n];
        for m in mats {
            for r in m.data.chunks_exact(n) {
                for (j, &v) in r.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += v as f64 * v as f64;
                }
            }
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, mu)| {
                let var = (s / c - mu * mu).max(0.0);
                if var.sqrt() > 1e-6 {
                    (1.0 / var.sqrt()) as f32
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean: mean.iter().map(|&m| m as f32).collect(), scale })
    }

    pub fn apply(&self, fm: &FeatureMatrix) -> Result<Tensor<f32>> {
        if fm.cols != self.mean.len() {
            return Err(Error::dim(format!(
                "features have {} columns, model expects {}",
                fm.cols,
                self.mean.len()
            )));
        }
        let n = fm.cols;
        let data = fm
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % n]) * self.scale[i % n])
            .collect();
        Tensor::new(vec![fm.rows, n], data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterMeta {
    pub feature_cfg: FeatureConfig,
    pub input_dim: usize,
    pub u: usize,
    pub lr: f64,
    pub tau: f64,
    pub seed: u64,
    pub val_f1: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub pos_weight: f64,
    pub norm: Standardizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SegmenterModel {
    pub params: ParamStore<f32>,
    pub meta: SegmenterMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub probs: Vec<f32>,
    pub boundaries: Vec<bool>,
}

/// One training or validation sequence.
#[derive(Clone, Debug)]
pub struct TrainingShow {
    pub features: FeatureMatrix,
    pub labels: Vec<u8>,
}

impl TrainingShow {
    pub fn new(features: FeatureMatrix, labels: Vec<u8>) -> Result<Self> {
        if features.rows != labels.len() {
            return Err(Error::dim(format!(
                "{} feature rows for {} labels",
                features.rows,
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(Self { features, labels })
    }

    fn reference(&self) -> Vec<bool> {
        self.labels.iter().map(|&y| y == 1).collect()
    }
}

/// Parameter shapes for input width `n` and `u` hidden units.
pub fn layout(n: usize, u: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        (PARAM_NAMES[0], vec![4 * u, n]),
        (PARAM_NAMES[1], vec![4 * u, u]),
        (PARAM_NAMES[2], vec![4 * u]),
        (PARAM_NAMES[3], vec![1, u]),
        (PARAM_NAMES[4], vec![1]),
    ]
}

/// Weights uniform in `±1/sqrt(u)`, zero biases except the forget gate at +1.
pub fn init_params<T: Real>(n: usize, u: usize, seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (u as f64).sqrt();
    let mut p = ParamStore::new();
    for (name, shape) in layout(n, u) {
        let t = match name {
            "lstm.bias" => {
                let mut b = Tensor::zeros(&shape);
                b.data_mut()[u..2 * u].iter_mut().for_each(|v| *v = T::one());
                b
            }
            "out.bias" => Tensor::zeros(&shape),
            _ => init::uniform(&shape, bound, &mut rng),
        };
        p.push(name, t);
    }
    p
}

/// Segmenter parameters placed in a graph, in [`PARAM_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct SegVars {
    pub lstm: LstmVars,
    pub w_out: Var,
    pub b_out: Var,
}

impl SegVars {
    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            lstm: LstmVars { w_ih: v[0], w_hh: v[1], bias: v[2] },
            w_out: v[3],
            b_out: v[4],
        }
    }

    pub fn all(&self) -> [Var; 5] {
        [self.lstm.w_ih, self.lstm.w_hh, self.lstm.bias, self.w_out, self.b_out]
    }
}

/// Runs the LSTM over the rows of `x` (`[m, n]`) from state `(h0, c0)`.
/// Returns the `m` logits and the final state.
pub fn sequence_logits<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    v: &SegVars,
    h0: Var,
    c0: Var,
) -> Result<(Var, Var, Var)> {
    let m = match g.shape(x) {
        [m, _] if *m > 0 => *m,
        s => return Err(Error::dim(format!("sequence input must be [m, n], got {s:?}"))),
    };
    let u = v.lstm.hidden(g);
    let proj = g.dense(x, v.lstm.w_ih, Some(v.lstm.bias))?;
    let (mut h, mut c) = (h0, c0);
    let mut hs = Vec::with_capacity(m);
    for t in 0..m {
        let xt = g.row(proj, t)?;
        (h, c) = lstm_step_projected(g, xt, h, c, v.lstm.w_hh)?;
        hs.push(h);
    }
    let hcat = g.concat(&hs)?;
    let hmat = g.reshape(hcat, &[m, u])?;
    let out = g.dense(hmat, v.w_out, Some(v.b_out))?;
    let logits = g.reshape(out, &[m])?;
    Ok((logits, h, c))
}

/// `#negatives / #positives` over all labels; exactly 1 for balanced data.
pub fn positive_weight<'a>(labels: impl IntoIterator<Item = &'a [u8]>) -> Result<f64> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for l in labels {
        for &y in l {
            if y == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 {
        return Err(Error::Degenerate("training data has no boundary tokens".into()));
    }
    Ok(neg as f64 / pos as f64)
}

fn forward_probs(params: &ParamStore<f32>, x: &Tensor<f32>) -> Result<Vec<f32>> {
    let u = params.get(1).shape()[1];
    let mut g = Graph::new();
    let vars: Vec<Var> = (0..params.len()).map(|i| g.frozen(params.get(i))).collect();
    let xv = g.constant(x.clone());
    let h0 = g.constant(Tensor::zeros(&[u]));
    let c0 = g.constant(Tensor::zeros(&[u]));
    let (logits, _, _) = sequence_logits(&mut g, xv, &SegVars::from_slice(&vars), h0, c0)?;
    let probs = g.value(logits).data().iter().map(|&z| sigmoid(z)).collect();
    Ok(probs)
}

fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `probs >= tau`, with token 0 never a boundary.
pub fn threshold(probs: &[f32], tau: f64) -> Vec<bool> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| i > 0 && p as f64 >= tau)
        .collect()
}

impl SegmenterModel {
    /// All-zero parameters: every probability is exactly 0.5.
    pub fn zeroed(feature_cfg: FeatureConfig, u: usize, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let n = feature_cfg.dim();
        let mut params = ParamStore::new();
        for (name, shape) in layout(n, u) {
            params.push(name, Tensor::zeros(&shape));
        }
        Ok(Self {
            params,
            meta: SegmenterMeta {
                feature_cfg,
                input_dim: n,
                u,
                lr: 0.0,
                tau,
                seed: 0,
                val_f1: 0.0,
                best_epoch: 0,
                epochs: 0,
                pos_weight: 1.0,
                norm: Standardizer::identity(n),
                config_hash: None,
            },
        })
    }

    pub fn probabilities(&self, fm: &FeatureMatrix) -> Result<Vec<f32>> {
        if fm.config != self.meta.feature_cfg || fm.cols != self.meta.input_dim {
            return Err(Error::dim(format!(
                "features {} ({} columns) do not match model {} ({} columns)",
                fm.config, fm.cols, self.meta.feature_cfg, self.meta.input_dim
            )));
        }
        if fm.rows == 0 {
            return Err(Error::Empty("show has no tokens".into()));
        }
        forward_probs(&self.params, &self.meta.norm.apply(fm)?)
    }

    pub fn predict(&self, fm: &FeatureMatrix) -> Result<Prediction> {
        check_tau(self.meta.tau)?;
        let probs = self.probabilities(fm)?;
        let boundaries = threshold(&probs, self.meta.tau);
        Ok(Prediction { probs, boundaries })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save_dir(&dir.join(PARAM_DIR))?;
        let path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&self.meta)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: SegmenterMeta = serde_json::from_str(&text)?;
        check_tau(meta.tau)?;
        let names: Vec<String> = PARAM_NAMES.iter().map(|s| s.to_string()).collect();
        let params = ParamStore::load_dir(&dir.join(PARAM_DIR), &names)?;
        for ((name, shape), (_, t)) in layout(meta.input_dim, meta.u).iter().zip(params.iter()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::malformed(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if meta.norm.mean.len() != meta.input_dim || meta.norm.scale.len() != meta.input_dim {
            return Err(Error::malformed("standardizer width does not match input_dim"));
        }
        Ok(Self { params, meta })
    }
}

/// Result of training one (hidden, lr) pair; thresholds are chosen on
/// validation data alongside the epoch.
#[derive(Clone, Debug)]
pub struct GridPoint {
    pub u: usize,
    pub lr: f64,
    pub tau: f64,
    pub val_f1: f64,
    pub best_epoch: usize,
    /// Mean per-token training loss for each epoch.
    pub losses: Vec<f64>,
    pub params: ParamStore<f32>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSummary {
    pub u: usize,
    pub lr: f64,
    pub tau: f64,
    pub val_f1: f64,
    pub best_epoch: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct SegTrainOutcome {
    pub model: SegmenterModel,
    pub grid: Vec<GridSummary>,
}

struct Prepared {
    x: Tensor<f32>,
    labels: Vec<u8>,
    reference: Vec<bool>,
}

fn prepare(shows: &[TrainingShow], norm: &Standardizer) -> Result<Vec<Prepared>> {
    shows
        .iter()
        .map(|s| {
            Ok(Prepared {
                x: norm.apply(&s.features)?,
                labels: s.labels.clone(),
                reference: s.reference(),
            })
        })
        .collect()
}

fn rows(x: &Tensor<f32>, start: usize, len: usize) -> Tensor<f32> {
    let n = x.shape()[1];
    Tensor::new(vec![len, n], x.data()[start * n..(start + len) * n].to_vec()).expect("in range")
}

/// LSTM `(h, c)` carried between truncated-BPTT windows.
type CellState = (Vec<f32>, Vec<f32>);

/// One truncated-BPTT chunk: forward, backward, Adam step. Returns the summed
/// per-token loss and the carried state.
fn train_chunk(
    params: &mut ParamStore<f32>,
    adam: &mut AdamState<f32>,
    x: Tensor<f32>,
    labels: &[u8],
    state: CellState,
    pos_weight: f32,
) -> Result<(f64, CellState)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = (0..params.len()).map(|i| g.param(params.get(i))).collect();
    let xv = g.constant(x);
    let h0 = g.constant(Tensor::from_vec(state.0));
    let c0 = g.constant(Tensor::from_vec(state.1));
    let (logits, h, c) = sequence_logits(&mut g, xv, &SegVars::from_slice(&vars), h0, c0)?;
    let targets: Vec<f32> = labels.iter().map(|&y| y as f32).collect();
    let loss = g.bce_with_logits(logits, &targets, pos_weight)?;
    let value = g.value(loss).data()[0] as f64;
    g.backward(loss)?;
    let grads: Vec<Vec<f32>> = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, (_, t))| g.take_grad(v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    let next = (g.value(h).data().to_vec(), g.value(c).data().to_vec());
    drop(g);
    adam.update(params, &grads)?;
    Ok((value * labels.len() as f64, next))
}

fn macro_f1(params: &ParamStore<f32>, val: &[Prepared], tau: f64, k: usize) -> Result<CorpusEval> {
    let preds = val
        .iter()
        .map(|s| forward_probs(params, &s.x).map(|p| threshold(&p, tau)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<bool>> = val.iter().map(|s| s.reference.clone()).collect();
    evaluate_corpus(&preds, &refs, k)
}

fn train_point(
    train: &[Prepared],
    val: &[Prepared],
    n: usize,
    u: usize,
    lr: f64,
    cfg: &SegTrainConfig,
    pos_weight: f64,
) -> Result<GridPoint> {
    let mut params = init_params::<f32>(n, u, cfg.seed);
    let mut adam = AdamState::new(&params, lr as f32);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let total_tokens: usize = train.iter().map(|s| s.labels.len()).sum();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ParamStore<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &train[i];
            let mut state = (vec![0.0f32; u], vec![0.0f32; u]);
            let m = s.labels.len();
            let mut start = 0;
            while start < m {
                let len = cfg.bptt.min(m - start);
                let (l, next) = train_chunk(
                    &mut params,
                    &mut adam,
                    rows(&s.x, start, len),
                    &s.labels[start..start + len],
                    state,
                    pos_weight as f32,
                )
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::Divergence(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
                total += l;
                state = next;
                start += len;
            }
        }
        let loss = total / total_tokens as f64;
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence(format!("segmenter loss {loss} at epoch {epoch}")));
        }
        losses.push(loss);
        for &tau in &cfg.grid.tau {
            let f1 = macro_f1(&params, val, tau, cfg.k)?.f1;
            if best.as_ref().is_none_or(|b| f1 > b.0) {
                best = Some((f1, tau, epoch, params.clone()));
            }
        }
    }
    let (val_f1, tau, best_epoch, params) = best.expect("epochs >= 1 and tau grid non-empty");
    Ok(GridPoint { u, lr, tau, val_f1, best_epoch, losses, params })
}

/// Trains one (hidden, lr) pair and picks its best (epoch, threshold) on
/// `val`. Features are standardized with statistics from `train`.
pub fn train_single(
    train: &[TrainingShow],
    val: &[TrainingShow],
    u: usize,
    lr: f64,
    cfg: &SegTrainConfig,
) -> Result<(GridPoint, Standardizer, f64)> {
    let (norm, pos_weight, tp, vp) = setup(train, val, cfg)?;
    let n = norm.mean.len();
    let point = train_point(&tp, &vp, n, u, lr, cfg, pos_weight)?;
    Ok((point, norm, pos_weight))
}

#[allow(clippy::type_complexity)]
fn setup(
    train: &[TrainingShow],
    val: &[TrainingShow],
    cfg: &SegTrainConfig,
) -> Result<(Standardizer, f64, Vec<Prepared>, Vec<Prepared>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("no training shows".into()));
    }
    if val.is_empty() {
        return Err(Error::Empty("no validation shows".into()));
    }
    let fc = &train[0].features.config;
    if let Some(s) = train.iter().chain(val).find(|s| &s.features.config != fc) {
        return Err(Error::dim(format!(
            "mixed feature configs {fc} and {}",
            s.features.config
        )));
    }
    let pos_weight = positive_weight(train.iter().map(|s| s.labels.as_slice()))?;
    let mats: Vec<&FeatureMatrix> = train.iter().map(|s| &s.features).collect();
    let norm = Standardizer::fit(&mats)?;
    let tp = prepare(train, &norm)?;
    let vp = prepare(val, &norm)?;
    Ok((norm, pos_weight, tp, vp))
}

/// Grid search over hidden size, learning rate and threshold. Each
/// (hidden, lr) pair trains independently (in parallel); the threshold is
/// scored on validation shows after every epoch. The winner is the highest
/// validation F1, earliest in grid order on ties.
pub fn train_segmenter(train: &[TrainingShow], val: &[TrainingShow], cfg: &SegTrainConfig) -> Result<SegTrainOutcome> {
    let (norm, pos_weight, tp, vp) = setup(train, val, cfg)?;
    let n = norm.mean.len();
    let pairs: Vec<(usize, f64)> = cfg
        .grid
        .hidden
        .iter()
        .flat_map(|&u| cfg.grid.lr.iter().map(move |&lr| (u, lr)))
        .collect();
    let points = par::try_map(&pairs, |&(u, lr)| train_point(&tp, &vp, n, u, lr, cfg, pos_weight))?;
    let grid = points
        .iter()
        .map(|p| GridSummary {
            u: p.u,
            lr: p.lr,
            tau: p.tau,
            val_f1: p.val_f1,
            best_epoch: p.best_epoch,
            final_loss: *p.losses.last().expect("epochs >= 1"),
        })
        .collect();
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.val_f1 > points[best].val_f1 {
            best = i;
        }
    }
    let p = points.into_iter().nth(best).expect("grid non-empty");
    let model = SegmenterModel {
        params: p.params,
        meta: SegmenterMeta {
            feature_cfg: train[0].features.config.clone(),
            input_dim: n,
            u: p.u,
            lr: p.lr,
            tau: p.tau,
            seed: cfg.seed,
            val_f1: p.val_f1,
            best_epoch: p.best_epoch,
            epochs: cfg.epochs,
            pos_weight,
            norm,
            config_hash: None,
        },
    };
    Ok(SegTrainOutcome { model, grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::winpr;
    use crate::tensor::grad_check;

    fn rand_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init::uniform(shape, scale, &mut rng)
    }

    #[test]
    fn lstm_sequence_with_bce_gradients() {
        let (n, u, m) = (3, 4, 5);
        let mut inputs = vec![rand_tensor(&[m, n], 1, 1.0)];
        for (i, (_, shape)) in layout(n, u).iter().enumerate() {
            inputs.push(rand_tensor(shape, 10 + i as u64, 0.6));
        }
        let targets = [0.0, 1.0, 0.0, 0.0, 1.0];
        let err = grad_check(
            |g, v| {
                let sv = SegVars::from_slice(&v[1..]);
                let h0 = g.constant(Tensor::zeros(&[u]));
                let c0 = g.constant(Tensor::zeros(&[u]));
                let (logits, _, _) = sequence_logits(g, v[0], &sv, h0, c0)?;
                g.bce_with_logits(logits, &targets, 1.5)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn balanced_weight_is_exactly_one() {
        assert_eq!(positive_weight([&[0u8, 1, 1, 0][..]]).unwrap(), 1.0);
        assert_eq!(positive_weight([&[0u8, 1][..], &[0, 0, 0, 1][..]]).unwrap(), 2.0);
        assert!(matches!(positive_weight([&[0u8, 0][..]]), Err(Error::Degenerate(_))));
    }

    fn fm(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f32) -> FeatureMatrix {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        FeatureMatrix { config: "SEC".parse().unwrap(), rows, cols, data }
    }

    #[test]
    fn zeroed_model_gives_one_half() {
        let model = SegmenterModel::zeroed("SEC".parse().unwrap(), 8, 0.5).unwrap();
        for m in [1, 2, 7] {
            let p = model.predict(&fm(m, 30, |i, j| (i * j) as f32)).unwrap();
            assert_eq!(p.probs.len(), m);
            assert!(p.probs.iter().all(|&x| x == 0.5));
            assert!(!p.boundaries[0]);
            assert!(p.boundaries[1..].iter().all(|&b| b));
        }
        assert!(SegmenterModel::zeroed("SEC".parse().unwrap(), 8, 1.0).is_err());
        assert!(SegmenterModel::zeroed("SEC".parse().unwrap(), 8, 0.0).is_err());
        let wrong = FeatureMatrix { config: "TXT".parse().unwrap(), ..fm(3, 30, |_, _| 0.0) };
        assert!(model.predict(&wrong).is_err());
    }

    #[test]
    fn standardizer_centres_and_scales() {
        let a = fm(4, 2, |i, j| if j == 0 { i as f32 } else { 5.0 });
        let s = Standardizer::fit(&[&a]).unwrap();
        assert_eq!(s.mean, vec![1.5, 5.0]);
        assert_eq!(s.scale[1], 1.0);
        let t = s.apply(&a).unwrap();
        let col0: Vec<f32> = t.data().iter().step_by(2).copied().collect();
        let var: f32 = col0.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((var - 1.0).abs() < 1e-6);
    }

    /// A show where feature 0 marks boundaries one token late and 29 other
    /// columns are noise: the LSTM must carry the cue forward one step.
    fn cued_show(m: usize, seed: u64) -> TrainingShow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = vec![0u8; m];
        let mut i = 20;
        while i < m {
            labels[i] = 1;
            i += 15 + (rand::Rng::random_range(&mut rng, 0..20));
        }
        let noise: Vec<f32> = (0..m * 30).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let f = fm(m, 30, |r, c| {
            if c == 0 {
                f32::from(r > 0 && labels[r - 1] == 1)
            } else {
                noise[r * 30 + c]
            }
        });
        TrainingShow::new(f, labels).unwrap()
    }

    #[test]
    fn loss_decreases_and_overfits_cued_show() {
        let show = cued_show(300, 4);
        let cfg = SegTrainConfig {
            epochs: 40,
            seed: 3,
            grid: HyperGrid::single(16, 1e-2, 0.5),
            ..SegTrainConfig::default()
        };
        let (point, _, _) = train_single(std::slice::from_ref(&show), std::slice::from_ref(&show), 16, 1e-2, &cfg).unwrap();
        for w in point.losses[..10].windows(2) {
            assert!(w[1] <= 1.05 * w[0], "{:?}", &point.losses[..10]);
        }
        assert!(point.val_f1 >= 0.95, "train F1 {}", point.val_f1);
    }

    #[test]
    fn grid_search_is_deterministic_and_beats_all_zeros() {
        let train: Vec<TrainingShow> = (0..3).map(|s| cued_show(200, s)).collect();
        let val = vec![cued_show(200, 10)];
        let test = cued_show(200, 11);
        let cfg = SegTrainConfig {
            epochs: 15,
            seed: 1,
            grid: HyperGrid { hidden: vec![8, 16], lr: vec![1e-2], tau: vec![0.3, 0.5] },
            ..SegTrainConfig::default()
        };
        let a = train_segmenter(&train, &val, &cfg).unwrap();
        let b = train_segmenter(&train, &val, &cfg).unwrap();
        assert_eq!(a.model.meta, b.model.meta);
        assert_eq!(a.grid.len(), 2);
        for ((_, x), (_, y)) in a.model.params.iter().zip(b.model.params.iter()) {
            assert_eq!(x.data(), y.data());
        }
        let pred = a.model.predict(&test.features).unwrap();
        let r = test.reference();
        let f = winpr(&r, &pred.boundaries, 10).unwrap().f1;
        let zeros = winpr(&r, &vec![false; r.len()], 10).unwrap().f1;
        assert!(f > zeros, "{f} vs {zeros}");

        let dir = tempfile::tempdir().unwrap();
        a.model.save(dir.path()).unwrap();
        let back = SegmenterModel::load(dir.path()).unwrap();
        assert_eq!(back.meta, a.model.meta);
        assert_eq!(back.predict(&test.features).unwrap(), pred);
    }

    #[test]
    fn training_errors() {
        let show = cued_show(50, 0);
        let cfg = SegTrainConfig::default();
        assert!(train_segmenter(&[], std::slice::from_ref(&show), &cfg).is_err());
        assert!(train_segmenter(std::slice::from_ref(&show), &[], &cfg).is_err());
        let flat = TrainingShow::new(show.features.clone(), vec![0; 50]).unwrap();
        assert!(matches!(
            train_segmenter(std::slice::from_ref(&flat), std::slice::from_ref(&show), &cfg),
            Err(Error::Degenerate(_))
        ));
        let bad = SegTrainConfig { grid: HyperGrid::single(8, 1e-3, 1.0), ..cfg };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        assert!(TrainingShow::new(show.features.clone(), vec![0; 3]).is_err());
    }

    #[test]
    fn threshold_is_inclusive_and_skips_first() {
        assert_eq!(threshold(&[0.9, 0.5, 0.49, 0.7], 0.5), vec![false, true, false, true]);
    }
}
