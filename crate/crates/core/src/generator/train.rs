//! Mini-batch Adam training with best-validation checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    argmax, forward_vars, infer, init_params, param_vars, GeneratorMeta, GeneratorModel,
    LabeledClipDataset, VggConfig,
};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{AdamState, Graph, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1400,
            batch_size: 32,
            lr: 1e-6,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Error::Config {
            key: key.into(),
            message: message.into(),
        };
        if self.epochs == 0 {
            return Err(bad("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", "must be a positive finite number"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(bad("val_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the forward passes made while training through the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

pub struct TrainOutcome {
    pub model: GeneratorModel,
    pub log: Vec<EpochLog>,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Per-class split: each class contributes `round(frac * n_c)` items to
/// validation, at least one and at most `n_c - 1`. Both index lists are sorted.
pub fn stratified_split(labels: &[usize], n_classes: usize, frac: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut idx in by_class {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        let n = idx.len();
        let n_val = ((frac * n as f64).round() as usize).max(1).min(n - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

struct SampleResult {
    grads: Vec<Vec<f32>>,
    loss: f32,
    correct: bool,
}

fn sample_gradient(params: &ParamStore<f32>, cfg: &VggConfig, x: Tensor<f32>, y: usize) -> Result<SampleResult> {
    let mut g = Graph::new();
    let input = g.constant(x);
    let p = param_vars(&mut g, params);
    let f = forward_vars(&mut g, cfg, input, &p)?;
    let correct = argmax(g.value(f.logits).data()) == y;
    let loss = g.softmax_cross_entropy(f.logits, y)?;
    let loss_value = g.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::Divergence(format!("loss became {loss_value}")));
    }
    g.backward(loss)?;
    let grads = p
        .iter()
        .zip(params.iter())
        .map(|(&v, (_, t))| g.take_grad(v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    Ok(SampleResult {
        grads,
        loss: loss_value,
        correct,
    })
}

/// Fraction of `indices` whose argmax prediction matches the label.
pub(crate) fn accuracy(params: &ParamStore<f32>, cfg: &VggConfig, ds: &LabeledClipDataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let hits = par::try_map(indices, |&i| {
        let (spec, y) = &ds.items[i];
        Ok::<_, Error>(argmax(&infer(params, cfg, &spec.to_tensor())?.1) == *y)
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / indices.len() as f64)
}

pub fn train_generator(ds: &LabeledClipDataset, vgg: &VggConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_generator_with(ds, vgg, cfg, |_| {})
}

/// Trains from a fresh seeded initialization. `on_epoch` sees each log entry
/// as it is produced.
///
/// Per-sample gradients within a batch may be computed in parallel; they are
/// summed in batch order, so results do not depend on the thread count.
pub fn train_generator_with(
    ds: &LabeledClipDataset,
    vgg: &VggConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    vgg.validate()?;
    ds.validate()?;
    let n_classes = ds.n_classes();
    if n_classes < 2 {
        return Err(Error::invalid("training needs at least 2 classes"));
    }
    let labels: Vec<usize> = ds.items.iter().map(|(_, y)| *y).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let (train_idx, val_idx) = stratified_split(&labels, n_classes, cfg.val_fraction, &mut rng);

    let mut params = init_params::<f32>(vgg, n_classes, cfg.seed);
    let mut adam = AdamState::new(&params, cfg.lr as f32);
    let mut best = (params.clone(), -1.0f64, 0usize, 0.0f64);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let results = par::try_map(batch, |&i| {
                let (spec, y) = &ds.items[i];
                sample_gradient(&params, vgg, spec.to_tensor(), *y)
            })?;
            let mut sum: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            for r in &results {
                loss_sum += r.loss as f64;
                hits += r.correct as usize;
                for (acc, g) in sum.iter_mut().zip(&r.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            drop(results);
            let scale = 1.0 / batch.len() as f32;
            sum.iter_mut().flatten().for_each(|v| *v *= scale);
            adam.update(&mut params, &sum)?;
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: hits as f64 / order.len() as f64,
            val_accuracy: accuracy(&params, vgg, ds, &val_idx)?,
        };
        if !entry.train_loss.is_finite() {
            return Err(Error::Divergence(format!("epoch {epoch} mean loss {}", entry.train_loss)));
        }
        on_epoch(&entry);
        if entry.val_accuracy > best.1 {
            best = (params.clone(), entry.val_accuracy, epoch, entry.train_accuracy);
        }
        log.push(entry);
    }

    let (params, val_accuracy, best_epoch, train_accuracy) = best;
    let model = GeneratorModel {
        params,
        meta: GeneratorMeta {
            task_tag: ds.task.to_string(),
            n_classes,
            class_names: ds.class_names.clone(),
            embedding_dim: vgg.embed_dim,
            epochs_trained: cfg.epochs,
            val_accuracy,
            train_accuracy,
            seed: cfg.seed,
            config: vgg.clone(),
            train: Some(cfg.clone()),
            config_hash: None,
        },
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

impl GeneratorModel {
    /// Accuracy on a subset of a dataset.
    pub fn accuracy_on(&self, ds: &LabeledClipDataset, indices: &[usize]) -> Result<f64> {
        accuracy(&self.params, self.config(), ds, indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{Waveform, TARGET_RATE};
    use crate::generator::{build_sec_dataset, TaskTag};
    use crate::dsp::MelSpectrogram;
    use proptest::prelude::*;

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).chain([4, 4]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, val) = stratified_split(&labels, 5, 0.1, &mut rng);
        assert_eq!(train.len() + val.len(), labels.len());
        for c in 0..5 {
            let n_c = labels.iter().filter(|&&y| y == c).count() as f64;
            let v = val.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!(train.iter().any(|&i| labels[i] == c));
            assert!((v - 0.1 * n_c).abs() <= 1.0);
        }
    }

    proptest! {
        #[test]
        fn split_properties(counts in prop::collection::vec(2usize..40, 2..6), seed in 0u64..100) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (train, val) = stratified_split(&labels, counts.len(), 0.1, &mut rng);
            let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (c, &n) in counts.iter().enumerate() {
                let v = val.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!(train.iter().any(|&i| labels[i] == c));
                prop_assert!((v - 0.1 * n as f64).abs() <= 1.0);
            }
        }
    }

    fn tiny() -> VggConfig {
        VggConfig {
            input_hw: (128, 87),
            widths: vec![2, 2, 2, 2],
            dense_hidden: 8,
            embed_dim: 30,
        }
    }

    fn two_tone_dataset() -> LabeledClipDataset {
        let tone = |f: f64, phase: f64| {
            Waveform::new(
                (0..TARGET_RATE as usize * 2)
                    .map(|i| (0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / TARGET_RATE as f64 + phase).sin()) as f32)
                    .collect(),
                TARGET_RATE,
            )
        };
        let clips: Vec<(Waveform, String)> = (0..6)
            .flat_map(|k| {
                let p = k as f64 * 0.7;
                [(tone(200.0, p), "low".to_string()), (tone(4000.0, p), "high".to_string())]
            })
            .collect();
        build_sec_dataset(&clips).unwrap()
    }

    #[test]
    fn training_is_deterministic_and_selects_best() {
        let ds = two_tone_dataset();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr: 1e-3,
            seed: 5,
            val_fraction: 0.1,
        };
        let a = train_generator(&ds, &tiny(), &cfg).unwrap();
        let b = train_generator(&ds, &tiny(), &cfg).unwrap();
        for ((_, x), (_, y)) in a.model.params.iter().zip(b.model.params.iter()) {
            assert_eq!(x.data(), y.data());
        }
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 3);
        let best = a.model.meta.val_accuracy;
        assert!(a.log.iter().all(|e| best >= e.val_accuracy));
        assert_eq!(a.log[a.best_epoch - 1].val_accuracy, best);
        let recomputed = a.model.accuracy_on(&ds, &a.val_indices).unwrap();
        assert_eq!(recomputed, best);
        assert_eq!(a.model.meta.task_tag, "SEC");
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = two_tone_dataset();
        let bad = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train_generator(&ds, &tiny(), &bad), Err(Error::Config { .. })));
        let spec = MelSpectrogram::from_values(vec![0.0; 128 * 87]).unwrap();
        let single = LabeledClipDataset {
            items: vec![(spec.clone(), 0), (spec, 1)],
            class_names: vec!["a".into(), "b".into()],
            task: TaskTag::Sec,
        };
        assert!(train_generator(&single, &tiny(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn huge_learning_rate_diverges_or_stays_finite() {
        let ds = two_tone_dataset();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, lr: 1e30, seed: 1, val_fraction: 0.1 };
        match train_generator(&ds, &tiny(), &cfg) {
            Ok(out) => assert!(out.model.params.is_finite()),
            Err(e) => assert!(e.is_numeric(), "{e}"),
        }
    }
}
