//! Downscaled VGG classifier used as an audio-embedding generator.
//!
//! Blocks of two 3x3 same-padded convolutions (ReLU after each) followed by
//! 2x2 max pooling, then `dense -> ReLU -> dense(embedding, linear) ->
//! dense(logits)`. The embedding is the 30-unit layer just before the
//! classifier head.

mod dataset;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{MelSpectrogram, N_FRAMES, N_MELS};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{init, Graph, ParamStore, Real, Tensor, Var};

pub use dataset::{
    build_fpc_dataset, build_sec_dataset, build_wc_dataset, fpc_windows, ClipEntry, ClipManifest,
    FpcWindows, LabeledClipDataset, TaskTag, FPC_CLASSES,
};
pub use train::{stratified_split, train_generator, train_generator_with, EpochLog, TrainConfig, TrainOutcome};

pub const EMBED_DIM: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VggConfig {
    /// Input height (Mel bands) and width (frames).
    pub input_hw: (usize, usize),
    /// Channel width of each two-conv block.
    pub widths: Vec<usize>,
    pub dense_hidden: usize,
    pub embed_dim: usize,
}

impl Default for VggConfig {
    fn default() -> Self {
        Self {
            input_hw: (N_MELS, N_FRAMES),
            widths: vec![16, 32, 64, 128],
            dense_hidden: 256,
            embed_dim: EMBED_DIM,
        }
    }
}

impl VggConfig {
    /// Spatial size after all pooling stages.
    pub fn pooled_hw(&self) -> (usize, usize) {
        let n = self.widths.len() as u32;
        (self.input_hw.0 >> n, self.input_hw.1 >> n)
    }

    pub fn flat_dim(&self) -> usize {
        let (h, w) = self.pooled_hw();
        self.widths.last().copied().unwrap_or(1) * h * w
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.pooled_hw();
        if self.widths.is_empty() || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "input {:?} too small for {} pooling stages",
                self.input_hw,
                self.widths.len()
            )));
        }
        if self.widths.contains(&0) || self.dense_hidden == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    /// Parameter names and shapes in graph order.
    pub fn layout(&self, n_classes: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for (b, &w) in self.widths.iter().enumerate() {
            for l in 0..2 {
                out.push((format!("conv{}_{}.weight", b + 1, l + 1), vec![w, cin, 3, 3]));
                out.push((format!("conv{}_{}.bias", b + 1, l + 1), vec![w]));
                cin = w;
            }
        }
        let flat = self.flat_dim();
        out.push(("fc.weight".into(), vec![self.dense_hidden, flat]));
        out.push(("fc.bias".into(), vec![self.dense_hidden]));
        out.push(("embed.weight".into(), vec![self.embed_dim, self.dense_hidden]));
        out.push(("embed.bias".into(), vec![self.embed_dim]));
        out.push(("out.weight".into(), vec![n_classes, self.embed_dim]));
        out.push(("out.bias".into(), vec![n_classes]));
        out
    }

    pub fn param_count(&self, n_classes: usize) -> usize {
        self.layout(n_classes)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Kaiming-uniform weights (fan-in), zero biases.
pub fn init_params<T: Real>(cfg: &VggConfig, n_classes: usize, seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in cfg.layout(n_classes) {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let fan_in = shape[1..].iter().product();
            init::kaiming_uniform(&shape, fan_in, &mut rng)
        };
        store.push(name, t);
    }
    store
}

/// Graph handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub embedding: Var,
    pub logits: Var,
}

/// Builds the network on `input` (`[1,H,W]`) with parameter variables `p`
/// in [`VggConfig::layout`] order.
pub fn forward_vars<T: Real>(g: &mut Graph<T>, cfg: &VggConfig, input: Var, p: &[Var]) -> Result<Forward> {
    let expected = 4 * cfg.widths.len() + 6;
    if p.len() != expected {
        return Err(Error::dim(format!("{} parameter vars, network needs {expected}", p.len())));
    }
    let mut x = input;
    let mut k = 0;
    for _ in &cfg.widths {
        for _ in 0..2 {
            x = g.conv2d(x, p[k], Some(p[k + 1]))?;
            x = g.relu(x)?;
            k += 2;
        }
        x = g.maxpool2x2(x)?;
    }
    let flat = g.flatten(x)?;
    let hidden = g.dense(flat, p[k], Some(p[k + 1]))?;
    let hidden = g.relu(hidden)?;
    let embedding = g.dense(hidden, p[k + 2], Some(p[k + 3]))?;
    let logits = g.dense(embedding, p[k + 4], Some(p[k + 5]))?;
    Ok(Forward { embedding, logits })
}

/// 30-dimensional pre-softmax activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioEmbedding {
    pub values: Vec<f32>,
    pub source_task: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub task_tag: String,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub embedding_dim: usize,
    pub epochs_trained: usize,
    pub val_accuracy: f64,
    pub train_accuracy: f64,
    pub seed: u64,
    pub config: VggConfig,
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub params: ParamStore<f32>,
    pub meta: GeneratorMeta,
}

/// An untrained network for `n_classes` outputs.
pub fn build_network(n_classes: usize, cfg: &VggConfig, seed: u64) -> Result<GeneratorModel> {
    if n_classes < 2 {
        return Err(Error::invalid(format!("classifier needs at least 2 classes, got {n_classes}")));
    }
    cfg.validate()?;
    Ok(GeneratorModel {
        params: init_params(cfg, n_classes, seed),
        meta: GeneratorMeta {
            task_tag: TaskTag::Custom("untrained".into()).to_string(),
            n_classes,
            class_names: (0..n_classes).map(|i| format!("class{i}")).collect(),
            embedding_dim: cfg.embed_dim,
            epochs_trained: 0,
            val_accuracy: 0.0,
            train_accuracy: 0.0,
            seed,
            config: cfg.clone(),
            train: None,
            config_hash: None,
        },
    })
}

const META_FILE: &str = "meta.json";
const PARAM_DIR: &str = "params";

impl GeneratorModel {
    pub fn config(&self) -> &VggConfig {
        &self.meta.config
    }

    pub fn n_classes(&self) -> usize {
        self.meta.n_classes
    }

    fn check_input(&self, t: &Tensor<f32>) -> Result<()> {
        let (h, w) = self.config().input_hw;
        if t.shape() != [1, h, w] {
            return Err(Error::dim(format!("generator input {:?}, expected [1, {h}, {w}]", t.shape())));
        }
        Ok(())
    }

    /// Inference pass; returns `(embedding, logits)`.
    pub fn run(&self, input: &Tensor<f32>) -> Result<(Vec<f32>, Vec<f32>)> {
        self.check_input(input)?;
        infer(&self.params, self.config(), input)
    }

    pub fn embed_tensor(&self, input: &Tensor<f32>) -> Result<AudioEmbedding> {
        Ok(AudioEmbedding {
            values: self.run(input)?.0,
            source_task: self.meta.task_tag.clone(),
        })
    }

    pub fn embed(&self, spec: &MelSpectrogram) -> Result<AudioEmbedding> {
        self.embed_tensor(&spec.to_tensor())
    }

    /// Embeds many spectrograms in parallel; output order matches input.
    pub fn embed_batch(&self, specs: &[MelSpectrogram]) -> Result<Vec<AudioEmbedding>> {
        par::try_map(specs, |s| self.embed(s))
    }

    pub fn classify(&self, input: &Tensor<f32>) -> Result<usize> {
        Ok(argmax(&self.run(input)?.1))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save_dir(&dir.join(PARAM_DIR))?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join(META_FILE), meta).map_err(|e| Error::io(dir.join(META_FILE), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: GeneratorMeta = serde_json::from_str(&text)?;
        meta.config.validate()?;
        let layout = meta.config.layout(meta.n_classes);
        let names: Vec<String> = layout.iter().map(|(n, _)| n.clone()).collect();
        let params = ParamStore::<f32>::load_dir(&dir.join(PARAM_DIR), &names)?;
        for ((name, shape), (_, t)) in layout.iter().zip(params.iter()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::dim(format!("checkpoint tensor {name}: {:?} != {shape:?}", t.shape())));
            }
        }
        if meta.embedding_dim != meta.config.embed_dim {
            return Err(Error::malformed("embedding_dim disagrees with config"));
        }
        Ok(Self { params, meta })
    }
}

/// Forward pass with frozen parameters; returns `(embedding, logits)`.
pub(crate) fn infer(params: &ParamStore<f32>, cfg: &VggConfig, input: &Tensor<f32>) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let p: Vec<Var> = (0..params.len()).map(|i| g.frozen(params.get(i))).collect();
    let f = forward_vars(&mut g, cfg, x, &p)?;
    let e = g.value(f.embedding).data().to_vec();
    let l = g.value(f.logits).data().to_vec();
    if e.iter().chain(&l).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generator activations".into()));
    }
    Ok((e, l))
}

pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Parameters as shared tensors for a trainable graph.
pub(crate) fn param_vars<T: Real>(g: &mut Graph<T>, params: &ParamStore<T>) -> Vec<Var> {
    (0..params.len()).map(|i| g.param(params.get(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::Rng;

    #[test]
    fn default_shape_arithmetic() {
        let cfg = VggConfig::default();
        assert_eq!(cfg.pooled_hw(), (8, 5));
        assert_eq!(cfg.flat_dim(), 5120);
        assert!(cfg.param_count(50) < 2_000_000);
    }

    #[test]
    fn param_count_closed_form() {
        let n = 2;
        let conv = |cin: usize, cout: usize| cout * cin * 9 + cout;
        let dense = |i: usize, o: usize| o * i + o;
        let expected = conv(1, 16)
            + conv(16, 16)
            + conv(16, 32)
            + conv(32, 32)
            + conv(32, 64)
            + conv(64, 64)
            + conv(64, 128)
            + conv(128, 128)
            + dense(128 * 8 * 5, 256)
            + dense(256, 30)
            + dense(30, n);
        let m = build_network(n, &VggConfig::default(), 0).unwrap();
        let counted: usize = m.params.iter().map(|(_, t)| t.len()).sum();
        assert_eq!(counted, expected);
        assert_eq!(m.config().param_count(n), expected);
    }

    #[test]
    fn output_widths() {
        for n in [50, 4, 300] {
            let m = build_network(n, &VggConfig::default(), 1).unwrap();
            assert_eq!(m.params.by_name("out.weight").unwrap().shape(), [n, 30]);
            assert_eq!(m.params.by_name("embed.weight").unwrap().shape()[0], 30);
        }
        assert!(build_network(1, &VggConfig::default(), 0).is_err());
    }

    #[test]
    fn embedding_is_deterministic_and_finite() {
        let m = build_network(3, &VggConfig::default(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f32> = (0..N_MELS * N_FRAMES).map(|_| rng.random()).collect();
        let spec = MelSpectrogram::from_values(v).unwrap();
        let a = m.embed(&spec).unwrap();
        let b = m.embed(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 30);
        assert!(a.values.iter().all(|v| v.is_finite()));
        let batch = m.embed_batch(&[spec.clone(), spec]).unwrap();
        assert_eq!(batch[0], a);
        assert_eq!(batch[1], a);
    }

    #[test]
    fn wrong_input_shape() {
        let m = build_network(3, &VggConfig::default(), 7).unwrap();
        assert!(matches!(m.run(&Tensor::zeros(&[1, 10, 10])), Err(Error::Dimension(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = VggConfig {
            input_hw: (16, 12),
            widths: vec![2, 3],
            dense_hidden: 8,
            embed_dim: 30,
        };
        let m = build_network(4, &cfg, 5).unwrap();
        m.save(dir.path()).unwrap();
        let back = GeneratorModel::load(dir.path()).unwrap();
        assert_eq!(back.meta, m.meta);
        let x = Tensor::filled(&[1, 16, 12], 0.3f32);
        assert_eq!(back.run(&x).unwrap(), m.run(&x).unwrap());
    }

    /// Reduced widths and input keep finite differences affordable while
    /// exercising every layer type of the full network.
    #[test]
    fn full_network_gradient_check() {
        let cfg = VggConfig {
            input_hw: (8, 8),
            widths: vec![2, 3],
            dense_hidden: 5,
            embed_dim: 4,
        };
        let params = init_params::<f64>(&cfg, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut inputs: Vec<Tensor<f64>> = params
            .iter()
            .map(|(name, t)| {
                let mut t = t.clone();
                if name.ends_with(".bias") {
                    // nonzero biases keep ReLU inputs away from the kink
                    t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
                }
                t
            })
            .collect();
        inputs.insert(0, Tensor::filled(&[1, 8, 8], 1.0));
        let err = grad_check(
            |g, v| {
                let f = forward_vars(g, &cfg, v[0], &v[1..])?;
                g.softmax_cross_entropy(f.logits, 1)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }
}
