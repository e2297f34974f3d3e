use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::autodiff::{Graph, NodeId, Tensor};

use super::config::{Activation, ModelConfig};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    WaveCnn,
    WaveRnn,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::WaveCnn => "wavecnn",
            ModelKind::WaveRnn => "wavernn",
        }
    }
}

/// Classifier over raw waveforms: a shared frame-wise convolutional front
/// end with either a convolutional (WaveCNN) or LSTM (WaveRNN) back end.
///
/// Immutable after construction; training works on a private copy. Concurrent
/// `predict`/`loss_and_input_grad` calls on one model are safe.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub kind: ModelKind,
    pub params: BTreeMap<String, Tensor>,
    pub class_labels: Vec<String>,
}

/// Split a preprocessed waveform into non-overlapping frames.
pub fn frame(w: &Waveform, frame_ms: f64) -> Result<Vec<Vec<f64>>, NnError> {
    let frame_len = (frame_ms * w.sample_rate as f64 / 1000.0).round() as usize;
    if frame_len == 0 || w.len() % frame_len != 0 {
        return Err(NnError::WrongInput {
            detail: format!(
                "length {} is not divisible into {} ms frames ({} samples); \
                 run preprocess first",
                w.len(),
                frame_ms,
                frame_len
            ),
        });
    }
    Ok(w.samples.chunks_exact(frame_len).map(|c| c.to_vec()).collect())
}

pub fn build_wavecnn(config: &ModelConfig, seed: u64) -> Result<Model, NnError> {
    build(config, ModelKind::WaveCnn, seed)
}

pub fn build_wavernn(config: &ModelConfig, seed: u64) -> Result<Model, NnError> {
    build(config, ModelKind::WaveRnn, seed)
}

fn build(config: &ModelConfig, kind: ModelKind, seed: u64) -> Result<Model, NnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    // Front end first, from the seed's start of stream: equal seeds give the
    // two kinds element-wise identical front-end parameters.
    let feat = config.conv_features;
    let k = config.kernel_len;
    for b in 0..config.frontend_blocks {
        let in_ch = if b == 0 { 1 } else { feat };
        params.insert(
            format!("frontend.{b}.conv.w"),
            glorot_uniform(&[feat, in_ch, k], in_ch * k, feat * k, &mut rng),
        );
        params.insert(format!("frontend.{b}.conv.b"), Tensor::zeros(&[feat]));
    }
    let feature_len = config.frontend_out_len();
    match kind {
        ModelKind::WaveCnn => {
            for b in 0..config.backend_blocks {
                params.insert(
                    format!("backend.{b}.conv.w"),
                    glorot_uniform(&[feat, feat, k], feat * k, feat * k, &mut rng),
                );
                params.insert(format!("backend.{b}.conv.b"), Tensor::zeros(&[feat]));
            }
            let flat = feat * config.backend_out_len();
            params.insert(
                "fc.w".into(),
                glorot_uniform(&[config.fc_units, flat], flat, config.fc_units, &mut rng),
            );
            params.insert("fc.b".into(), Tensor::zeros(&[config.fc_units]));
            params.insert(
                "head.w".into(),
                glorot_uniform(
                    &[config.num_classes, config.fc_units],
                    config.fc_units,
                    config.num_classes,
                    &mut rng,
                ),
            );
            params.insert("head.b".into(), Tensor::zeros(&[config.num_classes]));
        }
        ModelKind::WaveRnn => {
            let u = config.rnn_units;
            let input = feat * feature_len;
            params.insert(
                "lstm.wx".into(),
                glorot_uniform(&[4 * u, input], input, u, &mut rng),
            );
            params.insert(
                "lstm.wh".into(),
                glorot_uniform(&[4 * u, u], u, u, &mut rng),
            );
            // Forget-gate bias +1 stabilizes early training.
            let mut bias = Tensor::zeros(&[4 * u]);
            bias.values[u..2 * u].iter_mut().for_each(|v| *v = 1.0);
            params.insert("lstm.b".into(), bias);
            params.insert(
                "head.w".into(),
                glorot_uniform(&[config.num_classes, u], u, config.num_classes, &mut rng),
            );
            params.insert("head.b".into(), Tensor::zeros(&[config.num_classes]));
        }
    }
    Ok(Model {
        config: *config,
        kind,
        params,
        class_labels: (0..config.num_classes).map(|c| format!("class{c}")).collect(),
    })
}

fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::from_values(shape, values).expect("shape/value agreement")
}

/// Number of parameters implied by `(config, kind)` alone.
pub fn param_count(config: &ModelConfig, kind: ModelKind) -> usize {
    let feat = config.conv_features;
    let k = config.kernel_len;
    let mut count = (feat * k + feat) + (config.frontend_blocks - 1) * (feat * feat * k + feat);
    match kind {
        ModelKind::WaveCnn => {
            count += config.backend_blocks * (feat * feat * k + feat);
            let flat = feat * config.backend_out_len();
            count += config.fc_units * flat + config.fc_units;
            count += config.num_classes * config.fc_units + config.num_classes;
        }
        ModelKind::WaveRnn => {
            let u = config.rnn_units;
            let input = feat * config.frontend_out_len();
            count += 4 * u * input + 4 * u * u + 4 * u;
            count += config.num_classes * u + config.num_classes;
        }
    }
    count
}

/// A model's graph instance plus the node ids needed to drive it.
pub struct ModelGraph {
    pub graph: Graph,
    pub x: NodeId,
    pub target: NodeId,
    pub probs: NodeId,
    pub loss: NodeId,
    num_classes: usize,
}

impl ModelGraph {
    /// Bind one example: waveform samples plus a one-hot target.
    pub fn bind_example(&mut self, x: &[f64], label: usize) -> Result<(), NnError> {
        self.graph.bind("x", x)?;
        let mut onehot = vec![0.0; self.num_classes];
        if label >= self.num_classes {
            return Err(NnError::WrongInput {
                detail: format!("label {label} out of range for {} classes", self.num_classes),
            });
        }
        onehot[label] = 1.0;
        self.graph.bind("y", &onehot)?;
        Ok(())
    }

    /// Refresh parameter leaves from a model (after an optimizer step).
    pub fn bind_params(&mut self, model: &Model) -> Result<(), NnError> {
        for (name, tensor) in &model.params {
            self.graph.bind(name, &tensor.values)?;
        }
        Ok(())
    }
}

impl Model {
    /// Assemble the computation graph for this model with parameters bound.
    pub fn compile(&self) -> Result<ModelGraph, NnError> {
        let cfg = &self.config;
        let mut g = Graph::new();
        let x = g.input("x", &[cfg.n_samples()]);
        let y = g.input_no_grad("y", &[cfg.num_classes]);
        let mut params = BTreeMap::new();
        for (name, tensor) in &self.params {
            params.insert(name.clone(), g.param(name, tensor.clone()));
        }
        let frames = g.frame(x, cfg.frame_len())?;
        let mut h = frames;
        for b in 0..cfg.frontend_blocks {
            h = g.conv1d_same(h, params[&format!("frontend.{b}.conv.w")], params[&format!("frontend.{b}.conv.b")])?;
            h = activation(&mut g, h, cfg.activation)?;
            h = g.max_pool(h, cfg.pool)?;
        }
        let logits = match self.kind {
            ModelKind::WaveCnn => {
                let mut t = g.concat_time(h)?;
                for b in 0..cfg.backend_blocks {
                    t = g.conv1d_same(t, params[&format!("backend.{b}.conv.w")], params[&format!("backend.{b}.conv.b")])?;
                    t = activation(&mut g, t, cfg.activation)?;
                    t = g.max_pool(t, cfg.pool)?;
                }
                let flat = g.flatten(t)?;
                let fc = g.dense(flat, params["fc.w"], params["fc.b"])?;
                let fc = activation(&mut g, fc, cfg.activation)?;
                g.dense(fc, params["head.w"], params["head.b"])?
            }
            ModelKind::WaveRnn => {
                let seq = g.flatten_frames(h)?;
                let last = g.lstm_last(seq, params["lstm.wx"], params["lstm.wh"], params["lstm.b"], cfg.rnn_units)?;
                g.dense(last, params["head.w"], params["head.b"])?
            }
        };
        let probs = g.softmax(logits)?;
        let loss = g.softmax_cross_entropy(logits, y)?;
        g.set_loss(loss)?;
        Ok(ModelGraph {
            graph: g,
            x,
            target: y,
            probs,
            loss,
            num_classes: cfg.num_classes,
        })
    }

    fn check_input(&self, x: &Waveform) -> Result<(), NnError> {
        if x.len() != self.config.n_samples() {
            return Err(NnError::WrongInput {
                detail: format!(
                    "expected {} samples, got {} (run preprocess first)",
                    self.config.n_samples(),
                    x.len()
                ),
            });
        }
        if x.sample_rate != self.config.sample_rate {
            return Err(NnError::WrongInput {
                detail: format!(
                    "expected {} Hz, got {} Hz",
                    self.config.sample_rate, x.sample_rate
                ),
            });
        }
        Ok(())
    }

    /// Class probabilities for a preprocessed waveform.
    pub fn predict(&self, x: &Waveform) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut mg = self.compile()?;
        mg.bind_example(&x.samples, 0)?;
        mg.graph.forward()?;
        Ok(mg.graph.value(mg.probs).to_vec())
    }

    pub fn predict_label(&self, x: &Waveform) -> Result<usize, NnError> {
        Ok(argmax(&self.predict(x)?))
    }

    /// Cross-entropy loss and its gradient with respect to the input
    /// waveform. Parameters are untouched.
    pub fn loss_and_input_grad(&self, x: &Waveform, label: usize) -> Result<(f64, Vec<f64>), NnError> {
        self.check_input(x)?;
        let mut mg = self.compile()?;
        mg.bind_example(&x.samples, label)?;
        let loss = mg.graph.forward()?;
        let grads = mg.graph.backward()?;
        Ok((loss, grads["x"].values.clone()))
    }

    pub fn label_index(&self, label: &str) -> Result<usize, NnError> {
        self.class_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| NnError::UnknownLabel {
                label: label.to_string(),
                known: self.class_labels.join(", "),
            })
    }

    pub fn total_params(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }
}

fn activation(g: &mut Graph, x: NodeId, a: Activation) -> Result<NodeId, crate::autodiff::GradError> {
    match a {
        Activation::Tanh => g.tanh(x),
        Activation::Relu => g.relu(x),
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
