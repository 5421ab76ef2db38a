//! Fully connected ReLU network trained with mini-batch Adam.
//!
//! Inputs are standardized with training-split statistics stored in the
//! model. Regression targets are standardized the same way and mapped back
//! on output; classification uses a softmax over the label vocabulary seen
//! in training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::Dataset;
use crate::{Prediction, Task};

pub const MLP_SCHEMA: &str = "hotspot.mlp.v1";

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub task: Task,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: vec![21, 21, 21],
            task: Task::Regression,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 200,
            seed: 42,
        }
    }
}

impl MlpConfig {
    pub fn for_task(task: Task) -> Self {
        MlpConfig { task, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.contains(&0) {
            return Err(Error::InvalidParams("hidden layer widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParams("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layer, `weights` row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub schema: String,
    pub config: MlpConfig,
    pub feature_names: Vec<String>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    /// Regression target scaling; `(0, 1)` for classification.
    pub target_mean: f64,
    pub target_std: f64,
    /// Label vocabulary, classification only.
    pub labels: Vec<u32>,
    pub layers: Vec<Layer>,
    pub n_train: usize,
}

/// He-initialized network with identity standardization.
pub fn init(config: &MlpConfig, n_inputs: usize, n_outputs: usize) -> Result<MlpParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut widths = vec![n_inputs];
    widths.extend(&config.hidden_layers);
    widths.push(n_outputs);
    let layers = widths
        .windows(2)
        .map(|w| {
            let mut layer = Layer::zeros(w[0], w[1]);
            let scale = (2.0 / w[0] as f64).sqrt();
            for v in &mut layer.weights {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = z * scale;
            }
            layer
        })
        .collect();
    Ok(MlpParams {
        schema: MLP_SCHEMA.to_string(),
        config: config.clone(),
        feature_names: (0..n_inputs).map(|i| format!("x{i}")).collect(),
        input_mean: vec![0.0; n_inputs],
        input_std: vec![1.0; n_inputs],
        target_mean: 0.0,
        target_std: 1.0,
        labels: Vec::new(),
        layers,
        n_train: 0,
    })
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

impl MlpParams {
    pub fn n_inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.input_mean).zip(&self.input_std).map(|((x, m), s)| (x - m) / s).collect()
    }

    /// Pre-activations of every layer for an already standardized input.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[l], &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    /// Raw network output: the de-standardized value for regression, the
    /// softmax distribution over `labels` for classification.
    pub fn output(&self, row: &[f64]) -> Vec<f64> {
        let mut out = self.activations(&self.standardize(row)).pop().expect("output layer");
        match self.config.task {
            Task::Regression => out.iter_mut().for_each(|v| *v = *v * self.target_std + self.target_mean),
            Task::Classification => softmax_in_place(&mut out),
        }
        out
    }

    /// Point prediction; the classification argmax favors the smallest
    /// label on ties.
    pub fn forward(&self, row: &[f64]) -> Prediction {
        let out = self.output(row);
        match self.config.task {
            Task::Regression => Prediction::Value(out[0]),
            Task::Classification => {
                let mut best = 0;
                for (k, &p) in out.iter().enumerate() {
                    if p > out[best] {
                        best = k;
                    }
                }
                Prediction::Label(self.labels.get(best).copied().unwrap_or(best as u32))
            }
        }
    }

    fn encode_target(&self, target: u32) -> Result<Encoded> {
        match self.config.task {
            Task::Regression => Ok(Encoded::Value((f64::from(target) - self.target_mean) / self.target_std)),
            Task::Classification => self
                .labels
                .binary_search(&target)
                .map(Encoded::Class)
                .map_err(|_| Error::InvalidParams(format!("label {target} not in the training vocabulary"))),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<MlpParams> {
        let p: MlpParams = serde_json::from_slice(bytes)?;
        if p.schema != MLP_SCHEMA {
            return Err(Error::Artifact(format!("unsupported mlp schema `{}`", p.schema)));
        }
        let chained = p.layers.windows(2).all(|w| w[0].outputs == w[1].inputs);
        if p.layers.is_empty() || !chained || p.input_std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Artifact("inconsistent mlp layer shapes".into()));
        }
        Ok(p)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(crate::digest_hex(&self.to_json()?))
    }

    /// Mutable views of every parameter block, in a fixed order.
    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }
}

#[derive(Debug, Clone, Copy)]
enum Encoded {
    Value(f64),
    Class(usize),
}

/// Gradient of the batch loss, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(params: &MlpParams) -> Self {
        Gradients { layers: params.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    fn blocks(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }
}

/// Mean batch loss (squared error on standardized targets, or softmax
/// cross-entropy) and its gradient with respect to every weight and bias.
///
/// `rows` are raw feature rows; standardization uses the statistics stored
/// in `params`.
pub fn batch_loss_and_grad(params: &MlpParams, rows: &[&[f64]], targets: &[u32]) -> Result<(f64, Gradients)> {
    let encoded: Vec<Encoded> = targets.iter().map(|&t| params.encode_target(t)).collect::<Result<_>>()?;
    let inputs: Vec<Vec<f64>> = rows.iter().map(|r| params.standardize(r)).collect();
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    Ok(loss_and_grad_std(params, &refs, &encoded))
}

/// Mean batch loss only.
pub fn batch_loss(params: &MlpParams, rows: &[&[f64]], targets: &[u32]) -> Result<f64> {
    let mut total = 0.0;
    for (row, &t) in rows.iter().zip(targets) {
        let out = params.activations(&params.standardize(row)).pop().expect("output layer");
        total += sample_loss(&out, params.encode_target(t)?);
    }
    Ok(total / rows.len() as f64)
}

fn sample_loss(out: &[f64], target: Encoded) -> f64 {
    match target {
        Encoded::Value(y) => (out[0] - y).powi(2),
        Encoded::Class(k) => {
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - out[k]
        }
    }
}

fn loss_and_grad_std(params: &MlpParams, inputs: &[&[f64]], targets: &[Encoded]) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(params);
    let batch = inputs.len() as f64;
    let mut loss = 0.0;
    let last = params.layers.len() - 1;
    for (input, &target) in inputs.iter().zip(targets) {
        let acts = params.activations(input);
        let out = &acts[last + 1];
        loss += sample_loss(out, target);
        // Error signal at the output pre-activation.
        let mut delta: Vec<f64> = match target {
            Encoded::Value(y) => vec![2.0 * (out[0] - y) / batch],
            Encoded::Class(k) => {
                let mut p = out.clone();
                softmax_in_place(&mut p);
                p[k] -= 1.0;
                p.iter_mut().for_each(|v| *v /= batch);
                p
            }
        };
        for l in (0..=last).rev() {
            let layer = &params.layers[l];
            let below = &acts[l];
            let g = &mut grads.layers[l];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(below).for_each(|(w, a)| *w += d * a);
            }
            if l > 0 {
                let mut next = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    next.iter_mut().zip(w).for_each(|(n, wi)| *n += wi * delta[o]);
                }
                // ReLU derivative; `below` holds post-activation values.
                next.iter_mut().zip(below).for_each(|(n, a)| {
                    if *a <= 0.0 {
                        *n = 0.0;
                    }
                });
                delta = next;
            }
        }
    }
    (loss / batch, grads)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(params: &mut MlpParams, lr: f64) -> Self {
        let m: Vec<Vec<f64>> = params.blocks_mut().map(|b| vec![0.0; b.len()]).collect();
        Adam { v: m.clone(), m, step: 0, lr }
    }

    fn update(&mut self, params: &mut MlpParams, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (((p, g), m), v) in params.blocks_mut().zip(grads.blocks()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn column_stats(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let p = data.n_features();
    let n = data.len() as f64;
    let mut mean = vec![0.0; p];
    for row in data.rows() {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; p];
    for row in data.rows() {
        var.iter_mut().zip(row).zip(&mean).for_each(|((v, x), m)| *v += (x - m).powi(2));
    }
    let std = var.iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
    (mean, std)
}

/// Trains a network and also returns the full-training-set loss after each
/// epoch.
pub fn train_with_history(data: &Dataset, config: &MlpConfig) -> Result<(MlpParams, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let labels = {
        let mut l = data.targets.clone();
        l.sort_unstable();
        l.dedup();
        l
    };
    let n_outputs = match config.task {
        Task::Regression => 1,
        Task::Classification => labels.len(),
    };
    let mut params = init(config, data.n_features(), n_outputs)?;
    params.feature_names = data.feature_names.clone();
    params.n_train = data.len();
    (params.input_mean, params.input_std) = column_stats(data);
    match config.task {
        Task::Regression => {
            let n = data.len() as f64;
            let ys = data.targets.iter().map(|&t| f64::from(t));
            let mean = ys.clone().sum::<f64>() / n;
            let std = (ys.map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
            params.target_mean = mean;
            params.target_std = if std > 1e-12 { std } else { 1.0 };
        }
        Task::Classification => params.labels = labels,
    }

    let inputs: Vec<Vec<f64>> = data.rows().map(|r| params.standardize(r)).collect();
    let targets: Vec<Encoded> = data.targets.iter().map(|&t| params.encode_target(t)).collect::<Result<_>>()?;
    // Shuffling gets its own stream so that it does not shift with the
    // number of weights drawn by `init`.
    let mut rng = ChaCha8Rng::seed_from_u64(crate::forest::mix64(config.seed));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_size = config.batch_size.min(data.len());
    let mut adam = Adam::new(&mut params, config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    let all_refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<Encoded> = chunk.iter().map(|&i| targets[i]).collect();
            let (_, grads) = loss_and_grad_std(&params, &xs, &ys);
            adam.update(&mut params, &grads);
        }
        let loss = all_refs
            .iter()
            .zip(&targets)
            .map(|(x, &t)| sample_loss(&params.activations(x).pop().expect("output"), t))
            .sum::<f64>()
            / data.len() as f64;
        history.push(loss);
    }
    Ok((params, history))
}

pub fn train(data: &Dataset, config: &MlpConfig) -> Result<MlpParams> {
    train_with_history(data, config).map(|(p, _)| p)
}
