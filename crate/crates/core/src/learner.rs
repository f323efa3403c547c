//! The per-iteration weak model: a ReLU MLP with a two-way softmax head,
//! trained on mean cross-entropy with AdamW.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Label;
use crate::error::{Error, Result};

/// Dense layer, weights row-major `[n_out][n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.n_in).zip(&self.biases))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// fan-in `n` is drawn from `U(-1/sqrt(n), 1/sqrt(n))`.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output size");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut layer = Layer::zeros(w[0], w[1]);
                for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                    *p = rng.gen_range(-bound..bound);
                }
                layer
            })
            .collect();
        MlpModel { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        MlpModel {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.n_out));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|p| p.is_finite()))
    }

    /// Pre-activations of every layer for one input (the last entry is the
    /// logit vector).
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut input: Vec<f64> = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; l.n_out];
            l.forward(&input, &mut z);
            input = if i + 1 < self.layers.len() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("at least one layer")
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Argmax class mapped to a label (class 0 is +1; ties go to +1) and the
    /// winning probability.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let p = self.probabilities(x);
        let (best, prob) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        Ok((Label::from_class_index(best), prob))
    }

    /// Mean cross-entropy over a batch and its gradient, laid out like
    /// [`MlpModel::params`].
    pub fn loss_and_gradient(&self, batch: &[(&[f64], Label)]) -> (f64, Vec<f64>) {
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.n_in, l.n_out))
            .collect();
        let mut loss = 0.0;
        let n_layers = self.layers.len();
        for (x, label) in batch {
            let acts = self.activations(x);
            let logits = &acts[n_layers - 1];
            let p = softmax(logits);
            let target = label.class_index();
            loss -= log_softmax(logits)[target];
            // dL/dz for the output layer
            let mut delta: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(i, &pi)| pi - if i == target { 1.0 } else { 0.0 })
                .collect();
            for li in (0..n_layers).rev() {
                let layer = &self.layers[li];
                let g = &mut grads[li];
                let input: Vec<f64> = if li == 0 {
                    x.to_vec()
                } else {
                    acts[li - 1].iter().map(|v| v.max(0.0)).collect()
                };
                for (o, d) in delta.iter().enumerate() {
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    for (gw, xi) in row.iter_mut().zip(&input) {
                        *gw += d * xi;
                    }
                }
                if li == 0 {
                    break;
                }
                let prev = &acts[li - 1];
                let mut next = vec![0.0; layer.n_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (n, z) in next.iter_mut().zip(prev) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut flat = Vec::with_capacity(self.n_params());
        for g in grads {
            flat.extend(g.weights.iter().map(|v| v * scale));
            flat.extend(g.biases.iter().map(|v| v * scale));
        }
        (loss * scale, flat)
    }

    pub fn mean_loss(&self, data: &[(Vec<f64>, Label)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        data.iter()
            .map(|(x, y)| -log_softmax(&self.logits(x))[y.class_index()])
            .sum::<f64>()
            / data.len() as f64
    }

    pub fn accuracy(&self, data: &[(Vec<f64>, Label)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .iter()
            .filter(|(x, y)| self.predict(x).map(|(l, _)| l == *y).unwrap_or(false))
            .count();
        correct as f64 / data.len() as f64
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            layer_sizes: self.layer_sizes(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerSnapshot {
                    weights: encode_f64s(&l.weights),
                    biases: encode_f64s(&l.biases),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(s: &ModelSnapshot) -> Result<Self> {
        if s.layer_sizes.len() != s.layers.len() + 1 {
            return Err(Error::Validation("snapshot layer count does not match its sizes".into()));
        }
        let mut model = MlpModel::zeros(&s.layer_sizes);
        for (l, snap) in model.layers.iter_mut().zip(&s.layers) {
            let w = decode_f64s(&snap.weights)?;
            let b = decode_f64s(&snap.biases)?;
            if w.len() != l.weights.len() || b.len() != l.biases.len() {
                return Err(Error::Validation("snapshot parameter count mismatch".into()));
            }
            l.weights = w;
            l.biases = b;
        }
        Ok(model)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Serialized model: layer sizes plus little-endian float64 parameters in
/// base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<LayerSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub weights: String,
    pub biases: String,
}

fn encode_f64s(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    BASE64.encode(bytes)
}

fn decode_f64s(s: &str) -> Result<Vec<f64>> {
    let bytes = BASE64
        .decode(s)
        .map_err(|e| Error::Validation(format!("bad base64 parameters: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Validation("parameter bytes are not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Learning rates tried when a grid search is requested.
pub const LEARNING_RATE_GRID: [f64; 3] = [2e-4, 1e-4, 5e-5];

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: LEARNING_RATE_GRID[0],
            weight_decay: 0.01,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            hidden: vec![64, 32],
            patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// AdamW: Adam moments with weight decay applied directly to the parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n_params: usize, cfg: &TrainConfig) -> Self {
        AdamW {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * self.weight_decay * params[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub epochs_run: usize,
    pub learning_rate: f64,
}

/// Trains on `train` and keeps the parameters with the lowest validation loss
/// (training loss when `validation` is empty), stopping after `patience`
/// epochs without improvement.
pub fn train_weak_model(
    train: &[(Vec<f64>, Label)],
    validation: &[(Vec<f64>, Label)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train.first().ok_or(Error::EmptyDataset)?;
    let d_in = first.0.len();
    if let Some((x, _)) = train.iter().chain(validation).find(|(x, _)| x.len() != d_in) {
        return Err(Error::Shape {
            expected: d_in,
            got: x.len(),
        });
    }
    let positives = train.iter().filter(|(_, y)| *y == Label::Positive).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::DegenerateData(
            "training set contains a single class".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![d_in];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let mut model = MlpModel::new(&sizes, &mut rng);
    let mut params = model.params();
    let mut opt = AdamW::new(params.len(), cfg);

    let selection = if validation.is_empty() { train } else { validation };
    let mut best = model.clone();
    let mut best_loss = model.mean_loss(selection);
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], Label)> = chunk
                .iter()
                .map(|&i| (train[i].0.as_slice(), train[i].1))
                .collect();
            let (loss, grad) = model.loss_and_gradient(&batch);
            epoch_loss += loss * batch.len() as f64;
            opt.step(&mut params, &grad);
            model.set_params(&params);
        }
        epoch_loss /= train.len() as f64;
        if !epoch_loss.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let loss = model.mean_loss(selection);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if loss < best_loss {
            best_loss = loss;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch,
        best_validation_loss: best_loss,
        epochs_run,
        learning_rate: cfg.learning_rate,
    })
}

/// Trains once per learning rate in `grid` and keeps the run with the lowest
/// validation loss (first one on ties).
pub fn train_with_lr_grid(
    train: &[(Vec<f64>, Label)],
    validation: &[(Vec<f64>, Label)],
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<TrainOutcome> {
    let mut best: Option<TrainOutcome> = None;
    for &lr in grid {
        let run = train_weak_model(
            train,
            validation,
            &TrainConfig {
                learning_rate: lr,
                ..cfg.clone()
            },
        )?;
        if best
            .as_ref()
            .is_none_or(|b| run.best_validation_loss < b.best_validation_loss)
        {
            best = Some(run);
        }
    }
    best.ok_or_else(|| Error::Config("empty learning-rate grid".into()))
}
