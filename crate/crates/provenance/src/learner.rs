//! Small trainable classifiers.
//!
//! An [`MlpClassifier`] has zero or one ReLU hidden layer and a linear output
//! head. Training is plain mini-batch gradient descent with decoupled weight
//! decay (parameters shrink by `1 - lr * wd` before each gradient step), with
//! cross-entropy or focal loss. Gradients are exact analytic derivatives —
//! finite-difference checks in the test suite hold them to that.
//!
//! Everything is deterministic: initialization comes from `init_seed`, epoch
//! shuffles from `shuffle_seed`, so identical configs reproduce identical
//! parameters bit for bit.
//!
//! # Checkpoint format
//!
//! [`MlpClassifier::save_checkpoint`] writes a fixed binary layout: the magic
//! `MLPCKPT1`, a little-endian `u32` count of layer dims, the dims as `u64`,
//! the init seed as `u64`, then every parameter as a little-endian `f64` —
//! per layer the weight matrix in row-major order, then the bias vector.
//! `load_checkpoint` restores the exact bits.

use std::io::{Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::synth::LabeledDataset;
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"MLPCKPT1";

/// Loss function for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    CrossEntropy,
    /// `-alpha_balance * (1 - p_t)^gamma * ln(p_t)`; reduces to scaled
    /// cross-entropy at `gamma = 0`.
    Focal { gamma: f64, alpha_balance: f64 },
}

impl LossKind {
    /// The standard focal configuration: gamma 2, balance factor 0.25.
    pub fn focal_default() -> Self {
        LossKind::Focal {
            gamma: 2.0,
            alpha_balance: 0.25,
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            weight_decay: 1e-3,
            loss: LossKind::CrossEntropy,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::InvalidConfig("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Loss trajectory of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean loss per epoch, one entry per epoch.
    pub epoch_mean_loss: Vec<f64>,
    /// Accuracy on the training set after the final epoch.
    pub final_train_accuracy: f64,
}

/// A classifier with zero or one ReLU hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    /// `[input, output]` or `[input, hidden, output]`.
    layer_dims: Vec<usize>,
    /// Per layer, row-major `out x in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    init_seed: u64,
}

/// Parameter gradients in the same shapes as the model's weights and biases.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpClassifier {
    /// Seeded Gaussian initialization scaled by fan-in; biases start at zero.
    pub fn new(
        input_dim: usize,
        hidden_width: Option<usize>,
        num_classes: usize,
        init_seed: u64,
    ) -> Self {
        let layer_dims = match hidden_width {
            Some(h) if h > 0 => vec![input_dim, h, num_classes],
            _ => vec![input_dim, num_classes],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(&[init_seed, 0x4d_4c_50]));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let fan_in = layer_dims[l];
            let fan_out = layer_dims[l + 1];
            // He scaling before a ReLU, Xavier-ish on the output head.
            let scale = if l == 0 && layer_dims.len() == 3 {
                (2.0 / fan_in as f64).sqrt()
            } else {
                (1.0 / fan_in as f64).sqrt()
            };
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            layer_dims,
            weights,
            biases,
            init_seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    fn hidden_width(&self) -> Option<usize> {
        if self.layer_dims.len() == 3 {
            Some(self.layer_dims[1])
        } else {
            None
        }
    }

    /// All parameters flattened in checkpoint order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    fn forward_into(&self, x: &[f64], hidden_pre: &mut Vec<f64>, logits: &mut Vec<f64>) {
        let k = self.num_classes();
        if let Some(h) = self.hidden_width() {
            hidden_pre.clear();
            let w1 = &self.weights[0];
            let d = self.input_dim();
            for m in 0..h {
                let row = &w1[m * d..(m + 1) * d];
                let z: f64 = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                hidden_pre.push(z + self.biases[0][m]);
            }
            logits.clear();
            let w2 = &self.weights[1];
            for c in 0..k {
                let row = &w2[c * h..(c + 1) * h];
                let z: f64 = row
                    .iter()
                    .zip(hidden_pre.iter())
                    .map(|(a, &pre)| a * pre.max(0.0))
                    .sum();
                logits.push(z + self.biases[1][c]);
            }
        } else {
            logits.clear();
            let w = &self.weights[0];
            let d = self.input_dim();
            for c in 0..k {
                let row = &w[c * d..(c + 1) * d];
                let z: f64 = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                logits.push(z + self.biases[0][c]);
            }
        }
    }

    /// Logits for a row-major batch, returned as a flat `N x K` matrix.
    pub fn predict_logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim();
        if d == 0 || features.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: features.len(),
            });
        }
        let n = features.len() / d;
        let k = self.num_classes();
        let mut out = Vec::with_capacity(n * k);
        let mut hidden = Vec::new();
        let mut logits = Vec::new();
        for i in 0..n {
            self.forward_into(&features[i * d..(i + 1) * d], &mut hidden, &mut logits);
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalOverflow("forward pass".into()));
            }
            out.extend_from_slice(&logits);
        }
        Ok(out)
    }

    /// Argmax labels for a row-major batch; ties break toward the lowest
    /// class index.
    pub fn predict_labels(&self, features: &[f64]) -> Result<Vec<usize>> {
        let logits = self.predict_logits(features)?;
        let k = self.num_classes();
        Ok(logits.chunks_exact(k).map(argmax).collect())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(self.layer_dims.len() as u32).to_le_bytes())?;
        for &dim in &self.layer_dims {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        out.write_all(&self.init_seed.to_le_bytes())?;
        for l in 0..self.weights.len() {
            for v in self.weights[l].iter().chain(self.biases[l].iter()) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let malformed = |detail: &str| Error::Malformed {
            what: format!("checkpoint {}", path.display()),
            detail: detail.into(),
        };
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(malformed("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        file.read_exact(&mut u32buf)?;
        let n_dims = u32::from_le_bytes(u32buf) as usize;
        if !(2..=3).contains(&n_dims) {
            return Err(malformed("layer count must be 2 or 3"));
        }
        let mut u64buf = [0u8; 8];
        let mut layer_dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            file.read_exact(&mut u64buf)?;
            let dim = u64::from_le_bytes(u64buf) as usize;
            if dim == 0 {
                return Err(malformed("zero layer dimension"));
            }
            layer_dims.push(dim);
        }
        file.read_exact(&mut u64buf)?;
        let init_seed = u64::from_le_bytes(u64buf);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..n_dims - 1 {
            let fan_in = layer_dims[l];
            let fan_out = layer_dims[l + 1];
            let mut w = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                file.read_exact(&mut u64buf)?;
                w.push(f64::from_le_bytes(u64buf));
            }
            let mut b = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                file.read_exact(&mut u64buf)?;
                b.push(f64::from_le_bytes(u64buf));
            }
            weights.push(w);
            biases.push(b);
        }
        if file.read(&mut u64buf)? != 0 {
            return Err(malformed("trailing bytes"));
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            init_seed,
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-sample loss value and logit-space gradient factor.
///
/// For both losses the gradient w.r.t. logit `j` is
/// `factor * (p_j - [j == target])` where `factor` depends on the loss and on
/// `p_t`, the probability of the true class.
fn loss_terms(log_probs: &[f64], target: usize, loss: &LossKind) -> (f64, f64) {
    let log_pt = log_probs[target];
    let pt = log_pt.exp();
    match loss {
        LossKind::CrossEntropy => (-log_pt, 1.0),
        LossKind::Focal {
            gamma,
            alpha_balance,
        } => {
            let one_minus = 1.0 - pt;
            let value = if *gamma == 0.0 {
                -alpha_balance * log_pt
            } else {
                -alpha_balance * one_minus.powf(*gamma) * log_pt
            };
            let factor = if one_minus <= 0.0 {
                0.0
            } else if *gamma == 0.0 {
                *alpha_balance
            } else {
                alpha_balance
                    * (one_minus.powf(*gamma)
                        - gamma * pt * one_minus.powf(gamma - 1.0) * log_pt)
            };
            (value, factor)
        }
    }
}

/// Batch-mean loss and its exact gradient for a row-major feature batch.
pub fn loss_and_grad(
    model: &MlpClassifier,
    features: &[f64],
    labels: &[usize],
    loss: &LossKind,
) -> Result<(f64, Gradients)> {
    let d = model.input_dim();
    let k = model.num_classes();
    if labels.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    if features.len() != labels.len() * d {
        return Err(Error::DimensionMismatch {
            expected: labels.len() * d,
            got: features.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Malformed {
            what: "labels".into(),
            detail: format!("label {bad} out of range for {k} classes"),
        });
    }

    let n = labels.len();
    let mut grads = Gradients {
        weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
        biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
    };
    let mut total_loss = 0.0;
    let mut hidden_pre = Vec::new();
    let mut logits = Vec::new();
    let mut log_probs = vec![0.0; k];
    let mut dz = vec![0.0; k];

    for (i, &target) in labels.iter().enumerate() {
        let x = &features[i * d..(i + 1) * d];
        model.forward_into(x, &mut hidden_pre, &mut logits);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow("forward pass".into()));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ln_z = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (lp, &z) in log_probs.iter_mut().zip(logits.iter()) {
            *lp = z - max - ln_z;
        }
        let (value, factor) = loss_terms(&log_probs, target, loss);
        total_loss += value;
        for (j, dzj) in dz.iter_mut().enumerate() {
            let p = log_probs[j].exp();
            let delta = if j == target { 1.0 } else { 0.0 };
            *dzj = factor * (p - delta);
        }

        if let Some(h) = model.hidden_width() {
            let w2 = &model.weights[1];
            let gw2 = &mut grads.weights[1];
            for c in 0..k {
                for m in 0..h {
                    gw2[c * h + m] += dz[c] * hidden_pre[m].max(0.0);
                }
                grads.biases[1][c] += dz[c];
            }
            let gw1 = &mut grads.weights[0];
            for m in 0..h {
                if hidden_pre[m] <= 0.0 {
                    continue;
                }
                let mut dh = 0.0;
                for c in 0..k {
                    dh += dz[c] * w2[c * h + m];
                }
                for (j, &xj) in x.iter().enumerate() {
                    gw1[m * d + j] += dh * xj;
                }
                grads.biases[0][m] += dh;
            }
        } else {
            let gw = &mut grads.weights[0];
            for c in 0..k {
                for (j, &xj) in x.iter().enumerate() {
                    gw[c * d + j] += dz[c] * xj;
                }
                grads.biases[0][c] += dz[c];
            }
        }
    }

    let inv_n = 1.0 / n as f64;
    for w in grads.weights.iter_mut().chain(grads.biases.iter_mut()) {
        for g in w.iter_mut() {
            *g *= inv_n;
        }
    }
    Ok((total_loss * inv_n, grads))
}

/// Mini-batch gradient descent with decoupled weight decay.
///
/// Each step first scales every parameter by `1 - lr * wd`, then applies the
/// gradient of the batch-mean loss. Deterministic given the model's init seed
/// and the config's shuffle seed.
pub fn train(
    model: MlpClassifier,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(MlpClassifier, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training dataset".into()));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    if data.num_classes() > model.num_classes() {
        return Err(Error::SpecMismatch(format!(
            "dataset holds {} classes but the model outputs {}",
            data.num_classes(),
            model.num_classes()
        )));
    }

    let mut model = model;
    let n = data.len();
    let d = data.dim();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_mean_loss = Vec::with_capacity(config.epochs);
    let mut batch_features = Vec::with_capacity(config.batch_size * d);
    let mut batch_labels = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::mix(&[config.shuffle_seed, epoch as u64, 0x45_50]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch_features.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_features.extend_from_slice(data.row(i));
                batch_labels.push(data.labels()[i]);
            }
            let decay = 1.0 - config.learning_rate * config.weight_decay;
            if config.weight_decay > 0.0 {
                for w in model.weights.iter_mut().chain(model.biases.iter_mut()) {
                    for p in w.iter_mut() {
                        *p *= decay;
                    }
                }
            }
            let (loss, grads) = loss_and_grad(&model, &batch_features, &batch_labels, &config.loss)
                .map_err(|e| match e {
                    Error::NumericalOverflow(_) => {
                        Error::NumericalOverflow(format!("training epoch {epoch}"))
                    }
                    other => other,
                })?;
            epoch_loss += loss * chunk.len() as f64;
            for (w, g) in model
                .weights
                .iter_mut()
                .chain(model.biases.iter_mut())
                .zip(grads.weights.iter().chain(grads.biases.iter()))
            {
                for (p, gv) in w.iter_mut().zip(g.iter()) {
                    *p -= config.learning_rate * gv;
                }
            }
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite()
            || model
                .weights
                .iter()
                .chain(model.biases.iter())
                .any(|w| w.iter().any(|p| !p.is_finite()))
        {
            return Err(Error::NumericalOverflow(format!("training epoch {epoch}")));
        }
        epoch_mean_loss.push(mean_loss);
    }

    let final_train_accuracy = dataset_accuracy(&model, data)?;
    Ok((
        model,
        TrainHistory {
            epoch_mean_loss,
            final_train_accuracy,
        },
    ))
}

/// Fraction of rows whose predicted label matches the dataset label.
pub fn dataset_accuracy(model: &MlpClassifier, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("accuracy over an empty dataset".into()));
    }
    let predicted = model.predict_labels(data.features_flat())?;
    let correct = predicted
        .iter()
        .zip(data.labels().iter())
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy_two_blob_dataset(n_per_class: usize, seed: u64) -> LabeledDataset {
        let dim = 4;
        let protos = vec![vec![1.0; dim], vec![-1.0; dim]];
        let gen = synth::GeneratorSpec::identity("toy", protos, 0.5, seed);
        let prompt = synth::PromptSpec::seeded("p", 2, dim, 0.0, seed + 1);
        synth::sample_synthetic(&gen, &prompt, n_per_class, seed + 2).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k_cross_entropy() {
        // Zero-initialized weights exist only transiently; fake it with a
        // model whose parameters are all zero.
        let mut model = MlpClassifier::new(3, None, 2, 0);
        for w in model.weights.iter_mut().chain(model.biases.iter_mut()) {
            for p in w.iter_mut() {
                *p = 0.0;
            }
        }
        let (loss, _) = loss_and_grad(
            &model,
            &[0.5, -0.25, 1.0],
            &[1],
            &LossKind::CrossEntropy,
        )
        .unwrap();
        assert_abs_diff_eq!(loss, (2.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn focal_gamma_zero_reduces_to_cross_entropy() {
        let model = MlpClassifier::new(5, Some(4), 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let features: Vec<f64> = (0..5 * 6).map(|_| rng.sample(StandardNormal)).collect();
        let labels = vec![0, 2, 1, 1, 0, 2];
        let (ce, g_ce) = loss_and_grad(&model, &features, &labels, &LossKind::CrossEntropy).unwrap();
        let focal = LossKind::Focal {
            gamma: 0.0,
            alpha_balance: 1.0,
        };
        let (fo, g_fo) = loss_and_grad(&model, &features, &labels, &focal).unwrap();
        assert_abs_diff_eq!(ce, fo, epsilon = 1e-10);
        for (a, b) in g_ce
            .weights
            .iter()
            .chain(g_ce.biases.iter())
            .flatten()
            .zip(g_fo.weights.iter().chain(g_fo.biases.iter()).flatten())
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    /// Central finite differences on every parameter; the independent check
    /// the analytic gradients are held to.
    fn finite_difference_check(
        d: usize,
        hidden: Option<usize>,
        k: usize,
        loss: &LossKind,
        seed: u64,
    ) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = MlpClassifier::new(d, hidden, k, seed);
        for w in model.weights.iter_mut().chain(model.biases.iter_mut()) {
            for p in w.iter_mut() {
                *p = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let features: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let labels = vec![rng.gen_range(0..k)];

        // Redraw if a hidden pre-activation sits near the ReLU kink, where
        // the finite-difference quotient itself is ill-defined.
        if let Some(h) = hidden {
            let w1 = &model.weights[0];
            for m in 0..h {
                let pre: f64 = w1[m * d..(m + 1) * d]
                    .iter()
                    .zip(features.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + model.biases[0][m];
                if pre.abs() < 1e-3 {
                    return finite_difference_check(d, hidden, k, loss, seed + 1_000_003);
                }
            }
        }

        let (_, grads) = loss_and_grad(&model, &features, &labels, loss).unwrap();
        let eps = 1e-5;
        for layer in 0..model.weights.len() {
            for is_bias in [false, true] {
                let len = if is_bias {
                    model.biases[layer].len()
                } else {
                    model.weights[layer].len()
                };
                for idx in 0..len {
                    let mut plus = model.clone();
                    let mut minus = model.clone();
                    if is_bias {
                        plus.biases[layer][idx] += eps;
                        minus.biases[layer][idx] -= eps;
                    } else {
                        plus.weights[layer][idx] += eps;
                        minus.weights[layer][idx] -= eps;
                    }
                    let (lp, _) = loss_and_grad(&plus, &features, &labels, loss).unwrap();
                    let (lm, _) = loss_and_grad(&minus, &features, &labels, loss).unwrap();
                    let numeric = (lp - lm) / (2.0 * eps);
                    let analytic = if is_bias {
                        grads.biases[layer][idx]
                    } else {
                        grads.weights[layer][idx]
                    };
                    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                    if (analytic - numeric).abs() / denom > 1e-4 {
                        eprintln!(
                            "layer {layer} bias {is_bias} idx {idx}: analytic {analytic} vs numeric {numeric}"
                        );
                        return false;
                    }
                }
            }
        }
        true
    }

    #[test]
    fn gradients_match_finite_differences() {
        let losses = [
            LossKind::CrossEntropy,
            LossKind::Focal {
                gamma: 2.0,
                alpha_balance: 0.25,
            },
        ];
        let mut checked = 0;
        for loss in &losses {
            for &(d, h, k) in &[
                (3usize, Some(4usize), 3usize),
                (2, None, 2),
                (5, Some(2), 4),
                (4, Some(5), 5),
                (2, Some(3), 2),
                (5, None, 5),
            ] {
                for seed in 0..4u64 {
                    assert!(
                        finite_difference_check(d, h, k, loss, 31 + seed * 17),
                        "loss {loss:?} d={d} h={h:?} k={k} seed={seed}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked >= 40);
    }

    #[test]
    fn tiny_learning_rate_leaves_parameters_in_place() {
        let data = toy_two_blob_dataset(30, 5);
        let model = MlpClassifier::new(4, Some(8), 2, 3);
        let before = model.flat_parameters();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-300,
            weight_decay: 0.0,
            loss: LossKind::CrossEntropy,
            shuffle_seed: 1,
        };
        let (trained, history) = train(model, &data, &config).unwrap();
        for (a, b) in trained.flat_parameters().iter().zip(before.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let first = history.epoch_mean_loss[0];
        for &l in &history.epoch_mean_loss {
            assert_abs_diff_eq!(l, first, epsilon = 1e-9);
        }
    }

    #[test]
    fn separable_blobs_reach_high_training_accuracy() {
        let data = toy_two_blob_dataset(100, 11);
        let model = MlpClassifier::new(4, None, 2, 1);
        let config = TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            weight_decay: 1e-3,
            loss: LossKind::CrossEntropy,
            shuffle_seed: 2,
        };
        let (trained, history) = train(model, &data, &config).unwrap();
        assert!(
            history.final_train_accuracy >= 0.99,
            "accuracy {}",
            history.final_train_accuracy
        );
        assert!(dataset_accuracy(&trained, &data).unwrap() >= 0.99);
        assert_eq!(history.epoch_mean_loss.len(), 50);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_two_blob_dataset(50, 23);
        let config = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let (a, _) = train(MlpClassifier::new(4, Some(16), 2, 7), &data, &config).unwrap();
        let (b, _) = train(MlpClassifier::new(4, Some(16), 2, 7), &data, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn epoch_loss_is_non_increasing_early_on() {
        // Statistical property: over 10 seeds at a small learning rate, the
        // first five epochs of mean cross-entropy loss decrease, allowing at
        // most one violation across all seeds.
        let mut violations = 0;
        for seed in 0..10u64 {
            let protos = synth::shared_prototypes(
                synth::DEFAULT_NUM_CLASSES,
                synth::DEFAULT_DIM,
                synth::DEFAULT_PROTOTYPE_RADIUS,
                seed,
            );
            let gen = synth::GeneratorSpec::with_default_transform(
                "g",
                protos,
                synth::DEFAULT_NOISE_SCALE,
                seed,
            );
            let prompt = synth::PromptSpec::seeded(
                "p",
                synth::DEFAULT_NUM_CLASSES,
                synth::DEFAULT_DIM,
                synth::DEFAULT_PROMPT_SHIFT,
                seed + 1,
            );
            let data = synth::sample_synthetic(&gen, &prompt, 50, seed + 2).unwrap();
            let config = TrainConfig {
                epochs: 5,
                batch_size: 32,
                learning_rate: 1e-2,
                weight_decay: 0.0,
                loss: LossKind::CrossEntropy,
                shuffle_seed: seed,
            };
            let (_, history) =
                train(MlpClassifier::new(16, Some(32), 10, seed), &data, &config).unwrap();
            for w in history.epoch_mean_loss.windows(2) {
                if w[1] > w[0] {
                    violations += 1;
                }
            }
        }
        assert!(violations <= 1, "{violations} loss increases in 10 runs");
    }

    #[test]
    fn labels_agree_with_argmax_of_logits() {
        let model = MlpClassifier::new(6, Some(12), 4, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let features: Vec<f64> = (0..1000 * 6).map(|_| rng.sample(StandardNormal)).collect();
        let logits = model.predict_logits(&features).unwrap();
        let labels = model.predict_labels(&features).unwrap();
        for (i, &label) in labels.iter().enumerate() {
            let row = &logits[i * 4..(i + 1) * 4];
            assert_eq!(label, argmax(row));
        }
    }

    #[test]
    fn zero_model_predicts_class_zero_everywhere() {
        let mut model = MlpClassifier::new(3, None, 4, 0);
        for w in model.weights.iter_mut().chain(model.biases.iter_mut()) {
            for p in w.iter_mut() {
                *p = 0.0;
            }
        }
        let labels = model.predict_labels(&[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap();
        assert_eq!(labels, vec![0, 0]);
    }

    #[test]
    fn constant_predictor_scores_one_over_k() {
        let data = toy_two_blob_dataset(200, 99);
        let mut model = MlpClassifier::new(4, None, 2, 0);
        for w in model.weights.iter_mut().chain(model.biases.iter_mut()) {
            for p in w.iter_mut() {
                *p = 0.0;
            }
        }
        assert_abs_diff_eq!(dataset_accuracy(&model, &data).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let data = toy_two_blob_dataset(50, 13);
        let (model, _) = train(
            MlpClassifier::new(4, Some(8), 2, 5),
            &data,
            &TrainConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save_checkpoint(&path).unwrap();
        let loaded = MlpClassifier::load_checkpoint(&path).unwrap();
        assert_eq!(model, loaded);
        let reloaded_bits: Vec<u64> = loaded.flat_parameters().iter().map(|v| v.to_bits()).collect();
        let original_bits: Vec<u64> = model.flat_parameters().iter().map(|v| v.to_bits()).collect();
        assert_eq!(reloaded_bits, original_bits);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(MlpClassifier::load_checkpoint(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn adding_a_constant_to_logits_keeps_labels(
            row in proptest::collection::vec(-5.0f64..5.0, 4),
            shift in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
            prop_assert_eq!(argmax(&row), argmax(&shifted));
        }
    }
}
