//! Multi-layer perceptron baseline: 4 inputs, one 20-unit ReLU hidden layer
//! and a sigmoid output, trained by full-batch gradient descent on binary
//! cross-entropy. `DDOS` is the positive class.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{LabeledExample, FEATURE_COUNT};
use crate::label::TrafficLabel;

pub const INPUT: usize = FEATURE_COUNT;
pub const HIDDEN: usize = 20;
pub const PARAM_COUNT: usize = INPUT * HIDDEN + HIDDEN + HIDDEN + 1;
pub const MODEL_MAGIC: &str = "flowshot-mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum MlpError {
    #[error("example {source_index}: feature {feature:?} is not numeric")]
    NonNumericFeature { source_index: usize, feature: String },
    #[error("training pool contains a single label")]
    SingleClassPool,
    #[error("training pool is empty")]
    EmptyPool,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 500, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MlpError::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs < 1 {
            return Err(MlpError::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: [f64; INPUT],
    pub std: [f64; INPUT],
}

impl Scaler {
    pub fn identity() -> Self {
        Self { mean: [0.0; INPUT], std: [1.0; INPUT] }
    }

    pub fn transform(&self, x: &[f64; INPUT]) -> [f64; INPUT] {
        std::array::from_fn(|i| (x[i] - self.mean[i]) / self.std[i])
    }
}

fn numeric(example: &LabeledExample) -> Result<[f64; INPUT], MlpError> {
    example.numeric_features().ok_or_else(|| {
        let bad = example.numeric_view.iter().position(Option::is_none).unwrap_or(0);
        MlpError::NonNumericFeature { source_index: example.source_index, feature: example.pairs[bad].name.clone() }
    })
}

/// Population mean and standard deviation per feature; a zero deviation is
/// replaced by 1.
pub fn fit_scaler(train: &[LabeledExample]) -> Result<Scaler, MlpError> {
    let rows = train.iter().map(numeric).collect::<Result<Vec<_>, _>>()?;
    Ok(fit_scaler_rows(&rows))
}

fn fit_scaler_rows(rows: &[[f64; INPUT]]) -> Scaler {
    if rows.is_empty() {
        return Scaler::identity();
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; INPUT];
    let mut std = [0.0; INPUT];
    for i in 0..INPUT {
        mean[i] = rows.iter().map(|r| r[i]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n;
        std[i] = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
    }
    Scaler { mean, std }
}

/// Weights of the network. `w1[i][j]` connects input `i` to hidden unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w1: [[f64; HIDDEN]; INPUT],
    pub b1: [f64; HIDDEN],
    pub w2: [f64; HIDDEN],
    pub b2: f64,
}

impl Params {
    pub fn zeros() -> Self {
        Self { w1: [[0.0; HIDDEN]; INPUT], b1: [0.0; HIDDEN], w2: [0.0; HIDDEN], b2: 0.0 }
    }

    /// Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)); zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r1 = (6.0 / (INPUT + HIDDEN) as f64).sqrt();
        let r2 = (6.0 / (HIDDEN + 1) as f64).sqrt();
        let mut p = Self::zeros();
        for row in p.w1.iter_mut() {
            for w in row.iter_mut() {
                *w = rng.gen_range(-r1..r1);
            }
        }
        for w in p.w2.iter_mut() {
            *w = rng.gen_range(-r2..r2);
        }
        p
    }

    /// Flat view in the order w1 (row-major), b1, w2, b2.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PARAM_COUNT);
        self.w1.iter().for_each(|row| v.extend_from_slice(row));
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        if v.len() != PARAM_COUNT {
            return None;
        }
        let mut p = Self::zeros();
        let mut it = v.iter().copied();
        for row in p.w1.iter_mut() {
            row.iter_mut().for_each(|w| *w = it.next().unwrap());
        }
        p.b1.iter_mut().for_each(|w| *w = it.next().unwrap());
        p.w2.iter_mut().for_each(|w| *w = it.next().unwrap());
        p.b2 = it.next().unwrap();
        Some(p)
    }

    fn hidden(&self, x: &[f64; INPUT]) -> [f64; HIDDEN] {
        std::array::from_fn(|j| {
            let z = self.b1[j] + (0..INPUT).map(|i| self.w1[i][j] * x[i]).sum::<f64>();
            z.max(0.0)
        })
    }

    /// Output logit for an already-scaled input.
    pub fn logit(&self, x: &[f64; INPUT]) -> f64 {
        let h = self.hidden(x);
        self.b2 + h.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on the logit, stable for large |z|.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over `(inputs, targets)` and its gradient with
/// respect to every parameter. Inputs are already scaled; targets are 0 or 1.
pub fn loss_and_gradients(params: &Params, inputs: &[[f64; INPUT]], targets: &[f64]) -> (f64, Params) {
    let n = inputs.len() as f64;
    let mut grad = Params::zeros();
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(targets) {
        let pre: [f64; HIDDEN] =
            std::array::from_fn(|j| params.b1[j] + (0..INPUT).map(|i| params.w1[i][j] * x[i]).sum::<f64>());
        let h: [f64; HIDDEN] = std::array::from_fn(|j| pre[j].max(0.0));
        let z = params.b2 + h.iter().zip(&params.w2).map(|(a, w)| a * w).sum::<f64>();
        loss += bce_with_logit(z, y);

        let dz = (sigmoid(z) - y) / n;
        grad.b2 += dz;
        for j in 0..HIDDEN {
            grad.w2[j] += dz * h[j];
            if pre[j] > 0.0 {
                let dpre = dz * params.w2[j];
                grad.b1[j] += dpre;
                for (row, xi) in grad.w1.iter_mut().zip(x) {
                    row[j] += dpre * xi;
                }
            }
        }
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub params: Params,
    pub scaler: Scaler,
    pub seed: u64,
    pub final_loss: f64,
}

fn target(label: TrafficLabel) -> f64 {
    match label {
        TrafficLabel::Ddos => 1.0,
        TrafficLabel::Benign => 0.0,
    }
}

/// Fits the scaler on `train`, then trains the network.
pub fn train(train: &[LabeledExample], config: &TrainConfig) -> Result<MlpModel, MlpError> {
    let rows = train.iter().map(numeric).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<TrafficLabel> = train.iter().map(|e| e.label).collect();
    let scaler = fit_scaler_rows(&rows);
    train_rows(&rows, &labels, scaler, config)
}

/// Trains on raw numeric rows with a caller-supplied scaler.
pub fn train_rows(
    rows: &[[f64; INPUT]],
    labels: &[TrafficLabel],
    scaler: Scaler,
    config: &TrainConfig,
) -> Result<MlpModel, MlpError> {
    config.validate()?;
    if rows.is_empty() {
        return Err(MlpError::EmptyPool);
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(MlpError::SingleClassPool);
    }
    let inputs: Vec<[f64; INPUT]> = rows.iter().map(|r| scaler.transform(r)).collect();
    let targets: Vec<f64> = labels.iter().map(|&l| target(l)).collect();

    let mut params = Params::init(config.seed);
    for epoch in 0..config.epochs {
        let (loss, g) = loss_and_gradients(&params, &inputs, &targets);
        if !loss.is_finite() {
            return Err(MlpError::DivergedLoss { epoch });
        }
        let lr = config.learning_rate;
        for i in 0..INPUT {
            for j in 0..HIDDEN {
                params.w1[i][j] -= lr * g.w1[i][j];
            }
        }
        for j in 0..HIDDEN {
            params.b1[j] -= lr * g.b1[j];
            params.w2[j] -= lr * g.w2[j];
        }
        params.b2 -= lr * g.b2;
    }
    let (final_loss, _) = loss_and_gradients(&params, &inputs, &targets);
    if !final_loss.is_finite() {
        return Err(MlpError::DivergedLoss { epoch: config.epochs });
    }
    Ok(MlpModel { params, scaler, seed: config.seed, final_loss })
}

impl MlpModel {
    /// Score for a raw (unscaled) feature row.
    pub fn score_raw(&self, x: &[f64; INPUT]) -> f64 {
        sigmoid(self.params.logit(&self.scaler.transform(x)))
    }

    /// Writes the versioned text format:
    ///
    /// ```text
    /// flowshot-mlp 1
    /// shape 4 20
    /// seed <u64>
    /// final_loss <f64>
    /// scaler_mean <4 values>
    /// scaler_std <4 values>
    /// w1 <80 values, input-major>
    /// b1 <20 values>
    /// w2 <20 values>
    /// b2 <1 value>
    /// ```
    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), MlpError> {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let w1: Vec<f64> = self.params.w1.iter().flatten().copied().collect();
        writeln!(sink, "{MODEL_MAGIC} {MODEL_VERSION}")?;
        writeln!(sink, "shape {INPUT} {HIDDEN}")?;
        writeln!(sink, "seed {}", self.seed)?;
        writeln!(sink, "final_loss {}", self.final_loss)?;
        writeln!(sink, "scaler_mean {}", join(&self.scaler.mean))?;
        writeln!(sink, "scaler_std {}", join(&self.scaler.std))?;
        writeln!(sink, "w1 {}", join(&w1))?;
        writeln!(sink, "b1 {}", join(&self.params.b1))?;
        writeln!(sink, "w2 {}", join(&self.params.w2))?;
        writeln!(sink, "b2 {}", self.params.b2)?;
        Ok(())
    }

    pub fn load<R: BufRead>(source: R) -> Result<Self, MlpError> {
        let bad = |m: String| MlpError::Format(m);
        let mut lines = source.lines();
        let mut field = |key: &str, count: usize| -> Result<Vec<String>, MlpError> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))??;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(format!("expected {key}")));
            }
            let vals: Vec<String> = parts.map(String::from).collect();
            if vals.len() != count {
                return Err(bad(format!("{key}: expected {count} values, got {}", vals.len())));
            }
            Ok(vals)
        };
        let floats = |v: Vec<String>| -> Result<Vec<f64>, MlpError> {
            v.iter().map(|s| s.parse::<f64>().map_err(|_| MlpError::Format(format!("bad number {s:?}")))).collect()
        };
        let head = field(MODEL_MAGIC, 1)?;
        if head[0] != MODEL_VERSION.to_string() {
            return Err(bad(format!("unsupported version {}", head[0])));
        }
        if field("shape", 2)? != [INPUT.to_string(), HIDDEN.to_string()] {
            return Err(bad("shape mismatch".into()));
        }
        let seed = field("seed", 1)?[0].parse().map_err(|_| bad("bad seed".into()))?;
        let final_loss = floats(field("final_loss", 1)?)?[0];
        let mean = floats(field("scaler_mean", INPUT)?)?;
        let std = floats(field("scaler_std", INPUT)?)?;
        let mut flat = floats(field("w1", INPUT * HIDDEN)?)?;
        flat.extend(floats(field("b1", HIDDEN)?)?);
        flat.extend(floats(field("w2", HIDDEN)?)?);
        flat.extend(floats(field("b2", 1)?)?);
        let scaler = Scaler { mean: mean.try_into().unwrap(), std: std.try_into().unwrap() };
        if scaler.std.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(bad("scaler std must be positive".into()));
        }
        let params = Params::from_slice(&flat).ok_or_else(|| bad("parameter count".into()))?;
        Ok(Self { params, scaler, seed, final_loss })
    }
}

/// Score in [0, 1] and the label it implies; `score >= 0.5` means DDOS.
pub fn predict(model: &MlpModel, example: &LabeledExample) -> Result<(TrafficLabel, f64), MlpError> {
    let score = model.score_raw(&numeric(example)?);
    let label = if score >= 0.5 { TrafficLabel::Ddos } else { TrafficLabel::Benign };
    Ok((label, score))
}
