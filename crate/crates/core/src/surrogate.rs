//! Feed-forward regression surrogate.
//!
//! One hidden `tanh` layer and a linear output, trained by full-batch gradient
//! descent on mean squared error in z-scored target space.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
}

/// Anything that maps an input vector to a predicted fitness.
pub trait Predictor {
    fn input_dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<f64, SurrogateError>;
}

/// Training rows: normalized inputs and raw fitness targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, input: Vec<f64>, target: f64) {
        self.inputs.push(input);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn check(&self) -> Result<usize, SurrogateError> {
        let dim = self.inputs.first().ok_or(SurrogateError::EmptyDataset)?.len();
        if self.inputs.len() != self.targets.len() {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.inputs.len(),
                got: self.targets.len(),
            });
        }
        for (i, (x, t)) in self.inputs.iter().zip(&self.targets).enumerate() {
            if x.len() != dim {
                return Err(SurrogateError::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(SurrogateError::NonFinite(i));
            }
        }
        Ok(dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitHyper {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    /// Initial weights are drawn from `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for FitHyper {
    fn default() -> Self {
        Self {
            hidden_units: 10,
            learning_rate: 0.1,
            epochs: 1000,
            early_stop_patience: 50,
            init_range: 0.5,
        }
    }
}

impl FitHyper {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.hidden_units == 0 {
            out.push("hidden_units must be positive".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            out.push("learning_rate must be positive".to_string());
        }
        if self.epochs == 0 {
            out.push("epochs must be positive".to_string());
        }
        if self.early_stop_patience == 0 || self.early_stop_patience > self.epochs {
            out.push("early_stop_patience must be in [1, epochs]".to_string());
        }
        if !(self.init_range.is_finite() && self.init_range > 0.0) {
            out.push("init_range must be positive".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub final_loss: f64,
    /// Address of the stream the initial weights came from.
    pub seed: String,
}

/// Minimum decrease of the training loss that counts as an improvement.
const MIN_IMPROVEMENT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    input_dim: usize,
    hidden_units: usize,
    /// Per-coordinate input standardization: `z = (x - mean) * scale`.
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    /// `hidden_units x input_dim`, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    target_mean: f64,
    target_std: f64,
    constant_target: bool,
    train_meta: TrainMeta,
}

/// Gradient of one row's squared error, laid out like the model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl WeightGradient {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w1: vec![0.0; input_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Flattened as `w1, b1, w2, b2`, matching [`SurrogateModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }
}

impl SurrogateModel {
    /// A network whose output weights are all zero: predicts `mean` everywhere.
    pub fn bias_only(input_dim: usize, hidden_units: usize, mean: f64, std: f64) -> Self {
        Self {
            input_dim,
            hidden_units,
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            w1: vec![0.0; input_dim * hidden_units],
            b1: vec![0.0; hidden_units],
            w2: vec![0.0; hidden_units],
            b2: 0.0,
            target_mean: mean,
            target_std: std,
            constant_target: false,
            train_meta: TrainMeta {
                epochs_run: 0,
                final_loss: 0.0,
                seed: String::new(),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_units
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn target_std(&self) -> f64 {
        self.target_std
    }

    pub fn is_constant_target(&self) -> bool {
        self.constant_target
    }

    pub fn train_meta(&self) -> &TrainMeta {
        &self.train_meta
    }

    /// All weights flattened as `w1, b1, w2, b2`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), SurrogateError> {
        let (nw1, nh) = (self.w1.len(), self.b1.len());
        let expected = nw1 + 2 * nh + 1;
        if params.len() != expected {
            return Err(SurrogateError::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        self.w1.copy_from_slice(&params[..nw1]);
        self.b1.copy_from_slice(&params[nw1..nw1 + nh]);
        self.w2.copy_from_slice(&params[nw1 + nh..nw1 + 2 * nh]);
        self.b2 = params[expected - 1];
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), SurrogateError> {
        if x.len() != self.input_dim {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    /// Output in normalized target space for a standardized input; fills
    /// `hidden` with activations.
    fn forward(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        let mut out = self.b2;
        for (j, a) in hidden.iter_mut().enumerate() {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let pre = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *a = fast_tanh(pre);
            out += self.w2[j] * *a;
        }
        out
    }

    pub fn predict_normalized(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        self.check_dim(x)?;
        let mut hidden = vec![0.0; self.hidden_units];
        Ok(self.forward(&self.standardize(x), &mut hidden))
    }

    /// Prediction in raw fitness units.
    pub fn predict(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        Ok(self.predict_normalized(x)? * self.target_std + self.target_mean)
    }

    fn normalize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    /// Mean squared error in normalized target space.
    pub fn loss(&self, data: &Dataset) -> Result<f64, SurrogateError> {
        if data.is_empty() {
            return Err(SurrogateError::EmptyDataset);
        }
        let mut hidden = vec![0.0; self.hidden_units];
        let mut total = 0.0;
        for (x, &y) in data.inputs.iter().zip(&data.targets) {
            self.check_dim(x)?;
            let e = self.forward(&self.standardize(x), &mut hidden) - self.normalize_target(y);
            total += e * e;
        }
        Ok(total / data.len() as f64)
    }

    /// Backpropagated gradient of `(prediction - target)²` for one row, in
    /// normalized target space. `target` is in raw units.
    pub fn gradient(&self, x: &[f64], target: f64) -> Result<WeightGradient, SurrogateError> {
        self.check_dim(x)?;
        let mut grad = WeightGradient::zeros(self.input_dim, self.hidden_units);
        let mut hidden = vec![0.0; self.hidden_units];
        let z = self.standardize(x);
        self.accumulate(&z, self.normalize_target(target), 1.0, &mut hidden, &mut grad);
        Ok(grad)
    }

    /// Adds `scale * d(err²)/dθ` to `grad`; returns the squared error.
    fn accumulate(
        &self,
        x: &[f64],
        t: f64,
        scale: f64,
        hidden: &mut [f64],
        grad: &mut WeightGradient,
    ) -> f64 {
        let e = self.forward(x, hidden) - t;
        let d_out = 2.0 * e * scale;
        grad.b2 += d_out;
        for (j, &a) in hidden.iter().enumerate() {
            grad.w2[j] += d_out * a;
            let d_pre = d_out * self.w2[j] * (1.0 - a * a);
            grad.b1[j] += d_pre;
            let row = &mut grad.w1[j * self.input_dim..(j + 1) * self.input_dim];
            for (g, v) in row.iter_mut().zip(x) {
                *g += d_pre * v;
            }
        }
        e * e
    }
}

impl Predictor for SurrogateModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn predict(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        SurrogateModel::predict(self, x)
    }
}

/// Column means and inverse standard deviations. Constant columns get
/// scale 1 so they only shift the hidden biases.
fn input_statistics(inputs: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = inputs.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in inputs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in inputs {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-6 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// `tanh` through a single `exp`; agrees with `f64::tanh` to a few ulps
/// away from zero and to ~1e-16 absolute near it.
#[inline]
fn fast_tanh(x: f64) -> f64 {
    let e = (2.0 * x).exp();
    1.0 - 2.0 / (e + 1.0)
}

/// `rows x cols` row-major to `cols x rows` row-major.
fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// Trains a fresh model on `data`. Deterministic given `(data, hyper, key)`.
pub fn fit(data: &Dataset, hyper: &FitHyper, key: RandomKey) -> Result<SurrogateModel, SurrogateError> {
    fit_with_curve(data, hyper, key).map(|(m, _)| m)
}

/// Like [`fit`], also returning the per-epoch training loss.
pub fn fit_with_curve(
    data: &Dataset,
    hyper: &FitHyper,
    key: RandomKey,
) -> Result<(SurrogateModel, Vec<f64>), SurrogateError> {
    let problems = hyper.violations();
    if !problems.is_empty() {
        return Err(SurrogateError::InvalidHyper(problems.join("; ")));
    }
    let input_dim = data.check()?;
    let n = data.len() as f64;
    let mean = data.targets.iter().sum::<f64>() / n;
    let var = data.targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let constant_target = std.is_nan() || std <= 1e-12 * mean.abs().max(1.0);
    let (input_mean, input_scale) = input_statistics(&data.inputs, input_dim);

    let hidden_units = hyper.hidden_units;
    let mut rng = key.rng();
    let r = hyper.init_range;
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-r..=r)).collect() };
    let mut model = SurrogateModel {
        input_dim,
        hidden_units,
        input_mean,
        input_scale,
        w1: draw(input_dim * hidden_units),
        b1: draw(hidden_units),
        w2: draw(hidden_units),
        b2: 0.0,
        target_mean: mean,
        target_std: if constant_target { 1.0 } else { std },
        constant_target,
        train_meta: TrainMeta {
            epochs_run: 0,
            final_loss: 0.0,
            seed: key.to_string(),
        },
    };
    model.b2 = draw(1)[0];

    if constant_target {
        // every target equals the mean: the exact fit is a silenced output layer
        model.w2.iter_mut().for_each(|w| *w = 0.0);
        model.b2 = 0.0;
        return Ok((model, Vec::new()));
    }

    let targets: Vec<f64> = data.targets.iter().map(|&y| (y - mean) / std).collect();
    let inputs: Vec<Vec<f64>> = data.inputs.iter().map(|x| model.standardize(x)).collect();
    let h = hidden_units;
    // input-major copy of w1 so the inner loops run over hidden units
    let mut w1t = transpose(&model.w1, h, input_dim);
    let mut g_w1t = vec![0.0; input_dim * h];
    let (mut g_b1, mut g_w2) = (vec![0.0; h], vec![0.0; h]);
    let (mut pre, mut act) = (vec![0.0; h], vec![0.0; h]);
    let mut best_loss = f64::INFINITY;
    let mut best_params = model.parameters();
    let mut stale = 0;
    let mut curve = Vec::with_capacity(hyper.epochs);
    let scale = 1.0 / n;
    let lr = hyper.learning_rate;

    for _ in 0..hyper.epochs {
        g_w1t.iter_mut().for_each(|g| *g = 0.0);
        g_b1.iter_mut().for_each(|g| *g = 0.0);
        g_w2.iter_mut().for_each(|g| *g = 0.0);
        let mut g_b2 = 0.0;
        let mut loss = 0.0;
        for (x, &t) in inputs.iter().zip(&targets) {
            pre.copy_from_slice(&model.b1);
            for (xi, w) in x.iter().zip(w1t.chunks_exact(h)) {
                for (p, w) in pre.iter_mut().zip(w) {
                    *p += w * xi;
                }
            }
            let mut out = model.b2;
            for ((a, p), w) in act.iter_mut().zip(&pre).zip(&model.w2) {
                *a = fast_tanh(*p);
                out += w * *a;
            }
            let e = out - t;
            loss += e * e;
            let d_out = 2.0 * e * scale;
            g_b2 += d_out;
            for j in 0..h {
                g_w2[j] += d_out * act[j];
                // reuse `pre` for the pre-activation gradient
                pre[j] = d_out * model.w2[j] * (1.0 - act[j] * act[j]);
                g_b1[j] += pre[j];
            }
            for (xi, g) in x.iter().zip(g_w1t.chunks_exact_mut(h)) {
                for (g, d) in g.iter_mut().zip(&pre) {
                    *g += d * xi;
                }
            }
        }
        loss /= n;
        curve.push(loss);

        if loss < best_loss - MIN_IMPROVEMENT {
            best_loss = loss;
            model.w1 = transpose(&w1t, input_dim, h);
            best_params = model.parameters();
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.early_stop_patience {
                break;
            }
        }

        for (w, g) in w1t.iter_mut().zip(&g_w1t) {
            *w -= lr * g;
        }
        for (w, g) in model.b1.iter_mut().zip(&g_b1) {
            *w -= lr * g;
        }
        for (w, g) in model.w2.iter_mut().zip(&g_w2) {
            *w -= lr * g;
        }
        model.b2 -= lr * g_b2;
    }

    model.set_parameters(&best_params)?;
    model.train_meta.epochs_run = curve.len();
    model.train_meta.final_loss = best_loss;
    Ok((model, curve))
}
