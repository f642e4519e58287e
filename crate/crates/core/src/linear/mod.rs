//! Video-level one-vs-all classifiers trained online with mini-batch Adagrad.
//!
//! Both models keep an independent parameter block per label, so training is
//! done label by label over a shared mini-batch schedule. Blocks are trained in
//! parallel; the result is bit-identical to training them one after another.

mod adagrad;
mod logistic;
mod moe;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adagrad::{adagrad_step, AdagradState, ParamTensors};
pub use logistic::{logistic_predict, logistic_train, logistic_train_from, LogisticParams};
pub use moe::{moe_predict, moe_train, moe_train_from, MoeParams};

use crate::datamodel::{LabelId, LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Standard logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Input row for the linear models: either dense or sparse.
pub trait FeatureRow {
    fn dim(&self) -> usize;
    fn dot(&self, w: &[f64]) -> f64;
    /// `out += alpha * self`
    fn add_scaled_to(&self, alpha: f64, out: &mut [f64]);
}

impl FeatureRow for [f64] {
    fn dim(&self) -> usize {
        self.len()
    }
    fn dot(&self, w: &[f64]) -> f64 {
        self.iter().zip(w).map(|(a, b)| a * b).sum()
    }
    fn add_scaled_to(&self, alpha: f64, out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(self) {
            *o += alpha * x;
        }
    }
}

impl FeatureRow for Vec<f64> {
    fn dim(&self) -> usize {
        self.len()
    }
    fn dot(&self, w: &[f64]) -> f64 {
        self.as_slice().dot(w)
    }
    fn add_scaled_to(&self, alpha: f64, out: &mut [f64]) {
        self.as_slice().add_scaled_to(alpha, out)
    }
}

/// Sparse vector with strictly increasing indices; absent coordinates are 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRow {
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::shape(format!("{} values", indices.len()), values.len()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("sparse indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i as usize >= dim) {
            return Err(Error::InvalidInput(format!(
                "sparse index out of range for dimension {dim}"
            )));
        }
        Ok(SparseRow { dim, indices, values })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseRow {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    /// Concatenate rows into one row of summed dimension.
    pub fn concat(rows: &[SparseRow]) -> SparseRow {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut offset = 0u32;
        for r in rows {
            indices.extend(r.indices.iter().map(|&i| i + offset));
            values.extend_from_slice(&r.values);
            offset += r.dim as u32;
        }
        SparseRow {
            dim: offset as usize,
            indices,
            values,
        }
    }
}

impl FeatureRow for SparseRow {
    fn dim(&self) -> usize {
        self.dim
    }
    fn dot(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * w[i as usize])
            .sum()
    }
    fn add_scaled_to(&self, alpha: f64, out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] += alpha * v;
        }
    }
}

/// Hyper-parameters shared by the linear trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Number of experts (MoE only).
    pub experts: usize,
    pub adagrad_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 10,
            learning_rate: 0.01,
            lambda: 1e-6,
            seed: 0,
            experts: 2,
            adagrad_epsilon: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.experts == 0 {
            return Err(Error::Config("experts must be >= 1".into()));
        }
        if self.adagrad_epsilon.is_nan() || self.adagrad_epsilon <= 0.0 {
            return Err(Error::Config("adagrad_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step training losses (mean over the batch, summed over labels, plus
/// the regulariser), evaluated before each update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub steps_per_epoch: usize,
}

impl TrainReport {
    fn decile(&self, last: bool) -> Option<f64> {
        let n = self.step_losses.len();
        if n == 0 {
            return None;
        }
        let m = (n / 10).max(1);
        let slice = if last {
            &self.step_losses[n - m..]
        } else {
            &self.step_losses[..m]
        };
        Some(slice.iter().sum::<f64>() / m as f64)
    }

    /// Mean loss over the first 10% of steps.
    pub fn first_decile_loss(&self) -> Option<f64> {
        self.decile(false)
    }

    /// Mean loss over the last 10% of steps.
    pub fn last_decile_loss(&self) -> Option<f64> {
        self.decile(true)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.step_losses.last().copied()
    }

    /// Mean step loss of each epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        if self.steps_per_epoch == 0 {
            return Vec::new();
        }
        self.step_losses
            .chunks(self.steps_per_epoch)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Shuffled mini-batches for every epoch, shared by all labels.
pub fn batch_schedule(n: usize, batch_size: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(epochs * n.div_ceil(batch_size.max(1)));
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::derived(seed, 0x5348_5546, epoch as u64).shuffle(&mut order);
        out.extend(order.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out
}

/// One label's parameters in a one-vs-all model.
pub(crate) trait LabelBlock: ParamTensors + Clone + Send + Sync {
    /// Batch-mean log-loss plus regulariser, and its gradient.
    fn loss_grad<X: FeatureRow + ?Sized>(
        &self,
        xs: &[&X],
        targets: &[bool],
        batch: &[usize],
        lambda: f64,
    ) -> (f64, Self);
}

pub(crate) fn check_training_inputs<X: FeatureRow + ?Sized>(
    xs: &[&X],
    labels: &[LabelSet],
    dim: usize,
    vocab: Vocabulary,
) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != labels.len() {
        return Err(Error::shape(format!("{} label sets", xs.len()), labels.len()));
    }
    if let Some((i, x)) = xs.iter().enumerate().find(|(_, x)| x.dim() != dim) {
        return Err(Error::shape(
            format!("feature dimension {dim}"),
            format!("{} at example {i}", x.dim()),
        ));
    }
    for (i, ls) in labels.iter().enumerate() {
        if let Some(l) = ls.iter().find(|&&l| !vocab.contains(l)) {
            return Err(Error::InvalidInput(format!(
                "label {l} at example {i} outside vocabulary of size {}",
                vocab.size()
            )));
        }
    }
    Ok(())
}

/// Train every label block over the same batch schedule.
pub(crate) fn train_blocks<B: LabelBlock, X: FeatureRow + Sync + ?Sized>(
    blocks: Vec<B>,
    xs: &[&X],
    labels: &[LabelSet],
    cfg: &TrainConfig,
) -> Result<(Vec<B>, TrainReport)> {
    cfg.validate()?;
    let schedule = batch_schedule(xs.len(), cfg.batch_size, cfg.epochs, cfg.seed);
    let trained: Vec<Result<(B, Vec<f64>)>> = blocks
        .into_par_iter()
        .enumerate()
        .map(|(label, mut block)| {
            let targets: Vec<bool> = labels.iter().map(|ls| ls.contains(&(label as LabelId))).collect();
            let mut state = AdagradState::new(&block, cfg.learning_rate, cfg.adagrad_epsilon);
            let mut losses = Vec::with_capacity(schedule.len());
            for (step, batch) in schedule.iter().enumerate() {
                let (loss, grad) = block.loss_grad(xs, &targets, batch, cfg.lambda);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        batch: batch.clone(),
                    });
                }
                losses.push(loss);
                state.step(&mut block, &grad)?;
            }
            Ok((block, losses))
        })
        .collect();

    let mut out = Vec::with_capacity(trained.len());
    let mut step_losses = vec![0.0; schedule.len()];
    for r in trained {
        let (block, losses) = r?;
        for (total, l) in step_losses.iter_mut().zip(losses) {
            *total += l;
        }
        out.push(block);
    }
    let report = TrainReport {
        step_losses,
        steps_per_epoch: xs.len().div_ceil(cfg.batch_size),
    };
    Ok((out, report))
}

/// Derivative of the clamped log-loss with respect to the probability. Inside
/// the clamp window this is exact; outside it is taken at the clamp boundary
/// so saturated predictions still receive a corrective signal.
#[inline]
pub(crate) fn log_loss_dp(p: f64, y: bool) -> f64 {
    use crate::metrics::LOG_LOSS_EPS;
    let p = p.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
    if y {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}
