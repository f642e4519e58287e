use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    check_training_inputs, sigmoid, train_blocks, FeatureRow, LabelBlock, ParamTensors, TrainConfig, TrainReport,
};
use crate::datamodel::{LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::clamped_log_loss;
use crate::recordio::ModelParams;

/// One-vs-all L2-regularised logistic regression: `p_e = sigmoid(W_e . x + b_e)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub vocab_size: usize,
    pub dim: usize,
    /// Row-major `[vocab_size x dim]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub lambda: f64,
}

impl LogisticParams {
    pub fn zeros(vocab: Vocabulary, dim: usize, lambda: f64) -> Self {
        LogisticParams {
            vocab_size: vocab.size(),
            dim,
            weights: vec![0.0; vocab.size() * dim],
            biases: vec![0.0; vocab.size()],
            lambda,
        }
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.vocab_size).expect("vocab_size >= 1")
    }

    pub fn row(&self, label: usize) -> &[f64] {
        &self.weights[label * self.dim..(label + 1) * self.dim]
    }

    pub fn row_mut(&mut self, label: usize) -> &mut [f64] {
        &mut self.weights[label * self.dim..(label + 1) * self.dim]
    }

    pub fn predict<X: FeatureRow + ?Sized>(&self, x: &X) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::shape(format!("feature dimension {}", self.dim), x.dim()));
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked<X: FeatureRow + ?Sized>(&self, x: &X) -> Vec<f64> {
        (0..self.vocab_size)
            .map(|e| sigmoid(x.dot(self.row(e)) + self.biases[e]))
            .collect()
    }

    /// Squared L2 norm of the weight matrix.
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Objective on `batch`: mean over examples of the log-loss summed over
    /// labels, plus `lambda * ||W||^2`; and its gradient.
    pub fn loss_grad<X: FeatureRow + ?Sized>(
        &self,
        xs: &[&X],
        labels: &[LabelSet],
        batch: &[usize],
    ) -> (f64, LogisticParams) {
        let mut grad = LogisticParams::zeros(self.vocab(), self.dim, self.lambda);
        let mut loss = 0.0;
        for (e, block) in self.blocks().into_iter().enumerate() {
            let targets: Vec<bool> = labels.iter().map(|l| l.contains(&(e as u32))).collect();
            let (l, g) = block.loss_grad(xs, &targets, batch, self.lambda);
            loss += l;
            grad.row_mut(e).copy_from_slice(&g.weights);
            grad.biases[e] = g.bias[0];
        }
        (loss, grad)
    }

    fn blocks(&self) -> Vec<LogisticBlock> {
        (0..self.vocab_size)
            .map(|e| LogisticBlock {
                weights: self.row(e).to_vec(),
                bias: [self.biases[e]],
            })
            .collect()
    }

    fn from_blocks(vocab_size: usize, dim: usize, lambda: f64, blocks: Vec<LogisticBlock>) -> Self {
        let mut weights = Vec::with_capacity(vocab_size * dim);
        let mut biases = Vec::with_capacity(vocab_size);
        for b in blocks {
            weights.extend_from_slice(&b.weights);
            biases.push(b.bias[0]);
        }
        LogisticParams {
            vocab_size,
            dim,
            weights,
            biases,
            lambda,
        }
    }
}

impl ParamTensors for LogisticParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.biases]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.biases]
    }
}

impl ModelParams for LogisticParams {
    const KIND: &'static str = "logistic";

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn dims(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([("input".to_owned(), self.dim)])
    }

    fn check_shapes(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.weights.len() != self.vocab_size * self.dim
            || self.biases.len() != self.vocab_size
        {
            return Err(Error::shape(
                format!("{}x{} weights, {} biases", self.vocab_size, self.dim, self.vocab_size),
                format!("{} weights, {} biases", self.weights.len(), self.biases.len()),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LogisticBlock {
    weights: Vec<f64>,
    bias: [f64; 1],
}

impl ParamTensors for LogisticBlock {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

impl LabelBlock for LogisticBlock {
    fn loss_grad<X: FeatureRow + ?Sized>(
        &self,
        xs: &[&X],
        targets: &[bool],
        batch: &[usize],
        lambda: f64,
    ) -> (f64, Self) {
        let scale = 1.0 / batch.len() as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for &i in batch {
            let p = sigmoid(xs[i].dot(&self.weights) + self.bias[0]);
            let y = targets[i];
            loss += clamped_log_loss(p, y);
            let d = (p - f64::from(u8::from(y))) * scale;
            xs[i].add_scaled_to(d, &mut gw);
            gb += d;
        }
        loss *= scale;
        if lambda > 0.0 {
            for (g, &w) in gw.iter_mut().zip(&self.weights) {
                *g += 2.0 * lambda * w;
                loss += lambda * w * w;
            }
        }
        (
            loss,
            LogisticBlock {
                weights: gw,
                bias: [gb],
            },
        )
    }
}

/// Score every label for one feature vector.
pub fn logistic_predict<X: FeatureRow + ?Sized>(params: &LogisticParams, x: &X) -> Result<Vec<f64>> {
    params.predict(x)
}

/// Train from zero-initialised weights.
pub fn logistic_train<X: FeatureRow + Sync + ?Sized>(
    xs: &[&X],
    labels: &[LabelSet],
    vocab: Vocabulary,
    cfg: &TrainConfig,
) -> Result<(LogisticParams, TrainReport)> {
    let dim = xs.first().map(|x| x.dim()).ok_or(Error::EmptyDataset)?;
    logistic_train_from(LogisticParams::zeros(vocab, dim, cfg.lambda), xs, labels, cfg)
}

/// Continue training from `init` (its `lambda` is replaced by `cfg.lambda`).
pub fn logistic_train_from<X: FeatureRow + Sync + ?Sized>(
    init: LogisticParams,
    xs: &[&X],
    labels: &[LabelSet],
    cfg: &TrainConfig,
) -> Result<(LogisticParams, TrainReport)> {
    init.check_shapes()?;
    check_training_inputs(xs, labels, init.dim, init.vocab())?;
    let (blocks, report) = train_blocks(init.blocks(), xs, labels, cfg)?;
    let params = LogisticParams::from_blocks(init.vocab_size, init.dim, cfg.lambda, blocks);
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn refs(xs: &[Vec<f64>]) -> Vec<&Vec<f64>> {
        xs.iter().collect()
    }

    #[test]
    fn zero_params_predict_half() {
        let p = LogisticParams::zeros(Vocabulary::new(4).unwrap(), 3, 0.0);
        assert_eq!(p.predict(&vec![1.0, -2.0, 3.0]).unwrap(), vec![0.5; 4]);
        assert!(p.predict(&vec![1.0]).is_err());
    }

    #[test]
    fn unit_margin_row() {
        let x = vec![1.0, 2.0, -2.0];
        let n2: f64 = x.iter().map(|v| v * v).sum();
        let mut p = LogisticParams::zeros(Vocabulary::new(2).unwrap(), 3, 0.0);
        for (w, v) in p.row_mut(1).iter_mut().zip(&x) {
            *w = v / n2;
        }
        let s = p.predict(&x).unwrap();
        assert_eq!(s[0], 0.5);
        assert!((s[1] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn rows_are_independent_and_permutation_equivariant() {
        let mut rng = SeededRng::new(5);
        let vocab = Vocabulary::new(4).unwrap();
        let mut p = LogisticParams::zeros(vocab, 3, 0.0);
        p.weights.iter_mut().for_each(|w| *w = rng.normal());
        p.biases.iter_mut().for_each(|b| *b = rng.normal());
        let x = vec![0.3, -0.7, 1.1];
        let base = p.predict(&x).unwrap();

        let mut scaled = p.clone();
        scaled.row_mut(2).iter_mut().for_each(|w| *w *= 3.0);
        let s = scaled.predict(&x).unwrap();
        assert_eq!((s[0], s[1], s[3]), (base[0], base[1], base[3]));

        let perm = [2usize, 0, 3, 1];
        let mut permuted = p.clone();
        for (new, &old) in perm.iter().enumerate() {
            permuted.row_mut(new).copy_from_slice(p.row(old));
            permuted.biases[new] = p.biases[old];
        }
        let s = permuted.predict(&x).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(s[new], base[old]);
        }
    }

    #[test]
    fn epochs_zero_returns_zero_params() {
        let xs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let labels = vec![LabelSet::from([0]), LabelSet::from([1])];
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let vocab = Vocabulary::new(2).unwrap();
        let (p, report) = logistic_train(&refs(&xs), &labels, vocab, &cfg).unwrap();
        assert_eq!(p, LogisticParams::zeros(vocab, 2, cfg.lambda));
        assert!(report.step_losses.is_empty());
    }

    #[test]
    fn separable_1d_learns_positive_weight() {
        let mut rng = SeededRng::new(11);
        let xs: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.normal()]).collect();
        let labels: Vec<LabelSet> = xs
            .iter()
            .map(|x| {
                if x[0] > 0.0 {
                    LabelSet::from([0])
                } else {
                    LabelSet::new()
                }
            })
            .collect();
        let cfg = TrainConfig {
            lambda: 0.0,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let (p, report) = logistic_train(&refs(&xs), &labels, Vocabulary::new(1).unwrap(), &cfg).unwrap();
        assert!(p.weights[0] > 0.0);
        assert!(report.last_decile_loss().unwrap() <= report.first_decile_loss().unwrap());
    }

    #[test]
    fn heavy_regularisation_keeps_weights_small() {
        let mut rng = SeededRng::new(12);
        let xs: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let labels: Vec<LabelSet> = xs
            .iter()
            .map(|x| {
                if x[0] + x[1] > 0.0 {
                    LabelSet::from([0])
                } else {
                    LabelSet::new()
                }
            })
            .collect();
        let cfg = TrainConfig {
            lambda: 1e6,
            epochs: 10,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let (p, _) = logistic_train(&refs(&xs), &labels, Vocabulary::new(2).unwrap(), &cfg).unwrap();
        assert!(p.weight_norm_sq().sqrt() <= 1e-2, "norm {}", p.weight_norm_sq().sqrt());
    }

    #[test]
    fn rejects_bad_inputs() {
        let vocab = Vocabulary::new(2).unwrap();
        let cfg = TrainConfig::default();
        let empty: Vec<&Vec<f64>> = Vec::new();
        assert!(matches!(
            logistic_train(&empty, &[], vocab, &cfg),
            Err(Error::EmptyDataset)
        ));
        let xs = vec![vec![1.0], vec![1.0, 2.0]];
        let labels = vec![LabelSet::new(), LabelSet::new()];
        assert!(logistic_train(&refs(&xs), &labels, vocab, &cfg).is_err());
        let xs = vec![vec![1.0]];
        assert!(logistic_train(&refs(&xs), &[LabelSet::from([2])], vocab, &cfg).is_err());
    }
}
