use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    check_training_inputs, log_loss_dp, sigmoid, train_blocks, FeatureRow, LabelBlock, ParamTensors, TrainConfig,
    TrainReport,
};
use crate::datamodel::{LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::clamped_log_loss;
use crate::recordio::ModelParams;
use crate::rng::SeededRng;

/// Per-label mixture of `E` logistic experts.
///
/// For each label the gate is a softmax over `E + 1` logits; the last gate is
/// a null expert that always predicts 0, so
/// `p = sum_{k<E} gate_k * sigmoid(expert_k . x + c_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeParams {
    pub vocab_size: usize,
    pub dim: usize,
    pub experts: usize,
    /// `[vocab_size x (experts + 1) x dim]`
    pub gate_weights: Vec<f64>,
    /// `[vocab_size x (experts + 1)]`
    pub gate_biases: Vec<f64>,
    /// `[vocab_size x experts x dim]`
    pub expert_weights: Vec<f64>,
    /// `[vocab_size x experts]`
    pub expert_biases: Vec<f64>,
    pub lambda: f64,
}

impl MoeParams {
    pub fn zeros(vocab: Vocabulary, dim: usize, experts: usize, lambda: f64) -> Self {
        let l = vocab.size();
        MoeParams {
            vocab_size: l,
            dim,
            experts,
            gate_weights: vec![0.0; l * (experts + 1) * dim],
            gate_biases: vec![0.0; l * (experts + 1)],
            expert_weights: vec![0.0; l * experts * dim],
            expert_biases: vec![0.0; l * experts],
            lambda,
        }
    }

    /// Gaussian weights with standard deviation `0.01 / sqrt(dim)`, zero biases.
    pub fn init(vocab: Vocabulary, dim: usize, experts: usize, lambda: f64, seed: u64) -> Self {
        let mut p = MoeParams::zeros(vocab, dim, experts, lambda);
        let std = 0.01 / (dim.max(1) as f64).sqrt();
        let mut rng = SeededRng::new(seed);
        for w in p.gate_weights.iter_mut().chain(p.expert_weights.iter_mut()) {
            *w = std * rng.normal();
        }
        p
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.vocab_size).expect("vocab_size >= 1")
    }

    pub fn predict<X: FeatureRow + ?Sized>(&self, x: &X) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::shape(format!("feature dimension {}", self.dim), x.dim()));
        }
        Ok(self.blocks().iter().map(|b| b.forward(x).p).collect())
    }

    pub fn loss_grad<X: FeatureRow + ?Sized>(
        &self,
        xs: &[&X],
        labels: &[LabelSet],
        batch: &[usize],
    ) -> (f64, MoeParams) {
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(self.vocab_size);
        for (e, block) in self.blocks().into_iter().enumerate() {
            let targets: Vec<bool> = labels.iter().map(|l| l.contains(&(e as u32))).collect();
            let (l, g) = block.loss_grad(xs, &targets, batch, self.lambda);
            loss += l;
            grads.push(g);
        }
        (loss, MoeParams::from_blocks(self, grads, self.lambda))
    }

    fn blocks(&self) -> Vec<MoeBlock> {
        let (d, e) = (self.dim, self.experts);
        (0..self.vocab_size)
            .map(|l| MoeBlock {
                dim: d,
                experts: e,
                gate_w: self.gate_weights[l * (e + 1) * d..(l + 1) * (e + 1) * d].to_vec(),
                gate_b: self.gate_biases[l * (e + 1)..(l + 1) * (e + 1)].to_vec(),
                expert_w: self.expert_weights[l * e * d..(l + 1) * e * d].to_vec(),
                expert_b: self.expert_biases[l * e..(l + 1) * e].to_vec(),
            })
            .collect()
    }

    fn from_blocks(shape: &MoeParams, blocks: Vec<MoeBlock>, lambda: f64) -> Self {
        let mut p = MoeParams::zeros(shape.vocab(), shape.dim, shape.experts, lambda);
        p.gate_weights.clear();
        p.gate_biases.clear();
        p.expert_weights.clear();
        p.expert_biases.clear();
        for b in blocks {
            p.gate_weights.extend_from_slice(&b.gate_w);
            p.gate_biases.extend_from_slice(&b.gate_b);
            p.expert_weights.extend_from_slice(&b.expert_w);
            p.expert_biases.extend_from_slice(&b.expert_b);
        }
        p
    }
}

impl ParamTensors for MoeParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.gate_weights,
            &self.gate_biases,
            &self.expert_weights,
            &self.expert_biases,
        ]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.gate_weights,
            &mut self.gate_biases,
            &mut self.expert_weights,
            &mut self.expert_biases,
        ]
    }
}

impl ModelParams for MoeParams {
    const KIND: &'static str = "moe";

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn dims(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([("input".to_owned(), self.dim), ("experts".to_owned(), self.experts)])
    }

    fn check_shapes(&self) -> Result<()> {
        let (l, d, e) = (self.vocab_size, self.dim, self.experts);
        let ok = l > 0
            && e > 0
            && self.gate_weights.len() == l * (e + 1) * d
            && self.gate_biases.len() == l * (e + 1)
            && self.expert_weights.len() == l * e * d
            && self.expert_biases.len() == l * e;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                format!("MoE tensors for vocab {l}, dim {d}, {e} experts"),
                "inconsistent tensor lengths",
            ))
        }
    }
}

#[derive(Clone, Debug)]
struct MoeBlock {
    dim: usize,
    experts: usize,
    gate_w: Vec<f64>,
    gate_b: Vec<f64>,
    expert_w: Vec<f64>,
    expert_b: Vec<f64>,
}

struct MoeForward {
    gates: Vec<f64>,
    experts: Vec<f64>,
    p: f64,
}

impl MoeBlock {
    fn forward<X: FeatureRow + ?Sized>(&self, x: &X) -> MoeForward {
        let d = self.dim;
        let logits: Vec<f64> = (0..=self.experts)
            .map(|k| x.dot(&self.gate_w[k * d..(k + 1) * d]) + self.gate_b[k])
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut gates: Vec<f64> = logits.iter().map(|&g| (g - max).exp()).collect();
        let z: f64 = gates.iter().sum();
        gates.iter_mut().for_each(|g| *g /= z);
        let experts: Vec<f64> = (0..self.experts)
            .map(|k| sigmoid(x.dot(&self.expert_w[k * d..(k + 1) * d]) + self.expert_b[k]))
            .collect();
        let p = gates.iter().zip(&experts).map(|(g, s)| g * s).sum();
        MoeForward { gates, experts, p }
    }
}

impl ParamTensors for MoeBlock {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.gate_w, &self.gate_b, &self.expert_w, &self.expert_b]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.gate_w,
            &mut self.gate_b,
            &mut self.expert_w,
            &mut self.expert_b,
        ]
    }
}

impl LabelBlock for MoeBlock {
    fn loss_grad<X: FeatureRow + ?Sized>(
        &self,
        xs: &[&X],
        targets: &[bool],
        batch: &[usize],
        lambda: f64,
    ) -> (f64, Self) {
        let (d, e) = (self.dim, self.experts);
        let scale = 1.0 / batch.len() as f64;
        let mut g = MoeBlock {
            dim: d,
            experts: e,
            gate_w: vec![0.0; self.gate_w.len()],
            gate_b: vec![0.0; self.gate_b.len()],
            expert_w: vec![0.0; self.expert_w.len()],
            expert_b: vec![0.0; self.expert_b.len()],
        };
        let mut loss = 0.0;
        for &i in batch {
            let x = xs[i];
            let f = self.forward(x);
            loss += clamped_log_loss(f.p, targets[i]);
            let dp = log_loss_dp(f.p, targets[i]) * scale;
            for k in 0..=e {
                let s = if k < e { f.experts[k] } else { 0.0 };
                let dg = dp * f.gates[k] * (s - f.p);
                x.add_scaled_to(dg, &mut g.gate_w[k * d..(k + 1) * d]);
                g.gate_b[k] += dg;
            }
            for k in 0..e {
                let s = f.experts[k];
                let dz = dp * f.gates[k] * s * (1.0 - s);
                x.add_scaled_to(dz, &mut g.expert_w[k * d..(k + 1) * d]);
                g.expert_b[k] += dz;
            }
        }
        loss *= scale;
        if lambda > 0.0 {
            for (gw, &w) in g
                .gate_w
                .iter_mut()
                .zip(&self.gate_w)
                .chain(g.expert_w.iter_mut().zip(&self.expert_w))
            {
                *gw += 2.0 * lambda * w;
                loss += lambda * w * w;
            }
        }
        (loss, g)
    }
}

pub fn moe_predict<X: FeatureRow + ?Sized>(params: &MoeParams, x: &X) -> Result<Vec<f64>> {
    params.predict(x)
}

/// Train from a seeded Gaussian initialisation with `cfg.experts` experts.
pub fn moe_train<X: FeatureRow + Sync + ?Sized>(
    xs: &[&X],
    labels: &[LabelSet],
    vocab: Vocabulary,
    cfg: &TrainConfig,
) -> Result<(MoeParams, TrainReport)> {
    cfg.validate()?;
    let dim = xs.first().map(|x| x.dim()).ok_or(Error::EmptyDataset)?;
    let init = MoeParams::init(vocab, dim, cfg.experts, cfg.lambda, cfg.seed);
    moe_train_from(init, xs, labels, cfg)
}

pub fn moe_train_from<X: FeatureRow + Sync + ?Sized>(
    init: MoeParams,
    xs: &[&X],
    labels: &[LabelSet],
    cfg: &TrainConfig,
) -> Result<(MoeParams, TrainReport)> {
    init.check_shapes()?;
    check_training_inputs(xs, labels, init.dim, init.vocab())?;
    let (blocks, report) = train_blocks(init.blocks(), xs, labels, cfg)?;
    Ok((MoeParams::from_blocks(&init, blocks, cfg.lambda), report))
}
