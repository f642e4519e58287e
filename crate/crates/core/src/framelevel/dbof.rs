use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::linear::{sigmoid, FeatureRow, ParamTensors};
use crate::metrics::clamped_log_loss;
use crate::recordio::ModelParams;
use crate::rng::SeededRng;

/// Deep bag of frames: a ReLU up-projection shared by every frame, max-pooled
/// over frames, followed by a one-vs-all logistic classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbofParams {
    pub vocab_size: usize,
    pub dim: usize,
    pub width: usize,
    /// `[width x dim]`
    pub up_weights: Vec<f64>,
    pub up_biases: Vec<f64>,
    /// `[vocab_size x width]`
    pub cls_weights: Vec<f64>,
    pub cls_biases: Vec<f64>,
}

pub(crate) struct DbofForward {
    pub pooled: Vec<f64>,
    /// Frame that won the max for each unit; `None` when every frame's
    /// activation is 0 for that unit.
    pub argmax: Vec<Option<usize>>,
    pub scores: Vec<f64>,
}

impl DbofParams {
    pub fn zeros(vocab: Vocabulary, dim: usize, width: usize) -> Self {
        DbofParams {
            vocab_size: vocab.size(),
            dim,
            width,
            up_weights: vec![0.0; width * dim],
            up_biases: vec![0.0; width],
            cls_weights: vec![0.0; vocab.size() * width],
            cls_biases: vec![0.0; vocab.size()],
        }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init(vocab: Vocabulary, dim: usize, width: usize, seed: u64) -> Self {
        let mut p = DbofParams::zeros(vocab, dim, width);
        let mut rng = SeededRng::new(seed);
        let up = 1.0 / (dim.max(1) as f64).sqrt();
        let cls = 1.0 / (width.max(1) as f64).sqrt();
        p.up_weights.iter_mut().for_each(|w| *w = up * rng.normal());
        p.cls_weights.iter_mut().for_each(|w| *w = cls * rng.normal());
        p
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.vocab_size).expect("vocab_size >= 1")
    }

    fn up_row(&self, u: usize) -> &[f64] {
        &self.up_weights[u * self.dim..(u + 1) * self.dim]
    }

    fn cls_row(&self, e: usize) -> &[f64] {
        &self.cls_weights[e * self.width..(e + 1) * self.width]
    }

    pub(crate) fn forward_cached<X: FeatureRow>(&self, frames: &[X]) -> Result<DbofForward> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("no frames to pool".into()));
        }
        if let Some(f) = frames.iter().find(|f| f.dim() != self.dim) {
            return Err(Error::shape(format!("frame dimension {}", self.dim), f.dim()));
        }
        let mut pooled = vec![0.0; self.width];
        let mut argmax = vec![None; self.width];
        for (j, x) in frames.iter().enumerate() {
            for u in 0..self.width {
                let a = x.dot(self.up_row(u)) + self.up_biases[u];
                if a > pooled[u] {
                    pooled[u] = a;
                    argmax[u] = Some(j);
                }
            }
        }
        let scores = (0..self.vocab_size)
            .map(|e| sigmoid(pooled.dot(self.cls_row(e)) + self.cls_biases[e]))
            .collect();
        Ok(DbofForward { pooled, argmax, scores })
    }

    pub fn forward<X: FeatureRow>(&self, frames: &[X]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(frames)?.scores)
    }

    /// Log-loss summed over labels for one video, plus its gradient added
    /// (scaled by `scale`) into `grad`.
    pub(crate) fn accumulate<X: FeatureRow>(
        &self,
        frames: &[X],
        labels: &LabelSet,
        scale: f64,
        grad: &mut DbofParams,
    ) -> Result<f64> {
        let fwd = self.forward_cached(frames)?;
        let mut loss = 0.0;
        let mut d_pooled = vec![0.0; self.width];
        for (e, &p) in fwd.scores.iter().enumerate() {
            let y = labels.contains(&(e as u32));
            loss += clamped_log_loss(p, y);
            let dz = (p - f64::from(u8::from(y))) * scale;
            fwd.pooled
                .add_scaled_to(dz, &mut grad.cls_weights[e * self.width..(e + 1) * self.width]);
            grad.cls_biases[e] += dz;
            self.cls_row(e).add_scaled_to(dz, &mut d_pooled);
        }
        for (u, winner) in fwd.argmax.iter().enumerate() {
            if let Some(j) = *winner {
                let da = d_pooled[u];
                frames[j].add_scaled_to(da, &mut grad.up_weights[u * self.dim..(u + 1) * self.dim]);
                grad.up_biases[u] += da;
            }
        }
        Ok(loss)
    }

    /// Mean over videos of the summed log-loss, and its gradient.
    pub fn loss_grad<X: FeatureRow>(&self, videos: &[&[X]], labels: &[&LabelSet]) -> Result<(f64, DbofParams)> {
        let mut grad = DbofParams::zeros(self.vocab(), self.dim, self.width);
        let scale = 1.0 / videos.len() as f64;
        let mut loss = 0.0;
        for (frames, l) in videos.iter().zip(labels) {
            loss += self.accumulate(frames, l, scale, &mut grad)?;
        }
        Ok((loss * scale, grad))
    }
}

/// Score a video from its (sampled) frames.
pub fn dbof_forward<X: FeatureRow>(params: &DbofParams, frames: &[X]) -> Result<Vec<f64>> {
    params.forward(frames)
}

impl ParamTensors for DbofParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.up_weights, &self.up_biases, &self.cls_weights, &self.cls_biases]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.up_weights,
            &mut self.up_biases,
            &mut self.cls_weights,
            &mut self.cls_biases,
        ]
    }
}

impl ModelParams for DbofParams {
    const KIND: &'static str = "dbof";

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn dims(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([("input".to_owned(), self.dim), ("width".to_owned(), self.width)])
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.vocab_size > 0
            && self.width > 0
            && self.up_weights.len() == self.width * self.dim
            && self.up_biases.len() == self.width
            && self.cls_weights.len() == self.vocab_size * self.width
            && self.cls_biases.len() == self.vocab_size;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                format!(
                    "DBoF tensors for vocab {}, dim {}, width {}",
                    self.vocab_size, self.dim, self.width
                ),
                "inconsistent tensor lengths",
            ))
        }
    }
}
