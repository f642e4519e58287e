use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dbof::DbofParams;
use super::lstm::{stride_indices, LstmParams};
use super::{sample_frame_indices, sample_frames, video_hash, FrameSampleConfig};
use crate::datamodel::{FeatureMode, FrameExample, LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::linear::{batch_schedule, AdagradState, ParamTensors, TrainConfig, TrainReport};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Dbof,
    Lstm,
}

/// Settings for the frame-sequence models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    pub train: TrainConfig,
    /// DBoF up-projection width; 0 means `8 * input dim`.
    pub width: usize,
    pub hidden: usize,
    pub layers: usize,
    pub unroll: usize,
    /// Frame sampling for DBoF.
    pub sample: FrameSampleConfig,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            train: TrainConfig::default(),
            width: 0,
            hidden: 32,
            layers: 2,
            unroll: 60,
            sample: FrameSampleConfig::default(),
        }
    }
}

impl SequenceConfig {
    fn validate(&self, kind: SequenceKind) -> Result<()> {
        self.train.validate()?;
        if self.sample.frames == 0 {
            return Err(Error::Config("frames per video must be >= 1".into()));
        }
        if kind == SequenceKind::Lstm && (self.hidden == 0 || self.layers == 0 || self.unroll == 0) {
            return Err(Error::Config("LSTM needs hidden, layers and unroll >= 1".into()));
        }
        Ok(())
    }

    fn width_for(&self, dim: usize) -> usize {
        if self.width == 0 {
            (8 * dim).max(1)
        } else {
            self.width
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SequenceParams {
    Dbof(DbofParams),
    Lstm(LstmParams),
}

impl SequenceParams {
    pub fn init(kind: SequenceKind, vocab: Vocabulary, dim: usize, cfg: &SequenceConfig) -> Self {
        match kind {
            SequenceKind::Dbof => {
                SequenceParams::Dbof(DbofParams::init(vocab, dim, cfg.width_for(dim), cfg.train.seed))
            }
            SequenceKind::Lstm => {
                SequenceParams::Lstm(LstmParams::init(vocab, dim, cfg.hidden, cfg.layers, cfg.train.seed))
            }
        }
    }

    pub fn kind(&self) -> SequenceKind {
        match self {
            SequenceParams::Dbof(_) => SequenceKind::Dbof,
            SequenceParams::Lstm(_) => SequenceKind::Lstm,
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            SequenceParams::Dbof(p) => p.dim,
            SequenceParams::Lstm(p) => p.input_dim,
        }
    }

    fn vocab_size(&self) -> usize {
        match self {
            SequenceParams::Dbof(p) => p.vocab_size,
            SequenceParams::Lstm(p) => p.vocab_size,
        }
    }
}

/// Rows fed to the model for one video: a fresh per-epoch sample for DBoF,
/// the strided sequence for the LSTM.
fn model_inputs(
    kind: SequenceKind,
    video: &FrameExample,
    cfg: &SequenceConfig,
    mode: FeatureMode,
    epoch: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    if video.num_frames() == 0 {
        return Err(Error::InvalidInput(format!("video {} has no frames", video.video_id)));
    }
    let idx = match kind {
        SequenceKind::Dbof => match epoch {
            Some(e) => {
                let mut rng = SeededRng::derived(cfg.sample.seed, video_hash(&video.video_id), e as u64 + 1);
                sample_frame_indices(video.num_frames(), cfg.sample.frames, &mut rng)?
            }
            None => return sample_frames(video, &cfg.sample, mode),
        },
        SequenceKind::Lstm => stride_indices(video.num_frames(), cfg.unroll),
    };
    Ok(idx
        .into_iter()
        .map(|j| mode.assemble(&video.rgb[j], &video.audio[j]))
        .collect())
}

fn example_loss_grad(
    params: &SequenceParams,
    rows: &[Vec<f64>],
    labels: &LabelSet,
    scale: f64,
) -> Result<(f64, SequenceParams)> {
    match params {
        SequenceParams::Dbof(p) => {
            let mut g = DbofParams::zeros(p.vocab(), p.dim, p.width);
            let loss = p.accumulate(rows, labels, scale, &mut g)?;
            Ok((loss, SequenceParams::Dbof(g)))
        }
        SequenceParams::Lstm(p) => {
            let mut g = LstmParams::zeros(p.vocab(), p.input_dim, p.hidden, p.layers.len());
            let steps: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let loss = p.accumulate(&steps, labels, scale, &mut g)?;
            Ok((loss, SequenceParams::Lstm(g)))
        }
    }
}

impl ParamTensors for SequenceParams {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            SequenceParams::Dbof(p) => p.tensors(),
            SequenceParams::Lstm(p) => p.tensors(),
        }
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            SequenceParams::Dbof(p) => p.tensors_mut(),
            SequenceParams::Lstm(p) => p.tensors_mut(),
        }
    }
}

fn add_into(total: &mut SequenceParams, part: &SequenceParams) {
    for (t, p) in total.tensors_mut().into_iter().zip(part.tensors()) {
        for (a, b) in t.iter_mut().zip(p) {
            *a += b;
        }
    }
}

/// Mean summed log-loss over a batch plus `lambda * ||theta||^2`, with its
/// gradient. Per-video gradients are computed in parallel and reduced in
/// batch order, so results do not depend on the thread count.
pub(crate) fn batch_loss_grad(
    params: &SequenceParams,
    inputs: &[(Vec<Vec<f64>>, &LabelSet)],
    lambda: f64,
) -> Result<(f64, SequenceParams)> {
    let scale = 1.0 / inputs.len() as f64;
    let parts: Vec<Result<(f64, SequenceParams)>> = inputs
        .par_iter()
        .map(|(rows, labels)| example_loss_grad(params, rows, labels, scale))
        .collect();
    let mut loss = 0.0;
    let mut grad: Option<SequenceParams> = None;
    for part in parts {
        let (l, g) = part?;
        loss += l * scale;
        match grad.as_mut() {
            Some(total) => add_into(total, &g),
            None => grad = Some(g),
        }
    }
    let mut grad = grad.expect("nonempty batch");
    if lambda > 0.0 {
        for (g, p) in grad.tensors_mut().into_iter().zip(params.tensors()) {
            for (gi, pi) in g.iter_mut().zip(p) {
                loss += lambda * pi * pi;
                *gi += 2.0 * lambda * pi;
            }
        }
    }
    Ok((loss, grad))
}

/// Train a DBoF or LSTM model from a seeded initialisation.
pub fn train_sequence_model(
    kind: SequenceKind,
    videos: &[FrameExample],
    mode: FeatureMode,
    vocab: Vocabulary,
    cfg: &SequenceConfig,
) -> Result<(SequenceParams, TrainReport)> {
    let first = videos.first().ok_or(Error::EmptyDataset)?;
    let dim = first
        .rgb
        .first()
        .zip(first.audio.first())
        .map(|(r, a)| mode.dim(r.len(), a.len()))
        .ok_or_else(|| Error::InvalidInput(format!("video {} has no frames", first.video_id)))?;
    let init = SequenceParams::init(kind, vocab, dim, cfg);
    train_sequence_model_from(init, videos, mode, cfg)
}

/// Continue training from the given parameters.
pub fn train_sequence_model_from(
    mut params: SequenceParams,
    videos: &[FrameExample],
    mode: FeatureMode,
    cfg: &SequenceConfig,
) -> Result<(SequenceParams, TrainReport)> {
    let kind = params.kind();
    cfg.validate(kind)?;
    if videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = Vocabulary::new(params.vocab_size())?;
    for v in videos {
        if let Some(l) = v.labels.iter().find(|&&l| !vocab.contains(l)) {
            return Err(Error::InvalidInput(format!(
                "label {l} of video {} outside vocabulary of size {}",
                v.video_id,
                vocab.size()
            )));
        }
    }
    let tc = &cfg.train;
    let schedule = batch_schedule(videos.len(), tc.batch_size, tc.epochs, tc.seed);
    let steps_per_epoch = videos.len().div_ceil(tc.batch_size);
    let mut state = AdagradState::new(&params, tc.learning_rate, tc.adagrad_epsilon);
    let mut step_losses = Vec::with_capacity(schedule.len());
    for (step, batch) in schedule.iter().enumerate() {
        let epoch = step / steps_per_epoch;
        let inputs = batch
            .iter()
            .map(|&i| {
                let rows = model_inputs(kind, &videos[i], cfg, mode, Some(epoch))?;
                if let Some(r) = rows.iter().find(|r| r.len() != params.input_dim()) {
                    return Err(Error::shape(format!("frame dimension {}", params.input_dim()), r.len()));
                }
                Ok((rows, &videos[i].labels))
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = batch_loss_grad(&params, &inputs, tc.lambda)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                batch: batch.clone(),
            });
        }
        step_losses.push(loss);
        state.step(&mut params, &grad)?;
        log::debug!("step {step}: loss {loss:.6}");
    }
    Ok((
        params,
        TrainReport {
            step_losses,
            steps_per_epoch,
        },
    ))
}

/// Score one video with a trained sequence model.
pub fn predict_sequence_model(
    params: &SequenceParams,
    video: &FrameExample,
    mode: FeatureMode,
    cfg: &SequenceConfig,
) -> Result<Vec<f64>> {
    let rows = model_inputs(params.kind(), video, cfg, mode, None)?;
    match params {
        SequenceParams::Dbof(p) => p.forward(&rows),
        SequenceParams::Lstm(p) => {
            let steps: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            p.forward_steps(&steps)
        }
    }
}
