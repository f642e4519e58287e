//! Frame-level models: frame sampling, frame-level logistic regression with
//! per-video probability averaging, deep bag of frames (DBoF) and a stacked
//! peephole LSTM, plus a finite-difference gradient checker.

mod dbof;
mod gradcheck;
mod lstm;
mod train;

use serde::{Deserialize, Serialize};

pub use dbof::{dbof_forward, DbofParams};
pub use gradcheck::{check_model_gradient, numeric_gradient_check, relative_error};
pub use lstm::{lstm_cell_step, lstm_forward, stride_indices, LstmLayer, LstmParams};
pub use train::{
    predict_sequence_model, train_sequence_model, train_sequence_model_from, SequenceConfig, SequenceKind,
    SequenceParams,
};

use crate::datamodel::{FeatureMode, FrameExample, LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::linear::{logistic_train, FeatureRow, LogisticParams, TrainConfig, TrainReport};
use crate::rng::SeededRng;

/// Number of frames drawn per video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSampleConfig {
    pub frames: usize,
    pub seed: u64,
}

impl Default for FrameSampleConfig {
    fn default() -> Self {
        FrameSampleConfig { frames: 20, seed: 0 }
    }
}

/// FNV-1a, used to give each video its own sampling stream.
pub(crate) fn video_hash(video_id: &str) -> u64 {
    video_id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Frame indices to keep: `n` distinct indices drawn uniformly without
/// replacement (returned in temporal order), or every frame when the video is
/// shorter than `n`.
pub fn sample_frame_indices(num_frames: usize, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if num_frames == 0 {
        return Err(Error::InvalidInput("cannot sample from an empty video".into()));
    }
    if n == 0 {
        return Err(Error::Config("frames per video must be >= 1".into()));
    }
    if num_frames <= n {
        return Ok((0..num_frames).collect());
    }
    let mut idx = rng.sample_indices(num_frames, n);
    idx.sort_unstable();
    Ok(idx)
}

/// Deterministic per-video sample of feature rows.
pub fn sample_frames(video: &FrameExample, cfg: &FrameSampleConfig, mode: FeatureMode) -> Result<Vec<Vec<f64>>> {
    let mut rng = SeededRng::derived(cfg.seed, video_hash(&video.video_id), 0);
    let idx = sample_frame_indices(video.num_frames(), cfg.frames, &mut rng)?;
    Ok(idx
        .into_iter()
        .map(|j| mode.assemble(&video.rgb[j], &video.audio[j]))
        .collect())
}

/// Video-level scores as the plain mean of per-frame logistic probabilities,
/// summed left to right over frames.
pub fn frame_logistic_infer<X: FeatureRow>(params: &LogisticParams, frames: &[X]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to score".into()));
    }
    let mut sum = vec![0.0; params.vocab_size];
    for frame in frames {
        let p = params.predict(frame)?;
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let n = frames.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Train a per-frame logistic model: each sampled frame becomes an example
/// carrying its video's labels.
pub fn frame_logistic_train(
    videos: &[FrameExample],
    vocab: Vocabulary,
    cfg: &TrainConfig,
    sample: &FrameSampleConfig,
    mode: FeatureMode,
) -> Result<(LogisticParams, TrainReport)> {
    if videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::new();
    let mut labels: Vec<LabelSet> = Vec::new();
    for v in videos {
        let frames = sample_frames(v, sample, mode)?;
        labels.extend(std::iter::repeat_n(v.labels.clone(), frames.len()));
        rows.extend(frames);
    }
    let refs: Vec<&Vec<f64>> = rows.iter().collect();
    logistic_train(&refs, &labels, vocab, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(frames: usize) -> FrameExample {
        FrameExample {
            video_id: "vid".into(),
            labels: LabelSet::from([0]),
            rgb: (0..frames).map(|j| vec![j as f32]).collect(),
            audio: (0..frames).map(|_| vec![0.0]).collect(),
        }
    }

    #[test]
    fn sample_long_video() {
        let cfg = FrameSampleConfig { frames: 20, seed: 3 };
        let s = sample_frames(&video(300), &cfg, FeatureMode::Rgb).unwrap();
        assert_eq!(s.len(), 20);
        let mut ids: Vec<i64> = s.iter().map(|f| f[0] as i64).collect();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        assert_eq!(s, sample_frames(&video(300), &cfg, FeatureMode::Rgb).unwrap());
    }

    #[test]
    fn sample_short_video_keeps_all_in_order() {
        let cfg = FrameSampleConfig::default();
        let s = sample_frames(&video(5), &cfg, FeatureMode::Rgb).unwrap();
        assert_eq!(s, (0..5).map(|j| vec![j as f64]).collect::<Vec<_>>());
        assert!(sample_frames(&video(0), &cfg, FeatureMode::Rgb).is_err());
    }

    #[test]
    fn frame_average() {
        let vocab = Vocabulary::new(1).unwrap();
        let mut p = LogisticParams::zeros(vocab, 1, 0.0);
        assert_eq!(frame_logistic_infer(&p, &[vec![1.0], vec![-3.0]]).unwrap(), vec![0.5]);

        // per-frame probabilities 0.2, 0.4, 0.9 through weight 1, bias 0
        p.weights[0] = 1.0;
        let logit = |q: f64| (q / (1.0 - q)).ln();
        let frames = [vec![logit(0.2)], vec![logit(0.4)], vec![logit(0.9)]];
        let s = frame_logistic_infer(&p, &frames).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12);

        let same = frame_logistic_infer(&p, &[vec![0.3], vec![0.3], vec![0.3]]).unwrap();
        let single = p.predict(&vec![0.3]).unwrap();
        assert!((same[0] - single[0]).abs() < 1e-15);
        assert!(frame_logistic_infer::<Vec<f64>>(&p, &[]).is_err());
    }

    #[test]
    fn frame_logistic_zero_epochs() {
        let vocab = Vocabulary::new(2).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (p, _) = frame_logistic_train(
            &[video(4)],
            vocab,
            &cfg,
            &FrameSampleConfig::default(),
            FeatureMode::Both,
        )
        .unwrap();
        assert_eq!(p, LogisticParams::zeros(vocab, 2, cfg.lambda));
    }

    #[test]
    fn single_frame_sampling_counts() {
        let vocab = Vocabulary::new(2).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let sample = FrameSampleConfig { frames: 1, seed: 0 };
        let videos: Vec<FrameExample> = (0..7)
            .map(|i| FrameExample {
                video_id: format!("v{i}"),
                ..video(10)
            })
            .collect();
        let (_, report) = frame_logistic_train(&videos, vocab, &cfg, &sample, FeatureMode::Rgb).unwrap();
        assert_eq!(report.step_losses.len(), 7);
    }
}
