//! Synthetic datasets with a planted labelling model.
//!
//! Every video has a latent feature vector `z` (rgb block then audio block)
//! drawn from a standard normal. Labels come from a planted one-vs-all model:
//!
//! * `linear`: label `l` is on iff `sigmoid(w_l . z + b_l) > threshold`.
//! * `mixture`: as linear, but the score is `s(z) * (w_l . z)` where
//!   `s(z) = sign(u . z)` for a planted cluster direction `u`, so each label
//!   has two opposing expert directions and no single hyperplane fits it.
//! * `sequential`: frames drift along a per-video vector `d` around `z`, and
//!   label `l` is on iff `w_l . d > 0`. Reversing the drift complements the
//!   labels while leaving the set of frames unchanged, so only an
//!   order-aware model can recover them.
//!
//! Optionally the last `parents` labels form a hierarchy: parent `p` is on
//! iff any of its `children` leaf labels `p * children ..` is on, the way a
//! broad topic covers its specific ones. A parent is not a threshold of any
//! linear score, but is easy to read off the leaf predictions.
//!
//! Biases of the first two tasks are calibrated by bisection so every leaf
//! fires at a common rate chosen to give `labels_per_video` labels per video,
//! parents included.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{FrameExample, LabelSet, Level, VideoExample, Vocabulary};
use crate::error::{Error, Result};
use crate::linear::{sigmoid, FeatureRow};
use crate::recordio::ModelParams;
use crate::rng::{SeededRng, GENERATOR_NAME};

const BISECTION_ROUNDS: usize = 64;

const STREAM_PLANTED: u64 = 1;
const STREAM_LATENT: u64 = 2;
const STREAM_FRAMES: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Linear,
    Mixture,
    Sequential,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Linear => "linear",
            Task::Mixture => "mixture",
            Task::Sequential => "sequential",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Task::Linear),
            "mixture" => Ok(Task::Mixture),
            "sequential" => Ok(Task::Sequential),
            other => Err(Error::InvalidInput(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub num_videos: usize,
    pub rgb_dim: usize,
    pub audio_dim: usize,
    pub vocab_size: usize,
    /// Target mean number of labels per video (linear and mixture tasks).
    pub labels_per_video: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Standard deviation of per-frame noise around the latent vector.
    pub frame_noise: f64,
    /// Scale of the planted weights: `w ~ N(0, signal^2 / dim)`.
    pub signal: f64,
    /// Length scale of the per-video drift (sequential task).
    pub drift: f64,
    pub threshold: f64,
    pub task: Task,
    /// Number of parent labels, taken from the end of the vocabulary.
    pub parents: usize,
    /// Leaf labels under each parent.
    pub children: usize,
    /// `video` writes video-level splits; `frame` writes frame-level splits
    /// and their per-video means.
    pub level: Level,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            num_videos: 5000,
            rgb_dim: 32,
            audio_dim: 8,
            vocab_size: 16,
            labels_per_video: 3.4,
            min_frames: 10,
            max_frames: 30,
            frame_noise: 0.5,
            signal: 4.0,
            drift: 2.0,
            threshold: 0.5,
            task: Task::Linear,
            parents: 0,
            children: 3,
            level: Level::Video,
        }
    }
}

impl SynthSpec {
    pub fn dim(&self) -> usize {
        self.rgb_dim + self.audio_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.num_videos == 0 || self.rgb_dim == 0 || self.audio_dim == 0 || self.vocab_size == 0 {
            return bad("num_videos, rgb_dim, audio_dim and vocab_size must be positive");
        }
        if !(self.labels_per_video > 0.0 && self.labels_per_video < self.vocab_size as f64) {
            return bad("labels_per_video must lie in (0, vocab_size)");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames || self.max_frames > crate::datamodel::MAX_FRAMES {
            return bad("frame range must satisfy 1 <= min_frames <= max_frames <= 300");
        }
        if self.task == Task::Sequential && self.min_frames < 2 {
            return bad("the sequential task needs at least 2 frames per video");
        }
        if !(self.frame_noise >= 0.0 && self.frame_noise.is_finite()) {
            return bad("frame_noise must be non-negative");
        }
        if !(self.signal > 0.0 && self.signal.is_finite() && self.drift > 0.0 && self.drift.is_finite()) {
            return bad("signal and drift must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.parents > 0 && (self.children < 2 || self.parents * (self.children + 1) > self.vocab_size) {
            return bad("each parent needs at least 2 children, all within the vocabulary");
        }
        if self.level == Level::Stacked {
            return bad("level must be video or frame");
        }
        Ok(())
    }

    /// Metadata recorded in the header of generated datasets.
    pub fn metadata(&self, split: &str) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::from([
            ("generator".to_owned(), GENERATOR_NAME.into()),
            ("seed".to_owned(), self.seed.into()),
            ("task".to_owned(), self.task.to_string().into()),
            ("split".to_owned(), split.into()),
            ("vocab_size".to_owned(), self.vocab_size.into()),
            ("rgb_dim".to_owned(), self.rgb_dim.into()),
            ("audio_dim".to_owned(), self.audio_dim.into()),
        ])
    }
}

/// The labelling model behind a synthetic dataset. Its input is the latent
/// vector `z` (linear, mixture) or the drift vector `d` (sequential).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub task: Task,
    pub vocab_size: usize,
    pub dim: usize,
    /// `[vocab_size x dim]`
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub threshold: f64,
    /// Cluster direction of the mixture task; empty otherwise.
    pub cluster: Vec<f64>,
    /// Children of the parent labels, which follow the leaves. Parent rows
    /// of `weights` and `biases` are zero.
    #[serde(default)]
    pub parents: Vec<Vec<u32>>,
}

impl PlantedModel {
    fn row(&self, l: usize) -> &[f64] {
        &self.weights[l * self.dim..(l + 1) * self.dim]
    }

    fn cluster_sign(&self, x: &[f64]) -> f64 {
        if self.task == Task::Mixture && x.dot(&self.cluster) < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn leaves(&self) -> usize {
        self.vocab_size - self.parents.len()
    }

    /// Leaf scores before the sigmoid, without biases.
    fn margins(&self, x: &[f64]) -> Vec<f64> {
        let s = self.cluster_sign(x);
        (0..self.leaves()).map(|l| s * x.dot(self.row(l))).collect()
    }

    pub fn labels(&self, x: &[f64]) -> Result<LabelSet> {
        Ok(oracle_predict(self, x)?
            .into_iter()
            .enumerate()
            .filter(|&(_, p)| p > self.threshold)
            .map(|(l, _)| l as u32)
            .collect())
    }
}

impl ModelParams for PlantedModel {
    const KIND: &'static str = "planted";

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn dims(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([("input".to_owned(), self.dim)])
    }

    fn check_shapes(&self) -> Result<()> {
        let cluster_ok = match self.task {
            Task::Mixture => self.cluster.len() == self.dim,
            _ => self.cluster.is_empty(),
        };
        if self.weights.len() != self.vocab_size * self.dim || self.biases.len() != self.vocab_size || !cluster_ok {
            return Err(Error::shape("consistent planted model", "inconsistent tensor lengths"));
        }
        let leaves = self.vocab_size.checked_sub(self.parents.len());
        if leaves.is_none_or(|n| self.parents.iter().flatten().any(|&c| c as usize >= n)) {
            return Err(Error::shape("parents over leaf labels", "children outside the leaves"));
        }
        Ok(())
    }
}

/// Scores of the planted model: `sigmoid(w_l . x + b_l)` for leaves, with
/// the cluster sign applied to `w_l . x` for the mixture task, and the
/// largest child score for parents.
pub fn oracle_predict(planted: &PlantedModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != planted.dim {
        return Err(Error::shape(format!("input dimension {}", planted.dim), x.len()));
    }
    let mut scores: Vec<f64> = planted
        .margins(x)
        .into_iter()
        .zip(&planted.biases)
        .map(|(m, b)| sigmoid(m + b))
        .collect();
    for children in &planted.parents {
        let top = children.iter().map(|&c| scores[c as usize]).fold(0.0, f64::max);
        scores.push(top);
    }
    Ok(scores)
}

fn gaussian_f32(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f32> {
    (0..n).map(|_| (scale * rng.normal()) as f32).collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn planted_weights(spec: &SynthSpec) -> PlantedModel {
    let dim = spec.dim();
    let mut rng = SeededRng::derived(spec.seed, STREAM_PLANTED, 0);
    let scale = spec.signal / (dim as f64).sqrt();
    let leaves = spec.vocab_size - spec.parents;
    let mut weights: Vec<f64> = (0..leaves * dim).map(|_| scale * rng.normal()).collect();
    weights.resize(spec.vocab_size * dim, 0.0);
    let cluster = if spec.task == Task::Mixture {
        let u: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.into_iter().map(|v| v / norm).collect()
    } else {
        Vec::new()
    };
    PlantedModel {
        task: spec.task,
        vocab_size: spec.vocab_size,
        dim,
        weights,
        biases: vec![0.0; spec.vocab_size],
        threshold: spec.threshold,
        cluster,
        parents: (0..spec.parents)
            .map(|p| (p * spec.children..(p + 1) * spec.children).map(|c| c as u32).collect())
            .collect(),
    }
}

/// The common leaf rate `r` giving `labels_per_video` labels per video when
/// leaves fire independently: `leaves * r + parents * (1 - (1 - r)^children)`.
fn leaf_rate(spec: &SynthSpec) -> f64 {
    let leaves = (spec.vocab_size - spec.parents) as f64;
    let expected = |r: f64| leaves * r + spec.parents as f64 * (1.0 - (1.0 - r).powi(spec.children as i32));
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_ROUNDS {
        let mid = 0.5 * (lo + hi);
        if expected(mid) > spec.labels_per_video {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Per leaf, the bias for which the label fires on the leaf rate of the
/// inputs.
fn calibrate_biases(planted: &mut PlantedModel, inputs: &[Vec<f64>], spec: &SynthSpec) -> Result<()> {
    let cut = (spec.threshold / (1.0 - spec.threshold)).ln();
    let rate = leaf_rate(spec);
    let margins: Vec<Vec<f64>> = inputs.iter().map(|x| planted.margins(x)).collect();
    for l in 0..planted.leaves() {
        let fraction = |b: f64| {
            let on = margins.iter().filter(|m| sigmoid(m[l] + b) > spec.threshold).count();
            on as f64 / inputs.len() as f64
        };
        let (mut lo, mut hi) = (-cut - 100.0, -cut + 100.0);
        for _ in 0..BISECTION_ROUNDS {
            let mid = 0.5 * (lo + hi);
            if fraction(mid) > rate {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        planted.biases[l] = 0.5 * (lo + hi);
    }
    let total: usize = inputs
        .iter()
        .map(|x| planted.labels(x).map(|s| s.len()))
        .sum::<Result<usize>>()?;
    let mean = total as f64 / inputs.len() as f64;
    let mu = spec.labels_per_video;
    if !(0.8 * mu..=1.2 * mu).contains(&mean) {
        return Err(Error::Calibration(format!(
            "mean labels per video {mean:.3} outside [{:.3}, {:.3}] after {BISECTION_ROUNDS} bisection rounds",
            0.8 * mu,
            1.2 * mu
        )));
    }
    Ok(())
}

pub fn video_id(index: usize) -> String {
    format!("vid{index:06}")
}

/// Latent vectors (stored as `f32`), and for the sequential task the drift
/// vectors, of every video.
fn latents(spec: &SynthSpec) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let dim = spec.dim();
    let mut z = Vec::with_capacity(spec.num_videos);
    let mut d = Vec::new();
    for i in 0..spec.num_videos {
        let mut rng = SeededRng::derived(spec.seed, STREAM_LATENT, i as u64);
        z.push(gaussian_f32(&mut rng, dim, 1.0));
        if spec.task == Task::Sequential {
            d.push(gaussian_f32(&mut rng, dim, 1.0));
        }
    }
    (z, d)
}

fn planted_model(spec: &SynthSpec, z: &[Vec<f32>]) -> Result<PlantedModel> {
    spec.validate()?;
    let mut planted = planted_weights(spec);
    if spec.task == Task::Sequential {
        // Zero biases and threshold 1/2 make the labels an odd function of
        // the drift.
        planted.threshold = 0.5;
    } else {
        let inputs: Vec<Vec<f64>> = z.iter().map(|v| widen(v)).collect();
        calibrate_biases(&mut planted, &inputs, spec)?;
    }
    Ok(planted)
}

fn split_features(spec: &SynthSpec, x: &[f32]) -> (Vec<f32>, Vec<f32>) {
    (x[..spec.rgb_dim].to_vec(), x[spec.rgb_dim..].to_vec())
}

/// Video-level records whose mean features are the latent vectors.
pub fn gen_video_level(spec: &SynthSpec) -> Result<(Vec<VideoExample>, PlantedModel)> {
    if spec.task == Task::Sequential {
        return Err(Error::Config("the sequential task only exists at frame level".into()));
    }
    let (z, _) = latents(spec);
    let planted = planted_model(spec, &z)?;
    let videos = z
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (mean_rgb, mean_audio) = split_features(spec, x);
            Ok(VideoExample {
                video_id: video_id(i),
                labels: planted.labels(&widen(x))?,
                mean_rgb,
                mean_audio,
            })
        })
        .collect::<Result<_>>()?;
    Ok((videos, planted))
}

/// Frame-level records: frames scatter around the latent vector with
/// `frame_noise`, plus (sequential task) a centred linear drift
/// `(j / (F - 1) - 1/2) * drift * d`.
pub fn gen_frame_level(spec: &SynthSpec) -> Result<(Vec<FrameExample>, PlantedModel)> {
    let (z, d) = latents(spec);
    let planted = planted_model(spec, &z)?;
    let dim = spec.dim();
    let mut videos = Vec::with_capacity(spec.num_videos);
    for (i, zi) in z.iter().enumerate() {
        let mut rng = SeededRng::derived(spec.seed, STREAM_FRAMES, i as u64);
        let frames = spec.min_frames + rng.below(spec.max_frames - spec.min_frames + 1);
        let (labels, drift) = match spec.task {
            Task::Sequential => (planted.labels(&widen(&d[i]))?, Some(&d[i])),
            _ => (planted.labels(&widen(zi))?, None),
        };
        let mut rgb = Vec::with_capacity(frames);
        let mut audio = Vec::with_capacity(frames);
        for j in 0..frames {
            let t = match drift {
                Some(_) => (j as f64 / (frames - 1) as f64 - 0.5) * spec.drift,
                None => 0.0,
            };
            let x: Vec<f32> = (0..dim)
                .map(|k| {
                    let mut v = f64::from(zi[k]);
                    if let Some(dv) = drift {
                        v += t * f64::from(dv[k]);
                    }
                    if spec.frame_noise > 0.0 {
                        v += spec.frame_noise * rng.normal();
                    }
                    v as f32
                })
                .collect();
            let (r, a) = split_features(spec, &x);
            rgb.push(r);
            audio.push(a);
        }
        videos.push(FrameExample {
            video_id: video_id(i),
            labels,
            rgb,
            audio,
        });
    }
    if spec.frame_noise > 0.0 && spec.task != Task::Sequential {
        check_frame_means(spec, &videos, &z)?;
    }
    Ok((videos, planted))
}

/// At least 99% of videos must have every coordinate of their frame mean
/// within `4 * frame_noise / sqrt(F)` of the latent value.
fn check_frame_means(spec: &SynthSpec, videos: &[FrameExample], z: &[Vec<f32>]) -> Result<()> {
    let close = videos
        .iter()
        .zip(z)
        .filter(|(v, zi)| {
            let mean = v.to_video();
            let bound = 4.0 * spec.frame_noise / (v.num_frames() as f64).sqrt();
            mean.mean_rgb
                .iter()
                .chain(&mean.mean_audio)
                .zip(zi.iter())
                .all(|(m, z)| (f64::from(*m) - f64::from(*z)).abs() <= bound + 1e-6)
        })
        .count();
    if (close as f64) < 0.99 * videos.len() as f64 {
        return Err(Error::Calibration(format!(
            "only {close} of {} frame means lie near their latent vector",
            videos.len()
        )));
    }
    Ok(())
}

/// Train/validate/test split sizes in the ratio 7:2:1.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.7).round() as usize;
    let validate = ((n as f64 * 0.2).round() as usize).min(n - train);
    (train, validate, n - train - validate)
}

/// Split records in generation order.
pub fn split<T: Clone>(records: &[T]) -> [Vec<T>; 3] {
    let (a, b, _) = split_sizes(records.len());
    [
        records[..a].to_vec(),
        records[a..a + b].to_vec(),
        records[a + b..].to_vec(),
    ]
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "validate", "test"];

pub fn vocab_of(spec: &SynthSpec) -> Result<Vocabulary> {
    Vocabulary::new(spec.vocab_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task) -> SynthSpec {
        SynthSpec {
            num_videos: 400,
            task,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        let spec = small(Task::Linear);
        assert_eq!(gen_video_level(&spec).unwrap(), gen_video_level(&spec).unwrap());
        assert_eq!(gen_frame_level(&spec).unwrap(), gen_frame_level(&spec).unwrap());
    }

    #[test]
    fn stored_model_reproduces_labels() {
        for task in [Task::Linear, Task::Mixture] {
            let (videos, planted) = gen_video_level(&small(task)).unwrap();
            for v in &videos {
                let x: Vec<f64> = v.features(crate::datamodel::FeatureMode::Both);
                assert_eq!(planted.labels(&x).unwrap(), v.labels);
            }
        }
    }

    #[test]
    fn calibrated_label_count() {
        let spec = SynthSpec::default();
        let (videos, _) = gen_video_level(&spec).unwrap();
        let mean = videos.iter().map(|v| v.labels.len()).sum::<usize>() as f64 / videos.len() as f64;
        assert!((2.72..=4.08).contains(&mean), "{mean}");
    }

    #[test]
    fn parents_cover_their_children() {
        let spec = SynthSpec {
            vocab_size: 32,
            parents: 8,
            ..SynthSpec::default()
        };
        let (videos, planted) = gen_video_level(&spec).unwrap();
        assert!(planted.check_shapes().is_ok());
        assert_eq!(planted.parents[1], vec![3, 4, 5]);
        let mean = videos.iter().map(|v| v.labels.len()).sum::<usize>() as f64 / videos.len() as f64;
        assert!((2.72..=4.08).contains(&mean), "{mean}");
        for v in &videos {
            for (p, children) in planted.parents.iter().enumerate() {
                let any = children.iter().any(|c| v.labels.contains(c));
                assert_eq!(v.labels.contains(&(24 + p as u32)), any);
            }
            let scores = oracle_predict(&planted, &v.features(crate::datamodel::FeatureMode::Both)).unwrap();
            assert_eq!(scores[24], scores[0].max(scores[1]).max(scores[2]));
        }
        let bad = SynthSpec {
            vocab_size: 8,
            parents: 3,
            ..SynthSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noiseless_frames_equal_latent() {
        let spec = SynthSpec {
            frame_noise: 0.0,
            ..small(Task::Linear)
        };
        let (frames, _) = gen_frame_level(&spec).unwrap();
        let (videos, _) = gen_video_level(&spec).unwrap();
        for (f, v) in frames.iter().zip(&videos) {
            assert!(f.rgb.iter().all(|r| *r == v.mean_rgb));
            assert!(f.audio.iter().all(|a| *a == v.mean_audio));
            assert_eq!(f.to_video(), *v);
        }
    }

    #[test]
    fn reversed_drift_complements_labels() {
        let spec = SynthSpec {
            vocab_size: 4,
            labels_per_video: 2.0,
            ..small(Task::Sequential)
        };
        let (z, d) = latents(&spec);
        let planted = planted_model(&spec, &z).unwrap();
        for di in d.iter().take(50) {
            let fwd = planted.labels(&widen(di)).unwrap();
            let rev: Vec<f64> = widen(di).into_iter().map(|v| -v).collect();
            let back = planted.labels(&rev).unwrap();
            let all: LabelSet = (0..4).collect();
            assert_eq!(back, all.difference(&fwd).copied().collect());
        }
    }

    #[test]
    fn oracle_at_zero_is_sigmoid_bias() {
        let (_, planted) = gen_video_level(&small(Task::Linear)).unwrap();
        let p = oracle_predict(&planted, &vec![0.0; planted.dim]).unwrap();
        for (pi, b) in p.iter().zip(&planted.biases) {
            assert_eq!(*pi, sigmoid(*b));
        }
        assert!(oracle_predict(&planted, &[0.0]).is_err());
    }

    #[test]
    fn split_ratio() {
        assert_eq!(split_sizes(1000), (700, 200, 100));
        assert_eq!(split_sizes(5000), (3500, 1000, 500));
        let (a, b, c) = split_sizes(7);
        assert_eq!(a + b + c, 7);
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec {
                num_videos: 0,
                ..SynthSpec::default()
            },
            SynthSpec {
                labels_per_video: 16.0,
                ..SynthSpec::default()
            },
            SynthSpec {
                min_frames: 5,
                max_frames: 4,
                ..SynthSpec::default()
            },
            SynthSpec {
                threshold: 1.0,
                ..SynthSpec::default()
            },
        ] {
            assert!(gen_video_level(&spec).is_err());
        }
        assert!(gen_video_level(&small(Task::Sequential)).is_err());
    }
}
