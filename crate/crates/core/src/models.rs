//! The five base model kinds behind one interface: training from a dataset,
//! scoring videos, and model files that carry their own configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{top_k, FeatureMode, FrameExample, Level, PredictionList, VideoExample, Vocabulary};
use crate::error::{Error, Result};
use crate::framelevel::{
    frame_logistic_infer, frame_logistic_train, predict_sequence_model, sample_frames, train_sequence_model,
    DbofParams, FrameSampleConfig, LstmParams, SequenceConfig, SequenceKind, SequenceParams,
};
use crate::linear::{logistic_train, moe_train, LogisticParams, MoeParams, TrainConfig, TrainReport};
use crate::recordio::{load_model, model_kind, save_model, LoadedModel, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Logistic,
    Moe,
    FrameLogistic,
    Dbof,
    Lstm,
}

impl ModelKind {
    pub fn level(self) -> Level {
        match self {
            ModelKind::Logistic | ModelKind::Moe => Level::Video,
            _ => Level::Frame,
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "moe" => Ok(ModelKind::Moe),
            "frame-logistic" => Ok(ModelKind::FrameLogistic),
            "dbof" => Ok(ModelKind::Dbof),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::InvalidInput(format!(
                "unknown model `{other}` (expected logistic, moe, frame-logistic, dbof or lstm)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Moe => "moe",
            ModelKind::FrameLogistic => "frame-logistic",
            ModelKind::Dbof => "dbof",
            ModelKind::Lstm => "lstm",
        })
    }
}

/// Everything needed to train a model and to score with it later. Saved in
/// the model file's `config` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub features: FeatureMode,
    pub train: TrainConfig,
    /// Frame sampling (frame-logistic, DBoF).
    pub sample: FrameSampleConfig,
    /// DBoF up-projection width; 0 means `8 * input dim`.
    pub width: usize,
    pub hidden: usize,
    pub layers: usize,
    pub unroll: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let seq = SequenceConfig::default();
        ModelConfig {
            kind: ModelKind::Logistic,
            features: FeatureMode::Both,
            train: TrainConfig::default(),
            sample: seq.sample,
            width: seq.width,
            hidden: seq.hidden,
            layers: seq.layers,
            unroll: seq.unroll,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            ..ModelConfig::default()
        }
    }

    pub fn sequence(&self) -> SequenceConfig {
        SequenceConfig {
            train: self.train.clone(),
            width: self.width,
            hidden: self.hidden,
            layers: self.layers,
            unroll: self.unroll,
            sample: self.sample,
        }
    }

    /// Apply a seed to every random choice the model makes.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.sample.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelWeights {
    Logistic(LogisticParams),
    Moe(MoeParams),
    Sequence(SequenceParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: ModelWeights,
}

fn level_error(kind: ModelKind, found: Level) -> Error {
    Error::LevelMismatch {
        context: format!("{kind} model"),
        expected: kind.level(),
        found,
    }
}

impl Model {
    /// Train a video-level model.
    pub fn train_videos(cfg: &ModelConfig, videos: &[VideoExample], vocab: Vocabulary) -> Result<(Model, TrainReport)> {
        if cfg.kind.level() != Level::Video {
            return Err(level_error(cfg.kind, Level::Video));
        }
        let rows: Vec<Vec<f64>> = videos.iter().map(|v| v.features(cfg.features)).collect();
        let refs: Vec<&Vec<f64>> = rows.iter().collect();
        let labels: Vec<_> = videos.iter().map(|v| v.labels.clone()).collect();
        let (weights, report) = match cfg.kind {
            ModelKind::Logistic => {
                let (p, r) = logistic_train(&refs, &labels, vocab, &cfg.train)?;
                (ModelWeights::Logistic(p), r)
            }
            _ => {
                let (p, r) = moe_train(&refs, &labels, vocab, &cfg.train)?;
                (ModelWeights::Moe(p), r)
            }
        };
        Ok((
            Model {
                config: cfg.clone(),
                weights,
            },
            report,
        ))
    }

    /// Train a frame-level model.
    pub fn train_frames(cfg: &ModelConfig, videos: &[FrameExample], vocab: Vocabulary) -> Result<(Model, TrainReport)> {
        let (weights, report) = match cfg.kind {
            ModelKind::Logistic | ModelKind::Moe => return Err(level_error(cfg.kind, Level::Frame)),
            ModelKind::FrameLogistic => {
                let (p, r) = frame_logistic_train(videos, vocab, &cfg.train, &cfg.sample, cfg.features)?;
                (ModelWeights::Logistic(p), r)
            }
            ModelKind::Dbof | ModelKind::Lstm => {
                let kind = if cfg.kind == ModelKind::Dbof {
                    SequenceKind::Dbof
                } else {
                    SequenceKind::Lstm
                };
                let (p, r) = train_sequence_model(kind, videos, cfg.features, vocab, &cfg.sequence())?;
                (ModelWeights::Sequence(p), r)
            }
        };
        Ok((
            Model {
                config: cfg.clone(),
                weights,
            },
            report,
        ))
    }

    pub fn vocab_size(&self) -> usize {
        match &self.weights {
            ModelWeights::Logistic(p) => p.vocab_size,
            ModelWeights::Moe(p) => p.vocab_size,
            ModelWeights::Sequence(SequenceParams::Dbof(p)) => p.vocab_size,
            ModelWeights::Sequence(SequenceParams::Lstm(p)) => p.vocab_size,
        }
    }

    pub fn predict_video(&self, video: &VideoExample) -> Result<Vec<f64>> {
        let x = video.features(self.config.features);
        match &self.weights {
            ModelWeights::Logistic(p) if self.config.kind == ModelKind::Logistic => p.predict(&x),
            ModelWeights::Moe(p) => p.predict(&x),
            _ => Err(level_error(self.config.kind, Level::Video)),
        }
    }

    pub fn predict_frames(&self, video: &FrameExample) -> Result<Vec<f64>> {
        match &self.weights {
            ModelWeights::Logistic(p) if self.config.kind == ModelKind::FrameLogistic => {
                let frames = sample_frames(video, &self.config.sample, self.config.features)?;
                frame_logistic_infer(p, &frames)
            }
            ModelWeights::Sequence(p) => {
                predict_sequence_model(p, video, self.config.features, &self.config.sequence())
            }
            _ => Err(level_error(self.config.kind, Level::Frame)),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match &self.weights {
            ModelWeights::Logistic(p) => save_model(path, p, &self.config),
            ModelWeights::Moe(p) => save_model(path, p, &self.config),
            ModelWeights::Sequence(SequenceParams::Dbof(p)) => save_model(path, p, &self.config),
            ModelWeights::Sequence(SequenceParams::Lstm(p)) => save_model(path, p, &self.config),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        fn config<P>(path: &Path, loaded: &LoadedModel<P>) -> Result<ModelConfig> {
            serde_json::from_value(loaded.config.clone()).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("bad model config: {e}"),
            })
        }
        let kind = model_kind(path)?;
        let (config, weights) = match kind.as_str() {
            LogisticParams::KIND => {
                let m = load_model::<LogisticParams>(path)?;
                (config(path, &m)?, ModelWeights::Logistic(m.params))
            }
            MoeParams::KIND => {
                let m = load_model::<MoeParams>(path)?;
                (config(path, &m)?, ModelWeights::Moe(m.params))
            }
            DbofParams::KIND => {
                let m = load_model::<DbofParams>(path)?;
                (
                    config(path, &m)?,
                    ModelWeights::Sequence(SequenceParams::Dbof(m.params)),
                )
            }
            LstmParams::KIND => {
                let m = load_model::<LstmParams>(path)?;
                (
                    config(path, &m)?,
                    ModelWeights::Sequence(SequenceParams::Lstm(m.params)),
                )
            }
            other => {
                return Err(Error::KindMismatch {
                    expected: "logistic, moe, dbof or lstm".into(),
                    found: other.to_owned(),
                })
            }
        };
        let consistent = matches!(
            (config.kind, &weights),
            (
                ModelKind::Logistic | ModelKind::FrameLogistic,
                ModelWeights::Logistic(_)
            ) | (ModelKind::Moe, ModelWeights::Moe(_))
                | (ModelKind::Dbof, ModelWeights::Sequence(SequenceParams::Dbof(_)))
                | (ModelKind::Lstm, ModelWeights::Sequence(SequenceParams::Lstm(_)))
        );
        if !consistent {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("config kind `{}` does not match weights `{kind}`", config.kind),
            });
        }
        Ok(Model { config, weights })
    }
}

/// Top-`k` predictions for every video of a video-level dataset.
pub fn predict_videos(model: &Model, videos: &[VideoExample], k: usize) -> Result<Vec<PredictionList>> {
    videos
        .par_iter()
        .map(|v| PredictionList::new(v.video_id.clone(), top_k(&model.predict_video(v)?, k)?))
        .collect()
}

/// Top-`k` predictions for every video of a frame-level dataset.
pub fn predict_frame_videos(model: &Model, videos: &[FrameExample], k: usize) -> Result<Vec<PredictionList>> {
    videos
        .par_iter()
        .map(|v| PredictionList::new(v.video_id.clone(), top_k(&model.predict_frames(v)?, k)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::LabelSet;

    fn frame_video(id: &str) -> FrameExample {
        FrameExample {
            video_id: id.into(),
            labels: LabelSet::from([1]),
            rgb: vec![vec![0.5, -1.0], vec![1.0, 0.0]],
            audio: vec![vec![0.25], vec![0.0]],
        }
    }

    #[test]
    fn kind_names() {
        for k in ["logistic", "moe", "frame-logistic", "dbof", "lstm"] {
            assert_eq!(k.parse::<ModelKind>().unwrap().to_string(), k);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn level_checks() {
        let vocab = Vocabulary::new(3).unwrap();
        let frames = vec![frame_video("a")];
        let videos: Vec<VideoExample> = frames.iter().map(FrameExample::to_video).collect();
        let cfg = ModelConfig::new(ModelKind::Logistic);
        assert!(matches!(
            Model::train_frames(&cfg, &frames, vocab),
            Err(Error::LevelMismatch { .. })
        ));
        let cfg = ModelConfig::new(ModelKind::Dbof);
        assert!(matches!(
            Model::train_videos(&cfg, &videos, vocab),
            Err(Error::LevelMismatch { .. })
        ));
        let (m, _) = Model::train_frames(&cfg, &frames, vocab).unwrap();
        assert!(m.predict_video(&videos[0]).is_err());
        assert_eq!(m.predict_frames(&frames[0]).unwrap().len(), 3);
    }

    #[test]
    fn zero_logistic_predicts_first_labels_at_half() {
        let vocab = Vocabulary::new(25).unwrap();
        let model = Model {
            config: ModelConfig::new(ModelKind::Logistic),
            weights: ModelWeights::Logistic(LogisticParams::zeros(vocab, 3, 0.0)),
        };
        let v = frame_video("a").to_video();
        let rows = predict_videos(&model, &[v], 20).unwrap();
        let want: Vec<(u32, f64)> = (0..20).map(|l| (l, 0.5)).collect();
        assert_eq!(rows[0].pairs(), want.as_slice());
    }

    #[test]
    fn save_and_load_every_kind() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::new(3).unwrap();
        let frames = vec![frame_video("a"), frame_video("b")];
        let videos: Vec<VideoExample> = frames.iter().map(FrameExample::to_video).collect();
        for kind in ["logistic", "moe", "frame-logistic", "dbof", "lstm"] {
            let mut cfg = ModelConfig::new(kind.parse().unwrap());
            cfg.train.epochs = 1;
            cfg.hidden = 3;
            let model = if cfg.kind.level() == Level::Video {
                Model::train_videos(&cfg, &videos, vocab).unwrap().0
            } else {
                Model::train_frames(&cfg, &frames, vocab).unwrap().0
            };
            let path = dir.path().join(format!("{kind}.json"));
            model.save(&path).unwrap();
            assert_eq!(Model::load(&path).unwrap(), model, "{kind}");
        }
    }
}
