//! The end-to-end synthetic benchmark: generate frame-level data, train the
//! base models, blend, and average with the shipped strategies.
//!
//! Members and their fitting data:
//!
//! | member      | model          | fitted on        |
//! |-------------|----------------|------------------|
//! | lstm        | LSTM           | train + validate |
//! | dbof_i      | DBoF           | train + validate |
//! | dbof_ii     | DBoF           | train            |
//! | dbof_tuned  | DBoF (tuned)   | train + validate |
//! | logistic    | logistic       | train + validate |
//! | moe         | MoE            | train + validate |
//! | blend_*     | stacker        | validate         |
//!
//! Blending bases are a logistic model and an MoE model fitted on train
//! only, so the validate split stays a genuine holdout for the stackers.
//! Every member writes `<name>.csv` to the output directory and strategies
//! read those files back, exactly as the command-line workflow does.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{FrameExample, GroundTruth, PredictionList, VideoExample, DEFAULT_TOP_K};
use crate::ensemble::{blend_fit, blend_predict, build_stacked_dataset, run_strategy, StackerKind};
use crate::error::Result;
use crate::linear::TrainConfig;
use crate::metrics::gap_at_k;
use crate::models::{predict_frame_videos, predict_videos, Model, ModelConfig, ModelKind};
use crate::recordio::write_predictions;
use crate::synthgen::{gen_frame_level, split, vocab_of, SynthSpec};

pub const STRATEGIES: [&str; 5] = ["A", "B", "C", "D", "E"];

/// Stacker inputs of the four blends, named by stacker and bases.
pub const BLENDS: [(&str, StackerKind, &[&str]); 4] = [
    ("blend_logistic_moe", StackerKind::Logistic, &["moe"]),
    ("blend_moe_moe", StackerKind::Moe, &["moe"]),
    ("blend_logistic_both", StackerKind::Logistic, &["logistic", "moe"]),
    ("blend_moe_both", StackerKind::Moe, &["logistic", "moe"]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub data: SynthSpec,
    pub top_k: usize,
    pub logistic: ModelConfig,
    pub moe: ModelConfig,
    pub dbof: ModelConfig,
    pub dbof_tuned: ModelConfig,
    pub lstm: ModelConfig,
    pub stacker: TrainConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let video = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut logistic = ModelConfig::new(ModelKind::Logistic);
        logistic.train = video.clone();
        let mut moe = ModelConfig::new(ModelKind::Moe);
        moe.train = video.clone();
        let mut dbof = ModelConfig::new(ModelKind::Dbof);
        dbof.train = video.clone();
        dbof.width = 64;
        let mut dbof_tuned = dbof.clone();
        dbof_tuned.width = 128;
        dbof_tuned.train.epochs = 15;
        let mut lstm = ModelConfig::new(ModelKind::Lstm);
        lstm.train = TrainConfig {
            batch_size: 64,
            lambda: 1e-2,
            ..video.clone()
        };
        lstm.hidden = 64;
        lstm.layers = 1;
        lstm.unroll = 5;
        let stacker = TrainConfig {
            learning_rate: 0.5,
            epochs: 50,
            lambda: 1e-3,
            ..video.clone()
        };
        SuiteConfig {
            data: SynthSpec {
                num_videos: 5000,
                vocab_size: 32,
                parents: 8,
                min_frames: 5,
                max_frames: 15,
                frame_noise: 0.25,
                ..SynthSpec::default()
            },
            top_k: DEFAULT_TOP_K,
            logistic,
            moe,
            dbof,
            dbof_tuned,
            lstm,
            stacker,
        }
    }
}

/// Test-split GAPs of everything the suite produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    /// Blending bases, fitted on train only.
    pub bases: BTreeMap<String, f64>,
    /// The seven kinds of strategy members.
    pub members: BTreeMap<String, f64>,
    pub strategies: BTreeMap<String, f64>,
}

impl SuiteReport {
    pub fn best_member(&self) -> f64 {
        self.members.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn best_base(&self) -> f64 {
        self.bases.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

enum Fit<'a> {
    Videos(Vec<&'a VideoExample>),
    Frames(Vec<&'a FrameExample>),
}

struct Splits {
    frames: [Vec<FrameExample>; 3],
    videos: [Vec<VideoExample>; 3],
}

const TRAIN: usize = 0;
const VALIDATE: usize = 1;
const TEST: usize = 2;

impl Splits {
    fn fit(&self, level_video: bool, parts: &[usize]) -> Fit<'_> {
        if level_video {
            Fit::Videos(parts.iter().flat_map(|&p| &self.videos[p]).collect())
        } else {
            Fit::Frames(parts.iter().flat_map(|&p| &self.frames[p]).collect())
        }
    }

    fn predict(&self, model: &Model, part: usize, k: usize) -> Result<Vec<PredictionList>> {
        if model.config.kind.level() == crate::datamodel::Level::Video {
            predict_videos(model, &self.videos[part], k)
        } else {
            predict_frame_videos(model, &self.frames[part], k)
        }
    }
}

fn train(cfg: &ModelConfig, fit: Fit<'_>, vocab: crate::datamodel::Vocabulary) -> Result<Model> {
    let model = match fit {
        Fit::Videos(v) => {
            let v: Vec<VideoExample> = v.into_iter().cloned().collect();
            Model::train_videos(cfg, &v, vocab)?.0
        }
        Fit::Frames(f) => {
            let f: Vec<FrameExample> = f.into_iter().cloned().collect();
            Model::train_frames(cfg, &f, vocab)?.0
        }
    };
    Ok(model)
}

/// Run the whole benchmark, writing member and strategy predictions under
/// `out_dir`.
pub fn run_suite(cfg: &SuiteConfig, out_dir: &Path) -> Result<SuiteReport> {
    let vocab = vocab_of(&cfg.data)?;
    let (frames, _) = gen_frame_level(&cfg.data)?;
    let videos: Vec<VideoExample> = frames.iter().map(FrameExample::to_video).collect();
    let splits = Splits {
        frames: split(&frames),
        videos: split(&videos),
    };
    let truth = GroundTruth::from_examples(&splits.videos[TEST]);
    let holdout_truth = GroundTruth::from_examples(&splits.videos[VALIDATE]);
    let k = cfg.top_k;

    let jobs: Vec<(&str, &ModelConfig, &[usize])> = vec![
        ("base_logistic", &cfg.logistic, &[TRAIN]),
        ("base_moe", &cfg.moe, &[TRAIN]),
        ("lstm", &cfg.lstm, &[TRAIN, VALIDATE]),
        ("dbof_i", &cfg.dbof, &[TRAIN, VALIDATE]),
        ("dbof_ii", &cfg.dbof, &[TRAIN]),
        ("dbof_tuned", &cfg.dbof_tuned, &[TRAIN, VALIDATE]),
        ("logistic", &cfg.logistic, &[TRAIN, VALIDATE]),
        ("moe", &cfg.moe, &[TRAIN, VALIDATE]),
    ];
    let models: Vec<(String, Model)> = jobs
        .into_par_iter()
        .map(|(name, mcfg, parts)| {
            let fit = splits.fit(mcfg.kind.level() == crate::datamodel::Level::Video, parts);
            let model = train(mcfg, fit, vocab)?;
            log::info!("suite: trained {name}");
            Ok((name.to_owned(), model))
        })
        .collect::<Result<_>>()?;

    let mut report = SuiteReport::default();
    let mut base_holdout = BTreeMap::new();
    let mut base_test = BTreeMap::new();
    for (name, model) in &models {
        let test = splits.predict(model, TEST, k)?;
        let gap = gap_at_k(&test, &truth, k)?;
        match name.strip_prefix("base_") {
            Some(base) => {
                report.bases.insert(base.to_owned(), gap);
                base_holdout.insert(base, splits.predict(model, VALIDATE, k)?);
                base_test.insert(base, test);
            }
            None => {
                report.members.insert(name.clone(), gap);
                write_predictions(out_dir.join(format!("{name}.csv")), &test, k)?;
            }
        }
    }

    for (name, kind, bases) in BLENDS {
        let holdout: Vec<&[PredictionList]> = bases.iter().map(|b| base_holdout[b].as_slice()).collect();
        let stacked = build_stacked_dataset(&holdout, Some(&holdout_truth), vocab)?;
        let names = bases.iter().map(|b| b.to_string()).collect();
        let (stacker, _) = blend_fit(&stacked, names, kind, vocab, &cfg.stacker)?;
        let test_bases: Vec<(String, Vec<PredictionList>)> =
            bases.iter().map(|b| (b.to_string(), base_test[b].clone())).collect();
        let test = blend_predict(&stacker, &test_bases, k)?;
        report.members.insert(name.to_owned(), gap_at_k(&test, &truth, k)?);
        write_predictions(out_dir.join(format!("{name}.csv")), &test, k)?;
    }

    for s in STRATEGIES {
        let merged = run_strategy(s, out_dir)?;
        report.strategies.insert(s.to_owned(), gap_at_k(&merged, &truth, k)?);
        write_predictions(out_dir.join(format!("strategy_{}.csv", s.to_lowercase())), &merged, k)?;
    }
    Ok(report)
}
