//! Trained models against each other and against the planted oracle on
//! synthetic tasks built to separate them.

mod common;

use common::*;
use vle_core::ensemble::{blend_fit, blend_predict, build_stacked_dataset, StackerKind};
use vle_core::linear::{logistic_train, SparseRow};
use vle_core::synthgen::{SynthSpec, Task};
use vle_core::{gap_at_k, FeatureMode, GroundTruth, Level, Model, ModelKind, PredictionList, Vocabulary};

fn spec(task: Task, num_videos: usize) -> SynthSpec {
    SynthSpec {
        task,
        num_videos,
        ..SynthSpec::default()
    }
}

#[test]
fn oracle_is_perfect_without_frame_noise() {
    let spec = SynthSpec {
        frame_noise: 0.0,
        num_videos: 400,
        level: Level::Frame,
        ..SynthSpec::default()
    };
    let (frames, planted) = vle_core::synthgen::gen_frame_level(&spec).unwrap();
    let videos: Vec<_> = frames.iter().map(|f| f.to_video()).collect();
    assert!(oracle_gap(&planted, &videos) >= 0.99);
}

#[test]
fn logistic_approaches_the_oracle_on_the_linear_task() {
    let (train, test, planted) = video_task(&spec(Task::Linear, 3000));
    let (model, _) = Model::train_videos(&fast_config(ModelKind::Logistic), &train, planted_vocab(&planted)).unwrap();
    let (gap, oracle) = (model_gap(&model, &test), oracle_gap(&planted, &test));
    assert!(gap >= oracle - 0.03, "logistic {gap} vs oracle {oracle}");
}

fn planted_vocab(p: &vle_core::synthgen::PlantedModel) -> Vocabulary {
    Vocabulary::new(p.vocab_size).unwrap()
}

#[test]
fn moe_beats_logistic_on_the_mixture_task() {
    let (train, test, planted) = video_task(&spec(Task::Mixture, 3000));
    let vocab = planted_vocab(&planted);
    let (logistic, _) = Model::train_videos(&fast_config(ModelKind::Logistic), &train, vocab).unwrap();
    let (moe, _) = Model::train_videos(&fast_config(ModelKind::Moe), &train, vocab).unwrap();
    let (l, m) = (model_gap(&logistic, &test), model_gap(&moe, &test));
    assert!(m >= l + 0.05, "moe {m} vs logistic {l}");
}

#[test]
fn sparse_and_dense_rows_train_alike() {
    let (train, _, planted) = video_task(&spec(Task::Linear, 300));
    let dense: Vec<Vec<f64>> = train.iter().map(|v| v.features(FeatureMode::Both)).collect();
    let sparse: Vec<SparseRow> = dense
        .iter()
        .map(|x| {
            let (idx, vals) = x
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as u32, *v))
                .unzip();
            SparseRow::new(x.len(), idx, vals).unwrap()
        })
        .collect();
    let labels: Vec<_> = train.iter().map(|v| v.labels.clone()).collect();
    let cfg = fast_config(ModelKind::Logistic).train;
    let vocab = planted_vocab(&planted);
    let d: Vec<&Vec<f64>> = dense.iter().collect();
    let s: Vec<&SparseRow> = sparse.iter().collect();
    let (pd, rd) = logistic_train(&d, &labels, vocab, &cfg).unwrap();
    let (ps, rs) = logistic_train(&s, &labels, vocab, &cfg).unwrap();
    for (a, b) in pd
        .weights
        .iter()
        .zip(&ps.weights)
        .chain(pd.biases.iter().zip(&ps.biases))
    {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    for (a, b) in rd.step_losses.iter().zip(&rs.step_losses) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn dbof_keeps_up_with_logistic_on_noiseless_frames() {
    let spec = SynthSpec {
        num_videos: 1500,
        frame_noise: 0.0,
        min_frames: 3,
        max_frames: 6,
        level: Level::Frame,
        ..SynthSpec::default()
    };
    let (train, test) = frame_task(&spec);
    let vocab = Vocabulary::new(spec.vocab_size).unwrap();
    let train_v: Vec<_> = train.iter().map(|f| f.to_video()).collect();
    let test_v: Vec<_> = test.iter().map(|f| f.to_video()).collect();
    let (logistic, _) = Model::train_videos(&fast_config(ModelKind::Logistic), &train_v, vocab).unwrap();
    let mut cfg = fast_config(ModelKind::Dbof);
    cfg.width = 64;
    let (dbof, _) = Model::train_frames(&cfg, &train, vocab).unwrap();
    let (l, d) = (model_gap(&logistic, &test_v), frame_model_gap(&dbof, &test));
    assert!(d >= l - 0.05, "dbof {d} vs logistic {l}");
}

#[test]
fn lstm_beats_frame_logistic_on_the_sequential_task() {
    let spec = SynthSpec {
        task: Task::Sequential,
        num_videos: 1500,
        vocab_size: 8,
        min_frames: 5,
        max_frames: 10,
        level: Level::Frame,
        ..SynthSpec::default()
    };
    let (train, test) = frame_task(&spec);
    let vocab = Vocabulary::new(spec.vocab_size).unwrap();
    let (frame_logistic, _) = Model::train_frames(&fast_config(ModelKind::FrameLogistic), &train, vocab).unwrap();
    let mut cfg = fast_config(ModelKind::Lstm);
    cfg.hidden = 32;
    cfg.layers = 1;
    cfg.unroll = 5;
    cfg.train.batch_size = 32;
    let (lstm, _) = Model::train_frames(&cfg, &train, vocab).unwrap();
    let (f, l) = (frame_model_gap(&frame_logistic, &test), frame_model_gap(&lstm, &test));
    assert!(l >= f + 0.05, "lstm {l} vs frame logistic {f}");
}

#[test]
fn stacker_on_a_perfect_base_is_near_perfect() {
    let (holdout, test, planted) = video_task(&spec(Task::Linear, 1500));
    let vocab = planted_vocab(&planted);
    let perfect = |videos: &[vle_core::VideoExample]| -> Vec<PredictionList> {
        videos
            .iter()
            .map(|v| PredictionList::new(v.video_id.clone(), v.labels.iter().map(|&l| (l, 0.9)).collect()).unwrap())
            .collect()
    };
    let holdout_truth = GroundTruth::from_examples(&holdout);
    let base = perfect(&holdout);
    let stacked = build_stacked_dataset(&[&base], Some(&holdout_truth), vocab).unwrap();
    let cfg = vle_core::suite::SuiteConfig::default().stacker;
    for kind in [StackerKind::Logistic, StackerKind::Moe] {
        let (stacker, _) = blend_fit(&stacked, vec!["perfect".into()], kind, vocab, &cfg).unwrap();
        let out = blend_predict(&stacker, &[("perfect".into(), perfect(&test))], 20).unwrap();
        let gap = gap_at_k(&out, &GroundTruth::from_examples(&test), 20).unwrap();
        assert!(gap >= 0.99, "{kind:?}: {gap}");
    }
}
