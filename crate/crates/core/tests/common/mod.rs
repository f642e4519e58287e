//! Helpers shared by the integration tests: seeded gradient-check points, an
//! independent brute-force GAP, and record generators with their round-trip
//! checks.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use vle_core::ensemble::weighted_average_rows;
use vle_core::ensemble::{SparseStackFeature, StackedExample};
use vle_core::framelevel::frame_logistic_infer;
use vle_core::framelevel::{check_model_gradient, DbofParams, LstmParams};
use vle_core::recordio::{load_dataset, load_model, parse_predictions, write_dataset, write_predictions, ModelParams};
use vle_core::rng::SeededRng;
use vle_core::{
    FrameExample, GroundTruth, LabelSet, LogisticParams, MoeParams, PredictionList, VideoExample, Vocabulary,
};

pub const GRAD_STEP: f64 = 1e-3;

fn gaussian_rows(rng: &mut SeededRng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
}

fn random_labels(rng: &mut SeededRng, n: usize, vocab: usize) -> Vec<LabelSet> {
    (0..n)
        .map(|_| (0..vocab as u32).filter(|_| rng.uniform() < 0.4).collect())
        .collect()
}

/// Max relative error of the MoE gradient at its seeded initialisation on a
/// 3-example batch.
pub fn moe_gradient_error(seed: u64) -> f64 {
    let vocab = Vocabulary::new(3).unwrap();
    let params = MoeParams::init(vocab, 5, 2, 1e-3, seed);
    let mut rng = SeededRng::new(seed ^ 0xabc);
    let xs = gaussian_rows(&mut rng, 3, 5);
    let labels = random_labels(&mut rng, 3, 3);
    let refs: Vec<&Vec<f64>> = xs.iter().collect();
    check_model_gradient(&params, |p| p.loss_grad(&refs, &labels, &[0, 1, 2]), GRAD_STEP, seed)
}

/// Smallest gap between the winning pooled activation and the runner-up
/// (including the ReLU floor at 0) over all units and videos.
fn dbof_pool_margin(p: &DbofParams, videos: &[Vec<Vec<f64>>]) -> f64 {
    let mut margin = f64::INFINITY;
    for frames in videos {
        for u in 0..p.width {
            let mut acts: Vec<f64> = frames
                .iter()
                .map(|x| {
                    let row = &p.up_weights[u * p.dim..(u + 1) * p.dim];
                    x.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + p.up_biases[u]
                })
                .collect();
            acts.push(0.0);
            acts.sort_by(|a, b| b.total_cmp(a));
            margin = margin.min(acts[0] - acts[1]);
        }
    }
    margin
}

/// DBoF gradient error at a seeded point where max-pooling and ReLU are
/// differentiable with a comfortable margin.
pub fn dbof_gradient_error(seed: u64) -> f64 {
    let vocab = Vocabulary::new(3).unwrap();
    for attempt in 0..1000u64 {
        let mut rng = SeededRng::derived(seed, attempt, 0);
        let mut params = DbofParams::init(vocab, 4, 6, rng.next_u64());
        params.up_biases.iter_mut().for_each(|b| *b = 0.5 * rng.normal());
        params.cls_biases.iter_mut().for_each(|b| *b = 0.5 * rng.normal());
        let videos: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| {
                let frames = 2 + rng.below(3);
                gaussian_rows(&mut rng, frames, 4)
            })
            .collect();
        if dbof_pool_margin(&params, &videos) < 0.05 {
            continue;
        }
        let labels = random_labels(&mut rng, 3, 3);
        let frame_refs: Vec<&[Vec<f64>]> = videos.iter().map(Vec::as_slice).collect();
        let label_refs: Vec<&LabelSet> = labels.iter().collect();
        return check_model_gradient(
            &params,
            |p| p.loss_grad(&frame_refs, &label_refs).unwrap(),
            GRAD_STEP,
            seed,
        );
    }
    panic!("no differentiable DBoF point found for seed {seed}");
}

/// Two-layer LSTM gradient error (through time) at its seeded
/// initialisation on three sequences.
pub fn lstm_gradient_error(seed: u64) -> f64 {
    let vocab = Vocabulary::new(3).unwrap();
    let params = LstmParams::init(vocab, 4, 5, 2, seed);
    let mut rng = SeededRng::new(seed ^ 0xdef);
    let videos: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| {
            let steps = 3 + rng.below(3);
            gaussian_rows(&mut rng, steps, 4)
        })
        .collect();
    let labels = random_labels(&mut rng, 3, 3);
    let seqs: Vec<Vec<&[f64]>> = videos.iter().map(|v| v.iter().map(Vec::as_slice).collect()).collect();
    let label_refs: Vec<&LabelSet> = labels.iter().collect();
    check_model_gradient(&params, |p| p.loss_grad(&seqs, &label_refs).unwrap(), GRAD_STEP, seed)
}

/// Pooled average precision computed directly from the definition: collect
/// every (confidence, correct) pair from each video's top `k`, rank all of
/// them, and average the precision at every correct position, dividing by
/// the number of reachable positives.
pub fn brute_force_gap(preds: &BTreeMap<String, Vec<(u32, f64)>>, truth: &BTreeMap<String, LabelSet>, k: usize) -> f64 {
    let mut triples: Vec<(f64, String, u32, bool)> = Vec::new();
    for (vid, pairs) in preds {
        let mut sorted = pairs.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let labels = truth.get(vid).cloned().unwrap_or_default();
        for &(l, c) in sorted.iter().take(k) {
            triples.push((c, vid.clone(), l, labels.contains(&l)));
        }
    }
    triples.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let positives: usize = truth.values().map(|ls| ls.len().min(k)).sum();
    if positives == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, t) in triples.iter().enumerate() {
        if t.3 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    total / positives as f64
}

// ---------------------------------------------------------------------------
// Record generators

pub fn video_id() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_-]{1,12}"
}

fn label_set(vocab: u32) -> impl Strategy<Value = LabelSet> {
    prop::collection::btree_set(0..vocab, 0..5)
}

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![-10.0f32..10.0, any::<f32>().prop_filter("finite", |x| x.is_finite())]
}

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![-10.0f64..10.0, any::<f64>().prop_filter("finite", |x| x.is_finite())]
}

fn unique_ids(n: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set(video_id(), 0..=n).prop_map(|s| s.into_iter().collect())
}

/// Videos sharing one `(rgb, audio)` shape.
pub fn videos() -> impl Strategy<Value = Vec<VideoExample>> {
    (0usize..4, 0usize..3, unique_ids(6)).prop_flat_map(|(rgb, audio, ids)| {
        let rows: Vec<_> = ids
            .into_iter()
            .map(|id| {
                (
                    Just(id),
                    label_set(10),
                    prop::collection::vec(finite_f32(), rgb),
                    prop::collection::vec(finite_f32(), audio),
                )
                    .prop_map(|(video_id, labels, mean_rgb, mean_audio)| VideoExample {
                        video_id,
                        labels,
                        mean_rgb,
                        mean_audio,
                    })
            })
            .collect();
        rows
    })
}

pub fn frame_videos() -> impl Strategy<Value = Vec<FrameExample>> {
    (1usize..4, 0usize..3, unique_ids(5)).prop_flat_map(|(rgb, audio, ids)| {
        let rows: Vec<_> = ids
            .into_iter()
            .map(|id| {
                (Just(id), label_set(10), 1usize..5).prop_flat_map(move |(id, labels, n)| {
                    (
                        prop::collection::vec(prop::collection::vec(finite_f32(), rgb), n),
                        prop::collection::vec(prop::collection::vec(finite_f32(), audio), n),
                    )
                        .prop_map(move |(rgb, audio)| FrameExample {
                            video_id: id.clone(),
                            labels: labels.clone(),
                            rgb,
                            audio,
                        })
                })
            })
            .collect();
        rows
    })
}

fn sparse_feature(dim: usize) -> impl Strategy<Value = SparseStackFeature> {
    prop::collection::btree_map(0..dim as u32, 1e-9f64..=1.0, 0..=dim.min(4)).prop_map(move |m| {
        let (indices, values) = m.into_iter().unzip();
        SparseStackFeature::new(dim, indices, values).unwrap()
    })
}

pub fn stacked_videos() -> impl Strategy<Value = Vec<StackedExample>> {
    (1usize..8, 1usize..4, unique_ids(5)).prop_flat_map(|(vocab, blocks, ids)| {
        let rows: Vec<_> = ids
            .into_iter()
            .map(|id| {
                (
                    Just(id),
                    label_set(vocab as u32),
                    prop::collection::vec(sparse_feature(vocab), blocks),
                )
                    .prop_map(|(video_id, labels, blocks)| StackedExample {
                        video_id,
                        labels,
                        blocks,
                    })
            })
            .collect();
        rows
    })
}

/// Canonical prediction rows with arbitrary (unrounded) confidences.
pub fn prediction_rows() -> impl Strategy<Value = Vec<PredictionList>> {
    let pairs = prop::collection::btree_map(0u32..5000, 0.0f64..=1.0, 0..25);
    unique_ids(6)
        .prop_flat_map(move |ids| {
            let n = ids.len();
            (Just(ids), prop::collection::vec(pairs.clone(), n))
        })
        .prop_map(|(ids, maps)| {
            ids.into_iter()
                .zip(maps)
                .map(|(id, m)| PredictionList::canonicalize(id, m.into_iter().collect()).unwrap().0)
                .collect()
        })
}

/// Any of the shipped parameter types, wrapped so one strategy covers them.
#[derive(Clone, Debug)]
pub enum AnyParams {
    Logistic(LogisticParams),
    Moe(MoeParams),
    Dbof(DbofParams),
    Lstm(LstmParams),
}

pub fn model_params() -> impl Strategy<Value = AnyParams> {
    (0u8..4, 1usize..6, 1usize..5, 1usize..4, any::<u64>()).prop_flat_map(|(which, vocab, dim, n, seed)| {
        let v = Vocabulary::new(vocab).unwrap();
        let weights = prop::collection::vec(finite_f64(), vocab * dim);
        let biases = prop::collection::vec(finite_f64(), vocab);
        (weights, biases, 0.0f64..1.0).prop_map(move |(w, b, lambda)| match which {
            0 => AnyParams::Logistic(LogisticParams {
                weights: w,
                biases: b,
                ..LogisticParams::zeros(v, dim, lambda)
            }),
            1 => AnyParams::Moe(MoeParams::init(v, dim, n, lambda, seed)),
            2 => AnyParams::Dbof(DbofParams::init(v, dim, n + 1, seed)),
            _ => AnyParams::Lstm(LstmParams::init(v, dim, n + 1, n, seed)),
        })
    })
}

// ---------------------------------------------------------------------------
// Round-trip checks

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn dataset_roundtrip<E>(rows: &[E], dir: &Path) -> Result<(), TestCaseError>
where
    E: vle_core::datamodel::Example + serde::Serialize + serde::de::DeserializeOwned + PartialEq + std::fmt::Debug,
{
    let path = dir.join("data.ndjson");
    let meta = BTreeMap::from([("rows".to_owned(), rows.len().into())]);
    write_dataset(&path, rows, meta).map_err(fail)?;
    let back: Vec<E> = load_dataset(&path).map_err(fail)?;
    prop_assert_eq!(back.as_slice(), rows);
    let bytes = std::fs::read(&path).map_err(fail)?;
    write_dataset(&path, &back, BTreeMap::from([("rows".to_owned(), rows.len().into())])).map_err(fail)?;
    prop_assert_eq!(std::fs::read(&path).map_err(fail)?, bytes);
    Ok(())
}

pub fn check_video_roundtrip(rows: &[VideoExample]) -> Result<(), TestCaseError> {
    dataset_roundtrip(rows, tempfile::tempdir().map_err(fail)?.path())
}

pub fn check_frame_roundtrip(rows: &[FrameExample]) -> Result<(), TestCaseError> {
    dataset_roundtrip(rows, tempfile::tempdir().map_err(fail)?.path())
}

pub fn check_stacked_roundtrip(rows: &[StackedExample]) -> Result<(), TestCaseError> {
    dataset_roundtrip(rows, tempfile::tempdir().map_err(fail)?.path())
}

/// Parsing a written file yields the rows truncated to `k` with confidences
/// rounded to six decimals (re-sorted if rounding created ties), and a second
/// write reproduces the file byte for byte.
pub fn check_prediction_roundtrip(rows: &[PredictionList], k: usize) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("p.csv");
    write_predictions(&path, rows, k).map_err(fail)?;
    let parsed = parse_predictions(&path).map_err(fail)?;
    let expected: Vec<PredictionList> = rows
        .iter()
        .map(|r| {
            let pairs = r
                .truncated(k)
                .iter()
                .map(|&(l, c)| (l, format!("{c:.6}").parse::<f64>().unwrap()))
                .collect();
            PredictionList::canonicalize(r.video_id.clone(), pairs).unwrap().0
        })
        .collect();
    prop_assert_eq!(&parsed.rows, &expected);
    prop_assert_eq!(parsed.repaired, 0);
    let bytes = std::fs::read(&path).map_err(fail)?;
    write_predictions(&path, &parsed.rows, k).map_err(fail)?;
    prop_assert_eq!(std::fs::read(&path).map_err(fail)?, bytes);
    Ok(())
}

fn model_roundtrip<P>(params: &P) -> Result<(), TestCaseError>
where
    P: ModelParams + PartialEq + std::fmt::Debug,
{
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("m.json");
    let config = serde_json::json!({"seed": 3});
    vle_core::recordio::save_model(&path, params, &config).map_err(fail)?;
    let loaded = load_model::<P>(&path).map_err(fail)?;
    prop_assert_eq!(&loaded.params, params);
    prop_assert_eq!(loaded.config, config);
    prop_assert_eq!(loaded.vocab_size, params.vocab_size());
    prop_assert_eq!(loaded.dims, params.dims());
    Ok(())
}

pub fn check_model_roundtrip(params: &AnyParams) -> Result<(), TestCaseError> {
    match params {
        AnyParams::Logistic(p) => model_roundtrip(p),
        AnyParams::Moe(p) => model_roundtrip(p),
        AnyParams::Dbof(p) => model_roundtrip(p),
        AnyParams::Lstm(p) => model_roundtrip(p),
    }
}

// ---------------------------------------------------------------------------
// Learning fixtures

/// Train and held-out splits of a synthetic video-level task; the held-out
/// part is the last fifth.
pub fn video_task(
    spec: &vle_core::synthgen::SynthSpec,
) -> (Vec<VideoExample>, Vec<VideoExample>, vle_core::synthgen::PlantedModel) {
    let (mut videos, planted) = vle_core::synthgen::gen_video_level(spec).unwrap();
    let test = videos.split_off(videos.len() * 4 / 5);
    (videos, test, planted)
}

pub fn frame_task(spec: &vle_core::synthgen::SynthSpec) -> (Vec<FrameExample>, Vec<FrameExample>) {
    let (mut videos, _) = vle_core::synthgen::gen_frame_level(spec).unwrap();
    let test = videos.split_off(videos.len() * 4 / 5);
    (videos, test)
}

/// GAP@20 of `model` on held-out videos.
pub fn model_gap(model: &vle_core::Model, test: &[VideoExample]) -> f64 {
    let preds = vle_core::predict_videos(model, test, 20).unwrap();
    vle_core::gap_at_k(&preds, &vle_core::GroundTruth::from_examples(test), 20).unwrap()
}

pub fn frame_model_gap(model: &vle_core::Model, test: &[FrameExample]) -> f64 {
    let preds = vle_core::predict_frame_videos(model, test, 20).unwrap();
    vle_core::gap_at_k(&preds, &vle_core::GroundTruth::from_examples(test), 20).unwrap()
}

/// GAP@20 of the planted model's own scores.
pub fn oracle_gap(planted: &vle_core::synthgen::PlantedModel, test: &[VideoExample]) -> f64 {
    let preds: Vec<PredictionList> = test
        .iter()
        .map(|v| {
            let scores = vle_core::synthgen::oracle_predict(planted, &v.features(vle_core::FeatureMode::Both)).unwrap();
            PredictionList::new(v.video_id.clone(), vle_core::top_k(&scores, 20).unwrap()).unwrap()
        })
        .collect();
    vle_core::gap_at_k(&preds, &vle_core::GroundTruth::from_examples(test), 20).unwrap()
}

pub fn fast_config(kind: vle_core::ModelKind) -> vle_core::ModelConfig {
    let mut cfg = vle_core::ModelConfig::new(kind);
    cfg.train.learning_rate = 0.1;
    cfg
}

// ---------------------------------------------------------------------------
// Metric, averaging and frame-level generators

pub type GapInstance = (BTreeMap<String, Vec<(u32, f64)>>, BTreeMap<String, LabelSet>, usize);

/// Up to 10 videos over up to 8 labels, with confidences drawn from a small
/// grid so ties are common.
pub fn gap_instance() -> impl Strategy<Value = GapInstance> {
    (1u32..=8, 0usize..=10, 1usize..=5).prop_flat_map(|(vocab, videos, k)| {
        let conf = prop_oneof![(0u32..=8).prop_map(|i| i as f64 / 8.0), 0.0f64..=1.0];
        let preds = prop::collection::vec(prop::collection::btree_map(0..vocab, conf, 0..=vocab as usize), videos);
        let truth = prop::collection::vec(prop::collection::btree_set(0..vocab, 0..=vocab as usize), videos);
        (preds, truth, Just(k)).prop_map(|(preds, truth, k)| {
            let id = |i: usize| format!("v{i}");
            (
                preds
                    .into_iter()
                    .enumerate()
                    .map(|(i, m)| (id(i), m.into_iter().collect()))
                    .collect(),
                truth.into_iter().enumerate().map(|(i, s)| (id(i), s)).collect(),
                k,
            )
        })
    })
}

pub fn to_lists(preds: &BTreeMap<String, Vec<(u32, f64)>>) -> Vec<PredictionList> {
    preds
        .iter()
        .map(|(id, pairs)| PredictionList::canonicalize(id.clone(), pairs.clone()).unwrap().0)
        .collect()
}

pub fn member_rows(ids: usize) -> impl Strategy<Value = Vec<PredictionList>> {
    let conf = prop_oneof![(1u32..=4).prop_map(|i| i as f64 / 4.0), 0.0f64..=1.0];
    prop::collection::vec(prop::collection::btree_map(0u32..6, conf, 0..4), ids).prop_map(|maps| {
        maps.into_iter()
            .enumerate()
            .map(|(i, m)| {
                PredictionList::canonicalize(format!("v{i}"), m.into_iter().collect())
                    .unwrap()
                    .0
            })
            .collect()
    })
}

pub fn members() -> impl Strategy<Value = Vec<(Vec<PredictionList>, f64)>> {
    let weight = prop_oneof![(1u32..4).prop_map(f64::from), 0.05f64..3.0];
    prop::collection::vec(
        (1usize..4)
            .prop_flat_map(member_rows)
            .prop_flat_map(move |r| (Just(r), weight.clone())),
        1..5,
    )
}

pub fn average(members: &[(Vec<PredictionList>, f64)], k: usize) -> Vec<PredictionList> {
    let refs: Vec<(&[PredictionList], f64)> = members.iter().map(|(r, w)| (r.as_slice(), *w)).collect();
    weighted_average_rows(&refs, k).unwrap()
}

pub fn ground_truth(truth: &BTreeMap<String, LabelSet>) -> GroundTruth {
    let mut gt = GroundTruth::new();
    for (id, labels) in truth {
        gt.insert(id.clone(), labels.clone());
    }
    gt
}

pub fn check_gap_against_brute_force(
    preds: &BTreeMap<String, Vec<(u32, f64)>>,
    truth: &BTreeMap<String, LabelSet>,
    k: usize,
) -> Result<(), TestCaseError> {
    let fast = vle_core::gap_at_k(&to_lists(preds), &ground_truth(truth), k).map_err(fail)?;
    let slow = brute_force_gap(preds, truth, k);
    prop_assert!((fast - slow).abs() <= 1e-12, "{} vs {}", fast, slow);
    Ok(())
}

/// Frame-level logistic inference against the per-frame predictions summed
/// left to right (bitwise) and against a from-scratch sigmoid (1e-12).
pub fn check_frame_mean(vocab: usize, dim: usize, seed: u64, frames: usize) -> Result<(), TestCaseError> {
    let mut rng = vle_core::rng::SeededRng::new(seed);
    let mut params = LogisticParams::zeros(Vocabulary::new(vocab).unwrap(), dim, 0.0);
    params.weights.iter_mut().for_each(|w| *w = 2.0 * rng.normal());
    params.biases.iter_mut().for_each(|b| *b = rng.normal());
    let xs: Vec<Vec<f64>> = (0..frames).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();

    let mut expected = vec![0.0; vocab];
    for x in &xs {
        for (l, e) in expected.iter_mut().enumerate() {
            let z: f64 = params.row(l).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params.biases[l];
            *e += 1.0 / (1.0 + (-z).exp());
        }
    }
    expected.iter_mut().for_each(|e| *e /= frames as f64);
    let got = frame_logistic_infer(&params, &xs).unwrap();
    let per_frame: Vec<Vec<f64>> = xs.iter().map(|x| params.predict(x).unwrap()).collect();
    for l in 0..vocab {
        let mean = per_frame.iter().fold(0.0, |s, p| s + p[l]) / frames as f64;
        prop_assert_eq!(got[l].to_bits(), mean.to_bits());
        prop_assert!((got[l] - expected[l]).abs() < 1e-12);
    }
    Ok(())
}
