//! Seeded inputs shared by the benchmarks.

use vle_core::framelevel::LstmParams;
use vle_core::rng::SeededRng;
use vle_core::{top_k, GroundTruth, LabelSet, PredictionList, Vocabulary};

/// Predictions and truth for `videos` videos over `vocab` labels, top `k`
/// listed per video.
pub fn scored_videos(videos: usize, vocab: usize, k: usize, seed: u64) -> (Vec<PredictionList>, GroundTruth) {
    let mut rng = SeededRng::new(seed);
    let mut truth = GroundTruth::new();
    let preds = (0..videos)
        .map(|i| {
            let id = format!("v{i:06}");
            let labels: LabelSet = (0..3).map(|_| rng.below(vocab) as u32).collect();
            let scores: Vec<f64> = (0..vocab).map(|_| rng.uniform()).collect();
            truth.insert(id.clone(), labels);
            PredictionList::new(id, top_k(&scores, k).unwrap()).unwrap()
        })
        .collect();
    (preds, truth)
}

/// An initialised LSTM and one sequence of `steps` frames.
pub fn lstm_case(dim: usize, hidden: usize, layers: usize, steps: usize, seed: u64) -> (LstmParams, Vec<Vec<f64>>) {
    let params = LstmParams::init(Vocabulary::new(64).unwrap(), dim, hidden, layers, seed);
    let mut rng = SeededRng::new(seed ^ 1);
    let frames = (0..steps).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
    (params, frames)
}
