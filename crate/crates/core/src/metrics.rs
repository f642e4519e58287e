//! Log-loss and global average precision (GAP@K).
//!
//! GAP pools the top-K predictions of every video into one ranked list and
//! computes average precision over it, normalised by the number of positives
//! each video could contribute (`min(|truth_v|, K)`).

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::datamodel::{GroundTruth, LabelId, LabelSet, PredictionList};
use crate::error::{Error, Result};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const LOG_LOSS_EPS: f64 = 1e-6;

/// Binary cross-entropy `-g ln p - (1 - g) ln(1 - p)` with clamped `p`.
pub fn log_loss(p: f64, g: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    Ok(clamped_log_loss(p, g))
}

/// [`log_loss`] without the range check, for use inside training loops.
#[inline]
pub fn clamped_log_loss(p: f64, g: bool) -> f64 {
    let p = p.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
    if g {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Average precision of a pooled list of `(confidence, is_hit)` triples.
///
/// Triples are ranked by confidence, descending; equal confidences keep their
/// input order. Returns 0 when `total_positives` is 0.
pub fn pooled_average_precision(triples: &[(f64, bool)], total_positives: usize) -> f64 {
    if total_positives == 0 {
        return 0.0;
    }
    let mut order: Vec<&(f64, bool)> = triples.iter().collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    precision_sum(order.iter().map(|t| t.1)) / total_positives as f64
}

fn precision_sum(hits: impl Iterator<Item = bool>) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, hit) in hits.enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    confidence: f64,
    hit: bool,
    video: Arc<str>,
    label: LabelId,
}

/// Pooled GAP state over a set of videos. Accumulators over disjoint video
/// sets can be merged; the result does not depend on how videos were split.
#[derive(Clone, Debug, PartialEq)]
pub struct GapAccumulator {
    k: usize,
    entries: Vec<Entry>,
    total_positives: usize,
    videos: usize,
}

impl GapAccumulator {
    pub fn new(k: usize) -> Self {
        GapAccumulator {
            k,
            entries: Vec::new(),
            total_positives: 0,
            videos: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total_positives(&self) -> usize {
        self.total_positives
    }

    pub fn num_videos(&self) -> usize {
        self.videos
    }

    pub fn num_triples(&self) -> usize {
        self.entries.len()
    }

    /// Add one video's canonical predictions and its true labels.
    pub fn add_video(&mut self, video_id: &str, pairs: &[(LabelId, f64)], truth: &LabelSet) {
        let video: Arc<str> = Arc::from(video_id);
        for &(label, confidence) in &pairs[..pairs.len().min(self.k)] {
            self.entries.push(Entry {
                confidence,
                hit: truth.contains(&label),
                video: Arc::clone(&video),
                label,
            });
        }
        self.total_positives += truth.len().min(self.k);
        self.videos += 1;
    }

    pub fn merge(mut self, other: GapAccumulator) -> Result<Self> {
        if self.k != other.k {
            return Err(Error::InvalidInput(format!(
                "cannot merge GAP accumulators with k={} and k={}",
                self.k, other.k
            )));
        }
        self.entries.extend(other.entries);
        self.total_positives += other.total_positives;
        self.videos += other.videos;
        Ok(self)
    }

    /// Ties in confidence are ranked by video id, then label id.
    pub fn gap(&self) -> f64 {
        if self.total_positives == 0 {
            return 0.0;
        }
        let mut order: Vec<&Entry> = self.entries.iter().collect();
        order.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then_with(|| a.video.cmp(&b.video))
                .then(a.label.cmp(&b.label))
        });
        precision_sum(order.iter().map(|e| e.hit)) / self.total_positives as f64
    }
}

/// GAP@k of `predictions` against `truth`. Videos present in `truth` but
/// absent from `predictions` still contribute their positives.
pub fn gap_at_k(predictions: &[PredictionList], truth: &GroundTruth, k: usize) -> Result<f64> {
    Ok(gap_accumulator(predictions, truth, k)?.gap())
}

pub fn gap_accumulator(predictions: &[PredictionList], truth: &GroundTruth, k: usize) -> Result<GapAccumulator> {
    let unknown: Vec<String> = predictions
        .iter()
        .filter(|p| truth.get(&p.video_id).is_none())
        .map(|p| p.video_id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownVideos(unknown));
    }
    let mut seen = BTreeSet::new();
    let mut acc = GapAccumulator::new(k);
    for p in predictions {
        if !seen.insert(p.video_id.as_str()) {
            return Err(Error::DuplicateVideo(p.video_id.clone()));
        }
        acc.add_video(&p.video_id, p.pairs(), truth.get(&p.video_id).expect("checked"));
    }
    for (vid, labels) in truth.iter() {
        if !seen.contains(vid) {
            acc.add_video(vid, &[], labels);
        }
    }
    Ok(acc)
}

/// Log-loss of one example's score vector, summed over labels.
pub fn summed_log_loss(scores: &[f64], labels: &LabelSet) -> f64 {
    scores
        .iter()
        .enumerate()
        .map(|(l, &p)| clamped_log_loss(p, labels.contains(&(l as LabelId))))
        .sum::<f64>()
}
