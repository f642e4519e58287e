//! Value types shared across the toolkit: examples, prediction lists, ground
//! truth, and the vocabulary / top-K helpers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label vocabulary size of the full video dataset.
pub const DEFAULT_VOCAB_SIZE: usize = 4716;
/// Length of a submitted prediction list.
pub const DEFAULT_TOP_K: usize = 20;
/// Videos are decoded at one frame per second, capped at 300 frames.
pub const MAX_FRAMES: usize = 300;

pub type LabelId = u32;
pub type LabelSet = BTreeSet<LabelId>;

/// Number of label classes. All label ids satisfy `0 <= id < size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidInput("vocabulary size must be >= 1".into()));
        }
        Ok(Vocabulary { size })
    }

    pub fn size(self) -> usize {
        self.size
    }

    pub fn contains(self, label: LabelId) -> bool {
        (label as usize) < self.size
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            size: DEFAULT_VOCAB_SIZE,
        }
    }
}

impl TryFrom<usize> for Vocabulary {
    type Error = Error;
    fn try_from(size: usize) -> Result<Self> {
        Vocabulary::new(size)
    }
}

impl From<Vocabulary> for usize {
    fn from(v: Vocabulary) -> usize {
        v.size
    }
}

/// Dataset granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Video,
    Frame,
    /// Expanded base-model predictions used to fit a stacker.
    Stacked,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Video => f.write_str("video"),
            Level::Frame => f.write_str("frame"),
            Level::Stacked => f.write_str("stacked"),
        }
    }
}

/// Which raw feature groups feed a model. `Both` concatenates rgb then audio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Rgb,
    Audio,
    #[default]
    Both,
}

impl FeatureMode {
    pub fn dim(self, rgb_dim: usize, audio_dim: usize) -> usize {
        match self {
            FeatureMode::Rgb => rgb_dim,
            FeatureMode::Audio => audio_dim,
            FeatureMode::Both => rgb_dim + audio_dim,
        }
    }

    pub fn assemble(self, rgb: &[f32], audio: &[f32]) -> Vec<f64> {
        let parts: [&[f32]; 2] = match self {
            FeatureMode::Rgb => [rgb, &[]],
            FeatureMode::Audio => [audio, &[]],
            FeatureMode::Both => [rgb, audio],
        };
        parts.iter().flat_map(|p| p.iter().map(|&v| f64::from(v))).collect()
    }
}

impl FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(FeatureMode::Rgb),
            "audio" => Ok(FeatureMode::Audio),
            "both" => Ok(FeatureMode::Both),
            other => Err(Error::InvalidInput(format!(
                "unknown feature mode `{other}` (expected rgb, audio or both)"
            ))),
        }
    }
}

/// One labeled video with its per-video mean features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoExample {
    pub video_id: String,
    pub labels: LabelSet,
    pub mean_rgb: Vec<f32>,
    pub mean_audio: Vec<f32>,
}

impl VideoExample {
    pub fn features(&self, mode: FeatureMode) -> Vec<f64> {
        mode.assemble(&self.mean_rgb, &self.mean_audio)
    }
}

/// One labeled video as a sequence of per-second feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameExample {
    pub video_id: String,
    pub labels: LabelSet,
    pub rgb: Vec<Vec<f32>>,
    pub audio: Vec<Vec<f32>>,
}

impl FrameExample {
    pub fn num_frames(&self) -> usize {
        self.rgb.len()
    }

    pub fn frame_features(&self, mode: FeatureMode) -> Vec<Vec<f64>> {
        self.rgb
            .iter()
            .zip(&self.audio)
            .map(|(r, a)| mode.assemble(r, a))
            .collect()
    }

    /// Collapse the frame sequence into its per-video mean.
    pub fn to_video(&self) -> VideoExample {
        VideoExample {
            video_id: self.video_id.clone(),
            labels: self.labels.clone(),
            mean_rgb: mean_rows(&self.rgb),
            mean_audio: mean_rows(&self.audio),
        }
    }
}

fn mean_rows(rows: &[Vec<f32>]) -> Vec<f32> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0f64; first.len()];
    for row in rows {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    let n = rows.len() as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Behaviour common to video- and frame-level records.
pub trait Example {
    const LEVEL: Level;

    fn video_id(&self) -> &str;
    fn labels(&self) -> &LabelSet;
    /// `(rgb_dim, audio_dim)` of every feature row (one row for video-level records).
    fn row_dims(&self) -> Vec<(usize, usize)>;
    /// Structural problems local to the record.
    fn local_violations(&self) -> Vec<ViolationKind> {
        Vec::new()
    }
}

impl Example for VideoExample {
    const LEVEL: Level = Level::Video;

    fn video_id(&self) -> &str {
        &self.video_id
    }
    fn labels(&self) -> &LabelSet {
        &self.labels
    }
    fn row_dims(&self) -> Vec<(usize, usize)> {
        vec![(self.mean_rgb.len(), self.mean_audio.len())]
    }
}

impl Example for FrameExample {
    const LEVEL: Level = Level::Frame;

    fn video_id(&self) -> &str {
        &self.video_id
    }
    fn labels(&self) -> &LabelSet {
        &self.labels
    }
    fn row_dims(&self) -> Vec<(usize, usize)> {
        self.rgb
            .iter()
            .zip(&self.audio)
            .map(|(r, a)| (r.len(), a.len()))
            .collect()
    }
    fn local_violations(&self) -> Vec<ViolationKind> {
        let mut out = Vec::new();
        if self.rgb.is_empty() {
            out.push(ViolationKind::EmptyFrames);
        }
        if self.rgb.len() > MAX_FRAMES {
            out.push(ViolationKind::TooManyFrames(self.rgb.len()));
        }
        if self.rgb.len() != self.audio.len() {
            out.push(ViolationKind::FrameCountMismatch {
                rgb: self.rgb.len(),
                audio: self.audio.len(),
            });
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    LabelOutOfRange { label: LabelId, vocab_size: usize },
    RgbDim { expected: usize, actual: usize },
    AudioDim { expected: usize, actual: usize },
    EmptyFrames,
    TooManyFrames(usize),
    FrameCountMismatch { rgb: usize, audio: usize },
}

/// An invariant violation found by [`validate_dataset`], tagged with the record index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {:?}", self.index, self.kind)
    }
}

/// Check every record against the dataset invariants. Dimensions are compared
/// against the first feature row of the first record.
pub fn validate_dataset<E: Example>(examples: &[E], vocab: Vocabulary) -> std::result::Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let mut reference: Option<(usize, usize)> = None;
    for (index, ex) in examples.iter().enumerate() {
        let mut push = |kind| violations.push(Violation { index, kind });
        for kind in ex.local_violations() {
            push(kind);
        }
        for &label in ex.labels() {
            if !vocab.contains(label) {
                push(ViolationKind::LabelOutOfRange {
                    label,
                    vocab_size: vocab.size(),
                });
            }
        }
        let mut rgb_bad = false;
        let mut audio_bad = false;
        for (r, a) in ex.row_dims() {
            let (er, ea) = *reference.get_or_insert((r, a));
            if r != er && !rgb_bad {
                rgb_bad = true;
                push(ViolationKind::RgbDim {
                    expected: er,
                    actual: r,
                });
            }
            if a != ea && !audio_bad {
                audio_bad = true;
                push(ViolationKind::AudioDim {
                    expected: ea,
                    actual: a,
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Canonical pair order: confidence descending, then label id ascending.
pub fn pair_order(a: &(LabelId, f64), b: &(LabelId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-K `(label, confidence)` pairs for one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionList {
    pub video_id: String,
    pairs: Vec<(LabelId, f64)>,
}

impl PredictionList {
    /// Build from pairs that must already be canonical.
    pub fn new(video_id: impl Into<String>, pairs: Vec<(LabelId, f64)>) -> Result<Self> {
        let video_id = video_id.into();
        check_confidences(&video_id, &pairs)?;
        if !is_canonical(&pairs) {
            return Err(Error::InvalidInput(format!(
                "prediction pairs for `{video_id}` are not in canonical order"
            )));
        }
        check_unique(&video_id, &pairs)?;
        Ok(PredictionList { video_id, pairs })
    }

    /// Build from pairs in any order; returns whether reordering was needed.
    pub fn canonicalize(video_id: impl Into<String>, mut pairs: Vec<(LabelId, f64)>) -> Result<(Self, bool)> {
        let video_id = video_id.into();
        check_confidences(&video_id, &pairs)?;
        let repaired = !is_canonical(&pairs);
        if repaired {
            pairs.sort_by(pair_order);
        }
        check_unique(&video_id, &pairs)?;
        Ok((PredictionList { video_id, pairs }, repaired))
    }

    pub fn empty(video_id: impl Into<String>) -> Self {
        PredictionList {
            video_id: video_id.into(),
            pairs: Vec::new(),
        }
    }

    pub fn pairs(&self) -> &[(LabelId, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn truncated(&self, k: usize) -> &[(LabelId, f64)] {
        &self.pairs[..self.pairs.len().min(k)]
    }

    pub fn into_pairs(self) -> Vec<(LabelId, f64)> {
        self.pairs
    }
}

pub fn is_canonical(pairs: &[(LabelId, f64)]) -> bool {
    pairs.windows(2).all(|w| pair_order(&w[0], &w[1]) == Ordering::Less)
}

fn check_confidences(video_id: &str, pairs: &[(LabelId, f64)]) -> Result<()> {
    match pairs.iter().find(|(_, c)| !(0.0..=1.0).contains(c)) {
        Some((label, c)) => Err(Error::InvalidInput(format!(
            "confidence {c} for label {label} of `{video_id}` outside [0, 1]"
        ))),
        None => Ok(()),
    }
}

fn check_unique(video_id: &str, sorted: &[(LabelId, f64)]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (label, _) in sorted {
        if !seen.insert(*label) {
            return Err(Error::InvalidInput(format!(
                "label {label} repeated in predictions for `{video_id}`"
            )));
        }
    }
    Ok(())
}

/// Ground-truth label sets keyed by video id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    labels: BTreeMap<String, LabelSet>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_examples<'a, E: Example + 'a>(examples: impl IntoIterator<Item = &'a E>) -> Self {
        let labels = examples
            .into_iter()
            .map(|e| (e.video_id().to_owned(), e.labels().clone()))
            .collect();
        GroundTruth { labels }
    }

    pub fn insert(&mut self, video_id: impl Into<String>, labels: LabelSet) {
        self.labels.insert(video_id.into(), labels);
    }

    pub fn get(&self, video_id: &str) -> Option<&LabelSet> {
        self.labels.get(video_id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LabelSet)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn validate(&self, vocab: Vocabulary) -> Result<()> {
        for (vid, labels) in &self.labels {
            if let Some(l) = labels.iter().find(|&&l| !vocab.contains(l)) {
                return Err(Error::InvalidInput(format!(
                    "label {l} of `{vid}` outside vocabulary of size {}",
                    vocab.size()
                )));
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, LabelSet)> for GroundTruth {
    fn from_iter<T: IntoIterator<Item = (String, LabelSet)>>(iter: T) -> Self {
        GroundTruth {
            labels: iter.into_iter().collect(),
        }
    }
}

/// The `k` highest scores as canonical `(label, score)` pairs.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<(LabelId, f64)>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite score {} at label {i}",
            scores[i]
        )));
    }
    let mut pairs: Vec<(LabelId, f64)> = scores.iter().enumerate().map(|(i, &s)| (i as LabelId, s)).collect();
    let k = k.min(pairs.len());
    if k < pairs.len() {
        pairs.select_nth_unstable_by(k, pair_order);
        pairs.truncate(k);
    }
    pairs.sort_by(pair_order);
    Ok(pairs)
}
