use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{top_k, Example, GroundTruth, LabelSet, Level, PredictionList, Vocabulary};
use crate::error::{Error, Result};
use crate::linear::{logistic_train, moe_train, LogisticParams, MoeParams, SparseRow, TrainConfig, TrainReport};
use crate::recordio::ModelParams;

/// Longest list of mismatched ids carried in an error.
const MISMATCH_CAP: usize = 10;

/// One base model's predictions for a video, expanded to a vocabulary-sized
/// vector stored sparsely. Absent labels are 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeature", into = "RawFeature")]
pub struct SparseStackFeature {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawFeature {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl TryFrom<RawFeature> for SparseStackFeature {
    type Error = Error;
    fn try_from(r: RawFeature) -> Result<Self> {
        SparseStackFeature::new(r.dim, r.indices, r.values)
    }
}

impl From<SparseStackFeature> for RawFeature {
    fn from(f: SparseStackFeature) -> Self {
        RawFeature {
            dim: f.dim,
            indices: f.indices,
            values: f.values,
        }
    }
}

impl SparseStackFeature {
    /// Indices must be strictly increasing and below `dim`; values in `(0, 1]`.
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::shape(format!("{} values", indices.len()), values.len()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "feature indices must be strictly increasing".into(),
            ));
        }
        if let Some(&i) = indices.last().filter(|&&i| i as usize >= dim) {
            return Err(Error::InvalidInput(format!(
                "feature index {i} outside dimension {dim}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidInput(format!("feature value {v} outside (0, 1]")));
        }
        Ok(SparseStackFeature { dim, indices, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn to_row(&self) -> SparseRow {
        SparseRow::new(self.dim, self.indices.clone(), self.values.clone()).expect("validated on construction")
    }
}

/// Place each predicted confidence at its label's position in a
/// vocabulary-sized vector. Zero confidences are left implicit.
pub fn expand_topk(pred: &PredictionList, vocab: Vocabulary) -> Result<SparseStackFeature> {
    let mut pairs: Vec<(u32, f64)> = pred.pairs().iter().copied().filter(|&(_, c)| c > 0.0).collect();
    if let Some((l, _)) = pairs.iter().find(|(l, _)| !vocab.contains(*l)) {
        return Err(Error::InvalidInput(format!(
            "label {l} of `{}` outside vocabulary of size {}",
            pred.video_id,
            vocab.size()
        )));
    }
    pairs.sort_unstable_by_key(|&(l, _)| l);
    let (indices, values) = pairs.into_iter().unzip();
    SparseStackFeature::new(vocab.size(), indices, values)
}

/// A holdout (or test) video described by its base models' expanded
/// predictions, one block per base model in a fixed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackedExample {
    pub video_id: String,
    pub labels: LabelSet,
    pub blocks: Vec<SparseStackFeature>,
}

impl StackedExample {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(SparseStackFeature::dim).sum()
    }

    /// The blocks laid end to end.
    pub fn features(&self) -> SparseRow {
        let rows: Vec<SparseRow> = self.blocks.iter().map(SparseStackFeature::to_row).collect();
        SparseRow::concat(&rows)
    }
}

impl Example for StackedExample {
    const LEVEL: Level = Level::Stacked;

    fn video_id(&self) -> &str {
        &self.video_id
    }
    fn labels(&self) -> &LabelSet {
        &self.labels
    }
    fn row_dims(&self) -> Vec<(usize, usize)> {
        vec![(self.dim(), 0)]
    }
}

fn index_rows(rows: &[PredictionList]) -> Result<BTreeMap<&str, &PredictionList>> {
    let mut map = BTreeMap::new();
    for r in rows {
        if map.insert(r.video_id.as_str(), r).is_some() {
            return Err(Error::DuplicateVideo(r.video_id.clone()));
        }
    }
    Ok(map)
}

/// Join base-model predictions by video id into stacked examples, sorted by
/// video id. Every base must cover the same ids. With `truth`, labels are
/// attached and every id must be known to it; without, labels are empty.
pub fn build_stacked_dataset(
    bases: &[&[PredictionList]],
    truth: Option<&GroundTruth>,
    vocab: Vocabulary,
) -> Result<Vec<StackedExample>> {
    if bases.is_empty() {
        return Err(Error::InvalidInput("at least one base model is required".into()));
    }
    let indexed: Vec<BTreeMap<&str, &PredictionList>> =
        bases.iter().map(|rows| index_rows(rows)).collect::<Result<_>>()?;
    let reference: BTreeSet<&str> = indexed[0].keys().copied().collect();
    let mut mismatch = BTreeSet::new();
    for other in &indexed[1..] {
        let ids: BTreeSet<&str> = other.keys().copied().collect();
        mismatch.extend(reference.symmetric_difference(&ids).copied());
    }
    if !mismatch.is_empty() {
        return Err(Error::VideoSetMismatch(
            mismatch.into_iter().take(MISMATCH_CAP).map(str::to_owned).collect(),
        ));
    }
    if let Some(truth) = truth {
        let unknown: Vec<String> = reference
            .iter()
            .filter(|v| truth.get(v).is_none())
            .take(MISMATCH_CAP)
            .map(|v| (*v).to_owned())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownVideos(unknown));
        }
    }
    reference
        .iter()
        .map(|&vid| {
            let blocks = indexed
                .iter()
                .map(|m| expand_topk(m[vid], vocab))
                .collect::<Result<Vec<_>>>()?;
            let labels = truth.and_then(|t| t.get(vid)).cloned().unwrap_or_default();
            Ok(StackedExample {
                video_id: vid.to_owned(),
                labels,
                blocks,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackerKind {
    Logistic,
    Moe,
}

impl FromStr for StackerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(StackerKind::Logistic),
            "moe" => Ok(StackerKind::Moe),
            other => Err(Error::InvalidInput(format!(
                "unknown stacker `{other}` (expected logistic or moe)"
            ))),
        }
    }
}

impl fmt::Display for StackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StackerKind::Logistic => "logistic",
            StackerKind::Moe => "moe",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stacker", content = "params", rename_all = "lowercase")]
pub enum StackerModel {
    Logistic(LogisticParams),
    Moe(MoeParams),
}

impl StackerModel {
    pub fn kind(&self) -> StackerKind {
        match self {
            StackerModel::Logistic(_) => StackerKind::Logistic,
            StackerModel::Moe(_) => StackerKind::Moe,
        }
    }

    fn dim(&self) -> usize {
        match self {
            StackerModel::Logistic(p) => p.dim,
            StackerModel::Moe(p) => p.dim,
        }
    }

    fn vocab_size(&self) -> usize {
        match self {
            StackerModel::Logistic(p) => p.vocab_size,
            StackerModel::Moe(p) => p.vocab_size,
        }
    }

    pub fn predict(&self, x: &SparseRow) -> Result<Vec<f64>> {
        match self {
            StackerModel::Logistic(p) => p.predict(x),
            StackerModel::Moe(p) => p.predict(x),
        }
    }
}

/// A trained second-stage model together with the names of its input
/// blocks, in the order they were concatenated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackerParams {
    pub blocks: Vec<String>,
    pub model: StackerModel,
}

impl ModelParams for StackerParams {
    const KIND: &'static str = "stacker";

    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    fn dims(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([
            ("input".to_owned(), self.model.dim()),
            ("blocks".to_owned(), self.blocks.len()),
        ])
    }

    fn check_shapes(&self) -> Result<()> {
        match &self.model {
            StackerModel::Logistic(p) => p.check_shapes()?,
            StackerModel::Moe(p) => p.check_shapes()?,
        }
        let want = self.model.vocab_size() * self.blocks.len();
        if self.model.dim() != want {
            return Err(Error::shape(
                format!("{want} stacker inputs for {} blocks", self.blocks.len()),
                self.model.dim(),
            ));
        }
        Ok(())
    }
}

fn check_blocks(examples: &[StackedExample], blocks: usize, vocab: Vocabulary) -> Result<()> {
    for ex in examples {
        if ex.blocks.len() != blocks || ex.blocks.iter().any(|b| b.dim() != vocab.size()) {
            return Err(Error::shape(
                format!("{blocks} blocks of dimension {}", vocab.size()),
                format!(
                    "{:?} for `{}`",
                    ex.blocks.iter().map(SparseStackFeature::dim).collect::<Vec<_>>(),
                    ex.video_id
                ),
            ));
        }
    }
    Ok(())
}

/// Fit a stacker on a holdout stacked dataset. `block_names` label the
/// blocks in order and are stored with the model.
pub fn blend_fit(
    holdout: &[StackedExample],
    block_names: Vec<String>,
    kind: StackerKind,
    vocab: Vocabulary,
    cfg: &TrainConfig,
) -> Result<(StackerParams, TrainReport)> {
    if holdout.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_blocks(holdout, block_names.len(), vocab)?;
    let rows: Vec<SparseRow> = holdout.iter().map(StackedExample::features).collect();
    let refs: Vec<&SparseRow> = rows.iter().collect();
    let labels: Vec<LabelSet> = holdout.iter().map(|e| e.labels.clone()).collect();
    let (model, report) = match kind {
        StackerKind::Logistic => {
            let (p, r) = logistic_train(&refs, &labels, vocab, cfg)?;
            (StackerModel::Logistic(p), r)
        }
        StackerKind::Moe => {
            let (p, r) = moe_train(&refs, &labels, vocab, cfg)?;
            (StackerModel::Moe(p), r)
        }
    };
    Ok((
        StackerParams {
            blocks: block_names,
            model,
        },
        report,
    ))
}

/// Score already stacked examples and keep the top `k_out` labels per video.
pub fn blend_predict_stacked(
    stacker: &StackerParams,
    examples: &[StackedExample],
    k_out: usize,
) -> Result<Vec<PredictionList>> {
    let vocab = Vocabulary::new(stacker.model.vocab_size())?;
    check_blocks(examples, stacker.blocks.len(), vocab)?;
    examples
        .iter()
        .map(|ex| {
            let scores = stacker.model.predict(&ex.features())?;
            PredictionList::new(ex.video_id.clone(), top_k(&scores, k_out)?)
        })
        .collect()
}

/// Blend test-split base predictions. `bases` are `(name, rows)` pairs that
/// are matched to the stacker's recorded blocks by name, so they may be given
/// in any order; a missing or unexpected name is an error.
pub fn blend_predict(
    stacker: &StackerParams,
    bases: &[(String, Vec<PredictionList>)],
    k_out: usize,
) -> Result<Vec<PredictionList>> {
    let vocab = Vocabulary::new(stacker.model.vocab_size())?;
    if bases.len() != stacker.blocks.len() {
        return Err(Error::InvalidInput(format!(
            "stacker expects {} base models ({}), got {}",
            stacker.blocks.len(),
            stacker.blocks.join(", "),
            bases.len()
        )));
    }
    let ordered = stacker
        .blocks
        .iter()
        .map(|name| {
            let mut hits = bases.iter().filter(|(n, _)| n == name);
            match (hits.next(), hits.next()) {
                (Some((_, rows)), None) => Ok(rows.as_slice()),
                (None, _) => Err(Error::InvalidInput(format!(
                    "no test predictions for stacker block `{name}`"
                ))),
                (Some(_), Some(_)) => Err(Error::InvalidInput(format!(
                    "test predictions for block `{name}` given twice"
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let stacked = build_stacked_dataset(&ordered, None, vocab)?;
    blend_predict_stacked(stacker, &stacked, k_out)
}
