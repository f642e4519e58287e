use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use accurate::sum::OnlineExactSum;
use accurate::traits::SumWithAccumulator;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{pair_order, LabelId, PredictionList, DEFAULT_TOP_K};
use crate::error::{Error, Result};
use crate::recordio::parse_predictions;

fn default_weight() -> f64 {
    1.0
}

fn default_k_out() -> usize {
    DEFAULT_TOP_K
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Member {
    pub path: PathBuf,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

/// Weighted averaging of prediction files, stored as TOML:
///
/// ```toml
/// k_out = 20
///
/// [[members]]
/// path = "moe.csv"
/// weight = 2.0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "default_k_out")]
    pub k_out: usize,
    pub members: Vec<Member>,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config("an ensemble needs at least one member".into()));
        }
        if self.k_out == 0 {
            return Err(Error::Config("k_out must be >= 1".into()));
        }
        if let Some(m) = self.members.iter().find(|m| !(m.weight.is_finite() && m.weight > 0.0)) {
            return Err(Error::Config(format!(
                "weight {} of member {} must be finite and positive",
                m.weight,
                m.path.display()
            )));
        }
        Ok(())
    }

    /// Parse a config; relative member paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: EnsembleConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad ensemble config: {e}")))?;
        for m in &mut cfg.members {
            if m.path.is_relative() {
                m.path = base_dir.join(&m.path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file; member paths are relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        EnsembleConfig::from_toml(&text, dir)
    }
}

/// (confidence, weight share) contributions to each label of one video.
type LabelContributions = BTreeMap<LabelId, Vec<(f64, f64)>>;

/// Merge member predictions: for each video and label, the weighted mean of
/// the members' confidences, a member that does not list the pair counting
/// as 0. Videos are the union over members; each output row keeps the top
/// `k_out` merged labels. Rows are sorted by video id.
///
/// Members with identical rows are merged first by adding their weights
/// exactly, so a member listed twice with weight `w` equals it listed once
/// with `2w`, bit for bit. Each pair is then the sum of
/// `confidence * weight / total` over the contributions in ascending order, which makes the result independent
/// of member order and leaves a lone member's confidences untouched.
pub fn weighted_average_rows(members: &[(&[PredictionList], f64)], k_out: usize) -> Result<Vec<PredictionList>> {
    if members.is_empty() {
        return Err(Error::Config("an ensemble needs at least one member".into()));
    }
    if k_out == 0 {
        return Err(Error::Config("k_out must be >= 1".into()));
    }
    if let Some((_, w)) = members.iter().find(|(_, w)| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Config(format!("member weight {w} must be finite and positive")));
    }
    let mut groups: Vec<(&[PredictionList], Vec<f64>)> = Vec::new();
    for &(rows, w) in members {
        match groups.iter_mut().find(|(g, _)| *g == rows) {
            Some((_, ws)) => ws.push(w),
            None => groups.push((rows, vec![w])),
        }
    }
    // Exact sums, so regrouping the weights cannot change a bit.
    let exact_sum = |ws: &[f64]| ws.iter().copied().sum_with_accumulator::<OnlineExactSum<f64>>();
    let total_weight = exact_sum(&members.iter().map(|m| m.1).collect::<Vec<_>>());
    let groups: Vec<(&[PredictionList], f64)> = groups.into_iter().map(|(rows, ws)| (rows, exact_sum(&ws))).collect();

    // Per video and label, every (confidence, weight share) contribution.
    let mut per_video: BTreeMap<&str, LabelContributions> = BTreeMap::new();
    for (rows, w) in &groups {
        let share = w / total_weight;
        let mut seen = std::collections::BTreeSet::new();
        for row in rows.iter() {
            if !seen.insert(row.video_id.as_str()) {
                return Err(Error::DuplicateVideo(row.video_id.clone()));
            }
            let labels = per_video.entry(row.video_id.as_str()).or_default();
            for &(label, conf) in row.pairs() {
                labels.entry(label).or_default().push((conf, share));
            }
        }
    }

    per_video
        .into_par_iter()
        .map(|(vid, labels)| {
            let mut pairs: Vec<(LabelId, f64)> = labels
                .into_iter()
                .map(|(label, mut contribs)| {
                    contribs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
                    (label, contribs.iter().map(|(c, w)| c * w).sum())
                })
                .collect();
            pairs.sort_by(pair_order);
            pairs.truncate(k_out);
            PredictionList::new(vid, pairs)
        })
        .collect()
}

/// Load every member file and merge them with [`weighted_average_rows`].
pub fn weighted_average(cfg: &EnsembleConfig) -> Result<Vec<PredictionList>> {
    cfg.validate()?;
    let parsed: Vec<Vec<PredictionList>> = cfg
        .members
        .par_iter()
        .map(|m| parse_predictions(&m.path).map(|p| p.rows))
        .collect::<Result<_>>()?;
    let members: Vec<(&[PredictionList], f64)> = parsed
        .iter()
        .zip(&cfg.members)
        .map(|(rows, m)| (rows.as_slice(), m.weight))
        .collect();
    weighted_average_rows(&members, cfg.k_out)
}

const SHIPPED: [(&str, &str); 5] = [
    ("a", include_str!("../../strategies/strategy_a.cfg")),
    ("b", include_str!("../../strategies/strategy_b.cfg")),
    ("c", include_str!("../../strategies/strategy_c.cfg")),
    ("d", include_str!("../../strategies/strategy_d.cfg")),
    ("e", include_str!("../../strategies/strategy_e.cfg")),
];

/// Text of a shipped strategy config (`A`..`E`, case-insensitive, with or
/// without a `strategy_` prefix).
pub fn shipped_strategy(name: &str) -> Option<&'static str> {
    let key = name.to_ascii_lowercase();
    let key = key.strip_prefix("strategy_").unwrap_or(&key);
    SHIPPED.iter().find(|(k, _)| *k == key).map(|(_, text)| *text)
}

/// Resolve a strategy: a shipped name, whose member files are looked up in
/// `members_dir`, or a path to a config file, whose members are relative to
/// the file itself.
pub fn load_strategy(strategy: &str, members_dir: &Path) -> Result<EnsembleConfig> {
    match shipped_strategy(strategy) {
        Some(text) => EnsembleConfig::from_toml(text, members_dir),
        None => EnsembleConfig::load(strategy),
    }
}

pub fn run_strategy(strategy: &str, members_dir: &Path) -> Result<Vec<PredictionList>> {
    let cfg = load_strategy(strategy, members_dir)?;
    for m in &cfg.members {
        if !m.path.exists() {
            return Err(Error::Config(format!("missing member file {}", m.path.display())));
        }
    }
    weighted_average(&cfg)
}
