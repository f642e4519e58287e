//! Text formats for datasets, prediction files and model files.
//!
//! Datasets are newline-delimited JSON. The first line is a header object
//! `{"header":{"level":"video"|"frame"|"stacked","meta":{..}}}`; every
//! following line is one record with keys `video_id`, `labels` and either
//! `mean_rgb`/`mean_audio` (video level), `rgb`/`audio` as arrays of per-frame
//! arrays (frame level), or `blocks` of sparse expanded predictions (stacked).
//! Feature values are `f32`, written in their shortest round-trip form (at most
//! 9 significant digits), so a write/read cycle is lossless.
//!
//! Prediction files are CSV with the header `VideoId,LabelConfidencePairs` and
//! rows `<video_id>,<label> <conf> <label> <conf> ...`, confidences printed with
//! exactly six decimals.
//!
//! Model files are a single JSON document with `kind`, `vocab_size`, `dims`,
//! `config` and `weights` sections. `f64` weights are written in shortest
//! round-trip form and read back bit-exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    pair_order, Example, FrameExample, GroundTruth, LabelId, Level, PredictionList, VideoExample, ViolationKind,
};
use crate::ensemble::StackedExample;
use crate::error::{Error, Result};

pub const PREDICTION_HEADER: &str = "VideoId,LabelConfidencePairs";

/// Write a file through a temporary sibling and rename it into place, so a
/// failed write never leaves a partial file behind.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub level: Level,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: DatasetHeader,
}

/// Streaming reader over a dataset file. Records are checked lazily: each one
/// for its own structure and against the dimensions of the first record.
pub struct DatasetReader<T> {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    header: Option<DatasetHeader>,
    pending: Option<String>,
    dims: Option<(usize, usize)>,
    done: bool,
    _marker: PhantomData<T>,
}

impl<T: Example + DeserializeOwned> DatasetReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut lines = open(&path)?.lines();
        let mut line_no = 0;
        let mut header = None;
        let mut pending = None;
        for line in lines.by_ref() {
            line_no += 1;
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if line.trim_start().starts_with("{\"header\"") {
                let h: HeaderLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: line_no,
                    message: format!("bad header: {e}"),
                })?;
                if h.header.level != T::LEVEL {
                    return Err(Error::LevelMismatch {
                        context: path.display().to_string(),
                        expected: T::LEVEL,
                        found: h.header.level,
                    });
                }
                header = Some(h.header);
            } else {
                pending = Some(line);
            }
            break;
        }
        Ok(DatasetReader {
            path,
            lines,
            line_no,
            header,
            pending,
            dims: None,
            done: false,
            _marker: PhantomData,
        })
    }

    pub fn header(&self) -> Option<&DatasetHeader> {
        self.header.as_ref()
    }

    fn parse(&mut self, line: &str) -> Result<T> {
        let record: T = serde_json::from_str(line).map_err(|e| {
            let other_level = serde_json::from_str::<serde_json::Value>(line).ok().and_then(|v| {
                let obj = v.as_object()?;
                let found = if obj.contains_key("mean_rgb") {
                    Level::Video
                } else if obj.contains_key("rgb") {
                    Level::Frame
                } else if obj.contains_key("blocks") {
                    Level::Stacked
                } else {
                    return None;
                };
                (found != T::LEVEL).then_some(found)
            });
            match other_level {
                Some(found) => Error::LevelMismatch {
                    context: format!("{}:{}", self.path.display(), self.line_no),
                    expected: T::LEVEL,
                    found,
                },
                None => Error::Parse {
                    path: self.path.clone(),
                    line: self.line_no,
                    message: e.to_string(),
                },
            }
        })?;
        let bad = |message: String| Error::Parse {
            path: self.path.clone(),
            line: self.line_no,
            message,
        };
        if let Some(v) = record.local_violations().first() {
            return Err(bad(format!("invalid record: {v:?}")));
        }
        for (r, a) in record.row_dims() {
            let (er, ea) = *self.dims.get_or_insert((r, a));
            if (r, a) != (er, ea) {
                return Err(bad(format!(
                    "feature dimensions ({r}, {a}) differ from dataset ({er}, {ea})"
                )));
            }
        }
        Ok(record)
    }
}

impl<T: Example + DeserializeOwned> Iterator for DatasetReader<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let line = match self.pending.take() {
            Some(l) => l,
            None => loop {
                match self.lines.next()? {
                    Err(e) => {
                        self.done = true;
                        return Some(Err(Error::io(&self.path, e)));
                    }
                    Ok(l) => {
                        self.line_no += 1;
                        if !l.trim().is_empty() {
                            break l;
                        }
                    }
                }
            },
        };
        let out = self.parse(&line);
        if out.is_err() {
            self.done = true;
        }
        Some(out)
    }
}

/// Open a dataset for streaming, checking it holds records of `T`'s level.
pub fn read_dataset<T: Example + DeserializeOwned>(path: impl AsRef<Path>) -> Result<DatasetReader<T>> {
    DatasetReader::open(path)
}

/// Read a whole dataset into memory.
pub fn load_dataset<T: Example + DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_dataset(path)?.collect()
}

/// Level of a dataset file, from its header or, for headerless files, from
/// the keys of its first record. `None` for an empty file.
pub fn dataset_level(path: impl AsRef<Path>) -> Result<Option<Level>> {
    let path = path.as_ref();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if let Some(h) = value.get("header") {
            let h: DatasetHeader = serde_json::from_value(h.clone()).map_err(|e| bad(format!("bad header: {e}")))?;
            return Ok(Some(h.level));
        }
        return match ["mean_rgb", "rgb", "blocks"]
            .iter()
            .position(|k| value.get(k).is_some())
        {
            Some(0) => Ok(Some(Level::Video)),
            Some(1) => Ok(Some(Level::Frame)),
            Some(_) => Ok(Some(Level::Stacked)),
            None => Err(bad("record has no feature keys".into())),
        };
    }
    Ok(None)
}

/// Labels of every video in a dataset of any level.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    fn collect<T: Example + DeserializeOwned>(path: &Path) -> Result<GroundTruth> {
        let mut truth = GroundTruth::new();
        for ex in read_dataset::<T>(path)? {
            let ex = ex?;
            if truth.get(ex.video_id()).is_some() {
                return Err(Error::DuplicateVideo(ex.video_id().to_owned()));
            }
            truth.insert(ex.video_id(), ex.labels().clone());
        }
        Ok(truth)
    }
    match dataset_level(path)? {
        None => Ok(GroundTruth::new()),
        Some(Level::Video) => collect::<VideoExample>(path),
        Some(Level::Frame) => collect::<FrameExample>(path),
        Some(Level::Stacked) => collect::<StackedExample>(path),
    }
}

/// Write a dataset atomically. Records must share feature dimensions.
pub fn write_dataset<'a, T, I>(
    path: impl AsRef<Path>,
    examples: I,
    meta: BTreeMap<String, serde_json::Value>,
) -> Result<()>
where
    T: Example + Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    atomic_write(path, |w| {
        let header = HeaderLine {
            header: DatasetHeader { level: T::LEVEL, meta },
        };
        write_json_line(w, &header, path)?;
        let mut dims = None;
        for (i, ex) in examples.into_iter().enumerate() {
            if let Some(v) = ex.local_violations().first() {
                return Err(Error::InvalidInput(format!("record {i}: {v:?}")));
            }
            for (r, a) in ex.row_dims() {
                let (er, ea) = *dims.get_or_insert((r, a));
                if (r, a) != (er, ea) {
                    let kind = if r != er {
                        ViolationKind::RgbDim {
                            expected: er,
                            actual: r,
                        }
                    } else {
                        ViolationKind::AudioDim {
                            expected: ea,
                            actual: a,
                        }
                    };
                    return Err(Error::InvalidInput(format!("record {i}: {kind:?}")));
                }
            }
            write_json_line(w, ex, path)?;
        }
        Ok(())
    })
}

fn write_json_line<T: Serialize>(w: &mut dyn Write, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Prediction files

/// Render prediction rows in the prediction-file format, keeping at most `k`
/// pairs per row. Pairs are ordered by their printed confidences, so a row
/// whose confidences tie after rounding is still canonical when read back.
pub fn format_predictions(w: &mut dyn Write, rows: &[PredictionList], k: usize) -> std::io::Result<()> {
    writeln!(w, "{PREDICTION_HEADER}")?;
    let mut printed: Vec<(LabelId, f64, String)> = Vec::new();
    for row in rows {
        write!(w, "{},", row.video_id)?;
        printed.clear();
        printed.extend(row.truncated(k).iter().map(|&(label, conf)| {
            let text = format!("{conf:.6}");
            (label, text.parse().expect("formatted float parses"), text)
        }));
        printed.sort_by(|a, b| pair_order(&(a.0, a.1), &(b.0, b.1)));
        for (i, (label, _, text)) in printed.iter().enumerate() {
            if i > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{label} {text}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn check_row_ids(rows: &[PredictionList]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for row in rows {
        if row.video_id.contains([',', '\n', '\r']) {
            return Err(Error::InvalidInput(format!(
                "video id `{}` contains a comma or newline",
                row.video_id
            )));
        }
        if !seen.insert(row.video_id.as_str()) {
            return Err(Error::DuplicateVideo(row.video_id.clone()));
        }
    }
    Ok(())
}

/// Write a prediction file atomically. Duplicate video ids are rejected before
/// anything touches the disk.
pub fn write_predictions(path: impl AsRef<Path>, rows: &[PredictionList], k: usize) -> Result<()> {
    check_row_ids(rows)?;
    let path = path.as_ref();
    atomic_write(path, |w| format_predictions(w, rows, k).map_err(|e| Error::io(path, e)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedPredictions {
    pub rows: Vec<PredictionList>,
    /// Rows whose pairs were not in canonical order and had to be re-sorted.
    pub repaired: usize,
}

pub fn parse_predictions(path: impl AsRef<Path>) -> Result<ParsedPredictions> {
    let path = path.as_ref();
    parse_predictions_from(open(path)?, path)
}

/// Parse prediction rows from any reader; `path` is used in error messages.
pub fn parse_predictions_from(reader: impl BufRead, path: &Path) -> Result<ParsedPredictions> {
    let mut lines = reader.lines();
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    match lines.next() {
        Some(Ok(h)) if h.trim_end_matches('\r') == PREDICTION_HEADER => {}
        Some(Ok(h)) => return Err(err(1, format!("expected header `{PREDICTION_HEADER}`, got `{h}`"))),
        Some(Err(e)) => return Err(Error::io(path, e)),
        None => return Err(err(1, "missing header".into())),
    }
    let mut rows = Vec::new();
    let mut repaired = 0;
    let mut seen = BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (video_id, field) = line
            .split_once(',')
            .ok_or_else(|| err(line_no, "missing `,` separator".into()))?;
        let tokens: Vec<&str> = field.split_whitespace().collect();
        if !tokens.len().is_multiple_of(2) {
            return Err(err(
                line_no,
                format!("odd token count {} in pairs of `{video_id}`", tokens.len()),
            ));
        }
        let pairs = tokens
            .chunks(2)
            .map(|t| {
                let label = t[0]
                    .parse::<u32>()
                    .map_err(|_| err(line_no, format!("bad label `{}` in `{video_id}`", t[0])))?;
                let conf = t[1]
                    .parse::<f64>()
                    .map_err(|_| err(line_no, format!("bad confidence `{}` in `{video_id}`", t[1])))?;
                Ok((label, conf))
            })
            .collect::<Result<Vec<_>>>()?;
        let (row, fixed) = PredictionList::canonicalize(video_id, pairs).map_err(|e| err(line_no, e.to_string()))?;
        if !seen.insert(row.video_id.clone()) {
            return Err(Error::DuplicateVideo(row.video_id));
        }
        repaired += usize::from(fixed);
        rows.push(row);
    }
    if repaired > 0 {
        log::warn!("{}: re-sorted {repaired} prediction rows", path.display());
    }
    Ok(ParsedPredictions { rows, repaired })
}

// ---------------------------------------------------------------------------
// Model files

/// A parameter bundle that can be stored in a model file.
pub trait ModelParams: Serialize + DeserializeOwned {
    const KIND: &'static str;
    fn vocab_size(&self) -> usize;
    fn dims(&self) -> BTreeMap<String, usize>;
    /// Consistency of the stored tensors with the declared shapes.
    fn check_shapes(&self) -> Result<()>;
}

#[derive(Serialize, Deserialize)]
struct ModelFile<W> {
    kind: String,
    vocab_size: usize,
    dims: BTreeMap<String, usize>,
    config: serde_json::Value,
    weights: W,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedModel<P> {
    pub params: P,
    pub vocab_size: usize,
    pub dims: BTreeMap<String, usize>,
    pub config: serde_json::Value,
}

pub fn save_model<P: ModelParams>(path: impl AsRef<Path>, params: &P, config: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let config =
        serde_json::to_value(config).map_err(|e| Error::InvalidInput(format!("unserializable model config: {e}")))?;
    let file = ModelFile {
        kind: P::KIND.to_owned(),
        vocab_size: params.vocab_size(),
        dims: params.dims(),
        config,
        weights: params,
    };
    atomic_write(path, |w| {
        serde_json::to_writer(&mut *w, &file).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

fn read_model_file(path: &Path) -> Result<ModelFile<serde_json::Value>> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// The `kind` recorded in a model file.
pub fn model_kind(path: impl AsRef<Path>) -> Result<String> {
    Ok(read_model_file(path.as_ref())?.kind)
}

pub fn load_model<P: ModelParams>(path: impl AsRef<Path>) -> Result<LoadedModel<P>> {
    let path = path.as_ref();
    let file = read_model_file(path)?;
    if file.kind != P::KIND {
        return Err(Error::KindMismatch {
            expected: P::KIND.to_owned(),
            found: file.kind,
        });
    }
    let params: P = serde_json::from_value(file.weights).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: format!("bad weights section: {e}"),
    })?;
    params.check_shapes()?;
    if params.vocab_size() != file.vocab_size || params.dims() != file.dims {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "metadata disagrees with weight shapes".into(),
        });
    }
    Ok(LoadedModel {
        params,
        vocab_size: file.vocab_size,
        dims: file.dims,
        config: file.config,
    })
}
