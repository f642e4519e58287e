use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use vle_core::datamodel::Example;
use vle_core::ensemble::{
    blend_fit, blend_predict, build_stacked_dataset, load_strategy, weighted_average, StackedExample,
};
use vle_core::recordio::{
    dataset_level, load_ground_truth, parse_predictions, read_dataset, save_model, write_dataset, write_predictions,
};
use vle_core::suite::SuiteConfig;
use vle_core::synthgen::{gen_frame_level, gen_video_level, split, SynthSpec, SPLIT_NAMES};
use vle_core::{
    gap_at_k, predict_frame_videos, predict_videos, validate_dataset, FrameExample, Level, Model, ModelConfig,
    PredictionList, TrainConfig, TrainReport, VideoExample, Vocabulary, DEFAULT_VOCAB_SIZE,
};

use crate::manifest::{beside, RunManifest};
use crate::{AverageArgs, BlendArgs, EvaluateArgs, GenDataArgs, PredictArgs, TrainArgs};

/// `VLE_SEED`, when set, overrides every seed in the resolved config.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("VLE_SEED") {
        Ok(s) => Ok(Some(
            s.trim()
                .parse()
                .with_context(|| format!("VLE_SEED=`{s}` is not a u64"))?,
        )),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("VLE_SEED: {e}"),
    }
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn header_vocab<T: Example + DeserializeOwned>(path: &Path) -> Result<Option<usize>> {
    let reader = read_dataset::<T>(path)?;
    let size = reader
        .header()
        .and_then(|h| h.meta.get("vocab_size"))
        .and_then(|v| v.as_u64())
        .map(|v| v as usize);
    Ok(size)
}

/// Vocabulary size recorded in any dataset's header.
fn dataset_vocab(path: &Path) -> Result<Option<usize>> {
    match dataset_level(path)? {
        Some(Level::Video) => header_vocab::<VideoExample>(path),
        Some(Level::Frame) => header_vocab::<FrameExample>(path),
        Some(Level::Stacked) => header_vocab::<StackedExample>(path),
        None => Ok(None),
    }
}

/// An explicit size wins; otherwise the headers must agree; otherwise the
/// default vocabulary.
fn resolve_vocab(flag: Option<usize>, paths: &[PathBuf]) -> Result<Vocabulary> {
    if let Some(size) = flag {
        return Ok(Vocabulary::new(size)?);
    }
    let mut found: Option<(usize, &Path)> = None;
    for path in paths {
        if let Some(size) = dataset_vocab(path)? {
            match found {
                Some((seen, other)) if seen != size => bail!(
                    "{} declares vocab_size {size} but {} declares {seen}",
                    path.display(),
                    other.display()
                ),
                _ => found = Some((size, path)),
            }
        }
    }
    Ok(Vocabulary::new(found.map_or(DEFAULT_VOCAB_SIZE, |f| f.0))?)
}

/// Load and concatenate datasets, rejecting ids repeated across files and
/// labels outside the vocabulary.
fn load_all<T: Example + DeserializeOwned>(paths: &[PathBuf], vocab: Vocabulary) -> Result<Vec<T>> {
    let mut all = Vec::new();
    for path in paths {
        for ex in read_dataset::<T>(path)? {
            all.push(ex?);
        }
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = all.iter().find(|ex| !ids.insert(ex.video_id())) {
        bail!(vle_core::Error::DuplicateVideo(dup.video_id().to_owned()));
    }
    if let Err(violations) = validate_dataset(&all, vocab) {
        let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
        bail!("{} invalid records: {}", violations.len(), shown.join("; "));
    }
    ensure!(!all.is_empty(), vle_core::Error::EmptyDataset);
    Ok(all)
}

fn record_report(m: &mut RunManifest, report: &TrainReport) {
    if let Some(v) = report.final_loss() {
        m.metric("final_loss", v);
    }
    if let Some(v) = report.first_decile_loss() {
        m.metric("first_decile_loss", v);
    }
    if let Some(v) = report.last_decile_loss() {
        m.metric("last_decile_loss", v);
    }
    m.metric("steps", report.step_losses.len());
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let started = Instant::now();
    let mut spec = match &args.spec {
        Some(path) => read_toml::<SynthSpec>(path)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = env_seed()? {
        spec.seed = seed;
    }
    spec.validate()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut m = RunManifest::new("gen-data");
    m.config(&spec)?;
    m.seeds.insert("seed".into(), spec.seed);
    let mut outputs = Vec::new();
    let planted = match spec.level {
        Level::Frame => {
            let (frames, planted) = gen_frame_level(&spec)?;
            for (name, part) in SPLIT_NAMES.iter().zip(split(&frames)) {
                let path = args.out.join(format!("{name}_frames.ndjson"));
                write_dataset(&path, &part, spec.metadata(name))?;
                outputs.push(path);
                let means: Vec<VideoExample> = part.iter().map(FrameExample::to_video).collect();
                let path = args.out.join(format!("{name}.ndjson"));
                write_dataset(&path, &means, spec.metadata(name))?;
                outputs.push(path);
                m.metric(&format!("{name}_videos"), part.len());
            }
            planted
        }
        _ => {
            let (videos, planted) = gen_video_level(&spec)?;
            for (name, part) in SPLIT_NAMES.iter().zip(split(&videos)) {
                let path = args.out.join(format!("{name}.ndjson"));
                write_dataset(&path, &part, spec.metadata(name))?;
                outputs.push(path);
                m.metric(&format!("{name}_videos"), part.len());
            }
            planted
        }
    };
    let planted_path = args.out.join("planted_model.json");
    save_model(&planted_path, &planted, &spec)?;
    outputs.push(planted_path);
    m.outputs = outputs;
    m.write(&args.out.join("manifest.json"), started)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = match &args.config {
        Some(path) => read_toml::<ModelConfig>(path)?,
        None => ModelConfig::default(),
    };
    cfg.kind = args.model;
    if let Some(f) = args.features {
        cfg.features = f;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(seed) = env_seed()?.or(args.seed) {
        cfg = cfg.with_seed(seed);
    }
    let vocab = resolve_vocab(args.vocab_size, &args.data)?;

    let (model, report, dims, n) = match cfg.kind.level() {
        Level::Video => {
            let videos = load_all::<VideoExample>(&args.data, vocab)?;
            let dims = (videos[0].mean_rgb.len(), videos[0].mean_audio.len());
            let (model, report) = Model::train_videos(&cfg, &videos, vocab)?;
            (model, report, dims, videos.len())
        }
        _ => {
            let videos = load_all::<FrameExample>(&args.data, vocab)?;
            let dims = (videos[0].rgb[0].len(), videos[0].audio[0].len());
            let (model, report) = Model::train_frames(&cfg, &videos, vocab)?;
            (model, report, dims, videos.len())
        }
    };
    model.save(&args.out)?;

    let mut m = RunManifest::new("train");
    m.config(&cfg)?;
    m.seeds.insert("train".into(), cfg.train.seed);
    m.seeds.insert("sample".into(), cfg.sample.seed);
    m.inputs = args.data.clone();
    m.outputs = vec![args.out.clone()];
    record_report(&mut m, &report);
    m.metric("videos", n);
    m.metric("vocab_size", vocab.size());
    m.metric("rgb_dim", dims.0);
    m.metric("audio_dim", dims.1);
    m.metric("input_dim", cfg.features.dim(dims.0, dims.1));
    m.write(&beside(&args.out), started)
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let started = Instant::now();
    let model = Model::load(&args.model)?;
    let rows = match model.config.kind.level() {
        Level::Video => predict_videos(
            &model,
            &read_dataset(&args.data)?.collect::<Result<Vec<_>, _>>()?,
            args.top_k,
        )?,
        _ => predict_frame_videos(
            &model,
            &read_dataset(&args.data)?.collect::<Result<Vec<_>, _>>()?,
            args.top_k,
        )?,
    };
    write_predictions(&args.out, &rows, args.top_k)?;

    let mut m = RunManifest::new("predict");
    m.config(&serde_json::json!({"model": model.config, "top_k": args.top_k}))?;
    m.inputs = vec![args.model, args.data];
    m.outputs = vec![args.out.clone()];
    m.metric("videos", rows.len());
    m.write(&beside(&args.out), started)
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .with_context(|| format!("cannot name a base model after {}", path.display()))
}

#[derive(Serialize)]
struct BlendRecord<'a> {
    stacker: String,
    top_k: usize,
    vocab_size: usize,
    blocks: &'a [String],
    train: &'a TrainConfig,
}

pub fn blend(args: BlendArgs) -> Result<()> {
    let started = Instant::now();
    ensure!(
        args.bases.len() == args.test_bases.len(),
        "{} holdout base files but {} test base files",
        args.bases.len(),
        args.test_bases.len()
    );
    // Blocks are ordered by base name, so the order of the flags is irrelevant.
    let mut bases: Vec<(String, &PathBuf, &PathBuf)> = args
        .bases
        .iter()
        .zip(&args.test_bases)
        .map(|(h, t)| Ok((stem(h)?, h, t)))
        .collect::<Result<_>>()?;
    bases.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = bases.windows(2).find(|w| w[0].0 == w[1].0) {
        bail!("two holdout base files are both named `{}`", w[0].0);
    }

    let mut cfg = match &args.config {
        Some(path) => read_toml::<TrainConfig>(path)?,
        None => SuiteConfig::default().stacker,
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    let vocab = resolve_vocab(args.vocab_size, std::slice::from_ref(&args.holdout_data))?;
    let truth = load_ground_truth(&args.holdout_data)?;

    let read = |p: &Path| -> Result<Vec<PredictionList>> { Ok(parse_predictions(p)?.rows) };
    let names: Vec<String> = bases.iter().map(|b| b.0.clone()).collect();
    let holdout: Vec<(String, Vec<PredictionList>)> = bases
        .iter()
        .map(|b| Ok((b.0.clone(), read(b.1)?)))
        .collect::<Result<_>>()?;
    let test: Vec<(String, Vec<PredictionList>)> = bases
        .iter()
        .map(|b| Ok((b.0.clone(), read(b.2)?)))
        .collect::<Result<_>>()?;

    let refs: Vec<&[PredictionList]> = holdout.iter().map(|h| h.1.as_slice()).collect();
    let stacked = build_stacked_dataset(&refs, Some(&truth), vocab)?;
    let (stacker, report) = blend_fit(&stacked, names.clone(), args.stacker, vocab, &cfg)?;
    let holdout_gap = gap_at_k(&blend_predict(&stacker, &holdout, args.top_k)?, &truth, args.top_k)?;
    let rows = blend_predict(&stacker, &test, args.top_k)?;
    write_predictions(&args.out, &rows, args.top_k)?;

    let record = BlendRecord {
        stacker: format!("{:?}", args.stacker).to_lowercase(),
        top_k: args.top_k,
        vocab_size: vocab.size(),
        blocks: &names,
        train: &cfg,
    };
    let mut m = RunManifest::new("blend");
    m.outputs = vec![args.out.clone()];
    if let Some(path) = &args.save_stacker {
        save_model(path, &stacker, &record)?;
        m.outputs.push(path.clone());
    }
    m.config(&record)?;
    m.seeds.insert("train".into(), cfg.seed);
    m.inputs = args
        .bases
        .iter()
        .chain([&args.holdout_data])
        .chain(&args.test_bases)
        .cloned()
        .collect();
    record_report(&mut m, &report);
    m.metric("holdout_gap", holdout_gap);
    m.metric("holdout_videos", stacked.len());
    log::info!("stacker holdout GAP {holdout_gap:.5}");
    m.write(&beside(&args.out), started)
}

pub fn average(args: AverageArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_strategy(&args.config, &args.members)?;
    for member in &cfg.members {
        ensure!(member.path.exists(), "missing member file {}", member.path.display());
    }
    let rows = weighted_average(&cfg)?;
    write_predictions(&args.out, &rows, cfg.k_out)?;

    let mut m = RunManifest::new("average");
    m.config(&cfg)?;
    m.inputs = cfg.members.iter().map(|mb| mb.path.clone()).collect();
    m.outputs = vec![args.out.clone()];
    m.metric("videos", rows.len());
    m.write(&beside(&args.out), started)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let preds = parse_predictions(&args.predictions)?;
    let truth = load_ground_truth(&args.truth)?;
    let gap = gap_at_k(&preds.rows, &truth, args.k)?;
    println!("{gap:.5}");
    Ok(())
}
