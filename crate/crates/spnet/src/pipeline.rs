//! The stages of a run. Each reads the previous stage's artifacts from the
//! output directory and fails with [`Error::StageDependency`] when they are
//! missing.
//!
//! ```text
//! <out>/images/<projection>-<size>/<preset>/<object_id>/viewNN.spdi   render
//! <out>/backbone.spnw   <out>/train_log.csv                            train
//! <out>/selection.spnw  <out>/select_log.csv                           select
//! <out>/ensemble.spnw   <out>/ensemble_log.csv                         ensemble
//! <out>/metrics.json                                                   eval
//! <out>/rankings.csv <out>/retrieval.json <out>/similarity.{spdi,png}  retrieve
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use spnet_core::multiview::{
    full_rotations, train_ensemble, train_view_selection, view_scores, EnsembleModel, MultiViewSample, ViewBank,
    ViewPreset,
};
use spnet_core::nn::{
    evaluate, fit, grad_check, image_tensor, EpochStats, GradCheckOptions, LabeledImage, SpnetConfig, SpnetModel,
    Tensor, TrainConfig,
};
use spnet_core::retrieval::{evaluate_retrieval, similarity_matrix, Descriptor};
use spnet_core::{render, Rotation};

use crate::config::{EnsembleViews, RunConfig};
use crate::error::{Error, Result};
use crate::formats::{
    encode_png16, read_spdi, read_spnw, write_atomic, write_spdi, write_spnw, Checkpoint, EnsembleHead,
};
use crate::manifest::{load_mesh, Manifest, Record, Split};

pub const BACKBONE: &str = "backbone.spnw";
pub const SELECTION: &str = "selection.spnw";
pub const ENSEMBLE: &str = "ensemble.spnw";
pub const METRICS: &str = "metrics.json";
pub const RETRIEVAL: &str = "retrieval.json";
pub const RANKINGS: &str = "rankings.csv";

/// Directory holding the images of one rotation preset.
pub fn images_dir(cfg: &RunConfig, preset: ViewPreset) -> PathBuf {
    cfg.out.join("images").join(format!("{}-{}", cfg.projection.name(), cfg.image_size)).join(preset.name())
}

pub fn view_path(dir: &Path, object_id: &str, view: usize) -> PathBuf {
    dir.join(object_id).join(format!("view{view:02}.spdi"))
}

/// Presets a run needs: the plain view for the backbone, plus either the
/// candidate bank or the fixed ensemble preset.
pub fn required_presets(cfg: &RunConfig) -> Vec<ViewPreset> {
    let mut presets = vec![ViewPreset::Plain];
    match cfg.views {
        EnsembleViews::Selected => presets.push(ViewPreset::Full),
        EnsembleViews::Preset(ViewPreset::Plain) => {}
        EnsembleViews::Preset(p) => presets.push(p),
    }
    presets
}

fn preset_rotations(cfg: &RunConfig, preset: ViewPreset) -> Vec<Rotation> {
    match preset {
        ViewPreset::Full => full_rotations()[..cfg.bank_size].to_vec(),
        p => p.rotations(),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderReport {
    pub written: usize,
    pub skipped: usize,
    /// `(object_id, message)` for every object that failed.
    pub errors: Vec<(String, String)>,
}

/// Renders every missing view of every record. Failures are collected per
/// object and do not stop the run.
pub fn cmd_render(manifest: &Manifest, cfg: &RunConfig) -> Result<RenderReport> {
    cfg.validate()?;
    let jobs: Vec<(PathBuf, Vec<Rotation>)> =
        required_presets(cfg).into_iter().map(|p| (images_dir(cfg, p), preset_rotations(cfg, p))).collect();
    let per_object: Vec<std::result::Result<(usize, usize), String>> = manifest
        .records
        .par_iter()
        .map(|rec| -> std::result::Result<(usize, usize), String> {
            let pending: Vec<(PathBuf, Rotation)> = jobs
                .iter()
                .flat_map(|(dir, rots)| rots.iter().enumerate().map(move |(j, &r)| (view_path(dir, &rec.object_id, j), r)))
                .filter(|(p, _)| !p.exists())
                .collect();
            let total: usize = jobs.iter().map(|(_, r)| r.len()).sum();
            if pending.is_empty() {
                return Ok((0, total));
            }
            let mesh = load_mesh(rec).and_then(|m| Ok(m.normalize()?)).map_err(|e| e.to_string())?;
            for (path, rot) in &pending {
                let mut img = render(&mesh, cfg.image_kind(), *rot, &cfg.render_options()).map_err(|e| e.to_string())?;
                img.source_id = rec.object_id.clone();
                write_spdi(path, &img).map_err(|e| e.to_string())?;
            }
            Ok((pending.len(), total - pending.len()))
        })
        .collect();
    let mut report = RenderReport::default();
    for (rec, r) in manifest.records.iter().zip(per_object) {
        match r {
            Ok((w, s)) => {
                report.written += w;
                report.skipped += s;
            }
            Err(msg) => report.errors.push((rec.object_id.clone(), msg)),
        }
    }
    Ok(report)
}

fn require(path: PathBuf, stage: &'static str, producer: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::StageDependency { stage, missing: path, producer })
    }
}

fn load_view(dir: &Path, rec: &Record, view: usize, stage: &'static str) -> Result<Tensor<f32>> {
    let path = require(view_path(dir, &rec.object_id, view), stage, "render")?;
    Ok(image_tensor(&read_spdi(&path)?))
}

fn load_views(dir: &Path, rec: &Record, views: &[usize], stage: &'static str) -> Result<Vec<Tensor<f32>>> {
    views.iter().map(|&v| load_view(dir, rec, v, stage)).collect()
}

fn records(manifest: &Manifest, split: Split) -> Vec<&Record> {
    manifest.split(split).collect()
}

fn nonempty<'a>(recs: Vec<&'a Record>, split: Split, stage: &'static str) -> Result<Vec<&'a Record>> {
    if recs.is_empty() {
        return Err(Error::Setting(format!("{stage} needs at least one {} record", split.name())));
    }
    Ok(recs)
}

fn plain_images(manifest: &Manifest, cfg: &RunConfig, recs: &[&Record], stage: &'static str) -> Result<Vec<LabeledImage<f32>>> {
    let dir = images_dir(cfg, ViewPreset::Plain);
    recs.iter()
        .map(|r| Ok(LabeledImage { image: load_view(&dir, r, 0, stage)?, label: manifest.class_index(r) }))
        .collect()
}

#[derive(Default)]
struct Log(String);

impl Log {
    fn new() -> Self {
        Log("epoch,split,loss,accuracy\n".into())
    }

    fn push(&mut self, epoch: usize, split: &str, s: &EpochStats) {
        let _ = writeln!(self.0, "{epoch},{split},{:.6},{:.6}", s.loss, s.accuracy);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Score {
    pub loss: f64,
    pub accuracy: f64,
}

impl From<EpochStats> for Score {
    fn from(s: EpochStats) -> Self {
        Score { loss: s.loss, accuracy: s.accuracy }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub final_train: Option<EpochStats>,
}

/// Trains the backbone on the plain view of the training split.
pub fn cmd_train(manifest: &Manifest, cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let train_recs = nonempty(records(manifest, Split::Train), Split::Train, "train")?;
    let train = plain_images(manifest, cfg, &train_recs, "train")?;
    let others: Vec<(Split, Vec<LabeledImage<f32>>)> = [Split::Val, Split::Test]
        .into_iter()
        .map(|s| Ok((s, plain_images(manifest, cfg, &records(manifest, s), "train")?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, d)| !d.is_empty())
        .collect();

    let tc = cfg.train_config();
    let config = SpnetConfig { classes: manifest.classes.len(), hidden: cfg.hidden, dropout_rate: tc.dropout_rate };
    let mut model = SpnetModel::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut log = Log::new();
    let mut eval_error = None;
    let history = fit(&mut model, &train, &tc, |m, stats| {
        log.push(stats.epoch, Split::Train.name(), stats);
        for (split, data) in &others {
            match evaluate(m, data) {
                Ok(s) => log.push(stats.epoch, split.name(), &s),
                Err(e) => eval_error = Some(e),
            }
        }
        eval_error.is_none() && cfg.train_stop_accuracy.is_none_or(|t| stats.accuracy < t)
    })?;
    if let Some(e) = eval_error {
        return Err(e.into());
    }
    write_spnw(&cfg.out.join(BACKBONE), &Checkpoint::backbone(model))?;
    write_atomic(&cfg.out.join("train_log.csv"), log.0.as_bytes())?;
    Ok(TrainSummary { epochs_run: history.len(), final_train: history.last().copied() })
}

/// Learns per-view weights on the training split with the backbone frozen
/// and keeps the `top_m` largest.
pub fn cmd_select(manifest: &Manifest, cfg: &RunConfig) -> Result<ViewBank> {
    cfg.validate()?;
    let ckpt = read_spnw(&require(cfg.out.join(BACKBONE), "select", "train")?)?;
    let recs = nonempty(records(manifest, Split::Train), Split::Train, "select")?;
    let dir = images_dir(cfg, ViewPreset::Full);
    let all: Vec<usize> = (0..cfg.bank_size).collect();
    let mut scores = Vec::with_capacity(recs.len());
    for rec in &recs {
        let views = load_views(&dir, rec, &all, "select")?;
        let s = view_scores(&ckpt.model, &views)?;
        scores.push(s.iter().map(|row| row.iter().map(|&v| v as f64).collect()).collect::<Vec<Vec<f64>>>());
    }
    let labels: Vec<usize> = recs.iter().map(|r| manifest.class_index(r)).collect();
    let mut bank = ViewBank::new(full_rotations()[..cfg.bank_size].to_vec());
    let tc = TrainConfig {
        learning_rate: cfg.select_learning_rate,
        epochs: cfg.select_epochs,
        dropout_rate: 0.0,
        ..cfg.train_config()
    };
    let (weights, history) = train_view_selection(&scores, &labels, &bank.weights, &tc)?;
    bank.weights = weights;
    bank.select(cfg.top_m)?;
    let mut log = Log::new();
    for s in &history {
        log.push(s.epoch, Split::Train.name(), s);
    }
    let out = Checkpoint { model: ckpt.model, bank: Some(bank.clone()), ensemble: None };
    write_spnw(&cfg.out.join(SELECTION), &out)?;
    write_atomic(&cfg.out.join("select_log.csv"), log.0.as_bytes())?;
    Ok(bank)
}

/// Image directory and view indices the ensemble consumes.
fn ensemble_views(cfg: &RunConfig, bank: Option<&ViewBank>, stage: &'static str) -> Result<(PathBuf, Vec<usize>)> {
    match cfg.views {
        EnsembleViews::Selected => {
            let bank = bank.filter(|b| !b.selected.is_empty());
            let bank = bank.ok_or(Error::StageDependency {
                stage,
                missing: cfg.out.join(SELECTION),
                producer: "select",
            })?;
            Ok((images_dir(cfg, ViewPreset::Full), bank.selected.clone()))
        }
        EnsembleViews::Preset(p) => Ok((images_dir(cfg, p), (0..p.rotations().len()).collect())),
    }
}

fn multiview_samples(
    manifest: &Manifest,
    recs: &[&Record],
    dir: &Path,
    views: &[usize],
    stage: &'static str,
) -> Result<Vec<MultiViewSample<f32>>> {
    recs.iter()
        .map(|r| Ok(MultiViewSample { views: load_views(dir, r, views, stage)?, label: manifest.class_index(r) }))
        .collect()
}

/// Trains the ensemble on the training split, starting from the backbone of
/// the previous stage.
pub fn cmd_ensemble(manifest: &Manifest, cfg: &RunConfig) -> Result<EnsembleModel<f32>> {
    cfg.validate()?;
    let source = match cfg.views {
        EnsembleViews::Selected => require(cfg.out.join(SELECTION), "ensemble", "select")?,
        EnsembleViews::Preset(_) => require(cfg.out.join(BACKBONE), "ensemble", "train")?,
    };
    let ckpt = read_spnw(&source)?;
    let (dir, views) = ensemble_views(cfg, ckpt.bank.as_ref(), "ensemble")?;
    let bank = match cfg.views {
        EnsembleViews::Selected => ckpt.bank.clone(),
        EnsembleViews::Preset(p) => {
            let mut b = ViewBank::new(p.rotations());
            b.selected = views.clone();
            Some(b)
        }
    };
    let recs = nonempty(records(manifest, Split::Train), Split::Train, "ensemble")?;
    let data = multiview_samples(manifest, &recs, &dir, &views, "ensemble")?;
    let tc = TrainConfig { epochs: cfg.ensemble_epochs, ..cfg.train_config() };
    let backbone = if cfg.ensemble_from_scratch {
        let config = SpnetConfig { dropout_rate: tc.dropout_rate, ..ckpt.model.config };
        SpnetModel::new(config, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
    } else {
        ckpt.model
    };
    let mut model = EnsembleModel::new(backbone, views.len(), cfg.aggregation)?;
    let history = train_ensemble(&mut model, &data, &tc, |_, s| cfg.ensemble_stop_accuracy.is_none_or(|t| s.accuracy < t))?;
    let mut log = Log::new();
    for s in &history {
        log.push(s.epoch, Split::Train.name(), s);
    }
    let head = EnsembleHead { aggregation: model.aggregation, view_weights: model.view_weights.clone() };
    let out = Checkpoint { model: model.backbone.clone(), bank, ensemble: Some(head) };
    write_spnw(&cfg.out.join(ENSEMBLE), &out)?;
    write_atomic(&cfg.out.join("ensemble_log.csv"), log.0.as_bytes())?;
    Ok(model)
}

fn load_ensemble(cfg: &RunConfig, stage: &'static str) -> Result<(EnsembleModel<f32>, PathBuf, Vec<usize>)> {
    let ckpt = read_spnw(&require(cfg.out.join(ENSEMBLE), stage, "ensemble")?)?;
    let head = ckpt.ensemble.ok_or_else(|| Error::Format {
        path: cfg.out.join(ENSEMBLE),
        msg: "checkpoint has no ensemble section".into(),
    })?;
    let (dir, views) = match (&cfg.views, &ckpt.bank) {
        (EnsembleViews::Selected, bank) => ensemble_views(cfg, bank.as_ref(), stage)?,
        (EnsembleViews::Preset(_), _) => ensemble_views(cfg, None, stage)?,
    };
    if views.len() != head.view_weights.len() {
        return Err(Error::Setting(format!(
            "ensemble has {} views but the configuration selects {}",
            head.view_weights.len(),
            views.len()
        )));
    }
    let model = EnsembleModel { backbone: ckpt.model, view_weights: head.view_weights, aggregation: head.aggregation };
    Ok((model, dir, views))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub split: &'static str,
    pub objects: usize,
    pub classes: usize,
    pub single_view: Score,
    pub ensemble: Option<EnsembleScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleScore {
    pub views: Vec<usize>,
    pub aggregation: &'static str,
    pub loss: f64,
    pub accuracy: f64,
}

fn eval_split(manifest: &Manifest) -> Split {
    if manifest.split(Split::Test).next().is_some() {
        Split::Test
    } else {
        Split::Val
    }
}

/// Test-split accuracy of the single-view backbone and, once trained, of
/// the ensemble.
pub fn cmd_eval(manifest: &Manifest, cfg: &RunConfig) -> Result<EvalMetrics> {
    cfg.validate()?;
    let ckpt = read_spnw(&require(cfg.out.join(BACKBONE), "eval", "train")?)?;
    let split = eval_split(manifest);
    let recs = nonempty(records(manifest, split), split, "eval")?;
    let single = evaluate(&ckpt.model, &plain_images(manifest, cfg, &recs, "eval")?)?;
    let ensemble = if cfg.out.join(ENSEMBLE).exists() {
        let (model, dir, views) = load_ensemble(cfg, "eval")?;
        let s = model.evaluate(&multiview_samples(manifest, &recs, &dir, &views, "eval")?)?;
        Some(EnsembleScore { views, aggregation: model.aggregation.name(), loss: s.loss, accuracy: s.accuracy })
    } else {
        None
    };
    let metrics = EvalMetrics {
        split: split.name(),
        objects: recs.len(),
        classes: manifest.classes.len(),
        single_view: single.into(),
        ensemble,
    };
    write_atomic(&cfg.out.join(METRICS), (serde_json::to_string_pretty(&metrics)? + "\n").as_bytes())?;
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalSummary {
    pub split: &'static str,
    pub metric: &'static str,
    pub objects: usize,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "NDCG")]
    pub ndcg: f64,
    pub micro_f: f64,
    pub macro_f: f64,
    pub accuracy: f64,
    pub within_class_distance: f64,
    pub between_class_distance: f64,
}

/// Ranks the test split against itself with ensemble descriptors.
pub fn cmd_retrieve(manifest: &Manifest, cfg: &RunConfig) -> Result<RetrievalSummary> {
    cfg.validate()?;
    let (model, dir, views) = load_ensemble(cfg, "retrieve")?;
    let split = eval_split(manifest);
    let recs = nonempty(records(manifest, split), split, "retrieve")?;
    let mut corpus = Vec::with_capacity(recs.len());
    let mut correct = 0usize;
    for rec in &recs {
        let label = manifest.class_index(rec);
        let scores = model.predict(&load_views(&dir, rec, &views, "retrieve")?)?;
        correct += (spnet_core::nn::argmax(&scores) == label) as usize;
        corpus.push(Descriptor::from_scores(rec.object_id.clone(), label, &scores));
    }
    let report = evaluate_retrieval(&corpus, cfg.metric);
    let mut csv = String::from("query_id,rank,target_id,distance\n");
    for list in &report.rankings {
        for (k, (&i, d)) in list.ranked.iter().zip(&list.distances).enumerate() {
            let _ = writeln!(csv, "{},{},{},{}", list.query_id, k + 1, corpus[i].object_id, d);
        }
    }
    write_atomic(&cfg.out.join(RANKINGS), csv.as_bytes())?;
    let sim = similarity_matrix(&corpus, cfg.metric);
    let (within, between) = sim.class_separation(&corpus);
    let img = sim.to_image();
    write_spdi(&cfg.out.join("similarity.spdi"), &img)?;
    write_atomic(&cfg.out.join("similarity.png"), &encode_png16(&img)?)?;
    let m = report.metrics;
    let summary = RetrievalSummary {
        split: split.name(),
        metric: cfg.metric.name(),
        objects: corpus.len(),
        map: m.map,
        ndcg: m.ndcg,
        micro_f: m.micro_f,
        macro_f: m.macro_f,
        accuracy: correct as f64 / corpus.len() as f64,
        within_class_distance: within,
        between_class_distance: between,
    };
    write_atomic(&cfg.out.join(RETRIEVAL), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub tensors: Vec<(String, usize, f64)>,
}

/// Finite-difference check of a fresh 10-class model on a random 16x16 image.
pub fn cmd_gradcheck(seed: u64) -> Result<GradCheckSummary> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SpnetModel::<f64>::new(SpnetConfig::new(10), &mut rng);
    let image = Tensor::from_vec(&[1, 16, 16], (0..256).map(|_| rng.gen::<f64>()).collect())?;
    let label = rng.gen_range(0..10);
    let report = grad_check(&model, &image, label, &GradCheckOptions { seed, ..GradCheckOptions::default() })?;
    Ok(GradCheckSummary {
        max_rel_error: report.max_rel_error,
        tolerance: report.tolerance,
        passed: report.passed(),
        tensors: report.tensors.iter().map(|t| (t.name.to_string(), t.checked, t.max_rel_error)).collect(),
    })
}
