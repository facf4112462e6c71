//! One function per CLI subcommand. Each reads a [`RunConfig`], writes its
//! artifacts under `cfg.out` with fixed file names and returns the computed
//! values.

use std::fs;
use std::path::{Path, PathBuf};

use erasood_core::detect::{fit_kde, run_detection, DetectionReport};
use erasood_core::entropy::entropy_scores;
use erasood_core::image::{ImageDataset, ImageTensor};
use erasood_core::uen::{self, TrainOutcome};

use crate::config::RunConfig;
use crate::formats::{load_checkpoint, save_checkpoint, save_features, save_imgb};
use crate::report::{
    curve_csv, groups_csv, heatmap_csv, loss_header, loss_row, quantize, read_scores, report_json, scores_csv,
    write_json,
};
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.uenc";
pub const LOSS_FILE: &str = "loss.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const ENTROPY_FILE: &str = "entropy.csv";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_TXT_FILE: &str = "report.txt";
pub const KDE_FILE: &str = "kde.csv";
pub const HEATMAP_FILE: &str = "heatmap.imgb";
pub const HEATMAP_CSV_FILE: &str = "heatmap.csv";
pub const FEATURES_FILE: &str = "features.zfea";
pub const DATASET_FILE: &str = "dataset.imgb";

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|source| Error::Write { path: cfg.out.clone(), source })?;
    Ok(&cfg.out)
}

fn dataset(cfg: &RunConfig) -> Result<ImageDataset> {
    cfg.dataset
        .as_ref()
        .ok_or_else(|| Error::Config("`dataset` is not set".into()))?
        .load()
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

/// Trains on `dataset`; writes `checkpoint.uenc` and `loss.csv`. The loss
/// file is written even when training diverges.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let data = dataset(cfg)?;
    let out = out_dir(cfg)?;
    let mut log = loss_header();
    let mut history = Vec::new();
    let result = uen::train_with::<f32>(&cfg.uen, &data.images, |e| history.push(*e));
    for e in &history {
        loss_row(&mut log, e);
    }
    log.save(&out.join(LOSS_FILE))?;
    let outcome = result?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &cfg.uen, &outcome.weights)?;
    Ok(outcome)
}

/// Per-image generation loss (or, with `oracle`, the entropy estimate) to `scores.csv`.
pub fn score(cfg: &RunConfig, oracle: bool) -> Result<Vec<f64>> {
    let data = dataset(cfg)?;
    let (column, scores) = if oracle {
        ("entropy_bits", entropy_scores(&data.images, cfg.uen.strategy, &cfg.entropy)?)
    } else {
        let (_, w) = load_checkpoint(&cfg.checkpoint_path())?;
        ("le_bits", uen::score_dataset(&w, &data.images, cfg.uen.strategy)?)
    };
    scores_csv(column, &scores).save(&out_dir(cfg)?.join(SCORES_FILE))?;
    Ok(scores)
}

/// Group detection from three score CSVs; writes `report.csv`, `report.txt`
/// (JSON) and the in-distribution density curve `kde.csv`.
pub fn detect(cfg: &RunConfig) -> Result<DetectionReport> {
    cfg.detection.validate()?;
    let id = read_scores(required(&cfg.id_scores, "id_scores")?)?;
    let test_id = read_scores(required(&cfg.test_id_scores, "test_id_scores")?)?;
    let test_ood = read_scores(required(&cfg.test_ood_scores, "test_ood_scores")?)?;
    let report = run_detection(&id, &test_id, &test_ood, &cfg.detection)?;
    let out = out_dir(cfg)?;
    groups_csv(&report).save(&out.join(REPORT_CSV_FILE))?;
    write_json(&out.join(REPORT_TXT_FILE), &report_json(&report))?;
    curve_csv(&fit_kde(&id)?.curve(cfg.kde_steps)).save(&out.join(KDE_FILE))?;
    Ok(report)
}

/// Entropy estimate per image to `entropy.csv`.
pub fn entropy(cfg: &RunConfig) -> Result<Vec<f64>> {
    let data = dataset(cfg)?;
    let scores = entropy_scores(&data.images, cfg.uen.strategy, &cfg.entropy)?;
    scores_csv("entropy_bits", &scores).save(&out_dir(cfg)?.join(ENTROPY_FILE))?;
    Ok(scores)
}

/// Mean per-pixel log2 likelihood map. `heatmap.csv` holds the values;
/// `heatmap.imgb` is a `1 x 1 x H x W` rendering scaled to the full byte range.
pub fn heatmap(cfg: &RunConfig) -> Result<Vec<f64>> {
    let data = dataset(cfg)?;
    let (_, w) = load_checkpoint(&cfg.checkpoint_path())?;
    let map = uen::likelihood_heatmap(&w, &data.images, cfg.uen.strategy)?;
    let [_, _, h, wd] = data.images.shape();
    let out = out_dir(cfg)?;
    heatmap_csv(&map, wd).save(&out.join(HEATMAP_CSV_FILE))?;
    let image = ImageTensor::new([1, 1, h, wd], quantize(&map))?;
    save_imgb(&out.join(HEATMAP_FILE), &image)?;
    Ok(map)
}

/// Flattened uncertainty-space features per image to `features.zfea`.
pub fn features(cfg: &RunConfig) -> Result<Vec<Vec<f32>>> {
    let data = dataset(cfg)?;
    let (ucfg, w) = load_checkpoint(&cfg.checkpoint_path())?;
    let rows = uen::export_features(&w, &data.images, cfg.uen.strategy)?;
    let [_, _, h, wd] = data.images.shape();
    save_features(&out_dir(cfg)?.join(FEATURES_FILE), &rows, ucfg.z_channels() * h * wd)?;
    Ok(rows)
}

/// Materializes `dataset` as `dataset.imgb`.
pub fn synth(cfg: &RunConfig) -> Result<ImageDataset> {
    let data = dataset(cfg)?;
    save_imgb(&out_dir(cfg)?.join(DATASET_FILE), &data.images)?;
    Ok(data)
}
