//! CSV and JSON writers for scores, loss histories, detection reports and heatmaps.

use std::path::Path;

use erasood_core::detect::{DetectionReport, Summary};
use erasood_core::uen::EpochLoss;
use serde_json::{json, Value};

use crate::formats::write_bytes;
use crate::{Error, Result};

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_owned(), source }
}

/// Buffers rows in memory and writes the file in one go.
pub struct CsvOut {
    inner: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new(header: &[&str]) -> Self {
        let mut inner = csv::Writer::from_writer(Vec::new());
        inner.write_record(header).expect("writing to memory");
        Self { inner }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).expect("writing to memory");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.inner.into_inner().expect("writing to memory")
    }

    pub fn save(self, path: &Path) -> Result<()> {
        write_bytes(path, &self.into_bytes())
    }
}

/// `index,<column>` with one row per score.
pub fn scores_csv(column: &str, scores: &[f64]) -> CsvOut {
    let mut out = CsvOut::new(&["index", column]);
    for (i, s) in scores.iter().enumerate() {
        out.row([i.to_string(), s.to_string()]);
    }
    out
}

/// Reads the second column of a headed score CSV.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Read { path: path.to_owned(), source })?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    let mut scores = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error(path))?;
        let bad = || Error::Config(format!("{}: row {}: expected index,score", path.display(), line + 1));
        let v: f64 = rec.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        scores.push(v);
    }
    Ok(scores)
}

pub fn loss_header() -> CsvOut {
    CsvOut::new(&["epoch", "L_total", "L_r", "L_e"])
}

pub fn loss_row(out: &mut CsvOut, e: &EpochLoss) {
    out.row([
        e.epoch.to_string(),
        e.losses.total.to_string(),
        e.losses.r.to_string(),
        e.losses.e.to_string(),
    ]);
}

/// `trial,group,origin,kl,decision`; the decision column is empty without a threshold.
pub fn groups_csv(report: &DetectionReport) -> CsvOut {
    let mut out = CsvOut::new(&["trial", "group", "origin", "kl", "decision"]);
    for g in &report.groups {
        out.row([
            g.trial.to_string(),
            g.group.to_string(),
            g.origin.name().to_string(),
            g.kl.to_string(),
            g.decision.map_or_else(String::new, |d| d.to_string()),
        ]);
    }
    out
}

fn summary(s: Summary) -> Value {
    json!({ "mean": s.mean, "std": s.std })
}

pub fn report_json(report: &DetectionReport) -> Value {
    let c = &report.config;
    json!({
        "config": {
            "group_size": c.group_size,
            "threshold": c.threshold,
            "trials": c.trials,
            "testset_draws": c.testset_draws,
            "test_samples": c.test_samples,
            "seed": c.seed,
        },
        "id_bandwidth": report.id_bandwidth,
        "groups": report.groups.len(),
        "auroc": summary(report.auroc),
        "aupr": summary(report.aupr),
        "fpr95": summary(report.fpr95),
        "runs": report.runs.iter().map(|r| json!({
            "draw": r.draw,
            "trial": r.trial,
            "auroc": r.auroc,
            "aupr": r.aupr,
            "fpr95": r.fpr95,
        })).collect::<Vec<_>>(),
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn curve_csv(curve: &[(f64, f64)]) -> CsvOut {
    let mut out = CsvOut::new(&["score", "density"]);
    for (x, y) in curve {
        out.row([x.to_string(), y.to_string()]);
    }
    out
}

pub fn heatmap_csv(values: &[f64], width: usize) -> CsvOut {
    let mut out = CsvOut::new(&["y", "x", "log2_likelihood"]);
    for (i, v) in values.iter().enumerate() {
        out.row([(i / width).to_string(), (i % width).to_string(), v.to_string()]);
    }
    out
}

/// Linear map of `values` onto `0..=255`, minimum to 0 and maximum to 255.
pub fn quantize(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect()
}
