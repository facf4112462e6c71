//! Plain-text run configuration: one `key = value` per line, `#` starts a
//! comment. Unknown keys are rejected. [`RunConfig::template`] renders every
//! key with its default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use erasood_core::detect::DetectionConfig;
use erasood_core::entropy::EntropyConfig;
use erasood_core::uen::UenConfig;

use crate::formats::read_bytes;
use crate::uri::DatasetUri;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<DatasetUri>,
    pub checkpoint: Option<PathBuf>,
    pub id_scores: Option<PathBuf>,
    pub test_id_scores: Option<PathBuf>,
    pub test_ood_scores: Option<PathBuf>,
    pub out: PathBuf,
    /// Also carries the erase strategy used for scoring.
    pub uen: UenConfig,
    pub detection: DetectionConfig,
    pub entropy: EntropyConfig,
    pub kde_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            checkpoint: None,
            id_scores: None,
            test_id_scores: None,
            test_ood_scores: None,
            out: PathBuf::from("out"),
            uen: UenConfig::default(),
            detection: DetectionConfig::default(),
            entropy: EntropyConfig::default(),
            kde_steps: 256,
        }
    }
}

/// Every accepted key with its description.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "input dataset: idx:<path>, imgb:<path> or synth:<family>:<n>:<seed>"),
    ("checkpoint", "checkpoint to read; empty means <out>/checkpoint.uenc"),
    ("id_scores", "CSV of in-distribution scores (index,score)"),
    ("test_id_scores", "CSV of held-out in-distribution scores"),
    ("test_ood_scores", "CSV of out-of-distribution scores"),
    ("out", "output directory"),
    ("strategy", "erase strategy: center, corner:<0-3>, side:<0-3>, corner:*, side:*"),
    ("seed", "seed for initialization, shuffling and group sampling"),
    ("k_mixture", "logistic components per pixel"),
    ("lambda", "weight of the reconstruction loss"),
    ("lr", "Adam learning rate"),
    ("batch_size", "training batch size"),
    ("epochs", "maximum training epochs"),
    ("patience", "early-stopping window in epochs; 0 disables"),
    ("min_rel_improvement", "relative loss improvement required within the window"),
    ("branch_kernels", "kernel size of each encoder branch"),
    ("branch_widths", "output channels of the four convolutions of a branch"),
    ("decoder_width", "hidden channels of the decoder"),
    ("group_size", "test samples per group"),
    ("threshold", "KL threshold for per-group decisions, or none"),
    ("trials", "random group partitions per test-set draw"),
    ("testset_draws", "independent subsamples of the test pools"),
    ("test_samples", "maximum scores drawn from each test pool"),
    ("bins", "histogram bins of the entropy estimate"),
    ("alpha", "Laplace smoothing of the entropy estimate"),
    ("kde_steps", "points of the exported in-distribution density curve"),
];

fn list(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dataset" => self.dataset.as_ref().map_or_else(String::new, ToString::to_string),
            "checkpoint" => path_or_empty(&self.checkpoint),
            "id_scores" => path_or_empty(&self.id_scores),
            "test_id_scores" => path_or_empty(&self.test_id_scores),
            "test_ood_scores" => path_or_empty(&self.test_ood_scores),
            "out" => self.out.display().to_string(),
            "strategy" => self.uen.strategy.to_string(),
            "seed" => self.uen.seed.to_string(),
            "k_mixture" => self.uen.k_mixture.to_string(),
            "lambda" => self.uen.lambda.to_string(),
            "lr" => self.uen.lr.to_string(),
            "batch_size" => self.uen.batch_size.to_string(),
            "epochs" => self.uen.epochs.to_string(),
            "patience" => self.uen.patience.to_string(),
            "min_rel_improvement" => self.uen.min_rel_improvement.to_string(),
            "branch_kernels" => list(&self.uen.branch_kernels),
            "branch_widths" => list(&self.uen.branch_widths),
            "decoder_width" => self.uen.decoder_width.to_string(),
            "group_size" => self.detection.group_size.to_string(),
            "threshold" => self.detection.threshold.map_or_else(|| "none".into(), |t| t.to_string()),
            "trials" => self.detection.trials.to_string(),
            "testset_draws" => self.detection.testset_draws.to_string(),
            "test_samples" => self.detection.test_samples.to_string(),
            "bins" => self.entropy.bins.to_string(),
            "alpha" => self.entropy.alpha.to_string(),
            "kde_steps" => self.kde_steps.to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = if value.is_empty() { None } else { Some(value.parse()?) },
            "checkpoint" => self.checkpoint = optional_path(value),
            "id_scores" => self.id_scores = optional_path(value),
            "test_id_scores" => self.test_id_scores = optional_path(value),
            "test_ood_scores" => self.test_ood_scores = optional_path(value),
            "out" => self.out = PathBuf::from(value),
            "strategy" => {
                self.uen.strategy = value
                    .parse()
                    .map_err(|e: erasood_core::Error| Error::Config(format!("`strategy`: {e}")))?
            }
            "seed" => {
                self.uen.seed = parse(key, value)?;
                self.detection.seed = self.uen.seed;
            }
            "k_mixture" => self.uen.k_mixture = parse(key, value)?,
            "lambda" => self.uen.lambda = parse(key, value)?,
            "lr" => self.uen.lr = parse(key, value)?,
            "batch_size" => self.uen.batch_size = parse(key, value)?,
            "epochs" => self.uen.epochs = parse(key, value)?,
            "patience" => self.uen.patience = parse(key, value)?,
            "min_rel_improvement" => self.uen.min_rel_improvement = parse(key, value)?,
            "branch_kernels" => {
                self.uen.branch_kernels = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "branch_widths" => {
                let v: Vec<usize> = value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?;
                self.uen.branch_widths = v
                    .try_into()
                    .map_err(|_| Error::Config("`branch_widths` needs exactly four values".into()))?;
            }
            "decoder_width" => self.uen.decoder_width = parse(key, value)?,
            "group_size" => self.detection.group_size = parse(key, value)?,
            "threshold" => {
                self.detection.threshold = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "trials" => self.detection.trials = parse(key, value)?,
            "testset_draws" => self.detection.testset_draws = parse(key, value)?,
            "test_samples" => self.detection.test_samples = parse(key, value)?,
            "bins" => self.entropy.bins = parse(key, value)?,
            "alpha" => self.entropy.alpha = parse(key, value)?,
            "kde_steps" => self.kde_steps = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split_once('#').map_or(line, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config: "))))
    }

    /// Commented configuration listing every key at its current value.
    pub fn template(&self) -> String {
        let mut s = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("every documented key is readable");
            let _ = writeln!(s, "# {doc}\n{key} = {value}\n");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.uen.validate()?;
        self.detection.validate()?;
        self.entropy.validate()?;
        if self.kde_steps < 2 {
            return Err(Error::Config("`kde_steps` must be at least 2".into()));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join(crate::commands::CHECKPOINT_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_round_trips_defaults() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_text(&d.template()).unwrap(), d);
        d.validate().unwrap();
    }

    #[test]
    fn every_key_is_documented_and_settable() {
        let mut cfg = RunConfig::default();
        for (key, _) in KEYS {
            let v = cfg.get(key).unwrap();
            cfg.set(key, &v).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn parses_values_and_comments() {
        let cfg = RunConfig::from_text(
            "# training run\n\
             dataset = synth:complex:64:1   # small\n\
             epochs=3\n\
             lr = 1e-3\n\
             strategy = corner:*\n\
             branch_kernels = 3, 5\n\
             branch_widths = 4,8,4,2\n\
             threshold = 0.25\n\
             seed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.uen.epochs, 3);
        assert_eq!(cfg.uen.lr, 1e-3);
        assert_eq!(cfg.uen.branch_kernels, vec![3, 5]);
        assert_eq!(cfg.uen.branch_widths, [4, 8, 4, 2]);
        assert_eq!(cfg.detection.threshold, Some(0.25));
        assert_eq!((cfg.uen.seed, cfg.detection.seed), (9, 9));
        assert!(cfg.uen.strategy.is_multi());
        assert_eq!(cfg.dataset.unwrap().to_string(), "synth:complex:64:1");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in ["learning_rate = 1", "epochs = three", "no equals sign", "branch_widths = 1,2,3", "strategy = middle"] {
            let err = RunConfig::from_text(text).unwrap_err();
            assert!(matches!(err, Error::Config(ref m) if m.starts_with("line 1")), "{text}: {err}");
        }
        let cfg = RunConfig::from_text("group_size = 1").unwrap();
        assert!(cfg.validate().is_err());
    }
}
