//! Group-level detection: a Gaussian KDE of in-distribution scores, disjoint
//! test groups, and a Monte-Carlo KL estimate per group used as the OOD score.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::format;
use alloc::vec::Vec;

use crate::metrics::{aupr, auroc, fpr_at_tpr, LabeledScores};
use crate::rng::{derive_seed, SeededRng};
use crate::{Error, Result};

pub const LOG_DENSITY_FLOOR: f64 = -27.631_021_115_928_547; // ln(1e-12)
const MIN_BANDWIDTH: f64 = 1e-6;
const TPR_TARGET: f64 = 0.95;

/// Gaussian kernel density estimate with a Silverman bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    /// Sorted ascending, so evaluation does not depend on input order.
    points: Vec<f64>,
    bandwidth: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule, `0.9 min(sd, IQR / 1.34) n^(-1/5)`, floored at
/// `1e-3 * range` and `1e-6` for degenerate samples.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let spread = var.sqrt().min(iqr / 1.34);
    let range = sorted[sorted.len() - 1] - sorted[0];
    (0.9 * spread * n.powf(-0.2)).max(1e-3 * range).max(MIN_BANDWIDTH)
}

pub fn fit_kde(scores: &[f64]) -> Result<KdeModel> {
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "density estimate needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut points = scores.to_vec();
    points.sort_by(f64::total_cmp);
    let bandwidth = silverman_bandwidth(&points);
    Ok(KdeModel { points, bandwidth })
}

impl KdeModel {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `ln((1 / (n h)) sum_i phi((x - p_i) / h))`, floored at `ln(1e-12)`.
    pub fn log_pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let mut max = f64::NEG_INFINITY;
        for &p in &self.points {
            let u = (x - p) / h;
            max = max.max(-0.5 * u * u);
        }
        let sum: f64 = self
            .points
            .iter()
            .map(|&p| {
                let u = (x - p) / h;
                (-0.5 * u * u - max).exp()
            })
            .sum();
        let n = self.points.len() as f64;
        let lp = max + sum.ln() - (n * h).ln() - 0.5 * (2.0 * core::f64::consts::PI).ln();
        lp.max(LOG_DENSITY_FLOOR)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Density sampled on `steps` evenly spaced points spanning the support
    /// widened by five bandwidths each side.
    pub fn curve(&self, steps: usize) -> Vec<(f64, f64)> {
        let lo = self.points[0] - 5.0 * self.bandwidth;
        let hi = self.points[self.points.len() - 1] + 5.0 * self.bandwidth;
        let dx = if steps > 1 { (hi - lo) / (steps - 1) as f64 } else { 0.0 };
        (0..steps)
            .map(|i| {
                let x = lo + dx * i as f64;
                (x, self.pdf(x))
            })
            .collect()
    }
}

/// `(1/gs) sum_j [ln p_test(L_j) - ln p_id(L_j)]` over the group's own scores.
pub fn kl_group(test_scores: &[f64], id_model: &KdeModel) -> Result<f64> {
    let test = fit_kde(test_scores)?;
    let total: f64 = test
        .points
        .iter()
        .map(|&l| test.log_pdf(l) - id_model.log_pdf(l))
        .sum();
    Ok(total / test.points.len() as f64)
}

/// Seeded disjoint partitions of `0..n` into `floor(n / gs)` groups per trial;
/// leftovers are dropped. Trial `t` shuffles with `derive_seed(seed, t)`.
pub fn make_groups(n: usize, gs: usize, seed: u64, trials: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    if gs == 0 || n < gs {
        return Err(Error::InvalidArgument(format!(
            "cannot form groups of {gs} from {n} scores"
        )));
    }
    Ok((0..trials)
        .map(|t| {
            let mut idx: Vec<usize> = (0..n).collect();
            SeededRng::new(derive_seed(seed, t as u64)).shuffle(&mut idx);
            idx.chunks_exact(gs).map(<[usize]>::to_vec).collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub group_size: usize,
    /// KL above this marks a group OOD; decisions are omitted when unset.
    pub threshold: Option<f64>,
    pub trials: usize,
    pub testset_draws: usize,
    /// Each draw subsamples at most this many scores from each test pool.
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            group_size: 10,
            threshold: None,
            trials: 5,
            testset_draws: 2,
            test_samples: 10_000,
            seed: 0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidArgument(format!("group size must be >= 2, got {}", self.group_size)));
        }
        if self.trials == 0 || self.testset_draws == 0 {
            return Err(Error::InvalidArgument("trials and draws must be >= 1".into()));
        }
        if self.test_samples < self.group_size {
            return Err(Error::InvalidArgument("test_samples must cover at least one group".into()));
        }
        if matches!(self.threshold, Some(t) if !t.is_finite()) {
            return Err(Error::NonFinite("threshold"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Id,
    Ood,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Id => "id",
            Origin::Ood => "ood",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRecord {
    /// `draw * trials + trial`
    pub trial: usize,
    pub group: usize,
    pub origin: Origin,
    pub kl: f64,
    pub decision: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub draw: usize,
    pub trial: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub config: DetectionConfig,
    pub id_bandwidth: f64,
    pub groups: Vec<GroupRecord>,
    pub runs: Vec<RunMetrics>,
    pub auroc: Summary,
    pub aupr: Summary,
    pub fpr95: Summary,
}

impl DetectionReport {
    /// KL values of one run, split by origin.
    pub fn run_scores(&self, run: usize) -> LabeledScores {
        let of = |o: Origin| -> Vec<f64> {
            self.groups
                .iter()
                .filter(|g| g.trial == run && g.origin == o)
                .map(|g| g.kl)
                .collect()
        };
        LabeledScores { pos: of(Origin::Ood), neg: of(Origin::Id) }
    }
}

fn subsample(pool: &[f64], limit: usize, seed: u64) -> Vec<f64> {
    if pool.len() <= limit {
        return pool.to_vec();
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    SeededRng::new(seed).shuffle(&mut idx);
    idx.truncate(limit);
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i]).collect()
}

/// Scores every group of both test pools against the ID density and
/// summarizes AUROC, AUPR and FPR at 95% TPR over draws and trials.
pub fn run_detection(
    id_scores: &[f64],
    test_id: &[f64],
    test_ood: &[f64],
    cfg: &DetectionConfig,
) -> Result<DetectionReport> {
    cfg.validate()?;
    if id_scores.is_empty() {
        return Err(Error::Empty("in-distribution scores"));
    }
    if test_id.is_empty() {
        return Err(Error::Empty("held-out in-distribution pool"));
    }
    if test_ood.is_empty() {
        return Err(Error::Empty("out-of-distribution pool"));
    }
    let id_model = fit_kde(id_scores)?;
    let mut groups = Vec::new();
    let mut runs = Vec::new();
    for draw in 0..cfg.testset_draws {
        let draw_seed = derive_seed(cfg.seed, draw as u64);
        let pools = [
            (Origin::Id, subsample(test_id, cfg.test_samples, derive_seed(draw_seed, 0)), 2),
            (Origin::Ood, subsample(test_ood, cfg.test_samples, derive_seed(draw_seed, 1)), 3),
        ];
        let mut per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.trials).map(|_| (Vec::new(), Vec::new())).collect();
        for (origin, pool, stream) in &pools {
            let parts = make_groups(pool.len(), cfg.group_size, derive_seed(draw_seed, *stream), cfg.trials)?;
            for (t, trial_groups) in parts.iter().enumerate() {
                for (g, members) in trial_groups.iter().enumerate() {
                    let scores: Vec<f64> = members.iter().map(|&i| pool[i]).collect();
                    let kl = kl_group(&scores, &id_model)?;
                    groups.push(GroupRecord {
                        trial: draw * cfg.trials + t,
                        group: g,
                        origin: *origin,
                        kl,
                        decision: cfg.threshold.map(|th| kl > th),
                    });
                    match origin {
                        Origin::Id => per_trial[t].1.push(kl),
                        Origin::Ood => per_trial[t].0.push(kl),
                    }
                }
            }
        }
        for (t, (pos, neg)) in per_trial.into_iter().enumerate() {
            let ls = LabeledScores::new(pos, neg)?;
            runs.push(RunMetrics {
                draw,
                trial: t,
                auroc: auroc(&ls)?,
                aupr: aupr(&ls)?,
                fpr95: fpr_at_tpr(&ls, TPR_TARGET)?,
            });
        }
    }
    let collect = |f: fn(&RunMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(DetectionReport {
        config: *cfg,
        id_bandwidth: id_model.bandwidth,
        auroc: collect(|r| r.auroc),
        aupr: collect(|r| r.aupr),
        fpr95: collect(|r| r.fpr95),
        groups,
        runs,
    })
}
