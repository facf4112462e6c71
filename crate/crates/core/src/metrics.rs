//! Threshold-free detection metrics. Positives are OOD; higher scores mean
//! "more OOD".

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Scores split by label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

impl LabeledScores {
    pub fn new(pos: Vec<f64>, neg: Vec<f64>) -> Result<Self> {
        let ls = Self { pos, neg };
        ls.validate()?;
        Ok(ls)
    }

    fn validate(&self) -> Result<()> {
        if self.pos.is_empty() {
            return Err(Error::Empty("positive scores"));
        }
        if self.neg.is_empty() {
            return Err(Error::Empty("negative scores"));
        }
        if self.pos.iter().chain(&self.neg).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(())
    }

    /// `(score, is_positive)` sorted by descending score.
    fn ranked(&self) -> Vec<(f64, bool)> {
        let mut all: Vec<(f64, bool)> = self
            .pos
            .iter()
            .map(|&s| (s, true))
            .chain(self.neg.iter().map(|&s| (s, false)))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        all
    }

    /// Cumulative `(tp, fp)` after each block of tied scores, highest first.
    fn blocks(&self) -> Vec<(usize, usize)> {
        let ranked = self.ranked();
        let mut out = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        let mut i = 0;
        while i < ranked.len() {
            let s = ranked[i].0;
            while i < ranked.len() && ranked[i].0 == s {
                if ranked[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            out.push((tp, fp));
        }
        out
    }
}

/// Mann-Whitney AUROC from tie-averaged ranks.
pub fn auroc(ls: &LabeledScores) -> Result<f64> {
    ls.validate()?;
    let mut ranked = ls.ranked();
    ranked.reverse();
    let (np, nn) = (ls.pos.len() as f64, ls.neg.len() as f64);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i;
        while j < ranked.len() && ranked[j].0 == ranked[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = ranked[i..j].iter().filter(|e| e.1).count();
        rank_sum += mean_rank * pos_in_block as f64;
        i = j;
    }
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Non-interpolated average precision with tied scores entering as one block.
pub fn aupr(ls: &LabeledScores) -> Result<f64> {
    ls.validate()?;
    let p = ls.pos.len() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in ls.blocks() {
        let recall = tp as f64 / p;
        if recall > prev_recall {
            ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
            prev_recall = recall;
        }
    }
    Ok(ap)
}

/// FPR at the highest threshold whose TPR reaches `tpr_target`
/// (a score `>= threshold` is called positive).
pub fn fpr_at_tpr(ls: &LabeledScores, tpr_target: f64) -> Result<f64> {
    ls.validate()?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::InvalidArgument(format!("tpr target must be in (0, 1], got {tpr_target}")));
    }
    let need = tpr_target * ls.pos.len() as f64 - 1e-9;
    let (_, fp) = ls
        .blocks()
        .into_iter()
        .find(|&(tp, _)| tp as f64 >= need)
        .expect("the last block contains every positive");
    Ok(fp as f64 / ls.neg.len() as f64)
}
