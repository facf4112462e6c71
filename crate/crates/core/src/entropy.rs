//! Histogram estimate of the conditional entropy of an erased patch given its surround.
//!
//! Per channel, the patch's value histogram `P_B` is scored against the
//! Laplace-smoothed surround histogram, `H = -sum_v P_B(v) log2 P(v | A)`,
//! and the result is averaged over channels. Values fall into bin
//! `floor(v * bins / 256)`.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::erasing::{build_mask, EraseMask, StrategySpec};
use crate::image::{ImageRef, ImageTensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyConfig {
    pub bins: usize,
    pub alpha: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { bins: 32, alpha: 1.0 }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.bins) {
            return Err(Error::InvalidArgument(format!("bins must be in [2, 256], got {}", self.bins)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    #[inline]
    pub fn bin(&self, v: u8) -> usize {
        v as usize * self.bins / 256
    }

    /// Largest value the estimate can take for a surround of `kept` pixels.
    pub fn upper_bound(&self, kept: usize) -> f64 {
        ((kept as f64 + self.alpha * self.bins as f64) / self.alpha).log2()
    }
}

/// Conditional entropy estimate in bits for one image.
pub fn conditional_entropy(x: ImageRef<'_>, mask: &EraseMask, cfg: &EntropyConfig) -> Result<f64> {
    cfg.validate()?;
    crate::error::ensure_shape!("mask height", x.height, mask.height());
    crate::error::ensure_shape!("mask width", x.width, mask.width());
    let (nf, nr) = (mask.erased_count(), mask.kept_count());
    if nf == 0 {
        return Err(Error::Empty("erased patch"));
    }
    if nr == 0 {
        return Err(Error::Empty("surround"));
    }
    if x.channels == 0 {
        return Err(Error::Empty("image channels"));
    }
    let plane = x.height * x.width;
    let mut patch = vec![0usize; cfg.bins];
    let mut surround = vec![0usize; cfg.bins];
    let denom = nr as f64 + cfg.alpha * cfg.bins as f64;
    let mut total = 0.0;
    for c in 0..x.channels {
        patch.fill(0);
        surround.fill(0);
        let values = &x.data[c * plane..(c + 1) * plane];
        for (&v, &m) in values.iter().zip(mask.values()) {
            let b = cfg.bin(v);
            if m == 0 {
                patch[b] += 1;
            } else {
                surround[b] += 1;
            }
        }
        let h: f64 = patch
            .iter()
            .zip(&surround)
            .filter(|(&p, _)| p > 0)
            .map(|(&p, &s)| -(p as f64 / nf as f64) * ((s as f64 + cfg.alpha) / denom).log2())
            .sum();
        total += h;
    }
    Ok(total / x.channels as f64)
}

/// Per-image entropy; multi-variant strategies average over their variants.
pub fn entropy_scores(images: &ImageTensor, strategy: StrategySpec, cfg: &EntropyConfig) -> Result<Vec<f64>> {
    let [_, _, h, w] = images.shape();
    let masks = strategy
        .resolve(h, w)
        .into_iter()
        .map(|s| build_mask(s, h, w))
        .collect::<Result<Vec<_>>>()?;
    images
        .iter()
        .map(|im| {
            let mut acc = 0.0;
            for m in &masks {
                acc += conditional_entropy(im, m, cfg)?;
            }
            Ok(acc / masks.len() as f64)
        })
        .collect()
}
