//! Erase masks for the center, corner and side strategies, and the split of
//! an image into its kept surround and erased patch.
//!
//! Mask convention: `1` marks a kept surround pixel, `0` an erased one.
//! Erased pixels are zeroed in the raw 8-bit domain, so `surround + patch`
//! reproduces the original exactly.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::image::ImageTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EraseKind {
    Center,
    /// Variants 0..=3: top-left, top-right, bottom-left, bottom-right.
    Corner,
    /// Variants 0..=3: top, right, bottom, left.
    Side,
}

impl EraseKind {
    pub fn variant_count(self) -> u8 {
        match self {
            EraseKind::Center => 1,
            EraseKind::Corner | EraseKind::Side => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EraseKind::Center => "center",
            EraseKind::Corner => "corner",
            EraseKind::Side => "side",
        }
    }
}

/// One concrete erase rectangle rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EraseStrategy {
    pub kind: EraseKind,
    pub variant: u8,
    /// `(height, width)` of the erased rectangle.
    pub patch: (usize, usize),
}

/// Default patch: half of each side, rounded (16x16 at 32x32).
pub fn default_patch(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

impl EraseStrategy {
    pub fn new(kind: EraseKind, variant: u8, patch: (usize, usize)) -> Result<Self> {
        if variant >= kind.variant_count() {
            return Err(Error::InvalidArgument(format!(
                "{} has no variant {variant}",
                kind.name()
            )));
        }
        if patch.0 == 0 || patch.1 == 0 {
            return Err(Error::InvalidArgument("erase patch must be non-empty".into()));
        }
        Ok(Self { kind, variant, patch })
    }

    pub fn center(patch: (usize, usize)) -> Self {
        Self {
            kind: EraseKind::Center,
            variant: 0,
            patch,
        }
    }

    /// Top-left corner `(row, col)` of the erased rectangle.
    pub fn origin(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.patch;
        // a patch covering the whole image leaves no surround
        if ph > h || pw > w || (ph == h && pw == w) {
            return Err(Error::PatchOutOfBounds {
                patch_h: ph,
                patch_w: pw,
                h,
                w,
            });
        }
        let (mid_r, mid_c) = ((h - ph) / 2, (w - pw) / 2);
        let (last_r, last_c) = (h - ph, w - pw);
        Ok(match (self.kind, self.variant) {
            (EraseKind::Center, _) => (mid_r, mid_c),
            (EraseKind::Corner, 0) => (0, 0),
            (EraseKind::Corner, 1) => (0, last_c),
            (EraseKind::Corner, 2) => (last_r, 0),
            (EraseKind::Corner, _) => (last_r, last_c),
            (EraseKind::Side, 0) => (0, mid_c),
            (EraseKind::Side, 1) => (mid_r, last_c),
            (EraseKind::Side, 2) => (last_r, mid_c),
            (EraseKind::Side, _) => (mid_r, 0),
        })
    }
}

impl fmt::Display for EraseStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EraseKind::Center => f.write_str("center"),
            k => write!(f, "{}:{}", k.name(), self.variant),
        }
    }
}

/// Every variant of a strategy kind with the given patch size.
pub fn strategy_variants(kind: EraseKind, patch: (usize, usize)) -> Vec<EraseStrategy> {
    (0..kind.variant_count())
        .map(|variant| EraseStrategy { kind, variant, patch })
        .collect()
}

/// Strategy as written on the command line: `center`, `corner:0..3`,
/// `side:0..3`, or `corner:*` / `side:*` for all variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StrategySpec {
    pub kind: EraseKind,
    /// `None` selects every variant.
    pub variant: Option<u8>,
}

impl StrategySpec {
    pub const CENTER: StrategySpec = StrategySpec {
        kind: EraseKind::Center,
        variant: Some(0),
    };

    /// Concrete strategies for an `h x w` image with the default patch size.
    pub fn resolve(&self, h: usize, w: usize) -> Vec<EraseStrategy> {
        let patch = default_patch(h, w);
        match self.variant {
            Some(v) => vec![EraseStrategy {
                kind: self.kind,
                variant: v,
                patch,
            }],
            None => strategy_variants(self.kind, patch),
        }
    }

    pub fn is_multi(&self) -> bool {
        self.variant.is_none() && self.kind.variant_count() > 1
    }
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self::CENTER
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.variant) {
            (EraseKind::Center, _) => f.write_str("center"),
            (k, Some(v)) => write!(f, "{}:{v}", k.name()),
            (k, None) => write!(f, "{}:*", k.name()),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, variant) = match s.split_once(':') {
            Some((n, v)) => (n, Some(v)),
            None => (s, None),
        };
        let kind = match name {
            "center" => EraseKind::Center,
            "corner" => EraseKind::Corner,
            "side" => EraseKind::Side,
            _ => return Err(Error::InvalidArgument(format!("unknown erase strategy `{s}`"))),
        };
        let variant = match (kind, variant) {
            (EraseKind::Center, None) | (EraseKind::Center, Some("0")) => Some(0),
            (EraseKind::Center, Some(_)) => {
                return Err(Error::InvalidArgument(format!("center has no variants: `{s}`")))
            }
            (_, None) | (_, Some("*")) => None,
            (_, Some(v)) => {
                let v: u8 = v
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad variant in `{s}`")))?;
                if v >= kind.variant_count() {
                    return Err(Error::InvalidArgument(format!("variant out of range in `{s}`")));
                }
                Some(v)
            }
        };
        Ok(Self { kind, variant })
    }
}

/// Binary `H x W` mask: `1` keeps a pixel, `0` erases it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EraseMask {
    height: usize,
    width: usize,
    keep: Vec<u8>,
    strategy: EraseStrategy,
    erased: usize,
}

impl EraseMask {
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn strategy(&self) -> EraseStrategy {
        self.strategy
    }

    /// Row-major mask values.
    #[inline]
    pub fn values(&self) -> &[u8] {
        &self.keep
    }

    #[inline]
    pub fn is_kept(&self, y: usize, x: usize) -> bool {
        self.keep[y * self.width + x] == 1
    }

    #[inline]
    pub fn is_erased_index(&self, i: usize) -> bool {
        self.keep[i] == 0
    }

    /// Erased pixel count (`N_f`).
    #[inline]
    pub fn erased_count(&self) -> usize {
        self.erased
    }

    /// Kept pixel count (`N_r`).
    #[inline]
    pub fn kept_count(&self) -> usize {
        self.keep.len() - self.erased
    }

    /// Row-major indices of erased pixels.
    pub fn erased_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep.iter().enumerate().filter(|(_, &m)| m == 0).map(|(i, _)| i)
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep.iter().enumerate().filter(|(_, &m)| m == 1).map(|(i, _)| i)
    }
}

pub fn build_mask(strategy: EraseStrategy, h: usize, w: usize) -> Result<EraseMask> {
    let (r0, c0) = strategy.origin(h, w)?;
    let (ph, pw) = strategy.patch;
    let mut keep = vec![1u8; h * w];
    for y in r0..r0 + ph {
        keep[y * w + c0..y * w + c0 + pw].fill(0);
    }
    Ok(EraseMask {
        height: h,
        width: w,
        keep,
        strategy,
        erased: ph * pw,
    })
}

/// Surround (`x * m`) and erased patch (`x * (1 - m)`) of an image batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErasedPair {
    pub surround: ImageTensor,
    pub patch: ImageTensor,
    pub mask: EraseMask,
}

pub fn apply_mask(x: &ImageTensor, mask: &EraseMask) -> Result<ErasedPair> {
    let [n, c, h, w] = x.shape();
    crate::error::ensure_shape!("mask height", mask.height, h);
    crate::error::ensure_shape!("mask width", mask.width, w);
    let mut surround = x.data().to_vec();
    let mut patch = x.data().to_vec();
    for plane in 0..n * c {
        let s = &mut surround[plane * h * w..(plane + 1) * h * w];
        let p = &mut patch[plane * h * w..(plane + 1) * h * w];
        for ((sv, pv), &m) in s.iter_mut().zip(p.iter_mut()).zip(&mask.keep) {
            if m == 1 {
                *pv = 0;
            } else {
                *sv = 0;
            }
        }
    }
    Ok(ErasedPair {
        surround: ImageTensor::new(x.shape(), surround)?,
        patch: ImageTensor::new(x.shape(), patch)?,
        mask: mask.clone(),
    })
}

impl fmt::Display for EraseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl EraseMask {
    /// Renders the mask as rows of `1`/`0`, for diagnostics.
    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.keep.len() + self.height);
        for row in self.keep.chunks(self.width) {
            for &m in row {
                s.push(if m == 1 { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }
}

impl ErasedPair {
    pub fn strategy_name(&self) -> String {
        self.mask.strategy.to_string()
    }
}
