use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use erasood_core::image::ImageDataset;
use erasood_core::synth::{self, SynthFamily};

use crate::formats::{load_idx, load_imgb};
use crate::{Error, Result};

/// Where a dataset comes from: `idx:<path>`, `imgb:<path>` or
/// `synth:<family>:<n>:<seed>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetUri {
    Idx(PathBuf),
    Imgb(PathBuf),
    Synth { family: SynthFamily, n: usize, seed: u64 },
}

impl DatasetUri {
    pub fn load(&self) -> Result<ImageDataset> {
        match self {
            DatasetUri::Idx(p) => load_idx(p),
            DatasetUri::Imgb(p) => load_imgb(p),
            DatasetUri::Synth { family, n, seed } => Ok(synth::dataset(*family, *n, *seed)),
        }
    }
}

impl FromStr for DatasetUri {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("dataset `{s}`: {why}"));
        let (scheme, rest) = s.split_once(':').ok_or_else(|| bad("expected <scheme>:<...>"))?;
        match scheme {
            "idx" | "imgb" if rest.is_empty() => Err(bad("missing path")),
            "idx" => Ok(DatasetUri::Idx(rest.into())),
            "imgb" => Ok(DatasetUri::Imgb(rest.into())),
            "synth" => {
                let parts: Vec<&str> = rest.split(':').collect();
                let [family, n, seed] = parts[..] else {
                    return Err(bad("expected synth:<family>:<n>:<seed>"));
                };
                let family = family.parse().map_err(|e| bad(&format!("{e}")))?;
                let n: usize = n.parse().map_err(|_| bad("count is not an integer"))?;
                if n == 0 {
                    return Err(bad("count must be at least 1"));
                }
                let seed = seed.parse().map_err(|_| bad("seed is not an integer"))?;
                Ok(DatasetUri::Synth { family, n, seed })
            }
            _ => Err(bad("unknown scheme (idx, imgb, synth)")),
        }
    }
}

impl fmt::Display for DatasetUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetUri::Idx(p) => write!(f, "idx:{}", p.display()),
            DatasetUri::Imgb(p) => write!(f, "imgb:{}", p.display()),
            DatasetUri::Synth { family, n, seed } => write!(f, "synth:{family}:{n}:{seed}"),
        }
    }
}
