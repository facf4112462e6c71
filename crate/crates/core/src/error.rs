use alloc::string::String;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("erase patch {patch_h}x{patch_w} does not fit a {h}x{w} image")]
    PatchOutOfBounds {
        patch_h: usize,
        patch_w: usize,
        h: usize,
        w: usize,
    },
    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Errors raised while decoding a binary file format.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated data: needed {needed} bytes, only {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("malformed data: {0}")]
    Malformed(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! ensure_shape {
    ($what:expr, $expected:expr, $found:expr) => {{
        let (e, f) = ($expected, $found);
        if e != f {
            return Err($crate::Error::ShapeMismatch {
                what: $what,
                expected: e,
                found: f,
            });
        }
    }};
}
pub(crate) use ensure_shape;
