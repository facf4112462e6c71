//! On-disk formats: IDX image files (read only), IMGB image tensors, ZFEA
//! feature matrices and UENC checkpoints.
//!
//! ```text
//! IDX   0x00000803 | N | H | W (u32 BE)  | N*H*W bytes
//! IMGB  "IMGB" | version | N | C | H | W (u32 LE) | N*C*H*W bytes
//! ZFEA  "ZFEA" | version | N | D (u32 LE)     | N*D f32 LE
//! ```

use std::fs;
use std::path::Path;

use erasood_core::checkpoint;
use erasood_core::image::{ImageDataset, ImageTensor};
use erasood_core::uen::{UenConfig, UenWeights};
use erasood_core::FormatError;

use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IMGB_MAGIC: [u8; 4] = *b"IMGB";
pub const IMGB_VERSION: u32 = 1;
pub const ZFEA_MAGIC: [u8; 4] = *b"ZFEA";
pub const ZFEA_VERSION: u32 = 1;

type FormatResult<T> = std::result::Result<T, FormatError>;

fn truncated(needed: usize, available: usize) -> FormatError {
    FormatError::Truncated { needed, available }
}

fn u32_at(bytes: &[u8], at: usize, big_endian: bool) -> FormatResult<u32> {
    let b: [u8; 4] = bytes
        .get(at..at + 4)
        .ok_or_else(|| truncated(at + 4, bytes.len()))?
        .try_into()
        .expect("4 bytes");
    Ok(if big_endian { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) })
}

/// Product of the dimensions, failing instead of wrapping.
fn volume(dims: &[u32], unit: usize) -> FormatResult<usize> {
    dims.iter()
        .try_fold(unit, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&v| v <= isize::MAX as usize)
        .ok_or_else(|| FormatError::DimensionOverflow(format!("{dims:?} x {unit} bytes")))
}

fn exact_payload(bytes: &[u8], header: usize, payload: usize) -> FormatResult<&[u8]> {
    let needed = header
        .checked_add(payload)
        .ok_or_else(|| FormatError::DimensionOverflow(format!("payload of {payload} bytes")))?;
    if bytes.len() < needed {
        return Err(truncated(needed, bytes.len()));
    }
    if bytes.len() > needed {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - needed)));
    }
    Ok(&bytes[header..])
}

fn check_magic(bytes: &[u8], expected: [u8; 4]) -> FormatResult<()> {
    let found: [u8; 4] = bytes
        .get(..4)
        .ok_or_else(|| truncated(4, bytes.len()))?
        .try_into()
        .expect("4 bytes");
    if found != expected {
        return Err(FormatError::BadMagic { expected, found });
    }
    Ok(())
}

fn check_version(bytes: &[u8], supported: u32) -> FormatResult<()> {
    let found = u32_at(bytes, 4, false)?;
    if found != supported {
        return Err(FormatError::UnsupportedVersion { found, supported });
    }
    Ok(())
}

/// Parses an IDX unsigned-byte image file into `N x 1 x H x W`.
pub fn parse_idx_images(bytes: &[u8]) -> FormatResult<ImageTensor> {
    let magic = u32_at(bytes, 0, true)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(FormatError::BadMagic {
            expected: IDX_IMAGES_MAGIC.to_be_bytes(),
            found: magic.to_be_bytes(),
        });
    }
    let dims = [u32_at(bytes, 4, true)?, u32_at(bytes, 8, true)?, u32_at(bytes, 12, true)?];
    let len = volume(&dims, 1)?;
    let payload = exact_payload(bytes, 16, len)?;
    let [n, h, w] = dims.map(|d| d as usize);
    if n > 0 && (h == 0 || w == 0) {
        return Err(FormatError::Malformed(format!("{h}x{w} images")));
    }
    Ok(ImageTensor::new([n, 1, h, w], payload.to_vec()).expect("length checked"))
}

pub fn encode_imgb(images: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + images.data().len());
    out.extend_from_slice(&IMGB_MAGIC);
    out.extend_from_slice(&IMGB_VERSION.to_le_bytes());
    for d in images.shape() {
        let d = u32::try_from(d).expect("IMGB dimensions fit in u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(images.data());
    out
}

pub fn decode_imgb(bytes: &[u8]) -> FormatResult<ImageTensor> {
    check_magic(bytes, IMGB_MAGIC)?;
    check_version(bytes, IMGB_VERSION)?;
    let mut dims = [0u32; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32_at(bytes, 8 + 4 * i, false)?;
    }
    let payload = exact_payload(bytes, 24, volume(&dims, 1)?)?;
    Ok(ImageTensor::new(dims.map(|d| d as usize), payload.to_vec()).expect("length checked"))
}

/// Encodes equally long feature rows; `dim` is used when there are no rows.
pub fn encode_features(rows: &[Vec<f32>], dim: usize) -> erasood_core::Result<Vec<u8>> {
    let d = rows.first().map_or(dim, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(erasood_core::Error::ShapeMismatch {
            what: "feature row length",
            expected: d,
            found: bad.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + rows.len() * d * 4);
    out.extend_from_slice(&ZFEA_MAGIC);
    out.extend_from_slice(&ZFEA_VERSION.to_le_bytes());
    for v in [rows.len(), d] {
        let v = u32::try_from(v).map_err(|_| FormatError::DimensionOverflow(format!("{v} rows or columns")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in rows.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> FormatResult<Vec<Vec<f32>>> {
    check_magic(bytes, ZFEA_MAGIC)?;
    check_version(bytes, ZFEA_VERSION)?;
    let (n, d) = (u32_at(bytes, 8, false)?, u32_at(bytes, 12, false)?);
    let payload = exact_payload(bytes, 16, volume(&[n, d], 4)?)?;
    if d == 0 {
        return Ok(vec![Vec::new(); n as usize]);
    }
    Ok(payload
        .chunks_exact(d as usize * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        })
        .collect())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Read { path: path.to_owned(), source })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Write { path: path.to_owned(), source })
}

fn input_error(path: &Path) -> impl FnOnce(FormatError) -> Error + '_ {
    move |e| Error::Input { path: path.to_owned(), source: e.into() }
}

/// Loads an IDX image file as an RGB 32x32 dataset.
pub fn load_idx(path: &Path) -> Result<ImageDataset> {
    let images = parse_idx_images(&read_bytes(path)?).map_err(input_error(path))?;
    Ok(ImageDataset::conform(images, file_stem(path), format!("idx:{}", path.display()))?)
}

pub fn save_imgb(path: &Path, images: &ImageTensor) -> Result<()> {
    write_bytes(path, &encode_imgb(images))
}

/// Reads an IMGB tensor of any shape.
pub fn read_imgb(path: &Path) -> Result<ImageTensor> {
    decode_imgb(&read_bytes(path)?).map_err(input_error(path))
}

/// Reads an IMGB file as a dataset, replicating 1-channel data and resizing to 32x32.
pub fn load_imgb(path: &Path) -> Result<ImageDataset> {
    let images = read_imgb(path)?;
    ImageDataset::conform(images, file_stem(path), format!("imgb:{}", path.display()))
        .map_err(|source| Error::Input { path: path.to_owned(), source })
}

pub fn save_features(path: &Path, rows: &[Vec<f32>], dim: usize) -> Result<()> {
    write_bytes(path, &encode_features(rows, dim)?)
}

pub fn load_features(path: &Path) -> Result<Vec<Vec<f32>>> {
    decode_features(&read_bytes(path)?).map_err(input_error(path))
}

pub fn save_checkpoint(path: &Path, cfg: &UenConfig, weights: &UenWeights<f32>) -> Result<()> {
    write_bytes(path, &checkpoint::encode(cfg, weights)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(UenConfig, UenWeights<f32>)> {
    checkpoint::decode(&read_bytes(path)?).map_err(|source| Error::Input { path: path.to_owned(), source })
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}
