//! `UENC` checkpoint encoding.
//!
//! ```text
//! "UENC" | version: u32 | payload_len: u64 | payload | crc32(payload): u32
//! ```
//!
//! All integers and floats are little-endian. The payload holds the
//! training configuration, the architecture descriptor (one entry per
//! convolution) and the parameters as `f32`, kernel then bias, layer by
//! layer. Strings are a `u32` byte length followed by UTF-8.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::erasing::StrategySpec;
use crate::uen::{LayerSpec, UenConfig, UenWeights};
use crate::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"UENC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in u32"));
    }

    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> core::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            FormatError::Malformed(format!("payload ends inside a field at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> core::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> core::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> core::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> core::result::Result<usize, FormatError> {
        Ok(self.u32()? as usize)
    }

    fn str(&mut self) -> core::result::Result<String, FormatError> {
        let n = self.usize()?;
        let bytes = self.take(n)?;
        core::str::from_utf8(bytes)
            .map(ToString::to_string)
            .map_err(|_| FormatError::Malformed("string is not UTF-8".into()))
    }
}

fn write_config(w: &mut Writer, cfg: &UenConfig) {
    w.usize(cfg.k_mixture);
    w.f64(cfg.lambda);
    w.f64(cfg.lr);
    w.usize(cfg.batch_size);
    w.usize(cfg.epochs);
    w.u64(cfg.seed);
    w.str(&cfg.strategy.to_string());
    w.usize(cfg.branch_kernels.len());
    for &k in &cfg.branch_kernels {
        w.usize(k);
    }
    for &c in &cfg.branch_widths {
        w.usize(c);
    }
    w.usize(cfg.decoder_width);
    w.usize(cfg.patience);
    w.f64(cfg.min_rel_improvement);
}

fn read_config(r: &mut Reader<'_>) -> core::result::Result<UenConfig, FormatError> {
    let k_mixture = r.usize()?;
    let lambda = r.f64()?;
    let lr = r.f64()?;
    let batch_size = r.usize()?;
    let epochs = r.usize()?;
    let seed = r.u64()?;
    let strategy: StrategySpec = r
        .str()?
        .parse()
        .map_err(|e: Error| FormatError::Malformed(format!("strategy: {e}")))?;
    let nk = r.usize()?;
    if nk > 64 {
        return Err(FormatError::DimensionOverflow(format!("{nk} branches")));
    }
    let branch_kernels = (0..nk).map(|_| r.usize()).collect::<core::result::Result<Vec<_>, _>>()?;
    let mut branch_widths = [0; 4];
    for c in branch_widths.iter_mut() {
        *c = r.usize()?;
    }
    Ok(UenConfig {
        k_mixture,
        lambda,
        lr,
        batch_size,
        epochs,
        seed,
        strategy,
        branch_kernels,
        branch_widths,
        decoder_width: r.usize()?,
        patience: r.usize()?,
        min_rel_improvement: r.f64()?,
    })
}

/// Serializes a configuration and its weights.
pub fn encode(cfg: &UenConfig, weights: &UenWeights<f32>) -> Result<Vec<u8>> {
    weights.check_matches(cfg)?;
    let mut p = Writer(Vec::new());
    write_config(&mut p, cfg);
    let arch = weights.architecture();
    p.usize(arch.len());
    for l in &arch {
        p.str(&l.name);
        for v in [l.c_out, l.c_in, l.k, l.stride, l.padding] {
            p.usize(v);
        }
    }
    let flat = weights.flatten();
    p.u64(flat.len() as u64);
    for v in flat {
        p.0.extend_from_slice(&v.to_le_bytes());
    }
    let payload = p.0;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

/// Parses and verifies a checkpoint: magic, version, length, checksum, then
/// the descriptor against the stored configuration.
pub fn decode(bytes: &[u8]) -> Result<(UenConfig, UenWeights<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated { needed: HEADER_LEN, available: bytes.len() }.into());
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(FormatError::BadMagic { expected: MAGIC, found }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { found: version, supported: VERSION }.into());
    }
    let payload_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let needed = usize::try_from(payload_len)
        .ok()
        .and_then(|p| p.checked_add(HEADER_LEN + 4))
        .ok_or_else(|| FormatError::DimensionOverflow(format!("payload length {payload_len}")))?;
    if bytes.len() < needed {
        return Err(FormatError::Truncated { needed, available: bytes.len() }.into());
    }
    if bytes.len() > needed {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - needed)).into());
    }
    let payload = &bytes[HEADER_LEN..needed - 4];
    let stored = u32::from_le_bytes(bytes[needed - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed }.into());
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let cfg = read_config(&mut r)?;
    cfg.validate()
        .map_err(|e| FormatError::Malformed(format!("stored configuration: {e}")))?;
    let layers = r.usize()?;
    let mut arch = Vec::with_capacity(layers.min(1024));
    for _ in 0..layers {
        let name = r.str()?;
        let mut dims = [0; 5];
        for d in dims.iter_mut() {
            *d = r.usize()?;
        }
        let [c_out, c_in, k, stride, padding] = dims;
        arch.push(LayerSpec { name, c_out, c_in, k, stride, padding });
    }
    if arch != cfg.architecture() {
        return Err(FormatError::Malformed("architecture descriptor does not match configuration".into()).into());
    }
    let count = r.u64()?;
    let expected: usize = arch.iter().map(|l| l.c_out * (l.c_in * l.k * l.k + 1)).sum();
    if count != expected as u64 {
        return Err(FormatError::Malformed(format!("{count} parameters, descriptor needs {expected}")).into());
    }
    let raw = r.take(expected * 4)?;
    if r.pos != payload.len() {
        return Err(FormatError::Malformed("unused payload bytes".into()).into());
    }
    let flat: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let weights = UenWeights::from_flat(&cfg, &flat)?;
    if !weights.all_finite() {
        return Err(FormatError::Malformed("non-finite parameter".into()).into());
    }
    Ok((cfg, weights))
}
