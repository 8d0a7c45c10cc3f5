//! Binary tensor dump format.
//!
//! ```text
//! magic    8 bytes  "BF16EMU1"
//! version  u32 LE
//! tag      u8       0 = fp32, 1 = bf16, 2 = fp16
//! rank     u32 LE
//! extents  u64 LE × rank
//! payload  f32 LE × product(extents)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Tensor;
use crate::numerics::Precision;

pub const DUMP_MAGIC: &[u8; 8] = b"BF16EMU1";
pub const DUMP_VERSION: u32 = 1;

const MAX_RANK: u32 = 16;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a tensor dump (bad magic {0:02x?})")]
    BadMagic([u8; 8]),
    #[error("unsupported dump version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
}

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<(), DumpError> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&[t.tag().code()])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), DumpError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DumpError::MalformedHeader(format!("file ends inside {what}")),
        _ => DumpError::Io(e),
    })
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor, DumpError> {
    let mut magic = [0u8; 8];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != DUMP_MAGIC {
        return Err(DumpError::BadMagic(magic));
    }
    let mut word = [0u8; 4];
    read_exact_or(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != DUMP_VERSION {
        return Err(DumpError::UnsupportedVersion(version));
    }
    let mut tag = [0u8; 1];
    read_exact_or(&mut r, &mut tag, "tag")?;
    let tag = Precision::from_code(tag[0])
        .ok_or_else(|| DumpError::MalformedHeader(format!("unknown tag {}", tag[0])))?;
    read_exact_or(&mut r, &mut word, "rank")?;
    let rank = u32::from_le_bytes(word);
    if rank > MAX_RANK {
        return Err(DumpError::MalformedHeader(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut count: usize = 1;
    for _ in 0..rank {
        let mut ext = [0u8; 8];
        read_exact_or(&mut r, &mut ext, "extents")?;
        let d = u64::from_le_bytes(ext);
        let d = usize::try_from(d)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| DumpError::MalformedHeader(format!("invalid extent {d}")))?;
        count = count
            .checked_mul(d)
            .filter(|c| c.checked_mul(4).is_some())
            .ok_or_else(|| DumpError::MalformedHeader("element count overflows".into()))?;
        shape.push(d);
    }

    let expected = count * 4;
    let mut payload = Vec::new();
    r.take(expected as u64 + 1).read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(DumpError::TruncatedPayload { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(DumpError::MalformedHeader("trailing bytes after payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::with_tag(shape, data, tag).map_err(|e| DumpError::MalformedHeader(e.to_string()))
}

pub fn dump_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<(), DumpError> {
    write_tensor(BufWriter::new(File::create(path)?), t)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor, DumpError> {
    read_tensor(BufReader::new(File::open(path)?))
}
