//! Binary checkpoint encoding.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "WAKD"
//!      4     4  version (u32, = 1)
//!      8     8  iteration (u64)
//!     16     8  param_count (u64)
//!     24  4·n   values (IEEE-754 f32)
//! ```
//!
//! Every integer and float is little-endian.

use super::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::ParamVector;

pub const MAGIC: &[u8; 4] = b"WAKD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

pub fn encode(checkpoint: &Checkpoint) -> Vec<u8> {
    let values = checkpoint.params.as_slice();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&checkpoint.iteration.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_error(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        field,
        detail: detail.into(),
    }
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize, field: &'static str) -> Result<&'a [u8]> {
    bytes.get(at..at + len).ok_or_else(|| {
        format_error(
            field,
            format!("truncated: need bytes {at}..{}, file has {}", at + len, bytes.len()),
        )
    })
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let magic = take(bytes, 0, 4, "magic")?;
    if magic != MAGIC {
        return Err(format_error("magic", format!("expected \"WAKD\", found {magic:02x?}")));
    }
    let version = u32::from_le_bytes(take(bytes, 4, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(format_error("version", format!("unsupported version {version}")));
    }
    let iteration = u64::from_le_bytes(take(bytes, 8, 8, "iteration")?.try_into().unwrap());
    let count = u64::from_le_bytes(take(bytes, 16, 8, "param_count")?.try_into().unwrap());
    let expected = usize::try_from(count)
        .ok()
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| format_error("param_count", format!("implausible count {count}")))?;
    if bytes.len() < expected {
        return Err(format_error(
            "values",
            format!("truncated: {count} values need {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_error(
            "values",
            format!("{} trailing bytes after {count} values", bytes.len() - expected),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        iteration,
        params: ParamVector::new(values),
    })
}
