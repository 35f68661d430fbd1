//! Binary checkpoint format for named parameter tensors. Little-endian
//! throughout; f64 payloads round-trip bit-exactly.
//!
//! Layout: 8-byte magic, u32 version, u32 tensor count, then per tensor
//! a u32 name length, the UTF-8 name, u32 rank, u32 dims, and the row-major
//! f64 data.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"DRYCKPT1";
pub const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Decode {
                what: format!("checkpoint truncated reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Serializes named tensors in the given order.
pub fn encode(names: &[String], tensors: &[&Tensor]) -> Vec<u8> {
    assert_eq!(names.len(), tensors.len(), "one name per tensor");
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, names.len() as u32);
    for (name, t) in names.iter().zip(tensors) {
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            push_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint back into named tensors.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::Decode {
            what: "not a checkpoint file (bad magic)".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Decode {
            what: format!("checkpoint version {version} unsupported (expected {VERSION})"),
        });
    }
    let count = c.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = c.u32("name length")? as usize;
        let name = core::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::Decode {
                what: format!("tensor {i} name is not UTF-8"),
            })?
            .into();
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 8, "tensor data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Decode {
            what: format!("{} trailing bytes after checkpoint payload", bytes.len() - c.pos),
        });
    }
    Ok(out)
}

/// Copies decoded tensors into live parameters, insisting that names,
/// order, and shapes all match the receiving model.
pub fn apply(
    decoded: Vec<(String, Tensor)>,
    names: &[String],
    params: &mut [&mut Tensor],
) -> Result<()> {
    if decoded.len() != names.len() {
        return Err(Error::Decode {
            what: format!(
                "checkpoint holds {} tensors but the model has {}",
                decoded.len(),
                names.len()
            ),
        });
    }
    // Validate everything before mutating anything.
    for ((name, t), (want, have)) in decoded.iter().zip(names.iter().zip(params.iter())) {
        if name != want {
            return Err(Error::Decode {
                what: format!("checkpoint tensor '{name}' where model expects '{want}'"),
            });
        }
        if t.shape() != have.shape() {
            return Err(Error::Decode {
                what: format!(
                    "shape mismatch for '{name}': checkpoint {:?}, model {:?}",
                    t.shape(),
                    have.shape()
                ),
            });
        }
    }
    for ((_, t), p) in decoded.into_iter().zip(params.iter_mut()) {
        **p = t;
    }
    Ok(())
}
