//! Versioned binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PVCNNCKP"
//! 8       4     u32 format version (1)
//! 12      8     u64 total file length in bytes, trailer included
//! 20      2+n   u16 length + UTF-8 architecture id
//!         4     u32 class count
//!         12    u32 x3 input shape C, H, W
//!         4     u32 normalization channel count k
//!         4k    f32 x k channel means
//!         4k    f32 x k channel stds
//!         4     u32 tensor count t
//!         t x   tensor table: u16 length + UTF-8 name, u8 rank, u32 x rank extents
//!         ...   tensor data: f32 values of each table entry, in table order
//!         4     u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Decoding checks, in order: length for the fixed header, magic, version,
//! declared length against actual length, CRC, then structure.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{ArchId, Model, ModelError};
use crate::preprocess::ChannelStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PVCNNCKP";
pub const FORMAT_VERSION: u32 = 1;
const FIXED_HEADER: usize = 20;
const TRAILER: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated checkpoint: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("checkpoint holds architecture {found}, expected {expected}")]
    ArchMismatch { expected: ArchId, found: ArchId },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint describes an invalid model: {0}")]
    Model(#[from] ModelError),
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

fn put_u16(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u16).to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u16(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes every parameter, buffer and the normalization constants.
pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
    put_str(&mut out, model.arch().as_str());
    put_u32(&mut out, model.num_classes());
    for d in model.input_shape() {
        put_u32(&mut out, d);
    }
    let norm = model.normalization();
    put_u32(&mut out, norm.mean.len());
    for v in norm.mean.iter().chain(&norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let tensors = model.named_tensors();
    put_u32(&mut out, tensors.len());
    for (name, t) in &tensors {
        put_str(&mut out, name);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
    }
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let total = (out.len() + TRAILER) as u64;
    out[12..20].copy_from_slice(&total.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed("field runs past the end of the data section"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<&'a str, CheckpointError> {
        let n = self.u16()?;
        core::str::from_utf8(self.take(n)?).map_err(|_| malformed("name is not UTF-8"))
    }
}

/// Validates the container and returns the bytes covered by the checksum.
fn verify(bytes: &[u8]) -> Result<&[u8], CheckpointError> {
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated {
            expected: FIXED_HEADER + TRAILER,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated {
            expected: FIXED_HEADER + TRAILER,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    if bytes.len() < FIXED_HEADER + TRAILER {
        return Err(CheckpointError::Truncated {
            expected: FIXED_HEADER + TRAILER,
            found: bytes.len(),
        });
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if (bytes.len() as u64) < declared {
        return Err(CheckpointError::Truncated {
            expected: declared as usize,
            found: bytes.len(),
        });
    }
    if bytes.len() as u64 > declared {
        return Err(malformed("trailing bytes after checksum"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    Ok(body)
}

/// Parses a checkpoint into an `f32` model.
pub fn decode(bytes: &[u8]) -> Result<Model<f32>, CheckpointError> {
    decode_inner(bytes, None)
}

/// Like [`decode`], but fails with [`CheckpointError::ArchMismatch`] unless
/// the checkpoint holds `expected`.
pub fn decode_as(bytes: &[u8], expected: ArchId) -> Result<Model<f32>, CheckpointError> {
    decode_inner(bytes, Some(expected))
}

fn decode_inner(bytes: &[u8], expected: Option<ArchId>) -> Result<Model<f32>, CheckpointError> {
    let body = verify(bytes)?;
    let mut r = Reader {
        buf: body,
        pos: FIXED_HEADER,
    };
    let arch: ArchId = r
        .string()?
        .parse()
        .map_err(|e: crate::model::ParseArchError| malformed(alloc::format!("{e}")))?;
    if let Some(expected) = expected {
        if arch != expected {
            return Err(CheckpointError::ArchMismatch {
                expected,
                found: arch,
            });
        }
    }
    let num_classes = r.u32()?;
    let input_shape = [r.u32()?, r.u32()?, r.u32()?];
    let k = r.u32()?;
    if k != input_shape[0] {
        return Err(malformed("normalization channel count differs from input channels"));
    }
    let mean = (0..k).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    let std = (0..k).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;

    let mut model = Model::<f32>::build(arch, num_classes, input_shape, 0)?;
    model.set_normalization(ChannelStats { mean, std });

    let count = r.u32()?;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        table.push((name, shape));
    }
    let mut slots = model.named_tensors_mut();
    if slots.len() != table.len() {
        return Err(malformed(alloc::format!(
            "{} tensors stored, {arch} has {}",
            table.len(),
            slots.len()
        )));
    }
    for ((name, shape), (slot_name, slot)) in table.iter().zip(slots.iter_mut()) {
        if name != slot_name || shape.as_slice() != slot.shape() {
            return Err(malformed(alloc::format!(
                "tensor `{name}` {shape:?} does not match `{slot_name}` {:?}",
                slot.shape()
            )));
        }
        let data = (0..slot.len()).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        **slot = Tensor::new(shape, data).map_err(|e| malformed(alloc::format!("{e}")))?;
    }
    drop(slots);
    if r.pos != body.len() {
        return Err(malformed("unread bytes after tensor data"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Mode};

    fn sample_model() -> Model<f32> {
        let mut m = build_model(ArchId::Ablated2Conv, 4, [3, 16, 16], 11).unwrap();
        let batch = Tensor::<f32>::from_fn(&[2, 3, 16, 16], |i| (i % 13) as f32 / 13.0);
        // move the running statistics away from their defaults
        m.forward(&batch, Mode::Train).unwrap();
        m.set_mode(Mode::Inference);
        m.set_normalization(ChannelStats {
            mean: alloc::vec![0.4, 0.5, 0.6],
            std: alloc::vec![0.2, 0.25, 0.3],
        });
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = sample_model();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back.arch(), m.arch());
        assert_eq!(back.normalization(), m.normalization());
        for ((na, ta), (nb, tb)) in m.named_tensors().into_iter().zip(back.named_tensors()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{na}");
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = encode(&sample_model());
        let i = bytes.len() - 100;
        bytes[i] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(CheckpointError::ChecksumMismatch { .. })));
    }

    #[test]
    fn distinct_structural_errors() {
        let bytes = encode(&sample_model());
        assert!(matches!(
            decode(&bytes[..bytes.len() - 10]),
            Err(CheckpointError::Truncated { .. })
        ));
        assert!(matches!(decode(&bytes[..5]), Err(CheckpointError::Truncated { .. })));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert_eq!(decode(&bad_magic), Err(CheckpointError::BadMagic));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert_eq!(decode(&v2), Err(CheckpointError::VersionMismatch { found: 2 }));
    }

    #[test]
    fn arch_mismatch_is_reported() {
        let m = build_model(ArchId::EspinosaBinary, 2, [3, 32, 32], 1).unwrap();
        let bytes = encode(&m);
        assert_eq!(
            decode_as(&bytes, ArchId::Proposed3Conv),
            Err(CheckpointError::ArchMismatch {
                expected: ArchId::Proposed3Conv,
                found: ArchId::EspinosaBinary
            })
        );
        assert!(decode_as(&bytes, ArchId::EspinosaBinary).is_ok());
    }
}
