//! Append-only spill file for bank contents.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! header   "KVBK" | version u32 | layers u32 | patch_count u32 | kv_dim u32
//! record   tag u32, then
//!   tag 1  segment marker: segment u32 | frames u32
//!   tag 2  block: layer u32 | segment u32 | slot u32 | stream_pos u64
//!                 | keys f32[P²·D'] | values f32[P²·D'] | rep_key f32[D']
//! ```
//!
//! `slot` is the frame ordinal within the segment, or `u32::MAX` for the
//! summary block. A segment marker precedes that segment's blocks, which are
//! written layer by layer in bank order.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{BankError, KvBank, SegmentRecord};
use crate::attn::{BlockOrigin, BlockSlot, KvBlock};
use crate::tensor::Matrix;

pub const SPILL_MAGIC: [u8; 4] = *b"KVBK";
pub const SPILL_VERSION: u32 = 1;

const TAG_SEGMENT: u32 = 1;
const TAG_BLOCK: u32 = 2;
const SUMMARY_SLOT: u32 = u32::MAX;

/// Writes bank appends to a spill file as they happen.
#[derive(Debug)]
pub struct SpillWriter {
    sink: BufWriter<File>,
    layers: usize,
    patch_count: usize,
    kv_dim: usize,
}

impl SpillWriter {
    pub fn create(path: &Path, layers: usize, patch_count: usize, kv_dim: usize) -> Result<Self, BankError> {
        let mut sink = BufWriter::new(File::create(path)?);
        sink.write_all(&SPILL_MAGIC)?;
        for v in [SPILL_VERSION, layers as u32, patch_count as u32, kv_dim as u32] {
            sink.write_all(&v.to_le_bytes())?;
        }
        Ok(Self { sink, layers, patch_count, kv_dim })
    }

    pub(super) fn append_segment(
        &mut self,
        segment: u32,
        frames: usize,
        blocks: &[Vec<KvBlock>],
    ) -> Result<(), BankError> {
        if blocks.len() != self.layers {
            return Err(BankError::LayerMismatch { expected: self.layers, got: blocks.len() });
        }
        let mut buf = Vec::new();
        for v in [TAG_SEGMENT, segment, frames as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for b in blocks.iter().flatten() {
            let slot = match b.origin.slot {
                BlockSlot::Frame(t) => t,
                BlockSlot::Summary => SUMMARY_SLOT,
            };
            for v in [TAG_BLOCK, b.layer as u32, b.origin.segment, slot] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&b.stream_pos.to_le_bytes());
            for x in b.keys.as_slice().iter().chain(b.values.as_slice()).chain(&b.rep_key) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        self.sink.write_all(&buf)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), BankError> {
        self.sink.flush()?;
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.layers, self.patch_count, self.kv_dim)
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn truncated(e: std::io::Error, what: &str) -> BankError {
    if e.kind() == ErrorKind::UnexpectedEof {
        BankError::Format(format!("truncated {what}"))
    } else {
        BankError::Io(e)
    }
}

/// Rebuilds a bank from a spill file.
pub fn load_spill(path: &Path) -> Result<KvBank, BankError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| truncated(e, "header"))?;
    if magic != SPILL_MAGIC {
        return Err(BankError::Format(format!("bad magic {magic:?}")));
    }
    let mut head = [0u32; 4];
    for h in head.iter_mut() {
        *h = read_u32(&mut r).map_err(|e| truncated(e, "header"))?;
    }
    let [version, layers, patch_count, kv_dim] = head.map(|v| v as usize);
    if version != SPILL_VERSION as usize {
        return Err(BankError::Format(format!("unsupported version {version}")));
    }
    let mut bank = KvBank::new(layers, patch_count, kv_dim);
    let rows = patch_count * kv_dim;
    loop {
        let tag = match read_u32(&mut r) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        match tag {
            TAG_SEGMENT => {
                let segment = read_u32(&mut r).map_err(|e| truncated(e, "segment marker"))?;
                let frames = read_u32(&mut r).map_err(|e| truncated(e, "segment marker"))? as usize;
                bank.segments.push(SegmentRecord { segment, frames, retained: 0, dropped: frames * layers });
            }
            TAG_BLOCK => {
                let mut ids = [0u32; 3];
                for v in ids.iter_mut() {
                    *v = read_u32(&mut r).map_err(|e| truncated(e, "block"))?;
                }
                let [layer, segment, slot] = ids;
                let mut pos = [0u8; 8];
                r.read_exact(&mut pos).map_err(|e| truncated(e, "block"))?;
                let keys = read_f32s(&mut r, rows).map_err(|e| truncated(e, "block"))?;
                let values = read_f32s(&mut r, rows).map_err(|e| truncated(e, "block"))?;
                let rep_key = read_f32s(&mut r, kv_dim).map_err(|e| truncated(e, "block"))?;
                let layer = layer as usize;
                if layer >= layers {
                    return Err(BankError::Format(format!("block layer {layer} out of range")));
                }
                let slot = if slot == SUMMARY_SLOT { BlockSlot::Summary } else { BlockSlot::Frame(slot) };
                let block = KvBlock {
                    origin: BlockOrigin { segment, slot },
                    layer,
                    keys: Matrix::from_vec(patch_count, kv_dim, keys).unwrap(),
                    values: Matrix::from_vec(patch_count, kv_dim, values).unwrap(),
                    rep_key,
                    stream_pos: u64::from_le_bytes(pos),
                };
                if slot != BlockSlot::Summary {
                    if let Some(rec) = bank.segments.iter_mut().rev().find(|s| s.segment == segment) {
                        rec.retained += 1;
                        rec.dropped -= 1;
                    }
                }
                bank.layers[layer].push(block);
            }
            other => return Err(BankError::Format(format!("unknown record tag {other}"))),
        }
    }
    Ok(bank)
}
