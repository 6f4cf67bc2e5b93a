//! Binary segment-corpus files: the output of preprocessing, the input of
//! every training stage.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ECGSG"  magic
//! u16      format version (currently 1)
//! u32      segment length S
//! u32      sequence count
//! per sequence:
//!   u32 + bytes   record id (UTF-8)
//!   u8            label flag; 1 is followed by u32 label
//!   u32           segment count N (including padding)
//!   N × u8        pad mask, 1 = real beat
//!   per segment:  S × f64 values, u32 peak index, u32 pre, u32 post,
//!                 u8 degenerate flag
//! ```
//!
//! Values stay f64 so write→read is an exact round trip.

use super::atomic_write;
use crate::error::{Error, Result};
use crate::signal::{HeartbeatSegment, SegmentSequence};
use std::path::Path;

pub const SEGMENTS_HEADER: &[u8; 5] = b"ECGSG";
const VERSION: u16 = 1;

/// Atomically serialize a preprocessed corpus.
pub fn write_segments(path: &Path, data: &[SegmentSequence], seg_len: usize) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(SEGMENTS_HEADER);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seg_len as u32).to_le_bytes());
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    for seq in data {
        if seq.pad_mask.len() != seq.segments.len() {
            return Err(Error::Data(format!(
                "record {}: pad mask covers {} of {} segments",
                seq.record_id,
                seq.pad_mask.len(),
                seq.segments.len()
            )));
        }
        let id = seq.record_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        match seq.label {
            Some(l) => {
                out.push(1);
                out.extend_from_slice(&(l as u32).to_le_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&(seq.segments.len() as u32).to_le_bytes());
        out.extend(seq.pad_mask.iter().map(|&m| m as u8));
        for seg in &seq.segments {
            if seg.values.len() != seg_len {
                return Err(Error::Data(format!(
                    "record {}: segment has {} samples, corpus says {seg_len}",
                    seq.record_id,
                    seg.values.len()
                )));
            }
            for &v in &seg.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(seg.peak_index as u32).to_le_bytes());
            out.extend_from_slice(&(seg.pre_len as u32).to_le_bytes());
            out.extend_from_slice(&(seg.post_len as u32).to_le_bytes());
            out.push(seg.degenerate as u8);
        }
    }
    atomic_write(path, &out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Data("segment corpus truncated".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Read a corpus back; returns the sequences and the segment length.
pub fn read_segments(path: &Path) -> Result<(Vec<SegmentSequence>, usize)> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader {
        data: &bytes,
        pos: 0,
    };
    if r.take(5)? != SEGMENTS_HEADER {
        return Err(Error::Data(format!(
            "{} is not a segment corpus (bad magic)",
            path.display()
        )));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "unsupported segment corpus version {version}"
        )));
    }
    let seg_len = r.u32()?;
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u32()?;
        let record_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::Data("record id is not UTF-8".into()))?;
        let label = match r.u8()? {
            0 => None,
            1 => Some(r.u32()?),
            f => return Err(Error::Data(format!("bad label flag {f}"))),
        };
        let n = r.u32()?;
        let mut pad_mask = Vec::with_capacity(n);
        for _ in 0..n {
            pad_mask.push(r.u8()? != 0);
        }
        let mut segments = Vec::with_capacity(n);
        for _ in 0..n {
            let mut values = Vec::with_capacity(seg_len);
            for _ in 0..seg_len {
                values.push(r.f64()?);
            }
            segments.push(HeartbeatSegment {
                values,
                peak_index: r.u32()?,
                pre_len: r.u32()?,
                post_len: r.u32()?,
                degenerate: r.u8()? != 0,
            });
        }
        out.push(SegmentSequence {
            segments,
            pad_mask,
            record_id,
            label,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "segment corpus has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((out, seg_len))
}
