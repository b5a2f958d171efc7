//! Binary frame-embedding streams.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMBS"
//! 4       4     version (u32, currently 1)
//! 8       4     patch_count P² (u32)
//! 12      4     embed_dim D (u32)
//! 16      4     frame_interval_ms (u32, informational)
//! 20      ...   frames, each P²·D f32 values, row-major (patch-major)
//! ```
//!
//! Frames are read lazily; a reader never holds more than one frame.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Matrix;

pub const STREAM_MAGIC: [u8; 4] = *b"EMBS";
pub const STREAM_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 20;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("format error: {0}")]
    Format(String),
    #[error("stream corrupted: frame {frame} is truncated ({got} of {expected} bytes)")]
    Truncated { frame: u64, got: usize, expected: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub version: u32,
    pub patch_count: u32,
    pub embed_dim: u32,
    pub frame_interval_ms: u32,
}

impl StreamHeader {
    pub fn new(patch_count: u32, embed_dim: u32) -> Self {
        Self { version: STREAM_VERSION, patch_count, embed_dim, frame_interval_ms: 2000 }
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.version != STREAM_VERSION {
            return Err(StreamError::Format(format!("unsupported version {}", self.version)));
        }
        if self.patch_count == 0 || self.embed_dim == 0 {
            return Err(StreamError::Format(format!(
                "patch_count and embed_dim must be >= 1 (got {}x{})",
                self.patch_count, self.embed_dim
            )));
        }
        Ok(())
    }

    /// Values per frame, P²·D.
    pub fn frame_len(&self) -> usize {
        self.patch_count as usize * self.embed_dim as usize
    }

    pub fn frame_bytes(&self) -> usize {
        self.frame_len() * 4
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut buf = [0u8; HEADER_LEN as usize];
        buf[0..4].copy_from_slice(&STREAM_MAGIC);
        buf[4..8].copy_from_slice(&self.version.to_le_bytes());
        buf[8..12].copy_from_slice(&self.patch_count.to_le_bytes());
        buf[12..16].copy_from_slice(&self.embed_dim.to_le_bytes());
        buf[16..20].copy_from_slice(&self.frame_interval_ms.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN as usize]) -> Result<Self, StreamError> {
        if buf[0..4] != STREAM_MAGIC {
            return Err(StreamError::Format(format!("bad magic {:?}", String::from_utf8_lossy(&buf[0..4]))));
        }
        let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
        let header = Self { version: word(4), patch_count: word(8), embed_dim: word(12), frame_interval_ms: word(16) };
        header.validate()?;
        Ok(header)
    }
}

/// One sampled frame: a P²×D patch-token matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEmbedding {
    pub index: u64,
    pub patches: Matrix,
}

impl FrameEmbedding {
    pub fn new(index: u64, patches: Matrix) -> Self {
        Self { index, patches }
    }

    pub fn conforms_to(&self, header: &StreamHeader) -> bool {
        self.patches.rows() == header.patch_count as usize && self.patches.cols() == header.embed_dim as usize
    }
}

/// Writes `header` followed by every frame. Returns the number of bytes written.
pub fn write_stream<'a, W, I>(header: &StreamHeader, frames: I, mut sink: W) -> Result<u64, StreamError>
where
    W: Write,
    I: IntoIterator<Item = &'a FrameEmbedding>,
{
    header.validate()?;
    sink.write_all(&header.encode())?;
    let mut written = HEADER_LEN;
    let mut buf = Vec::with_capacity(header.frame_bytes());
    for frame in frames {
        if !frame.conforms_to(header) {
            return Err(StreamError::Format(format!(
                "frame {} is {}x{}, header declares {}x{}",
                frame.index,
                frame.patches.rows(),
                frame.patches.cols(),
                header.patch_count,
                header.embed_dim
            )));
        }
        if !frame.patches.is_finite() {
            return Err(StreamError::Format(format!("frame {} has non-finite entries", frame.index)));
        }
        buf.clear();
        for v in frame.patches.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&buf)?;
        written += buf.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

/// Reads the header and returns a lazy iterator over the frames.
pub fn read_stream<R: Read>(mut source: R) -> Result<(StreamHeader, FrameReader<R>), StreamError> {
    let mut buf = [0u8; HEADER_LEN as usize];
    source.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StreamError::Format("stream shorter than its header".into()),
        _ => StreamError::Io(e),
    })?;
    let header = StreamHeader::decode(&buf)?;
    let reader = FrameReader { source, header, next: 0, buf: vec![0; header.frame_bytes()], done: false };
    Ok((header, reader))
}

/// Lazy frame iterator returned by [`read_stream`].
pub struct FrameReader<R> {
    source: R,
    header: StreamHeader,
    next: u64,
    buf: Vec<u8>,
    done: bool,
}

impl<R: Read> FrameReader<R> {
    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn fill(&mut self) -> Result<usize, io::Error> {
        let mut got = 0;
        while got < self.buf.len() {
            match self.source.read(&mut self.buf[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(got)
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<FrameEmbedding, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let got = match self.fill() {
            Ok(n) => n,
            Err(e) => {
                self.done = true;
                return Some(Err(e.into()));
            }
        };
        if got == 0 {
            self.done = true;
            return None;
        }
        if got < self.buf.len() {
            self.done = true;
            return Some(Err(StreamError::Truncated { frame: self.next, got, expected: self.buf.len() }));
        }
        let values: Vec<f32> = self.buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            self.done = true;
            return Some(Err(StreamError::Format(format!("frame {} has non-finite entries", self.next))));
        }
        let patches =
            Matrix::from_vec(self.header.patch_count as usize, self.header.embed_dim as usize, values).unwrap();
        let frame = FrameEmbedding::new(self.next, patches);
        self.next += 1;
        Some(Ok(frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize, p: usize, d: usize) -> Vec<FrameEmbedding> {
        (0..n)
            .map(|i| {
                let data = (0..p * d).map(|j| (i * 31 + j) as f32 * 0.25 - 3.0).collect();
                FrameEmbedding::new(i as u64, Matrix::from_vec(p, d, data).unwrap())
            })
            .collect()
    }

    #[test]
    fn header_only_is_twenty_bytes() {
        let mut out = Vec::new();
        let n = write_stream(&StreamHeader::new(4, 8), &[], &mut out).unwrap();
        assert_eq!(n, 20);
        assert_eq!(out.len(), 20);
        assert_eq!(&out[..4], b"EMBS");
    }

    #[test]
    fn ten_frames_byte_count() {
        let mut out = Vec::new();
        let n = write_stream(&StreamHeader::new(4, 8), &frames(10, 4, 8), &mut out).unwrap();
        assert_eq!(n, 1300);
        assert_eq!(out.len(), 1300);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut out = Vec::new();
        write_stream(&StreamHeader::new(4, 8), &frames(1, 4, 8), &mut out).unwrap();
        out[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_stream(&out[..]), Err(StreamError::Format(_))));
    }

    #[test]
    fn bad_version_rejected() {
        let mut out = Vec::new();
        write_stream(&StreamHeader::new(4, 8), &[], &mut out).unwrap();
        out[4] = 9;
        assert!(matches!(read_stream(&out[..]), Err(StreamError::Format(_))));
    }

    #[test]
    fn truncation_names_the_frame() {
        let mut out = Vec::new();
        write_stream(&StreamHeader::new(4, 8), &frames(10, 4, 8), &mut out).unwrap();
        // cut in the middle of frame 7
        out.truncate(20 + 7 * 128 + 50);
        let (_, reader) = read_stream(&out[..]).unwrap();
        let results: Vec<_> = reader.collect();
        assert_eq!(results.len(), 8);
        assert!(results[..7].iter().all(Result::is_ok));
        match &results[7] {
            Err(StreamError::Truncated { frame, got, .. }) => {
                assert_eq!(*frame, 7);
                assert_eq!(*got, 50);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_format_error() {
        let mut out = Vec::new();
        let err = write_stream(&StreamHeader::new(4, 4), &frames(1, 4, 8), &mut out).unwrap_err();
        assert!(matches!(err, StreamError::Format(_)));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(StreamHeader::new(0, 8).validate().is_err());
        assert!(StreamHeader::new(4, 0).validate().is_err());
    }
}
