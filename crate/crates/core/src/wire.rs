//! Canonical big-endian binary encoding used for protocol and collaboration messages.
//!
//! Frames are a `u32` byte length followed by the body. Bodies start with a
//! tag byte; fields follow in declaration order. Strings and byte blobs are
//! `u32`-length-prefixed, ticks are `u64`, sets are a `u32` count followed by
//! their items in sorted order.

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("invalid utf-8 in string field")]
    Utf8,
    #[error("frame length {declared} does not match body length {actual}")]
    FrameLength { declared: usize, actual: usize },
    #[error("trailing bytes after message")]
    Trailing,
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn strs<'a>(&mut self, items: impl IntoIterator<Item = &'a str>) -> &mut Self {
        let mut items: Vec<&str> = items.into_iter().collect();
        items.sort_unstable();
        self.u32(items.len() as u32);
        for s in items {
            self.str(s);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    /// Wraps the encoded body in a length-prefixed frame.
    pub fn frame(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.buf.len() + 4);
        out.extend_from_slice(&(self.buf.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.buf);
        out
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    input: &'a [u8],
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Decoder { input }
    }

    /// Opens a length-prefixed frame; the whole input must be exactly one frame.
    pub fn frame(input: &'a [u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(input);
        let declared = d.u32()? as usize;
        if d.input.len() != declared {
            return Err(WireError::FrameLength { declared, actual: d.input.len() });
        }
        Ok(d)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.input.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.input.split_at(n);
        self.input = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, WireError> {
        Ok(self.u8()? != 0)
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, WireError> {
        String::from_utf8(self.bytes()?).map_err(|_| WireError::Utf8)
    }

    pub fn strs(&mut self) -> Result<Vec<String>, WireError> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.str()).collect()
    }

    pub fn end(&self) -> Result<(), WireError> {
        if self.input.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing)
        }
    }
}

/// Short hex digest of encoded bytes, used to fingerprint messages in traces.
pub fn digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hex::encode(&hash[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout() {
        let mut e = Encoder::new();
        e.u8(3).str("ab").u64(7);
        let bytes = e.frame();
        assert_eq!(
            bytes,
            vec![0, 0, 0, 15, 3, 0, 0, 0, 2, b'a', b'b', 0, 0, 0, 0, 0, 0, 0, 7]
        );
        let mut d = Decoder::frame(&bytes).unwrap();
        assert_eq!(d.u8().unwrap(), 3);
        assert_eq!(d.str().unwrap(), "ab");
        assert_eq!(d.u64().unwrap(), 7);
        d.end().unwrap();
    }

    #[test]
    fn sets_are_sorted() {
        let mut a = Encoder::new();
        a.strs(["b", "a"]);
        let mut b = Encoder::new();
        b.strs(["a", "b"]);
        assert_eq!(a.finish(), b.finish());
    }

    #[test]
    fn truncated_and_bad_frames() {
        assert_eq!(Decoder::new(&[0, 0]).u32(), Err(WireError::Truncated));
        assert!(matches!(Decoder::frame(&[0, 0, 0, 9, 1]), Err(WireError::FrameLength { .. })));
    }
}
