//! Little-endian encoding helpers with offset-aware decode errors.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub(crate) struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn len_u32(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::Structural(format!("length {n} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }
}

/// Cursor over a byte slice that sits at `base` within its file.
pub(crate) struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8], base: u64) -> Self {
        Self { buf, pos: 0, base }
    }

    pub fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("unexpected end of data reading {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    /// A `u32` that must lie in `1..=max`, reported at its own offset.
    pub fn dim(&mut self, what: &str, max: u32) -> Result<usize> {
        let at = self.offset();
        let v = self.u32(what)?;
        if v == 0 || v > max {
            return Err(Error::format(at, format!("{what} = {v} outside 1..={max}")));
        }
        Ok(v as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_short_read() {
        let mut e = Encoder::default();
        e.u32(7);
        e.f64(-1.5);
        e.bytes(&0.25f32.to_le_bytes());
        let mut d = Decoder::new(&e.buf, 100);
        assert_eq!(d.u32("a").unwrap(), 7);
        assert_eq!(d.f64("b").unwrap(), -1.5);
        assert_eq!(d.f32("c").unwrap(), 0.25);
        match d.u8("d") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 116),
            other => panic!("{other:?}"),
        }
    }
}
