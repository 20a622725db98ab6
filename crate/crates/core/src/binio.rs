//! Little-endian helpers shared by the binary projection and checkpoint formats.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

// guards allocations driven by corrupt headers
const MAX_COUNT: u64 = 1 << 32;

pub(crate) struct Reader<'a, R: Read> {
    inner: &'a mut R,
}

impl<'a, R: Read> Reader<'a, R> {
    pub(crate) fn new(inner: &'a mut R) -> Self {
        Reader { inner }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Data("binary file is truncated".into()),
            _ => Error::io("<binary stream>", e),
        })
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn count(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        if v > MAX_COUNT {
            return Err(Error::Data(format!("implausible {what} {v} in binary header")));
        }
        Ok(v as usize)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Data("trailing bytes after binary payload".into())),
            Err(e) => Err(Error::io("<binary stream>", e)),
        }
    }
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
