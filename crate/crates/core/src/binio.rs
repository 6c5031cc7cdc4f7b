//! Little-endian flat binary records shared by the on-disk bundles.
//!
//! Every bundle starts with an 8-byte magic tag. Integers are `u64`, reals
//! are `f64`, and vectors are a `u64` length followed by the values.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(mut inner: W, magic: &[u8; 8]) -> Result<Self> {
        inner.write_all(magic)?;
        Ok(Self { inner })
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        for x in v {
            self.inner.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn bytes(&mut self, v: &[u8]) -> Result<()> {
        self.u64(v.len() as u64)?;
        self.inner.write_all(v)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct BinReader<R: Read> {
    inner: R,
}

/// Upper bound on any single vector length; guards against corrupt headers.
const MAX_LEN: u64 = 1 << 32;

impl<R: Read> BinReader<R> {
    pub fn new(mut inner: R, magic: &[u8; 8]) -> Result<Self> {
        let mut tag = [0u8; 8];
        inner.read_exact(&mut tag)?;
        if &tag != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&tag)
            )));
        }
        Ok(Self { inner })
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("count {v} overflows usize")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > MAX_LEN {
            return Err(Error::Format(format!("vector length {n} exceeds limit")));
        }
        Ok(n as usize)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len()?;
        let mut out = vec![0u8; n];
        self.inner.read_exact(&mut out)?;
        Ok(out)
    }
}
