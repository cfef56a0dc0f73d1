//! Little-endian helpers shared by the binary model and feature formats.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        Writer {
            buf: magic.to_vec(),
        }
    }

    pub fn u32(&mut self, v: usize) -> &mut Self {
        let v = u32::try_from(v).expect("dimension exceeds u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f32(&mut self, v: f32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) -> &mut Self {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    /// Row-major dump of a matrix.
    pub fn matrix(&mut self, m: &DMatrix<f64>) -> &mut Self {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.buf.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
        self
    }

    pub fn vector(&mut self, v: &DVector<f64>) -> &mut Self {
        self.f64s(v.iter().copied())
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn save(self, path: &Path) -> Result<()> {
        fs::write(path, self.buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader<'a> {
    path: String,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(path: &Path, buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader {
            path: path.display().to_string(),
            buf,
            pos: 0,
        };
        let found = r.take(4)?;
        if found != magic {
            return Err(r.error_at(0, format!("bad magic (expected {:?})", String::from_utf8_lossy(magic))));
        }
        Ok(r)
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn error_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("truncated: need {} bytes, {} left", n, self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    /// Reads a dimension that must be non-zero.
    pub fn dim(&mut self, name: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u32()?;
        if v == 0 {
            return Err(self.error_at(at, format!("zero {name}")));
        }
        Ok(v)
    }

    pub fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let at = self.pos;
        let b = self.take(8)?;
        let v = f64::from_le_bytes(b.try_into().unwrap());
        if !v.is_finite() {
            return Err(self.error_at(at, "non-finite value"));
        }
        Ok(v)
    }

    /// Checks that `n` more bytes are available without consuming them.
    pub fn expect_remaining(&self, n: usize) -> Result<()> {
        if self.buf.len() - self.pos < n {
            return Err(self.error_at(
                self.buf.len(),
                format!("truncated payload: expected {} bytes after offset {}", n, self.pos),
            ));
        }
        Ok(())
    }

    pub fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        self.expect_remaining(n * 8)?;
        let mut v = DVector::zeros(n);
        for i in 0..n {
            v[i] = self.f64()?;
        }
        Ok(v)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        self.expect_remaining(rows * cols * 8)?;
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f64()?;
            }
        }
        Ok(m)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.error_at(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
