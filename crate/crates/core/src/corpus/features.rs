use std::path::Path;

use nalgebra::DMatrix;

use crate::binio::{self, Reader, Writer};
use crate::{Error, Result};

const UFM_MAGIC: &[u8; 4] = b"UFM1";

/// Dense `rows × cols` matrix of per-frame features, stored row-major
/// (one frame per row). All values are finite and both dimensions are at
/// least one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::invalid("rows", "zero rows"));
        }
        if cols == 0 {
            return Err(Error::invalid("cols", "zero cols"));
        }
        if data.len() != rows * cols {
            return Err(Error::dim("feature matrix data", rows * cols, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "values",
                format!("non-finite value at frame {}, dim {}", i / cols, i % cols),
            ));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (t, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!("frame {t}"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Matrix with every entry equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Frames as the columns of a `cols × rows` matrix, the layout used by
    /// the network and the GMM code.
    pub fn to_columns(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.cols, self.rows, &self.data)
    }

    /// Stacks the frames of several matrices with equal width.
    pub fn vstack<'a>(parts: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut cols = None;
        let mut data = Vec::new();
        for p in parts {
            match cols {
                None => cols = Some(p.cols),
                Some(c) if c != p.cols => return Err(Error::dim("vstack columns", c, p.cols)),
                _ => {}
            }
            data.extend_from_slice(&p.data);
        }
        let cols = cols.ok_or_else(|| Error::invalid("parts", "nothing to stack"))?;
        Self::new(data.len() / cols, cols, data)
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        FeatureMatrix { rows, cols, data }
    }
}

/// Writes a matrix in the UFM1 format: `"UFM1"`, rows (u32 LE), cols (u32 LE),
/// then `rows × cols` f32 LE values in row-major order.
///
/// Values are narrowed to `f32`.
pub fn save_features(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    encode_features(m).save(path.as_ref())
}

fn encode_features(m: &FeatureMatrix) -> Writer {
    let mut w = Writer::new(UFM_MAGIC);
    w.u32(m.rows).u32(m.cols);
    for &v in &m.data {
        w.f32(v as f32);
    }
    w
}

/// Serialises to an in-memory UFM1 byte buffer.
pub fn features_to_bytes(m: &FeatureMatrix) -> Vec<u8> {
    encode_features(m).into_bytes()
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    features_from_bytes(path, &bytes)
}

pub fn features_from_bytes(path: &Path, bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader::new(path, bytes, UFM_MAGIC)?;
    let rows = r.dim("rows")?;
    let cols = r.dim("cols")?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| r.error_at(4, "dimensions overflow"))?;
    r.expect_remaining(n * 4)?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(r.error_at(at, "non-finite value"));
        }
        data.push(v as f64);
    }
    r.finish()?;
    Ok(FeatureMatrix::from_parts_unchecked(rows, cols, data))
}

/// Per-utterance mean and variance normalisation of every feature dimension.
///
/// Dimensions whose variance is below `1e-8` are only mean-shifted, so a
/// single-frame utterance becomes all zeros.
pub fn normalize_features(m: &FeatureMatrix) -> FeatureMatrix {
    let (rows, cols) = (m.rows, m.cols);
    let n = rows as f64;
    let mut mean = vec![0.0; cols];
    for row in m.iter_rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; cols];
    for row in m.iter_rows() {
        for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let v = v / n;
            if v < 1e-8 {
                1.0
            } else {
                1.0 / v.sqrt()
            }
        })
        .collect();
    let mut data = Vec::with_capacity(m.data.len());
    for row in m.iter_rows() {
        for ((v, mu), s) in row.iter().zip(&mean).zip(&scale) {
            data.push((v - mu) * s);
        }
    }
    FeatureMatrix::from_parts_unchecked(rows, cols, data)
}
