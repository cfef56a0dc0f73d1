//! `UBM1` and `TVM1` model files (little-endian).
//!
//! ```text
//! UBM1: "UBM1" u32 C  u32 F  f64 weights[C]  f64 means[C×F]  f64 variances[C×F]
//! TVM1: "TVM1" u32 C  u32 F  u32 D  f64 blocks[C][F×D]
//! ```
//! Matrices are row-major.

use std::path::Path;

use super::{GmmUbm, TMatrix};
use crate::binio::{self, Reader, Writer};
use crate::Result;

pub fn save_ubm(path: impl AsRef<Path>, ubm: &GmmUbm) -> Result<()> {
    let mut w = Writer::new(b"UBM1");
    w.u32(ubm.num_components())
        .u32(ubm.feature_dim())
        .vector(&ubm.weights)
        .matrix(&ubm.means)
        .matrix(&ubm.variances);
    w.save(path.as_ref())
}

pub fn load_ubm(path: impl AsRef<Path>) -> Result<GmmUbm> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    let mut r = Reader::new(path, &bytes, b"UBM1")?;
    let c = r.dim("components")?;
    let f = r.dim("feature dim")?;
    let weights = r.vector(c)?;
    let means = r.matrix(c, f)?;
    let variances = r.matrix(c, f)?;
    r.finish()?;
    GmmUbm::new(weights, means, variances)
}

pub fn save_tmatrix(path: impl AsRef<Path>, t: &TMatrix) -> Result<()> {
    let mut w = Writer::new(b"TVM1");
    w.u32(t.num_components()).u32(t.feature_dim()).u32(t.ivector_dim());
    for b in &t.blocks {
        w.matrix(b);
    }
    w.save(path.as_ref())
}

pub fn load_tmatrix(path: impl AsRef<Path>) -> Result<TMatrix> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    let mut r = Reader::new(path, &bytes, b"TVM1")?;
    let c = r.dim("components")?;
    let f = r.dim("feature dim")?;
    let d = r.dim("ivector dim")?;
    let blocks = (0..c).map(|_| r.matrix(f, d)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    TMatrix::new(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ivector::init_tmatrix;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ubm = GmmUbm::new(
            DVector::from_vec(vec![0.25, 0.75]),
            DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.5, 0.25, 4.0]),
        )
        .unwrap();
        let p = dir.path().join("u.bin");
        save_ubm(&p, &ubm).unwrap();
        assert_eq!(load_ubm(&p).unwrap(), ubm);

        let t = init_tmatrix(&ubm, 4, 3).unwrap();
        let p = dir.path().join("t.bin");
        save_tmatrix(&p, &t).unwrap();
        assert_eq!(load_tmatrix(&p).unwrap(), t);
        assert!(load_ubm(&p).is_err());
    }
}
