//! `LDA1` and `PLD1` model files (little-endian, matrices row-major).
//!
//! ```text
//! LDA1: "LDA1" u32 D_in  u32 D_out  f64 mean[D_in]  f64 projection[D_in×D_out]
//! PLD1: "PLD1" u32 D  u32 flags  f64 mean[D]  f64 B[D×D]  f64 W[D×D]
//! ```
//! PLD1 flag bit 0 marks length normalisation.

use std::path::Path;

use super::{LdaTransform, PldaModel};
use crate::binio::{self, Reader, Writer};
use crate::Result;

pub fn save_lda(path: impl AsRef<Path>, t: &LdaTransform) -> Result<()> {
    let mut w = Writer::new(b"LDA1");
    w.u32(t.input_dim()).u32(t.output_dim()).vector(&t.mean).matrix(&t.projection);
    w.save(path.as_ref())
}

pub fn load_lda(path: impl AsRef<Path>) -> Result<LdaTransform> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    let mut r = Reader::new(path, &bytes, b"LDA1")?;
    let din = r.dim("input dim")?;
    let dout = r.dim("output dim")?;
    let mean = r.vector(din)?;
    let projection = r.matrix(din, dout)?;
    r.finish()?;
    LdaTransform::new(mean, projection)
}

pub fn save_plda(path: impl AsRef<Path>, m: &PldaModel) -> Result<()> {
    let mut w = Writer::new(b"PLD1");
    w.u32(m.dim())
        .u32(m.length_norm as usize)
        .vector(&m.mean)
        .matrix(&m.between)
        .matrix(&m.within);
    w.save(path.as_ref())
}

pub fn load_plda(path: impl AsRef<Path>) -> Result<PldaModel> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    let mut r = Reader::new(path, &bytes, b"PLD1")?;
    let d = r.dim("dimension")?;
    let flags_at = r.offset();
    let flags = r.u32()?;
    if flags > 1 {
        return Err(r.error_at(flags_at, format!("unknown flags {flags:#x}")));
    }
    let mean = r.vector(d)?;
    let b = r.matrix(d, d)?;
    let w = r.matrix(d, d)?;
    r.finish()?;
    PldaModel::new(mean, b, w, flags == 1)
}
