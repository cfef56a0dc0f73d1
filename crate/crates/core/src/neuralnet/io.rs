//! `MLP1` model files.
//!
//! ```text
//! "MLP1"
//! u32 activation tag (0 rectified-linear, 1 tanh, 2 logistic)
//! u32 n = number of layer widths (hidden layers + 2)
//! u32 widths[n]        input, hidden..., output
//! per layer l = 0..n-1:
//!   f64 weights[out × in]   row-major
//!   f64 biases[out]
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::{Activation, Layer, MlpArchitecture, MlpParams};
use crate::binio::{self, Reader, Writer};
use crate::Result;

const MAGIC: &[u8; 4] = b"MLP1";

pub fn save_mlp(path: impl AsRef<Path>, params: &MlpParams) -> Result<()> {
    params.validate()?;
    let dims = params.arch.dims();
    let mut w = Writer::new(MAGIC);
    w.u32(params.arch.activation.tag() as usize).u32(dims.len());
    for &d in &dims {
        w.u32(d);
    }
    for layer in &params.layers {
        w.matrix(&layer.weights).vector(&layer.biases);
    }
    w.save(path.as_ref())
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MlpParams> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    let mut r = Reader::new(path, &bytes, MAGIC)?;
    let tag_at = r.offset();
    let tag = r.u32()?;
    let activation = Activation::from_tag(tag as u32)
        .ok_or_else(|| r.error_at(tag_at, format!("unknown activation tag {tag}")))?;
    let n_at = r.offset();
    let n = r.u32()?;
    if n < 2 {
        return Err(r.error_at(n_at, format!("need at least 2 layer widths, found {n}")));
    }
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        dims.push(r.dim("layer width")?);
    }
    let mut layers = Vec::with_capacity(n - 1);
    for w in dims.windows(2) {
        let weights = r.matrix(w[1], w[0])?;
        let biases = r.vector(w[1])?;
        layers.push(Layer { weights, biases });
    }
    r.finish()?;
    let params = MlpParams {
        arch: MlpArchitecture {
            input_dim: dims[0],
            hidden_dims: dims[1..n - 1].to_vec(),
            output_dim: dims[n - 1],
            activation,
        },
        layers,
    };
    params.validate()?;
    Ok(params)
}
