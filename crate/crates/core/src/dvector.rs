//! Context windowing, phone-posterior augmentation and d-vector extraction.

use nalgebra as na;
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureMatrix;
use crate::neuralnet::{forward_until, MlpParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindowSpec {
    /// Odd number of frames centred on the current one. Frames beyond the
    /// utterance edges replicate the first or last frame.
    pub window: usize,
}

impl Default for ContextWindowSpec {
    fn default() -> Self {
        ContextWindowSpec { window: 21 }
    }
}

/// Splices each frame with its neighbours: row `t` of the result is frames
/// `t - h ..= t + h` (clamped to the utterance) concatenated, `h = (window-1)/2`.
pub fn stack_context(m: &FeatureMatrix, spec: ContextWindowSpec) -> Result<FeatureMatrix> {
    let w = spec.window;
    if w == 0 || w % 2 == 0 {
        return Err(Error::invalid("window", format!("must be odd and >= 1, got {w}")));
    }
    let (t_len, f) = (m.rows(), m.cols());
    let half = (w / 2) as isize;
    let mut data = Vec::with_capacity(t_len * w * f);
    for t in 0..t_len as isize {
        for k in -half..=half {
            let src = (t + k).clamp(0, t_len as isize - 1) as usize;
            data.extend_from_slice(m.row(src));
        }
    }
    FeatureMatrix::new(t_len, w * f, data)
}

/// Appends per-frame phone posteriors to the stacked features. `None` means
/// an empty phone set and returns the input unchanged.
pub fn augment_with_posteriors(
    stacked: &FeatureMatrix,
    posteriors: Option<&FeatureMatrix>,
) -> Result<FeatureMatrix> {
    let Some(post) = posteriors else {
        return Ok(stacked.clone());
    };
    if post.rows() != stacked.rows() {
        return Err(Error::dim("posterior rows", stacked.rows(), post.rows()));
    }
    let cols = stacked.cols() + post.cols();
    let mut data = Vec::with_capacity(stacked.rows() * cols);
    for (a, b) in stacked.iter_rows().zip(post.iter_rows()) {
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    FeatureMatrix::new(stacked.rows(), cols, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DVector {
    pub values: Vec<f64>,
    /// Hidden layer the activations were read from.
    pub source_layer: usize,
}

impl DVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Copy scaled to unit Euclidean norm (unchanged if the norm is zero).
    pub fn length_normalized(&self) -> DVector {
        let n = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if n > 0.0 {
            self.values.iter().map(|v| v / n).collect()
        } else {
            self.values.clone()
        };
        DVector {
            values,
            source_layer: self.source_layer,
        }
    }
}

/// How frame activations are pooled into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FramePooling {
    /// Arithmetic mean of the raw activations.
    #[default]
    Mean,
    /// Mean of unit-length frame activations. Experimental.
    UnitNormMean,
}

/// Averages the post-nonlinearity activations of hidden layer `layer`
/// (default: the last hidden layer) over all frames of an utterance.
pub fn extract_dvector(
    params: &MlpParams,
    inputs: &FeatureMatrix,
    layer: Option<usize>,
) -> Result<DVector> {
    extract_dvector_with(params, inputs, layer, FramePooling::Mean)
}

pub fn extract_dvector_with(
    params: &MlpParams,
    inputs: &FeatureMatrix,
    layer: Option<usize>,
    pooling: FramePooling,
) -> Result<DVector> {
    let n_hidden = params.arch.num_hidden();
    if n_hidden == 0 {
        return Err(Error::invalid("layer", "network has no hidden layer"));
    }
    let layer = layer.unwrap_or(n_hidden - 1);
    if layer >= n_hidden {
        return Err(Error::invalid(
            "layer",
            format!("hidden layer {layer} out of range (network has {n_hidden})"),
        ));
    }
    if inputs.cols() != params.arch.input_dim {
        return Err(Error::dim("d-vector input", params.arch.input_dim, inputs.cols()));
    }
    let pass = forward_until(params, &inputs.to_columns(), Some(layer))?;
    let acts = &pass.hidden[layer];
    let mut sum = na::DVector::zeros(acts.nrows());
    for col in acts.column_iter() {
        match pooling {
            FramePooling::Mean => sum += col,
            FramePooling::UnitNormMean => {
                let n = col.norm();
                if n > 0.0 {
                    sum += col / n;
                }
            }
        }
    }
    sum /= acts.ncols() as f64;
    Ok(DVector {
        values: sum.as_slice().to_vec(),
        source_layer: layer,
    })
}
