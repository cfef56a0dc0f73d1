//! Feed-forward speaker classifier: fully connected hidden layers with a
//! shared nonlinearity and a softmax output, trained with cross-entropy.
//!
//! Batches are column matrices: an `input_dim × batch` matrix holds one
//! example per column.

mod io;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_mlp, save_mlp};
pub use train::{train, EpochRecord, LabeledUtterance, StopReason, TrainConfig, TrainReport};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    RectifiedLinear,
    HyperbolicTangent,
    Logistic,
}

impl Activation {
    fn apply(self, z: &mut DMatrix<f64>) {
        match self {
            Activation::RectifiedLinear => z.apply(|v| *v = v.max(0.0)),
            Activation::HyperbolicTangent => z.apply(|v| *v = v.tanh()),
            Activation::Logistic => z.apply(|v| *v = 1.0 / (1.0 + (-*v).exp())),
        }
    }

    /// Derivative expressed through the activation value `a = f(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::RectifiedLinear => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::HyperbolicTangent => 1.0 - a * a,
            Activation::Logistic => a * (1.0 - a),
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::RectifiedLinear => 0,
            Activation::HyperbolicTangent => 1,
            Activation::Logistic => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::RectifiedLinear),
            1 => Some(Activation::HyperbolicTangent),
            2 => Some(Activation::Logistic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Number of training speakers.
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpArchitecture {
    /// Four hidden layers of 200 units.
    pub fn plain(input_dim: usize, output_dim: usize) -> Self {
        MlpArchitecture {
            input_dim,
            hidden_dims: vec![200; 4],
            output_dim,
            activation: Activation::RectifiedLinear,
        }
    }

    /// The plain network with a 100-unit bottleneck inserted before the
    /// output layer.
    pub fn bottleneck(input_dim: usize, output_dim: usize) -> Self {
        MlpArchitecture {
            hidden_dims: vec![200, 200, 200, 200, 100],
            ..Self::plain(input_dim, output_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be >= 1"));
        }
        if self.output_dim == 0 {
            return Err(Error::invalid("output_dim", "must be >= 1"));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&d| d == 0) {
            return Err(Error::invalid("hidden_dims", format!("layer {i} has zero units")));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden_dims.len()
    }
}

/// Affine map `z = weights * x + biases`; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Layer {
            weights: DMatrix::zeros(output, input),
            biases: DVector::zeros(output),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub arch: MlpArchitecture,
    pub layers: Vec<Layer>,
}

/// Same shapes as [`MlpParams::layers`].
pub type Gradients = Vec<Layer>;

impl MlpParams {
    pub fn zeros(arch: &MlpArchitecture) -> Result<Self> {
        arch.validate()?;
        let dims = arch.dims();
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(MlpParams {
            arch: arch.clone(),
            layers,
        })
    }

    /// Checks layer shapes against the architecture and that every value is
    /// finite.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let dims = self.arch.dims();
        if self.layers.len() != dims.len() - 1 {
            return Err(Error::dim("layer count", dims.len() - 1, self.layers.len()));
        }
        for (i, (l, w)) in self.layers.iter().zip(dims.windows(2)).enumerate() {
            if l.weights.shape() != (w[1], w[0]) {
                return Err(Error::invalid(
                    format!("layer {i} weights"),
                    format!("shape {:?}, expected {:?}", l.weights.shape(), (w[1], w[0])),
                ));
            }
            if l.biases.len() != w[1] {
                return Err(Error::dim(format!("layer {i} biases"), w[1], l.biases.len()));
            }
            if l.weights.iter().chain(l.biases.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }
}

/// Uniform fan-based initialisation: weights in `±sqrt(6 / (fan_in + fan_out))`,
/// biases zero.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        let (fan_out, fan_in) = layer.weights.shape();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        // Row-major fill so the stream does not depend on storage order.
        for r in 0..fan_out {
            for c in 0..fan_in {
                layer.weights[(r, c)] = rng.random_range(-bound..bound);
            }
        }
    }
    Ok(params)
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Post-nonlinearity output of every hidden layer (`units × batch`).
    pub hidden: Vec<DMatrix<f64>>,
    /// Softmax probabilities (`output_dim × batch`); columns sum to one.
    pub output: DMatrix<f64>,
    /// Pre-softmax scores.
    pub logits: DMatrix<f64>,
}

fn affine(layer: &Layer, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = &layer.weights * x;
    for mut col in z.column_iter_mut() {
        col += &layer.biases;
    }
    z
}

fn softmax_columns(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let s = col.sum();
        col /= s;
    }
    out
}

/// Runs the network on a batch of column vectors.
pub fn forward(params: &MlpParams, inputs: &DMatrix<f64>) -> Result<ForwardPass> {
    forward_until(params, inputs, None)
}

/// Forward pass that stops after hidden layer `last_hidden` when given;
/// `output` and `logits` are then empty.
pub(crate) fn forward_until(
    params: &MlpParams,
    inputs: &DMatrix<f64>,
    last_hidden: Option<usize>,
) -> Result<ForwardPass> {
    if inputs.nrows() != params.arch.input_dim {
        return Err(Error::dim("input of layer 0", params.arch.input_dim, inputs.nrows()));
    }
    let n_hidden = params.arch.num_hidden();
    let mut hidden = Vec::with_capacity(n_hidden);
    for (i, layer) in params.layers[..n_hidden].iter().enumerate() {
        let x = if i == 0 { inputs } else { &hidden[i - 1] };
        let mut z = affine(layer, x);
        params.arch.activation.apply(&mut z);
        hidden.push(z);
        if last_hidden == Some(i) {
            return Ok(ForwardPass {
                hidden,
                output: DMatrix::zeros(0, 0),
                logits: DMatrix::zeros(0, 0),
            });
        }
    }
    let last = hidden.last().unwrap_or(inputs);
    let logits = affine(&params.layers[n_hidden], last);
    let output = softmax_columns(&logits);
    Ok(ForwardPass {
        hidden,
        output,
        logits,
    })
}

fn check_targets(params: &MlpParams, inputs: &DMatrix<f64>, targets: &[usize]) -> Result<()> {
    if targets.len() != inputs.ncols() {
        return Err(Error::dim("targets", inputs.ncols(), targets.len()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= params.arch.output_dim) {
        return Err(Error::invalid(
            "targets",
            format!("class {t} >= output_dim {}", params.arch.output_dim),
        ));
    }
    Ok(())
}

/// Mean cross-entropy `-mean(log softmax[target])` over the batch.
pub fn cross_entropy(pass: &ForwardPass, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (j, &t) in targets.iter().enumerate() {
        let col = pass.logits.column(j);
        let max = col.max();
        let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - col[t];
    }
    total / targets.len() as f64
}

/// Mean cross-entropy and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    params: &MlpParams,
    inputs: &DMatrix<f64>,
    targets: &[usize],
) -> Result<(f64, Gradients)> {
    check_targets(params, inputs, targets)?;
    if targets.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    let pass = forward(params, inputs)?;
    let loss = cross_entropy(&pass, targets);
    let scale = 1.0 / targets.len() as f64;

    // d loss / d logits = (softmax - onehot) / batch
    let mut delta = pass.output.clone();
    for (j, &t) in targets.iter().enumerate() {
        delta[(t, j)] -= 1.0;
    }
    delta *= scale;

    let n_layers = params.layers.len();
    let mut grads: Vec<Option<Layer>> = vec![None; n_layers];
    for l in (0..n_layers).rev() {
        let below = if l == 0 { inputs } else { &pass.hidden[l - 1] };
        let weights = &delta * below.transpose();
        let biases = delta.column_sum();
        if l > 0 {
            let mut back = params.layers[l].weights.transpose() * &delta;
            let act = params.arch.activation;
            back.zip_apply(below, |d, a| *d *= act.derivative_from_output(a));
            delta = back;
        }
        grads[l] = Some(Layer { weights, biases });
    }
    Ok((loss, grads.into_iter().map(Option::unwrap).collect()))
}

/// Classifies every column; returns the argmax class index.
pub fn predict(params: &MlpParams, inputs: &DMatrix<f64>) -> Result<Vec<usize>> {
    let pass = forward(params, inputs)?;
    Ok(pass.output.column_iter().map(|c| c.argmax().0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch(act: Activation) -> MlpArchitecture {
        MlpArchitecture {
            input_dim: 5,
            hidden_dims: vec![3],
            output_dim: 2,
            activation: act,
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let arch = MlpArchitecture::plain(840, 80);
        let p = init_params(&arch, 3).unwrap();
        assert_eq!(p.layers[0].weights.shape(), (200, 840));
        assert_eq!(p.layers.last().unwrap().weights.shape(), (80, 200));
        assert!(p.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        let bound = (6.0f64 / 1040.0).sqrt();
        assert!(p.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert_eq!(p, init_params(&arch, 3).unwrap());
        assert_ne!(p, init_params(&arch, 4).unwrap());
        p.validate().unwrap();
    }

    #[test]
    fn bottleneck_shape() {
        let arch = MlpArchitecture::bottleneck(907, 80);
        assert_eq!(arch.dims(), vec![907, 200, 200, 200, 200, 100, 80]);
    }

    #[test]
    fn zero_params_give_uniform_softmax() {
        let arch = MlpArchitecture::plain(10, 80);
        let p = MlpParams::zeros(&arch).unwrap();
        let x = DMatrix::from_fn(10, 3, |r, c| (r * 3 + c) as f64 - 7.0);
        let pass = forward(&p, &x).unwrap();
        assert!(pass.output.iter().all(|&v| (v - 0.0125).abs() < 1e-15));
        let (loss, _) = loss_and_gradients(&p, &x, &[0, 5, 79]).unwrap();
        assert!((loss - 80f64.ln()).abs() < 1e-12, "{loss}");
        assert!((loss - 4.3820).abs() < 1e-4);
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let arch = small_arch(Activation::HyperbolicTangent);
        let mut p = init_params(&arch, 1).unwrap();
        p.layers[1].weights *= 40.0;
        let x = DMatrix::from_fn(5, 7, |r, c| ((r + 2 * c) as f64).sin() * 30.0);
        let pass = forward(&p, &x).unwrap();
        for col in pass.output.column_iter() {
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_and_target_errors() {
        let p = init_params(&small_arch(Activation::Logistic), 0).unwrap();
        let err = forward(&p, &DMatrix::zeros(4, 1)).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        assert!(loss_and_gradients(&p, &DMatrix::zeros(5, 1), &[2]).is_err());
    }

    #[test]
    fn linear_softmax_gradient_closed_form() {
        let arch = MlpArchitecture {
            input_dim: 3,
            hidden_dims: vec![],
            output_dim: 4,
            activation: Activation::RectifiedLinear,
        };
        let p = init_params(&arch, 9).unwrap();
        let x = DMatrix::from_column_slice(3, 1, &[0.5, -1.5, 2.0]);
        let (_, g) = loss_and_gradients(&p, &x, &[2]).unwrap();
        let probs = forward(&p, &x).unwrap().output;
        for k in 0..4 {
            let r = probs[(k, 0)] - if k == 2 { 1.0 } else { 0.0 };
            for i in 0..3 {
                assert!((g[0].weights[(k, i)] - r * x[(i, 0)]).abs() < 1e-14);
            }
            assert!((g[0].biases[k] - r).abs() < 1e-14);
        }
    }
}
