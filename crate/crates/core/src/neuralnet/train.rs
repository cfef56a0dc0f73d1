//! Minibatch SGD with cross-validation driven learning-rate halving.
//!
//! The learning rate is a per-frame rate: the minibatch gradient is summed
//! over frames, not averaged, so the step on the mean loss is
//! `lr * minibatch_len`. After every epoch the held-out CV loss is compared
//! with the best so far. An epoch that makes it worse, or whose loss turns
//! non-finite, is rolled back; when the relative improvement is below
//! `lr_halving_threshold` the rate is halved. Training ends once the rate
//! drops below `lr_floor` or after `max_epochs`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, forward, init_params, loss_and_gradients, MlpArchitecture, MlpParams};
use crate::corpus::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Minimum relative CV loss improvement that keeps the rate unchanged.
    pub lr_halving_threshold: f64,
    pub lr_floor: f64,
    pub max_epochs: usize,
    pub minibatch_size: usize,
    pub seed: u64,
    /// Fraction of each speaker's utterances held out for cross-validation.
    pub cv_fraction: f64,
    /// Train on globally standardised inputs and fold the transform into the
    /// first layer afterwards.
    pub standardize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.008,
            lr_halving_threshold: 0.005,
            lr_floor: 1e-5,
            max_epochs: 40,
            minibatch_size: 256,
            seed: 0,
            cv_fraction: 1000.0 / 12000.0,
            standardize_inputs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_floor > 0.0 && self.initial_lr > self.lr_floor) {
            return Err(Error::invalid(
                "initial_lr",
                format!(
                    "need initial_lr ({}) > lr_floor ({}) > 0",
                    self.initial_lr, self.lr_floor
                ),
            ));
        }
        if !(self.cv_fraction > 0.0 && self.cv_fraction < 1.0) {
            return Err(Error::invalid("cv_fraction", format!("{} not in (0, 1)", self.cv_fraction)));
        }
        if self.minibatch_size == 0 {
            return Err(Error::invalid("minibatch_size", "must be >= 1"));
        }
        if !(self.lr_halving_threshold >= 0.0) {
            return Err(Error::invalid("lr_halving_threshold", "must be >= 0"));
        }
        Ok(())
    }
}

/// All frames of one utterance with its speaker class.
#[derive(Debug, Clone)]
pub struct LabeledUtterance {
    /// Network inputs, one frame per row.
    pub inputs: FeatureMatrix,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub cv_loss: f64,
    pub cv_accuracy: f64,
    /// False when the epoch made the CV loss worse and was rolled back.
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    LrFloor,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_cv_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

struct FrameSet {
    inputs: DMatrix<f64>,
    targets: Vec<usize>,
}

impl FrameSet {
    fn build(utts: &[&LabeledUtterance], dim: usize) -> Self {
        let n: usize = utts.iter().map(|u| u.inputs.rows()).sum();
        let mut data = Vec::with_capacity(n * dim);
        let mut targets = Vec::with_capacity(n);
        for u in utts {
            data.extend_from_slice(u.inputs.as_slice());
            targets.extend(std::iter::repeat_n(u.class, u.inputs.rows()));
        }
        FrameSet {
            inputs: DMatrix::from_vec(dim, n, data),
            targets,
        }
    }

    fn len(&self) -> usize {
        self.targets.len()
    }
}

struct Standardizer {
    mean: DVector<f64>,
    inv_std: DVector<f64>,
}

impl Standardizer {
    fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.ncols() as f64;
        let mean = x.column_mean();
        let mut var = DVector::<f64>::zeros(x.nrows());
        for col in x.column_iter() {
            for (v, (c, m)) in var.iter_mut().zip(col.iter().zip(mean.iter())) {
                *v += (c - m) * (c - m);
            }
        }
        let inv_std = var.map(|v| {
            let v = v / n;
            if v < 1e-8 {
                1.0
            } else {
                1.0 / v.sqrt()
            }
        });
        Standardizer { mean, inv_std }
    }

    fn apply(&self, x: &mut DMatrix<f64>) {
        for mut col in x.column_iter_mut() {
            for ((v, m), s) in col.iter_mut().zip(self.mean.iter()).zip(self.inv_std.iter()) {
                *v = (*v - m) * s;
            }
        }
    }

    /// Rewrites the first layer so it accepts raw inputs.
    fn fold_into(&self, params: &mut MlpParams) {
        let layer = &mut params.layers[0];
        for (j, mut col) in layer.weights.column_iter_mut().enumerate() {
            col *= self.inv_std[j];
        }
        layer.biases -= &layer.weights * &self.mean;
    }
}

fn split_cv<'a>(
    utts: &'a [LabeledUtterance],
    n_classes: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<&'a LabeledUtterance>, Vec<&'a LabeledUtterance>)> {
    let mut by_class: Vec<Vec<&LabeledUtterance>> = vec![Vec::new(); n_classes];
    for u in utts {
        by_class[u.class].push(u);
    }
    let (mut train, mut cv) = (Vec::new(), Vec::new());
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::invalid(
                "classes",
                format!(
                    "class {c} has {} utterance(s); need one for training and one for CV",
                    members.len()
                ),
            ));
        }
        members.shuffle(rng);
        let n_cv = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        cv.extend(members.drain(..n_cv));
        train.extend(members);
    }
    Ok((train, cv))
}

fn evaluate(params: &MlpParams, set: &FrameSet) -> Result<(f64, f64)> {
    const CHUNK: usize = 4096;
    let (mut loss, mut correct) = (0.0, 0usize);
    let mut start = 0;
    while start < set.len() {
        let end = (start + CHUNK).min(set.len());
        let x = set.inputs.columns(start, end - start).into_owned();
        let targets = &set.targets[start..end];
        let pass = forward(params, &x)?;
        loss += cross_entropy(&pass, targets) * targets.len() as f64;
        correct += pass
            .output
            .column_iter()
            .zip(targets)
            .filter(|(col, &t)| col.argmax().0 == t)
            .count();
        start = end;
    }
    let n = set.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn gather(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let rows = x.nrows();
    let mut data = Vec::with_capacity(rows * idx.len());
    for &i in idx {
        data.extend_from_slice(x.column(i).as_slice());
    }
    DMatrix::from_vec(rows, idx.len(), data)
}

fn run_epoch(
    params: &mut MlpParams,
    set: &FrameSet,
    lr: f64,
    batch: usize,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<Option<f64>> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for (b, idx) in order.chunks(batch).enumerate() {
        let x = gather(&set.inputs, idx);
        let targets: Vec<usize> = idx.iter().map(|&i| set.targets[i]).collect();
        let (loss, grads) = loss_and_gradients(params, &x, &targets)?;
        if !loss.is_finite() {
            log::warn!("dnn epoch {epoch}: non-finite loss at minibatch {b} (lr {lr:.3e}); rolling back");
            return Ok(None);
        }
        total += loss * idx.len() as f64;
        let step = lr * idx.len() as f64;
        for (layer, g) in params.layers.iter_mut().zip(&grads) {
            layer.weights.zip_apply(&g.weights, |w, d| *w -= step * d);
            layer.biases.axpy(-step, &g.biases, 1.0);
        }
    }
    Ok(Some(total / set.len() as f64))
}

/// Trains a speaker classifier on labelled utterances.
///
/// Every class in `0..arch.output_dim` needs at least two utterances so that
/// one can be held out for cross-validation.
pub fn train(
    utts: &[LabeledUtterance],
    arch: &MlpArchitecture,
    config: &TrainConfig,
) -> Result<(MlpParams, TrainReport)> {
    arch.validate()?;
    config.validate()?;
    if arch.output_dim < 2 {
        return Err(Error::invalid("output_dim", "need at least 2 speakers"));
    }
    for (i, u) in utts.iter().enumerate() {
        if u.inputs.cols() != arch.input_dim {
            return Err(Error::dim(format!("inputs of utterance {i}"), arch.input_dim, u.inputs.cols()));
        }
        if u.class >= arch.output_dim {
            return Err(Error::invalid(
                "class",
                format!("utterance {i} has class {} >= {}", u.class, arch.output_dim),
            ));
        }
    }

    let mut params = init_params(arch, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c0de_0000_0001);
    let (train_utts, cv_utts) = split_cv(utts, arch.output_dim, config.cv_fraction, &mut rng)?;
    let mut train_set = FrameSet::build(&train_utts, arch.input_dim);
    let mut cv_set = FrameSet::build(&cv_utts, arch.input_dim);

    let standardizer = config.standardize_inputs.then(|| {
        let s = Standardizer::fit(&train_set.inputs);
        s.apply(&mut train_set.inputs);
        s.apply(&mut cv_set.inputs);
        s
    });

    let (initial_cv_loss, _) = evaluate(&params, &cv_set)?;
    let mut best_cv = initial_cv_loss;
    let mut lr = config.initial_lr;
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    log::info!(
        "dnn: {} train / {} cv frames, initial cv loss {initial_cv_loss:.4}",
        train_set.len(),
        cv_set.len()
    );

    for epoch in 0..config.max_epochs {
        let snapshot = params.clone();
        let train_loss = run_epoch(&mut params, &train_set, lr, config.minibatch_size, &mut rng, epoch)?;
        let (cv_loss, cv_accuracy) = match train_loss {
            Some(_) => evaluate(&params, &cv_set)?,
            None => (f64::NAN, f64::NAN),
        };
        let train_loss = train_loss.unwrap_or(f64::NAN);
        // A diverged epoch (non-finite loss) is rejected like any other
        // epoch that fails to improve the CV loss.
        let accepted = cv_loss <= best_cv;
        log::info!(
            "dnn epoch {epoch}: lr {lr:.3e} train {train_loss:.4} cv {cv_loss:.4} acc {cv_accuracy:.4}{}",
            if accepted { "" } else { " (rejected)" }
        );
        epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            cv_loss,
            cv_accuracy,
            accepted,
        });
        let improvement = if cv_loss.is_finite() {
            (best_cv - cv_loss) / best_cv.abs().max(f64::MIN_POSITIVE)
        } else {
            f64::NEG_INFINITY
        };
        if accepted {
            best_cv = cv_loss;
        } else {
            params = snapshot;
        }
        if improvement < config.lr_halving_threshold {
            lr *= 0.5;
        }
        if lr < config.lr_floor {
            stop = StopReason::LrFloor;
            break;
        }
    }

    if let (Some(s), false) = (&standardizer, epochs.is_empty()) {
        s.fold_into(&mut params);
    }
    Ok((
        params,
        TrainReport {
            initial_cv_loss,
            epochs,
            stop,
        },
    ))
}
