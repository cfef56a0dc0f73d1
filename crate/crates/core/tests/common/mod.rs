//! Reference implementations shared by the integration tests. Nothing here
//! calls into the code paths it is used to check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spkver::corpus::{Dataset, FeatureMatrix, UtteranceRecord};
use spkver::neuralnet::{cross_entropy, forward, init_params, loss_and_gradients, Activation, MlpArchitecture};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// EER by direct counting at every candidate threshold (`-inf`, midpoints of
/// adjacent distinct scores, `+inf`). O(n^2).
pub fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);

    let nt = labels.iter().filter(|&&l| l).count() as u64;
    let nn = labels.len() as u64 - nt;
    let counts: Vec<(u64, u64)> = thresholds
        .iter()
        .map(|&th| {
            let mut miss = 0;
            let mut fa = 0;
            for (&s, &l) in scores.iter().zip(labels) {
                if l && s <= th {
                    miss += 1;
                }
                if !l && s > th {
                    fa += 1;
                }
            }
            (miss, fa)
        })
        .collect();
    let frr = |k: usize| counts[k].0 as f64 / nt as f64;
    let far = |k: usize| counts[k].1 as f64 / nn as f64;
    let k = (0..counts.len())
        .find(|&k| counts[k].0 * nn >= counts[k].1 * nt)
        .unwrap();
    if counts[k].0 * nn == counts[k].1 * nt {
        return far(k);
    }
    // FRR - FAR changes sign between k-1 and k; intersect the two segments.
    let (a0, a1) = (frr(k - 1), frr(k));
    let (b0, b1) = (far(k - 1), far(k));
    let t = (b0 - a0) / ((a1 - a0) - (b1 - b0));
    b0 + t * (b1 - b0)
}

/// Random labelled scores with both classes present. With `ties` the scores
/// are rounded to half-integers so many of them coincide.
pub fn random_trials(rng: &mut ChaCha8Rng, max_len: usize, ties: bool) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_len);
    let shift = rng.random_range(0.0..3.0);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let s = normal(rng) + if l { shift } else { 0.0 };
            if ties {
                (s * 2.0).round()
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

/// Largest relative error between back-propagated gradients and central
/// differences for one random network. The denominator is floored at
/// `1e-7` so parameters with a vanishing gradient are compared absolutely.
pub fn gradient_check(seed: u64, step: f64) -> f64 {
    let mut r = rng(seed);
    let activation = [
        Activation::HyperbolicTangent,
        Activation::Logistic,
        Activation::RectifiedLinear,
    ][seed as usize % 3];
    let n_hidden = r.random_range(1..=3);
    let mut budget = 30usize;
    let input_dim = r.random_range(1..=6);
    let output_dim = r.random_range(2..=5);
    budget -= output_dim;
    let hidden_dims: Vec<usize> = (0..n_hidden)
        .map(|i| {
            let left = n_hidden - i;
            let d = r.random_range(1..=(budget / left).min(8));
            budget -= d;
            d
        })
        .collect();
    let arch = MlpArchitecture {
        input_dim,
        hidden_dims,
        output_dim,
        activation,
    };
    let mut params = init_params(&arch, seed).unwrap();
    for l in &mut params.layers {
        l.biases.apply(|b| *b = 0.3 * normal(&mut r));
    }
    let batch = r.random_range(1..=5);
    let x = DMatrix::from_fn(input_dim, batch, |_, _| normal(&mut r));
    let y: Vec<usize> = (0..batch).map(|_| r.random_range(0..output_dim)).collect();

    let (_, grads) = loss_and_gradients(&params, &x, &y).unwrap();
    let loss = |p: &spkver::neuralnet::MlpParams| cross_entropy(&forward(p, &x).unwrap(), &y);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
    let mut worst = 0.0f64;
    for l in 0..params.layers.len() {
        let (rows, cols) = params.layers[l].weights.shape();
        for i in 0..rows {
            for j in 0..cols {
                let mut p = params.clone();
                p.layers[l].weights[(i, j)] += step;
                let up = loss(&p);
                p.layers[l].weights[(i, j)] -= 2.0 * step;
                let down = loss(&p);
                worst = worst.max(rel(grads[l].weights[(i, j)], (up - down) / (2.0 * step)));
            }
            let mut p = params.clone();
            p.layers[l].biases[i] += step;
            let up = loss(&p);
            p.layers[l].biases[i] -= 2.0 * step;
            let down = loss(&p);
            worst = worst.max(rel(grads[l].biases[i], (up - down) / (2.0 * step)));
        }
    }
    worst
}

/// `speakers × utts` utterances with one-frame features, ids `sNN_uNNN`.
pub fn tiny_dataset(speakers: usize, utts: usize) -> Dataset {
    let mut records = Vec::with_capacity(speakers * utts);
    for s in 0..speakers {
        for u in 0..utts {
            records.push(UtteranceRecord {
                utterance_id: format!("s{s:02}_u{u:03}"),
                speaker_id: format!("s{s:02}"),
                phrase_id: "P01".into(),
                features: FeatureMatrix::filled(1, 1, s as f64).unwrap(),
                feature_path: None,
                phone_labels: None,
            });
        }
    }
    Dataset::new(records, Vec::new()).unwrap()
}

/// Log density of `N(x; mean, cov)` via a Cholesky factor.
pub fn log_gauss(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let chol = cov.clone().cholesky().expect("covariance must be positive definite");
    let diff = x - mean;
    let sol = chol.solve(&diff);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + diff.dot(&sol))
}

/// Random symmetric positive definite matrix `A A' + eps I`.
pub fn random_spd(r: &mut ChaCha8Rng, d: usize, eps: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(r));
    &a * a.transpose() + DMatrix::identity(d, d) * eps
}

/// Largest principal angle in degrees between the column spans of `a` and `b`.
pub fn largest_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let sv = (qa.transpose() * qb).singular_values();
    sv.min().clamp(-1.0, 1.0).acos().to_degrees()
}

/// Non-decreasing within `rel` relative slack.
pub fn is_monotone(objective: &[f64], rel: f64) -> bool {
    objective
        .windows(2)
        .all(|w| w[1] >= w[0] - rel * w[0].abs())
}
