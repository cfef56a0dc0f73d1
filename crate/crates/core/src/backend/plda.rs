//! Two-covariance PLDA: `x = mu + y + e`, `y ~ N(0, B)` shared by a
//! speaker's vectors, `e ~ N(0, W)` drawn per vector.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::lda::{group_by_label, to_columns};
use super::length_normalize;
use crate::linalg::{cholesky_with_ridge, floor_eigenvalues, log_det_cholesky, sym_eigen_desc, symmetrize};
use crate::{EmFit, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mean: DVector<f64>,
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
    /// Inputs are scaled to unit length before centring.
    pub length_norm: bool,
    /// Columns `v_k` with `V' W V = I` and `V' B V = diag(psi)`.
    basis: DMatrix<f64>,
    /// Per-dimension quadratic and cross coefficients of the LLR.
    quad: Vec<f64>,
    cross: Vec<f64>,
    offset: f64,
}

/// Smallest eigenvalue kept in W, relative to its mean eigenvalue.
const WITHIN_FLOOR_REL: f64 = 1e-6;
const WITHIN_FLOOR_ABS: f64 = 1e-10;

fn floor_for(m: &DMatrix<f64>) -> f64 {
    (WITHIN_FLOOR_REL * m.trace() / m.nrows() as f64).max(WITHIN_FLOOR_ABS)
}

impl PldaModel {
    pub fn new(mean: DVector<f64>, between: DMatrix<f64>, within: DMatrix<f64>, length_norm: bool) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("plda", "zero dimension"));
        }
        if between.shape() != (d, d) {
            return Err(Error::dim("PLDA between covariance", d, between.nrows()));
        }
        if within.shape() != (d, d) {
            return Err(Error::dim("PLDA within covariance", d, within.nrows()));
        }
        if mean.iter().chain(between.iter()).chain(within.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("plda", "non-finite parameters"));
        }
        let asym = |m: &DMatrix<f64>| (m - m.transpose()).abs().max() > 1e-9 * m.abs().max().max(1.0);
        if asym(&between) || asym(&within) {
            return Err(Error::invalid("plda", "covariances must be symmetric"));
        }
        let (wvals, _) = sym_eigen_desc(&within);
        if wvals[d - 1] <= WITHIN_FLOOR_ABS {
            return Err(Error::Numerical(format!(
                "PLDA within covariance not positive definite (min eigenvalue {:e})",
                wvals[d - 1]
            )));
        }
        let (bvals, _) = sym_eigen_desc(&between);
        if bvals[d - 1] < -1e-9 * bvals[0].abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "PLDA between covariance not positive semi-definite (min eigenvalue {:e})",
                bvals[d - 1]
            )));
        }

        let chol = nalgebra::Cholesky::new(within.clone())
            .ok_or_else(|| Error::Numerical("PLDA within covariance not positive definite".into()))?;
        let l = chol.l();
        let linv_b = l.solve_lower_triangular(&between).expect("triangular factor of a PD matrix");
        let mut m = l.solve_lower_triangular(&linv_b.transpose()).expect("triangular factor of a PD matrix");
        symmetrize(&mut m);
        let (psi, q) = sym_eigen_desc(&m);
        let basis = l.transpose().solve_upper_triangular(&q).expect("triangular factor of a PD matrix");
        let mut quad = Vec::with_capacity(d);
        let mut cross = Vec::with_capacity(d);
        let mut offset = 0.0;
        for &p in psi.iter() {
            let b = p.max(0.0);
            let s = 1.0 + b;
            let det = s * s - b * b;
            quad.push(s / det - 1.0 / s);
            cross.push(b / det);
            offset += -0.5 * det.ln() + s.ln();
        }
        Ok(PldaModel {
            mean,
            between,
            within,
            length_norm,
            basis,
            quad,
            cross,
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps a raw vector into the diagonalising basis used by
    /// [`score_projected`](Self::score_projected).
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::dim("PLDA input", self.dim(), v.len()));
        }
        let v = if self.length_norm { length_normalize(v) } else { v.to_vec() };
        let centred = DVector::from_iterator(v.len(), v.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(self.basis.tr_mul(&centred).as_slice().to_vec())
    }

    pub fn score_projected(&self, e: &[f64], t: &[f64]) -> f64 {
        let mut llr = self.offset;
        for k in 0..e.len() {
            llr += -0.5 * self.quad[k] * (e[k] * e[k] + t[k] * t[k]) + self.cross[k] * e[k] * t[k];
        }
        llr
    }

    /// Log-likelihood ratio of same-speaker against different-speaker.
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        Ok(self.score_projected(&self.project(enroll)?, &self.project(test)?))
    }
}

struct Posterior {
    /// `Lambda^-1` with `Lambda = B^-1 + n W^-1`.
    cov: DMatrix<f64>,
    log_det_precision: f64,
}

/// E-step quantities shared by all speakers with the same vector count.
fn posterior_for(n: usize, binv: &DMatrix<f64>, winv: &DMatrix<f64>) -> Result<Posterior> {
    let mut prec = binv + winv * n as f64;
    symmetrize(&mut prec);
    let chol = cholesky_with_ridge(prec, 1e-10, "PLDA speaker posterior")?;
    let mut cov = chol.inverse();
    symmetrize(&mut cov);
    Ok(Posterior {
        log_det_precision: log_det_cholesky(&chol),
        cov,
    })
}

fn inverse_pd(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let chol = cholesky_with_ridge(m.clone(), 1e-10, what)?;
    let logdet = log_det_cholesky(&chol);
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok((inv, logdet))
}

struct SpeakerSums {
    n: usize,
    /// Sum of centred vectors.
    sum: DVector<f64>,
}

/// One E-step pass. Returns the log-likelihood of the data under (B, W)
/// and, when `accumulate`, the updated (B, W).
fn em_pass(
    speakers: &[SpeakerSums],
    scatter: &DMatrix<f64>,
    total: usize,
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
    accumulate: bool,
) -> Result<(f64, Option<(DMatrix<f64>, DMatrix<f64>)>)> {
    let d = b.nrows();
    let (binv, logdet_b) = inverse_pd(b, "PLDA between covariance")?;
    let (winv, logdet_w) = inverse_pd(w, "PLDA within covariance")?;
    let mut cache: HashMap<usize, Posterior> = HashMap::new();
    let mut ll = -0.5 * (winv.component_mul(scatter)).sum() - 0.5 * total as f64 * (d as f64 * (2.0 * PI).ln() + logdet_w);
    let mut b_acc = DMatrix::zeros(d, d);
    let mut w_acc = scatter.clone();
    for s in speakers {
        if !cache.contains_key(&s.n) {
            cache.insert(s.n, posterior_for(s.n, &binv, &winv)?);
        }
        let post = &cache[&s.n];
        let lin = &winv * &s.sum;
        let y = &post.cov * &lin;
        ll += -0.5 * logdet_b - 0.5 * post.log_det_precision + 0.5 * lin.dot(&y);
        if accumulate {
            let mut second = post.cov.clone();
            second.ger(1.0, &y, &y, 1.0);
            b_acc += &second;
            w_acc.ger(-1.0, &y, &s.sum, 1.0);
            w_acc.ger(-1.0, &s.sum, &y, 1.0);
            w_acc.zip_apply(&second, |a, e| *a += s.n as f64 * e);
        }
    }
    if !accumulate {
        return Ok((ll, None));
    }
    b_acc /= speakers.len() as f64;
    w_acc /= total as f64;
    symmetrize(&mut b_acc);
    symmetrize(&mut w_acc);
    Ok((ll, Some((b_acc, w_acc))))
}

/// EM for the two-covariance model with the mean fixed at the sample mean.
///
/// `objective[i]` is the data log-likelihood before update `i`.
pub fn train_plda<V: AsRef<[f64]>>(
    vectors: &[V],
    labels: &[usize],
    iterations: usize,
    length_norm: bool,
) -> Result<EmFit<PldaModel>> {
    if vectors.len() != labels.len() {
        return Err(Error::dim("PLDA labels", vectors.len(), labels.len()));
    }
    let x = if length_norm {
        let normed: Vec<Vec<f64>> = vectors.iter().map(|v| length_normalize(v.as_ref())).collect();
        to_columns(&normed)?
    } else {
        to_columns(vectors)?
    };
    let (d, n) = x.shape();
    let groups = group_by_label(labels);
    if groups.len() < 2 {
        return Err(Error::invalid("labels", "PLDA needs at least 2 speakers"));
    }
    if groups.iter().all(|g| g.len() < 2) {
        return Err(Error::invalid(
            "labels",
            "PLDA needs a speaker with at least 2 vectors (within-speaker covariance unidentifiable)",
        ));
    }
    if n < d {
        log::warn!("PLDA: {n} vectors for {d} dimensions; covariances will be floored");
    }
    let mean = x.column_mean();
    let centred = DMatrix::from_fn(d, n, |i, j| x[(i, j)] - mean[i]);
    let scatter = {
        let mut s = &centred * centred.transpose();
        symmetrize(&mut s);
        s
    };
    let speakers: Vec<SpeakerSums> = groups
        .iter()
        .map(|g| {
            let mut sum = DVector::zeros(d);
            for &i in g {
                sum += centred.column(i);
            }
            SpeakerSums { n: g.len(), sum }
        })
        .collect();

    // Initialise from the class-mean and pooled within-class scatter.
    let mut b = DMatrix::zeros(d, d);
    let mut w = scatter.clone();
    for s in &speakers {
        let m = &s.sum / s.n as f64;
        b.ger(1.0, &m, &m, 1.0);
        w.ger(-(s.n as f64), &m, &m, 1.0);
    }
    b /= speakers.len() as f64;
    w /= n as f64;
    symmetrize(&mut w);
    let total_floor = floor_for(&(&scatter / n as f64));
    let mut w = floor_eigenvalues(&w, floor_for(&w).max(total_floor * 1e-3));
    let mut b = floor_eigenvalues(&b, floor_for(&b));

    let mut objective = Vec::with_capacity(iterations + 1);
    for it in 0..iterations {
        let (ll, upd) = em_pass(&speakers, &scatter, n, &b, &w, true)?;
        objective.push(ll);
        log::debug!("PLDA iteration {it}: log-likelihood {ll:.6}");
        let (nb, nw) = upd.expect("accumulate requested");
        b = nb;
        w = floor_eigenvalues(&nw, floor_for(&nw));
    }
    objective.push(em_pass(&speakers, &scatter, n, &b, &w, false)?.0);
    let model = PldaModel::new(mean, b, w, length_norm)?;
    Ok(EmFit { model, objective })
}
