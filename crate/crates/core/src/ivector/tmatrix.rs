//! Total variability model.
//!
//! Each utterance's supervector offset is `T w` with `w ~ N(0, I)`. Given
//! Baum-Welch statistics, the posterior of `w` is Gaussian with precision
//! `L = I + sum_c N_c T_c' S_c^-1 T_c` and mean `L^-1 sum_c T_c' S_c^-1 F_c`,
//! where `S_c` is the diagonal UBM covariance of component `c`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{BwStats, GmmUbm};
use crate::linalg::{cholesky_with_ridge, log_det_cholesky, symmetrize};
use crate::{EmFit, Error, Result};

/// Total variability matrix, stored as one `F × D` block per UBM component.
#[derive(Debug, Clone, PartialEq)]
pub struct TMatrix {
    pub blocks: Vec<DMatrix<f64>>,
}

impl TMatrix {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("tmatrix", "no component blocks"))?;
        let shape = first.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::invalid("tmatrix", "empty blocks"));
        }
        if blocks.iter().any(|b| b.shape() != shape) {
            return Err(Error::invalid("tmatrix", "blocks differ in shape"));
        }
        if blocks.iter().flat_map(|b| b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("tmatrix", "non-finite entries"));
        }
        Ok(TMatrix { blocks })
    }

    pub fn num_components(&self) -> usize {
        self.blocks.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn ivector_dim(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// The full `C·F × D` matrix.
    pub fn supervector_matrix(&self) -> DMatrix<f64> {
        let (f, d) = self.blocks[0].shape();
        let mut m = DMatrix::zeros(f * self.blocks.len(), d);
        for (c, b) in self.blocks.iter().enumerate() {
            m.view_mut((c * f, 0), (f, d)).copy_from(b);
        }
        m
    }

    fn check_ubm(&self, ubm: &GmmUbm) -> Result<()> {
        if self.num_components() != ubm.num_components() {
            return Err(Error::dim("T-matrix components vs UBM", ubm.num_components(), self.num_components()));
        }
        if self.feature_dim() != ubm.feature_dim() {
            return Err(Error::dim("T-matrix feature dim vs UBM", ubm.feature_dim(), self.feature_dim()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IVector {
    pub values: Vec<f64>,
}

/// Gaussian initialisation scaled by `0.1 * mean(sqrt(UBM variances))`.
pub fn init_tmatrix(ubm: &GmmUbm, dim: usize, seed: u64) -> Result<TMatrix> {
    let (c, f) = (ubm.num_components(), ubm.feature_dim());
    if dim == 0 || dim > c * f {
        return Err(Error::invalid(
            "ivector_dim",
            format!("{dim} must be in 1..={} (C·F)", c * f),
        ));
    }
    let scale = 0.1 * ubm.variances.iter().map(|v| v.sqrt()).sum::<f64>() / (c * f) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = (0..c)
        .map(|_| {
            let mut b = DMatrix::zeros(f, dim);
            for r in 0..f {
                for k in 0..dim {
                    b[(r, k)] = scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            b
        })
        .collect();
    TMatrix::new(blocks)
}

/// Per-model quantities reused across utterances.
pub struct IvectorExtractor {
    dim: usize,
    /// `T_c' S_c^-1`, `D × F` per component.
    projections: Vec<DMatrix<f64>>,
    /// `T_c' S_c^-1 T_c`, `D × D` per component.
    precisions: Vec<DMatrix<f64>>,
}

/// Posterior of the latent factor for one utterance.
pub(crate) struct FactorPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `0.5 b' L^-1 b - 0.5 log|L|`: the utterance's contribution to the
    /// marginal log-likelihood, up to terms independent of T.
    pub log_evidence: f64,
}

impl IvectorExtractor {
    pub fn new(ubm: &GmmUbm, t: &TMatrix) -> Result<Self> {
        t.check_ubm(ubm)?;
        let mut projections = Vec::with_capacity(t.num_components());
        let mut precisions = Vec::with_capacity(t.num_components());
        for (c, block) in t.blocks.iter().enumerate() {
            let mut proj = block.transpose();
            for (j, mut col) in proj.column_iter_mut().enumerate() {
                col /= ubm.variances[(c, j)];
            }
            let mut prec = &proj * block;
            symmetrize(&mut prec);
            precisions.push(prec);
            projections.push(proj);
        }
        Ok(IvectorExtractor {
            dim: t.ivector_dim(),
            projections,
            precisions,
        })
    }

    fn check_stats(&self, stats: &BwStats) -> Result<()> {
        let c = self.projections.len();
        let f = self.projections[0].ncols();
        if stats.zero.len() != c || stats.first.shape() != (c, f) {
            return Err(Error::dim("Baum-Welch stats components", c, stats.zero.len()));
        }
        if !stats.is_finite() {
            return Err(Error::invalid("stats", "non-finite Baum-Welch statistics"));
        }
        Ok(())
    }

    pub(crate) fn posterior(&self, stats: &BwStats, with_covariance: bool) -> Result<FactorPosterior> {
        self.check_stats(stats)?;
        let mut precision = DMatrix::identity(self.dim, self.dim);
        let mut linear = DVector::zeros(self.dim);
        for (c, (proj, prec)) in self.projections.iter().zip(&self.precisions).enumerate() {
            let n = stats.zero[c];
            if n != 0.0 {
                precision.zip_apply(prec, |a, b| *a += n * b);
            }
            linear.gemv(1.0, proj, &stats.first.row(c).transpose(), 1.0);
        }
        let chol = cholesky_with_ridge(precision, 1e-10, "i-vector precision")?;
        let mean = chol.solve(&linear);
        let log_evidence = 0.5 * linear.dot(&mean) - 0.5 * log_det_cholesky(&chol);
        let covariance = if with_covariance {
            chol.inverse()
        } else {
            DMatrix::zeros(0, 0)
        };
        Ok(FactorPosterior {
            mean,
            covariance,
            log_evidence,
        })
    }

    pub fn extract(&self, stats: &BwStats) -> Result<IVector> {
        let post = self.posterior(stats, false)?;
        Ok(IVector {
            values: post.mean.as_slice().to_vec(),
        })
    }
}

/// Posterior-mean i-vector of one utterance. Prefer [`IvectorExtractor`]
/// when extracting many.
pub fn extract_ivector(ubm: &GmmUbm, t: &TMatrix, stats: &BwStats) -> Result<IVector> {
    IvectorExtractor::new(ubm, t)?.extract(stats)
}

fn total_evidence(ubm: &GmmUbm, t: &TMatrix, stats: &[BwStats]) -> Result<f64> {
    let ex = IvectorExtractor::new(ubm, t)?;
    stats.iter().try_fold(0.0, |acc, s| Ok(acc + ex.posterior(s, false)?.log_evidence))
}

/// EM training of the total variability matrix with the UBM held fixed.
///
/// The objective is the marginal log-likelihood of the first-order
/// statistics (up to a T-independent constant).
pub fn train_tmatrix(
    stats: &[BwStats],
    ubm: &GmmUbm,
    dim: usize,
    iterations: usize,
    seed: u64,
) -> Result<EmFit<TMatrix>> {
    if stats.is_empty() {
        return Err(Error::invalid("stats", "no utterances"));
    }
    let (c, f) = (ubm.num_components(), ubm.feature_dim());
    if stats.len() < dim {
        log::warn!("T-matrix: {} utterances for a {dim}-dim factor", stats.len());
    }
    let mut t = init_tmatrix(ubm, dim, seed)?;
    let mut objective = Vec::with_capacity(iterations + 1);
    for it in 0..iterations {
        let ex = IvectorExtractor::new(ubm, &t)?;
        let mut a: Vec<DMatrix<f64>> = vec![DMatrix::zeros(dim, dim); c];
        let mut cross: Vec<DMatrix<f64>> = vec![DMatrix::zeros(f, dim); c];
        let mut total = 0.0;
        for s in stats {
            let post = ex.posterior(s, true)?;
            total += post.log_evidence;
            let mut second = post.covariance;
            second.ger(1.0, &post.mean, &post.mean, 1.0);
            for k in 0..c {
                let n = s.zero[k];
                if n != 0.0 {
                    a[k].zip_apply(&second, |x, y| *x += n * y);
                }
                cross[k].ger(1.0, &s.first.row(k).transpose(), &post.mean, 1.0);
            }
        }
        objective.push(total);
        log::debug!("T-matrix iteration {it}: objective {total:.6}");
        let mut blocks = Vec::with_capacity(c);
        for (k, (mut ak, ck)) in a.into_iter().zip(cross).enumerate() {
            symmetrize(&mut ak);
            let chol = cholesky_with_ridge(ak, 1e-8, &format!("T-matrix M-step, component {k}"))?;
            blocks.push(chol.solve(&ck.transpose()).transpose());
        }
        t = TMatrix::new(blocks)?;
    }
    objective.push(total_evidence(ubm, &t, stats)?);
    Ok(EmFit { model: t, objective })
}
