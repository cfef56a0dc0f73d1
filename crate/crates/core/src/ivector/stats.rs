use nalgebra::{DMatrix, DVector};

use super::ubm::{check_dim, GmmUbm};
use crate::corpus::FeatureMatrix;
use crate::Result;

/// Zero-order and centred first-order Baum-Welch statistics of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct BwStats {
    /// Component occupancies `N_c = sum_t gamma_t(c)`.
    pub zero: DVector<f64>,
    /// `C × F`, row c is `sum_t gamma_t(c) (x_t - mu_c)`.
    pub first: DMatrix<f64>,
}

impl BwStats {
    pub fn zeros(components: usize, dim: usize) -> Self {
        BwStats {
            zero: DVector::zeros(components),
            first: DMatrix::zeros(components, dim),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.zero.iter().chain(self.first.iter()).all(|v| v.is_finite())
    }
}

pub fn accumulate_stats(ubm: &GmmUbm, frames: &FeatureMatrix) -> Result<BwStats> {
    check_dim(ubm, frames)?;
    let (c, f) = (ubm.num_components(), ubm.feature_dim());
    let scorer = ubm.scorer();
    let mut gamma = vec![0.0; c];
    let mut stats = BwStats::zeros(c, f);
    for x in frames.iter_rows() {
        scorer.posteriors(x, &mut gamma);
        for (k, &g) in gamma.iter().enumerate() {
            stats.zero[k] += g;
            for d in 0..f {
                stats.first[(k, d)] += g * (x[d] - ubm.means[(k, d)]);
            }
        }
    }
    Ok(stats)
}
