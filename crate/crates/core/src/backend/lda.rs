use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{cholesky_with_ridge, sym_eigen_desc, symmetrize};
use crate::{Error, Result};

/// Affine projection `v -> P' (v - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    pub mean: DVector<f64>,
    /// `D_in × D_out`.
    pub projection: DMatrix<f64>,
}

impl LdaTransform {
    pub fn new(mean: DVector<f64>, projection: DMatrix<f64>) -> Result<Self> {
        let (din, dout) = projection.shape();
        if mean.len() != din {
            return Err(Error::dim("LDA mean", din, mean.len()));
        }
        if dout == 0 || dout > din {
            return Err(Error::invalid("lda", format!("output dim {dout} not in 1..={din}")));
        }
        if mean.iter().chain(projection.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("lda", "non-finite parameters"));
        }
        let sv = projection.singular_values();
        let max = sv.max();
        if max == 0.0 || sv.min() <= 1e-12 * max {
            return Err(Error::invalid("lda", "projection directions are linearly dependent"));
        }
        Ok(LdaTransform { mean, projection })
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::dim("LDA input", self.input_dim(), v.len()));
        }
        let centred = DVector::from_iterator(v.len(), v.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(self.projection.tr_mul(&centred).as_slice().to_vec())
    }
}

/// Groups row indices by label, in label order.
pub(crate) fn group_by_label(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Stacks vectors as the columns of a `D × N` matrix.
pub(crate) fn to_columns<V: AsRef<[f64]>>(vectors: &[V]) -> Result<DMatrix<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("vectors", "empty training set"))?;
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::invalid("vectors", "zero-dimensional vectors"));
    }
    let mut m = DMatrix::zeros(d, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != d {
            return Err(Error::dim(format!("training vector {j}"), d, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("vectors", format!("training vector {j} is not finite")));
        }
        m.column_mut(j).copy_from_slice(v);
    }
    Ok(m)
}

/// Fisher LDA. Directions are the leading generalised eigenvectors of the
/// between- and within-class scatter, scaled so the projected within-class
/// covariance is the identity.
pub fn train_lda<V: AsRef<[f64]>>(vectors: &[V], labels: &[usize], out_dim: usize) -> Result<LdaTransform> {
    if vectors.len() != labels.len() {
        return Err(Error::dim("LDA labels", vectors.len(), labels.len()));
    }
    let x = to_columns(vectors)?;
    let (d, n) = x.shape();
    let groups = group_by_label(labels);
    if groups.len() < 2 {
        return Err(Error::invalid("labels", "LDA needs at least 2 classes"));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::invalid(
            "labels",
            format!("class of vector {} has a single vector", g[0]),
        ));
    }
    if out_dim == 0 || out_dim > groups.len() - 1 || out_dim > d {
        return Err(Error::invalid(
            "lda_dim",
            format!("{out_dim} must be in 1..={} (classes - 1, input dim)", (groups.len() - 1).min(d)),
        ));
    }
    let mean = x.column_mean();
    let mut sw = DMatrix::zeros(d, d);
    let mut sb = DMatrix::zeros(d, d);
    for g in &groups {
        let mut mc = DVector::zeros(d);
        for &i in g {
            mc += x.column(i);
        }
        mc /= g.len() as f64;
        for &i in g {
            let diff = x.column(i) - &mc;
            sw.ger(1.0, &diff, &diff, 1.0);
        }
        let dm = &mc - &mean;
        sb.ger(g.len() as f64, &dm, &dm, 1.0);
    }
    sw /= n as f64;
    sb /= n as f64;
    let ridge = 1e-6 * sw.trace() / d as f64;
    for i in 0..d {
        sw[(i, i)] += ridge.max(f64::MIN_POSITIVE);
    }
    symmetrize(&mut sw);
    let chol = cholesky_with_ridge(sw, 1e-6, "LDA within-class scatter")?;
    let l = chol.l();
    // M = L^-1 Sb L^-T
    let linv_sb = l.solve_lower_triangular(&sb).ok_or_else(|| Error::Numerical("LDA: singular factor".into()))?;
    let m = l
        .solve_lower_triangular(&linv_sb.transpose())
        .ok_or_else(|| Error::Numerical("LDA: singular factor".into()))?;
    let (_, u) = sym_eigen_desc(&m);
    let top = u.columns(0, out_dim).into_owned();
    let projection = l
        .transpose()
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Numerical("LDA: singular factor".into()))?;
    LdaTransform::new(mean, projection)
}
