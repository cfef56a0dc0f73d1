//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factorisation; on failure retries with a diagonal ridge of
/// `ridge * max(1, mean diagonal)` and logs a warning naming `what`.
pub(crate) fn cholesky_with_ridge(
    m: DMatrix<f64>,
    ridge: f64,
    what: &str,
) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch);
    }
    let n = m.nrows();
    let scale = (m.trace() / n as f64).abs().max(1.0);
    let mut bump = ridge * scale;
    for _ in 0..8 {
        let mut r = m.clone();
        for i in 0..n {
            r[(i, i)] += bump;
        }
        if let Some(ch) = Cholesky::new(r) {
            log::warn!("{what}: matrix not positive definite, solved with ridge {bump:e}");
            return Ok(ch);
        }
        bump *= 100.0;
    }
    Err(Error::Numerical(format!("{what}: matrix is not positive definite")))
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// (eigenvectors permuted to match).
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        // Fix the sign so the largest-magnitude entry is positive.
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Clamps the eigenvalues of a symmetric matrix from below.
pub(crate) fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    let clamped = DMatrix::from_diagonal(&vals.map(|v| v.max(floor)));
    let mut out = &vecs * clamped * vecs.transpose();
    symmetrize(&mut out);
    out
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn log_det_cholesky(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}
