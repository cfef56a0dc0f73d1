use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::FeatureMatrix;
use crate::linalg::log_sum_exp;
use crate::{EmFit, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative variance floor, applied per dimension against the global
/// variance of the training frames.
const VARIANCE_FLOOR: f64 = 1e-4;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmUbm {
    /// Mixture weights, length C, summing to one.
    pub weights: DVector<f64>,
    /// `C × F` component means.
    pub means: DMatrix<f64>,
    /// `C × F` diagonal variances.
    pub variances: DMatrix<f64>,
}

impl GmmUbm {
    pub fn new(weights: DVector<f64>, means: DMatrix<f64>, variances: DMatrix<f64>) -> Result<Self> {
        let c = weights.len();
        if c == 0 || means.nrows() != c || variances.shape() != means.shape() || means.ncols() == 0 {
            return Err(Error::invalid(
                "ubm",
                format!(
                    "inconsistent shapes: weights {c}, means {:?}, variances {:?}",
                    means.shape(),
                    variances.shape()
                ),
            ));
        }
        if (weights.sum() - 1.0).abs() > 1e-10 || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("weights", "must be a probability vector"));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) || means.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("variances", "must be finite and positive"));
        }
        Ok(GmmUbm {
            weights,
            means,
            variances,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.means.ncols()
    }

    pub(crate) fn scorer(&self) -> ComponentScorer {
        let (c, f) = self.means.shape();
        let inv_var = self.variances.map(|v| 1.0 / v);
        let log_const = DVector::from_fn(c, |k, _| {
            let log_det: f64 = self.variances.row(k).iter().map(|v| v.ln()).sum();
            self.weights[k].ln() - 0.5 * (f as f64 * LN_2PI + log_det)
        });
        ComponentScorer {
            means: self.means.clone(),
            inv_var,
            log_const,
        }
    }

    /// Total log-likelihood of the frames.
    pub fn log_likelihood(&self, frames: &FeatureMatrix) -> Result<f64> {
        check_dim(self, frames)?;
        let scorer = self.scorer();
        let mut buf = vec![0.0; self.num_components()];
        Ok(frames.iter_rows().map(|x| scorer.posteriors(x, &mut buf)).sum())
    }
}

pub(crate) fn check_dim(ubm: &GmmUbm, frames: &FeatureMatrix) -> Result<()> {
    if frames.cols() != ubm.feature_dim() {
        return Err(Error::dim("frame dimension vs UBM", ubm.feature_dim(), frames.cols()));
    }
    Ok(())
}

pub(crate) struct ComponentScorer {
    means: DMatrix<f64>,
    inv_var: DMatrix<f64>,
    log_const: DVector<f64>,
}

impl ComponentScorer {
    /// Writes component responsibilities into `out` and returns the frame's
    /// log-likelihood.
    pub fn posteriors(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let f = x.len();
        for (k, o) in out.iter_mut().enumerate() {
            let mut q = 0.0;
            for d in 0..f {
                let diff = x[d] - self.means[(k, d)];
                q += diff * diff * self.inv_var[(k, d)];
            }
            *o = self.log_const[k] - 0.5 * q;
        }
        let lse = log_sum_exp(out);
        for o in out.iter_mut() {
            *o = (*o - lse).exp();
        }
        lse
    }
}

fn global_stats(frames: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let f = frames.cols();
    let n = frames.rows() as f64;
    let mut mean = vec![0.0; f];
    for r in frames.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; f];
    for r in frames.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: returns frame indices of the initial means.
fn kmeanspp(frames: &FeatureMatrix, c: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = frames.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = frames.iter_rows().map(|x| sq_dist(x, frames.row(chosen[0]))).collect();
    while chosen.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        let center = frames.row(next);
        for (d, x) in d2.iter_mut().zip(frames.iter_rows()) {
            *d = d.min(sq_dist(x, center));
        }
    }
    chosen
}

/// Fits a `components`-mixture diagonal GMM by EM after k-means++ seeding.
///
/// The objective trace holds the total frame log-likelihood before every
/// iteration and after the last one. A component whose occupancy falls
/// below `1e-6` of the frame count is re-seeded on the worst-explained
/// frame.
pub fn train_ubm(
    frames: &FeatureMatrix,
    components: usize,
    iterations: usize,
    seed: u64,
) -> Result<EmFit<GmmUbm>> {
    let (n, f) = (frames.rows(), frames.cols());
    if components == 0 {
        return Err(Error::invalid("components", "must be >= 1"));
    }
    if components > n {
        return Err(Error::invalid(
            "components",
            format!("{components} components but only {n} frames"),
        ));
    }
    let (_, gvar) = global_stats(frames);
    let floor: Vec<f64> = gvar.iter().map(|v| VARIANCE_FLOOR * v.max(1e-10)).collect();
    let init_var: Vec<f64> = gvar.iter().zip(&floor).map(|(v, fl)| v.max(*fl)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = kmeanspp(frames, components, &mut rng);
    let means = DMatrix::from_fn(components, f, |k, d| frames.row(seeds[k])[d]);
    let variances = DMatrix::from_fn(components, f, |_, d| init_var[d]);
    let weights = DVector::from_element(components, 1.0 / components as f64);
    let mut ubm = GmmUbm {
        weights,
        means,
        variances,
    };

    let mut objective = Vec::with_capacity(iterations + 1);
    let mut gamma = vec![0.0; components];
    for it in 0..iterations {
        let scorer = ubm.scorer();
        let mut occ = DVector::<f64>::zeros(components);
        // First and second moments centred on the current means.
        let mut s1 = DMatrix::<f64>::zeros(components, f);
        let mut s2 = DMatrix::<f64>::zeros(components, f);
        let mut total = 0.0;
        let (mut worst, mut worst_ll) = (0usize, f64::INFINITY);
        for (t, x) in frames.iter_rows().enumerate() {
            let ll = scorer.posteriors(x, &mut gamma);
            total += ll;
            if ll < worst_ll {
                worst_ll = ll;
                worst = t;
            }
            for (k, &g) in gamma.iter().enumerate() {
                if g < 1e-300 {
                    continue;
                }
                occ[k] += g;
                for d in 0..f {
                    let diff = x[d] - ubm.means[(k, d)];
                    s1[(k, d)] += g * diff;
                    s2[(k, d)] += g * diff * diff;
                }
            }
        }
        objective.push(total);

        for k in 0..components {
            if occ[k] < 1e-6 * n as f64 {
                log::warn!("ubm iteration {it}: component {k} collapsed, re-seeding");
                for d in 0..f {
                    ubm.means[(k, d)] = frames.row(worst)[d];
                    ubm.variances[(k, d)] = init_var[d];
                }
                occ[k] = n as f64 / components as f64;
                continue;
            }
            for d in 0..f {
                let shift = s1[(k, d)] / occ[k];
                ubm.means[(k, d)] += shift;
                let var = s2[(k, d)] / occ[k] - shift * shift;
                ubm.variances[(k, d)] = var.max(floor[d]);
            }
        }
        let occ_total = occ.sum();
        ubm.weights = occ / occ_total;
    }
    objective.push(ubm.log_likelihood(frames)?);
    Ok(EmFit {
        model: ubm,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian_frames(centers: &[f64], per: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for &c in centers {
            for _ in 0..per {
                for _ in 0..dim {
                    data.push(c + rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        FeatureMatrix::new(centers.len() * per, dim, data).unwrap()
    }

    #[test]
    fn single_component_is_sample_moments() {
        let frames = gaussian_frames(&[3.0, -1.0], 200, 4, 2);
        let fit = train_ubm(&frames, 1, 3, 0).unwrap();
        let (mean, var) = global_stats(&frames);
        for d in 0..4 {
            assert!((fit.model.means[(0, d)] - mean[d]).abs() < 1e-9);
            assert!((fit.model.variances[(0, d)] - var[d]).abs() < 1e-9);
        }
        assert!((fit.model.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_clusters() {
        let frames = gaussian_frames(&[-10.0, 10.0], 300, 1, 5);
        let fit = train_ubm(&frames, 2, 20, 1).unwrap();
        let mut m: Vec<f64> = fit.model.means.iter().copied().collect();
        m.sort_by(f64::total_cmp);
        // Oracle: per-cluster sample means.
        let lo: f64 = frames.as_slice()[..300].iter().sum::<f64>() / 300.0;
        let hi: f64 = frames.as_slice()[300..].iter().sum::<f64>() / 300.0;
        assert!((m[0] - lo).abs() < 0.2 && (m[0] + 10.0).abs() < 0.2, "{m:?}");
        assert!((m[1] - hi).abs() < 0.2 && (m[1] - 10.0).abs() < 0.2, "{m:?}");
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let frames = gaussian_frames(&[-2.0, 0.0, 1.5, 4.0], 150, 3, 8);
        let fit = train_ubm(&frames, 6, 20, 3).unwrap();
        assert_eq!(fit.objective.len(), 21);
        for w in fit.objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{w:?}");
        }
    }

    #[test]
    fn too_many_components() {
        let frames = gaussian_frames(&[0.0], 3, 2, 0);
        assert!(train_ubm(&frames, 4, 1, 0).is_err());
    }

    #[test]
    fn variance_floor_holds() {
        // Duplicate frames force a zero-variance component.
        let mut rows = vec![vec![1.0, 2.0]; 50];
        rows.extend((0..50).map(|i| vec![i as f64, -(i as f64)]));
        let frames = FeatureMatrix::from_rows(&rows).unwrap();
        let fit = train_ubm(&frames, 3, 10, 0).unwrap();
        let (_, gvar) = global_stats(&frames);
        for k in 0..3 {
            for d in 0..2 {
                assert!(fit.model.variances[(k, d)] >= VARIANCE_FLOOR * gvar[d] * (1.0 - 1e-12));
            }
        }
        assert!((fit.model.weights.sum() - 1.0).abs() < 1e-10);
    }
}
