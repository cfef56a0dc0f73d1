//! i-vector baseline: diagonal GMM-UBM, Baum-Welch statistics, total
//! variability matrix training and i-vector extraction.

mod io;
mod stats;
mod tmatrix;
mod ubm;

pub use io::{load_tmatrix, load_ubm, save_tmatrix, save_ubm};
pub use stats::{accumulate_stats, BwStats};
pub use tmatrix::{extract_ivector, init_tmatrix, train_tmatrix, IVector, IvectorExtractor, TMatrix};
pub use ubm::{train_ubm, GmmUbm};
