//! Speaker verification toolkit.
//!
//! Two embedding systems are provided side by side:
//!
//! - **d-vectors**: a feed-forward speaker classifier is trained on context
//!   windows of filter-bank frames (optionally augmented with phone
//!   posteriors), and the activations of its last hidden layer are averaged
//!   over an utterance.
//! - **i-vectors**: a diagonal GMM-UBM, Baum-Welch statistics and a
//!   total-variability factor model.
//!
//! Both feed the same scoring backends (cosine, LDA + cosine, two-covariance
//! PLDA), EER evaluation and linear score fusion. [`experiment`] wires the
//! whole pipeline together on synthetic or user-supplied corpora.

pub mod backend;
pub mod corpus;
pub mod dvector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ivector;
pub mod neuralnet;
pub mod vectors;

mod binio;
mod linalg;

pub use error::{Error, Result};

/// Output of an EM-style trainer: the fitted model together with the
/// objective value recorded at every iteration.
///
/// `objective[i]` is evaluated with the parameters in effect *before* update
/// `i`; the last entry is evaluated on the returned model.
#[derive(Debug, Clone)]
pub struct EmFit<M> {
    pub model: M,
    pub objective: Vec<f64>,
}
