//! Scoring backends over fixed-dimension utterance vectors.

mod io;
mod lda;
mod plda;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexSet;

pub use io::{load_lda, load_plda, save_lda, save_plda};
pub use lda::{train_lda, LdaTransform};
pub use plda::{train_plda, PldaModel};

use crate::corpus::TrialList;
use crate::{Error, Result};

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine score", a.len(), b.len()));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("vector", "zero norm in cosine score"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit Euclidean length; zero vectors are returned unchanged.
pub fn length_normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Scores aligned with a trial list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    ids: Vec<String>,
    pairs: Vec<(u32, u32)>,
    scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(trials: &TrialList, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != trials.len() {
            return Err(Error::dim("scores vs trials", trials.len(), scores.len()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite score {} for trial {}",
                scores[i], i
            )));
        }
        Ok(ScoreSet {
            ids: trials.ids().to_vec(),
            pairs: trials.trials().iter().map(|t| (t.enroll, t.test)).collect(),
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.pairs
            .iter()
            .zip(&self.scores)
            .map(|(&(e, t), &s)| (self.ids[e as usize].as_str(), self.ids[t as usize].as_str(), s))
    }

    /// Same scores with a different value vector (same trial order).
    pub fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.len() {
            return Err(Error::dim("replacement scores", self.len(), scores.len()));
        }
        Ok(ScoreSet {
            ids: self.ids.clone(),
            pairs: self.pairs.clone(),
            scores,
        })
    }

    /// True when both sets cover the same trials in the same order.
    pub fn is_aligned(&self, other: &ScoreSet) -> bool {
        if self.ids == other.ids {
            return self.pairs == other.pairs;
        }
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|(a, b)| a.0 == b.0 && a.1 == b.1)
    }

    /// True when the set covers exactly `trials`, in order.
    pub fn matches_trials(&self, trials: &TrialList) -> bool {
        self.len() == trials.len()
            && self
                .iter()
                .zip(trials.trials())
                .all(|((e, t, _), tr)| e == trials.enroll_id(tr) && t == trials.test_id(tr))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * 48);
        for (e, t, s) in self.iter() {
            writeln!(out, "{e}\t{t}\t{s:.16e}").unwrap();
        }
        out
    }
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scores.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids: IndexSet<String> = IndexSet::new();
    let mut pairs = Vec::new();
    let mut scores = Vec::new();
    let mut offset = 0u64;
    for (n, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Format {
            path: path.display().to_string(),
            offset: here,
            reason: format!("line {}: {reason}", n + 1),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", f.len())));
        }
        let s: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad score {:?}", f[2])))?;
        if !s.is_finite() {
            return Err(bad(format!("non-finite score {s}")));
        }
        let e = ids.insert_full(f[0].to_owned()).0 as u32;
        let t = ids.insert_full(f[1].to_owned()).0 as u32;
        pairs.push((e, t));
        scores.push(s);
    }
    Ok(ScoreSet {
        ids: ids.into_iter().collect(),
        pairs,
        scores,
    })
}

/// Standardises scores to zero mean and unit variance over all trials.
/// A constant set is only centred.
pub fn znorm(scores: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    if scores.is_empty() {
        return Vec::new();
    }
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    scores
        .iter()
        .map(|s| if sd > 0.0 { (s - mean) / sd } else { s - mean })
        .collect()
}

/// `alpha * a + (1 - alpha) * b`, optionally after z-normalising each input.
pub fn fuse_scores(a: &ScoreSet, b: &ScoreSet, alpha: f64, znormalize: bool) -> Result<ScoreSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("{alpha} outside [0, 1]")));
    }
    if !a.is_aligned(b) {
        return Err(Error::invalid("scores", "fusion inputs cover different trials"));
    }
    let (sa, sb) = if znormalize {
        (znorm(&a.scores), znorm(&b.scores))
    } else {
        (a.scores.clone(), b.scores.clone())
    };
    let fused = sa
        .iter()
        .zip(&sb)
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect();
    a.with_scores(fused)
}
