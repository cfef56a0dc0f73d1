//! Trial scoring, equal error rate, DET points and fusion-weight sweeps.

mod eer;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use eer::{compute_eer, det_points, EerResult};

use crate::backend::{cosine_score, fuse_scores, LdaTransform, PldaModel, ScoreSet};
use crate::corpus::TrialList;
use crate::vectors::VectorArchive;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Cosine,
    Plda(&'a PldaModel),
    LdaCosine(&'a LdaTransform),
}

/// Scores every trial, in order. Each utterance is projected once.
pub fn score_trials(vectors: &VectorArchive, trials: &TrialList, scorer: Scorer<'_>) -> Result<ScoreSet> {
    let mut missing: Vec<&str> = Vec::new();
    let mut count = 0;
    let mut used = vec![false; trials.ids().len()];
    for t in trials.trials() {
        used[t.enroll as usize] = true;
        used[t.test as usize] = true;
    }
    for (id, _) in trials.ids().iter().zip(&used).filter(|(_, &u)| u) {
        if vectors.get(id).is_none() {
            count += 1;
            if missing.len() < 10 {
                missing.push(id);
            }
        }
    }
    if count > 0 {
        return Err(Error::MissingIds {
            count,
            first: missing.into_iter().map(str::to_owned).collect(),
        });
    }
    let projected: Vec<Option<Vec<f64>>> = trials
        .ids()
        .iter()
        .zip(&used)
        .map(|(id, &u)| {
            if !u {
                return Ok(None);
            }
            let v = vectors.get(id).expect("checked above");
            let p = match scorer {
                Scorer::Cosine => v.to_vec(),
                Scorer::Plda(m) => m.project(v)?,
                Scorer::LdaCosine(t) => t.apply(v)?,
            };
            Ok(Some(p))
        })
        .collect::<Result<_>>()?;
    let get = |i: u32| projected[i as usize].as_deref().expect("used id");
    let scores = trials
        .trials()
        .iter()
        .map(|t| {
            let (e, x) = (get(t.enroll), get(t.test));
            match scorer {
                Scorer::Plda(m) => Ok(m.score_projected(e, x)),
                _ => cosine_score(e, x).map_err(|err| match err {
                    Error::Invalid { .. } => Error::invalid(
                        "vector",
                        format!(
                            "zero-norm vector in trial ({}, {})",
                            trials.enroll_id(t),
                            trials.test_id(t)
                        ),
                    ),
                    other => other,
                }),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreSet::new(trials, scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionSweep {
    pub grid: Vec<f64>,
    pub eers: Vec<f64>,
    pub best_alpha: f64,
    pub best_eer: f64,
}

/// `n` evenly spaced weights from 0 to 1 inclusive.
pub fn alpha_grid(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("alpha_grid", format!("{n} points cannot include both 0 and 1")));
    }
    Ok((0..n).map(|i| i as f64 / (n - 1) as f64).collect())
}

/// EER of `alpha * z(a) + (1 - alpha) * z(b)` for each weight in `grid`.
/// The first minimum wins ties.
pub fn sweep_fusion(a: &ScoreSet, b: &ScoreSet, labels: &[bool], grid: &[f64]) -> Result<FusionSweep> {
    if !grid.contains(&0.0) || !grid.contains(&1.0) {
        return Err(Error::invalid("alpha_grid", "must contain both 0 and 1"));
    }
    let mut eers = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let fused = fuse_scores(a, b, alpha, true)?;
        eers.push(compute_eer(fused.scores(), labels)?.eer);
    }
    let (best, &best_eer) = eers
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1).then(x.0.cmp(&y.0)))
        .expect("grid is non-empty");
    Ok(FusionSweep {
        grid: grid.to_vec(),
        best_alpha: grid[best],
        best_eer,
        eers,
    })
}

pub fn sweep_to_csv(sweep: &FusionSweep) -> String {
    let mut out = String::from("alpha,eer\n");
    for (a, e) in sweep.grid.iter().zip(&sweep.eers) {
        writeln!(out, "{a},{e}").unwrap();
    }
    out
}

pub fn det_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("far,frr\n");
    for (far, frr) in points {
        writeln!(out, "{far},{frr}").unwrap();
    }
    out
}

pub fn write_sweep_csv(path: impl AsRef<Path>, sweep: &FusionSweep) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, sweep_to_csv(sweep)).map_err(|e| Error::io(path, e))
}

pub fn write_det_csv(path: impl AsRef<Path>, points: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, det_to_csv(points)).map_err(|e| Error::io(path, e))
}
