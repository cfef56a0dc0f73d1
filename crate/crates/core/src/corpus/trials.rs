use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexSet;

use super::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    /// Index into [`TrialList::ids`].
    pub enroll: u32,
    pub test: u32,
    pub target: bool,
}

/// Enrollment/test pairs over a shared table of utterance ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    ids: Vec<String>,
    trials: Vec<Trial>,
}

impl TrialList {
    /// Builds a list from explicit id pairs. Self-pairs and repeated
    /// unordered pairs are rejected.
    pub fn from_pairs<S: AsRef<str>>(pairs: impl IntoIterator<Item = (S, S, bool)>) -> Result<Self> {
        let mut ids: IndexSet<String> = IndexSet::new();
        let mut seen = std::collections::HashSet::new();
        let mut trials = Vec::new();
        for (e, t, target) in pairs {
            let (e, t) = (e.as_ref(), t.as_ref());
            if e == t {
                return Err(Error::invalid("trials", format!("{e} paired with itself")));
            }
            let ei = ids.insert_full(e.to_owned()).0 as u32;
            let ti = ids.insert_full(t.to_owned()).0 as u32;
            if !seen.insert((ei.min(ti), ei.max(ti))) {
                return Err(Error::invalid("trials", format!("pair ({e}, {t}) repeated")));
            }
            trials.push(Trial {
                enroll: ei,
                test: ti,
                target,
            });
        }
        Ok(TrialList {
            ids: ids.into_iter().collect(),
            trials,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn enroll_id(&self, t: &Trial) -> &str {
        &self.ids[t.enroll as usize]
    }

    pub fn test_id(&self, t: &Trial) -> &str {
        &self.ids[t.test as usize]
    }

    pub fn labels(&self) -> Vec<bool> {
        self.trials.iter().map(|t| t.target).collect()
    }

    pub fn count_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    pub fn count_nontargets(&self) -> usize {
        self.len() - self.count_targets()
    }
}

/// Cross-evaluates every unordered pair of utterances; a trial is a target
/// iff both utterances share a speaker.
pub fn build_trials(eval: &Dataset) -> Result<TrialList> {
    let utts = eval.utterances();
    if utts.len() < 2 {
        return Err(Error::invalid(
            "eval_dataset",
            format!("need at least 2 utterances, got {}", utts.len()),
        ));
    }
    let n = utts.len();
    let mut trials = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            trials.push(Trial {
                enroll: i as u32,
                test: j as u32,
                target: utts[i].speaker_id == utts[j].speaker_id,
            });
        }
    }
    Ok(TrialList {
        ids: utts.iter().map(|u| u.utterance_id.clone()).collect(),
        trials,
    })
}

/// Lines of `enroll_id<TAB>test_id<TAB>{target|nontarget}`.
pub fn write_trials(path: impl AsRef<Path>, trials: &TrialList) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(trials.len() * 32);
    for t in trials.trials() {
        let label = if t.target { "target" } else { "nontarget" };
        writeln!(out, "{}\t{}\t{label}", trials.enroll_id(t), trials.test_id(t)).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut offset = 0u64;
    for (n, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |reason: String| Error::Format {
            path: path.display().to_string(),
            offset: here,
            reason: format!("line {}: {reason}", n + 1),
        };
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", f.len())));
        }
        let target = match f[2] {
            "target" => true,
            "nontarget" => false,
            other => return Err(bad(format!("unknown label {other:?}"))),
        };
        pairs.push((f[0], f[1], target));
    }
    TrialList::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FeatureMatrix, UtteranceRecord};

    pub(crate) fn dataset(speakers: usize, utts: usize) -> Dataset {
        let mut v = Vec::new();
        for s in 0..speakers {
            for u in 0..utts {
                v.push(UtteranceRecord {
                    utterance_id: format!("s{s}_u{u}"),
                    speaker_id: format!("s{s}"),
                    phrase_id: "P".into(),
                    features: FeatureMatrix::filled(1, 1, 0.0).unwrap(),
                    feature_path: None,
                    phone_labels: None,
                });
            }
        }
        Dataset::new(v, vec![]).unwrap()
    }

    #[test]
    fn counts_follow_pair_arithmetic() {
        for (s, u) in [(3usize, 4usize), (2, 2), (5, 1)] {
            let tl = build_trials(&dataset(s, u)).unwrap();
            let total = s * u * (s * u - 1) / 2;
            let targets = s * u * (u - 1) / 2;
            assert_eq!(tl.len(), total);
            assert_eq!(tl.count_targets(), targets);
            assert_eq!(tl.count_nontargets(), total - targets);
        }
        let tl = build_trials(&dataset(2, 2)).unwrap();
        assert_eq!((tl.count_targets(), tl.count_nontargets()), (2, 4));
    }

    #[test]
    fn too_few_utterances() {
        assert!(build_trials(&dataset(1, 1)).is_err());
    }

    #[test]
    fn no_self_or_repeated_pairs() {
        assert!(TrialList::from_pairs([("a", "a", true)]).is_err());
        assert!(TrialList::from_pairs([("a", "b", true), ("b", "a", true)]).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let tl = build_trials(&dataset(3, 2)).unwrap();
        let p = dir.path().join("t.tsv");
        write_trials(&p, &tl).unwrap();
        assert_eq!(read_trials(&p).unwrap(), tl);
    }
}
