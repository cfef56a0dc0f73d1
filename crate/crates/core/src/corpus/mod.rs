//! Corpus model: feature matrices, utterance records, datasets, synthetic
//! generation, on-disk formats, oracle phone posteriors and trial lists.

mod features;
mod manifest;
mod posteriors;
mod synthetic;
mod trials;

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

pub use features::{
    features_from_bytes, features_to_bytes, load_features, normalize_features, save_features,
    FeatureMatrix,
};
pub use manifest::{read_manifest, read_phone_set, write_dataset, write_manifest};
pub use posteriors::oracle_posteriors;
pub use synthetic::{generate_synthetic_corpus, synthetic_phone_set, SyntheticSpec};
pub use trials::{build_trials, read_trials, write_trials, Trial, TrialList};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub phrase_id: String,
    pub features: FeatureMatrix,
    /// Where the features were loaded from, if they came from disk.
    pub feature_path: Option<PathBuf>,
    /// Per-frame phone indices into the dataset's phone set.
    pub phone_labels: Option<Vec<u32>>,
}

/// A validated collection of utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    utterances: Vec<UtteranceRecord>,
    speakers: Vec<String>,
    phone_set: Vec<String>,
}

impl Dataset {
    /// Checks id uniqueness and phone label consistency; the speaker list is
    /// derived from the records and sorted lexicographically.
    pub fn new(utterances: Vec<UtteranceRecord>, phone_set: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(utterances.len());
        let p = phone_set.len();
        for u in &utterances {
            if !seen.insert(u.utterance_id.as_str()) {
                return Err(Error::invalid(
                    "utterance_id",
                    format!("duplicate id {}", u.utterance_id),
                ));
            }
            if let Some(labels) = &u.phone_labels {
                if labels.len() != u.features.rows() {
                    return Err(Error::dim(
                        format!("phone labels of {}", u.utterance_id),
                        u.features.rows(),
                        labels.len(),
                    ));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l as usize >= p) {
                    return Err(Error::invalid(
                        "phone_labels",
                        format!("{}: label {bad} outside phone set of size {p}", u.utterance_id),
                    ));
                }
            }
        }
        let speakers: BTreeSet<&str> = utterances.iter().map(|u| u.speaker_id.as_str()).collect();
        let speakers = speakers.into_iter().map(str::to_owned).collect();
        Ok(Dataset {
            utterances,
            speakers,
            phone_set,
        })
    }

    pub fn utterances(&self) -> &[UtteranceRecord] {
        &self.utterances
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn phone_set(&self) -> &[String] {
        &self.phone_set
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Index of a speaker in the sorted speaker list.
    pub fn speaker_index(&self, speaker: &str) -> Option<usize> {
        self.speakers.binary_search_by(|s| s.as_str().cmp(speaker)).ok()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.features.cols())
    }

    /// Keeps the utterances matching `keep`, preserving order and phone set.
    pub fn filter(&self, mut keep: impl FnMut(&UtteranceRecord) -> bool) -> Dataset {
        let utterances: Vec<_> = self.utterances.iter().filter(|u| keep(u)).cloned().collect();
        let speakers: BTreeSet<&str> = utterances.iter().map(|u| u.speaker_id.as_str()).collect();
        let speakers = speakers.into_iter().map(str::to_owned).collect();
        Dataset {
            utterances,
            speakers,
            phone_set: self.phone_set.clone(),
        }
    }

    /// Applies `f` to every feature matrix.
    pub fn map_features(&self, f: impl Fn(&FeatureMatrix) -> FeatureMatrix) -> Dataset {
        let utterances = self
            .utterances
            .iter()
            .map(|u| UtteranceRecord {
                features: f(&u.features),
                ..u.clone()
            })
            .collect();
        Dataset {
            utterances,
            speakers: self.speakers.clone(),
            phone_set: self.phone_set.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, spk: &str, labels: Option<Vec<u32>>) -> UtteranceRecord {
        UtteranceRecord {
            utterance_id: id.into(),
            speaker_id: spk.into(),
            phrase_id: "P01".into(),
            features: FeatureMatrix::filled(2, 3, 0.5).unwrap(),
            feature_path: None,
            phone_labels: labels,
        }
    }

    #[test]
    fn speakers_sorted_and_unique() {
        let ds = Dataset::new(
            vec![utt("c", "bob", None), utt("a", "alice", None), utt("b", "bob", None)],
            vec![],
        )
        .unwrap();
        assert_eq!(ds.speakers(), ["alice", "bob"]);
        assert_eq!(ds.speaker_index("bob"), Some(1));
    }

    #[test]
    fn rejects_duplicates_and_bad_labels() {
        assert!(Dataset::new(vec![utt("a", "x", None), utt("a", "y", None)], vec![]).is_err());
        let phones = vec!["sil".to_string(), "a".to_string()];
        assert!(Dataset::new(vec![utt("a", "x", Some(vec![0, 2]))], phones.clone()).is_err());
        assert!(Dataset::new(vec![utt("a", "x", Some(vec![0]))], phones.clone()).is_err());
        assert!(Dataset::new(vec![utt("a", "x", Some(vec![0, 1]))], phones).is_ok());
    }
}
