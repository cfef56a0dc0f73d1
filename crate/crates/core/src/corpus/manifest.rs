//! Tab-separated dataset manifests.
//!
//! One record per line:
//! `utterance_id<TAB>speaker_id<TAB>phrase_id<TAB>feature_path[<TAB>phone_label_path]`.
//! Relative paths are resolved against the manifest's directory. A phone
//! label file holds space-separated integers, one per frame.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{load_features, save_features, Dataset, UtteranceRecord};
use crate::{Error, Result};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn line_error(path: &Path, text: &str, line: usize, reason: impl Into<String>) -> Error {
    let offset: usize = text.lines().take(line).map(|l| l.len() + 1).sum();
    Error::Format {
        path: path.display().to_string(),
        offset: offset as u64,
        reason: format!("line {}: {}", line + 1, reason.into()),
    }
}

/// Reads a phone set file: one phone name per line.
pub fn read_phone_set(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, tok) in text.split_whitespace().enumerate() {
        let v = tok.parse::<u32>().map_err(|e| Error::Format {
            path: path.display().to_string(),
            offset: 0,
            reason: format!("token {i} ({tok:?}): {e}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Loads every utterance listed in a manifest.
///
/// When `phone_set` is `None` and labels are present, a placeholder phone set
/// sized by the largest label is used.
pub fn read_manifest(path: impl AsRef<Path>, phone_set: Option<Vec<String>>) -> Result<Dataset> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = read_text(path)?;
    let mut utterances = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(line_error(
                path,
                &text,
                n,
                format!("expected 4 or 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let feature_path = base.join(fields[3]);
        let features = load_features(&feature_path)?;
        let phone_labels = match fields.get(4) {
            Some(p) if !p.is_empty() => Some(read_labels(&base.join(p))?),
            _ => None,
        };
        utterances.push(UtteranceRecord {
            utterance_id: fields[0].to_owned(),
            speaker_id: fields[1].to_owned(),
            phrase_id: fields[2].to_owned(),
            features,
            feature_path: Some(feature_path),
            phone_labels,
        });
    }
    let phone_set = phone_set.unwrap_or_else(|| {
        let max = utterances
            .iter()
            .filter_map(|u| u.phone_labels.as_ref())
            .flat_map(|l| l.iter().copied())
            .max();
        match max {
            Some(m) => (0..=m).map(|i| format!("phone{i}")).collect(),
            None => Vec::new(),
        }
    });
    Dataset::new(utterances, phone_set)
}

/// Writes a manifest referencing `features/<id>.ufm` and `labels/<id>.txt`
/// relative to the manifest's directory. Does not write the data files.
pub fn write_manifest(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for u in dataset.utterances() {
        write!(
            out,
            "{}\t{}\t{}\tfeatures/{}.ufm",
            u.utterance_id, u.speaker_id, u.phrase_id, u.utterance_id
        )
        .unwrap();
        if u.phone_labels.is_some() {
            write!(out, "\tlabels/{}.txt", u.utterance_id).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a complete dataset tree under `dir`: `manifest.tsv`, `phones.txt`,
/// `features/*.ufm` and `labels/*.txt`. Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let feat_dir = dir.join("features");
    let label_dir = dir.join("labels");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    for u in dataset.utterances() {
        save_features(feat_dir.join(format!("{}.ufm", u.utterance_id)), &u.features)?;
        if let Some(labels) = &u.phone_labels {
            fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;
            let text: Vec<String> = labels.iter().map(u32::to_string).collect();
            let p = label_dir.join(format!("{}.txt", u.utterance_id));
            fs::write(&p, text.join(" ") + "\n").map_err(|e| Error::io(&p, e))?;
        }
    }
    let phones = dir.join("phones.txt");
    let mut text = dataset.phone_set().join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(&phones, text).map_err(|e| Error::io(&phones, e))?;
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, dataset)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticSpec};

    #[test]
    fn dataset_tree_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_speakers: 3,
            utts_per_speaker: 2,
            feature_dim: 4,
            ..SyntheticSpec::small()
        };
        let ds = generate_synthetic_corpus(&spec).unwrap();
        let manifest = write_dataset(dir.path(), &ds).unwrap();
        let phones = read_phone_set(dir.path().join("phones.txt")).unwrap();
        let back = read_manifest(&manifest, Some(phones)).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.utterances().iter().zip(back.utterances()) {
            assert_eq!(a.utterance_id, b.utterance_id);
            assert_eq!(a.features, b.features);
            assert_eq!(a.phone_labels, b.phone_labels);
        }
        assert_eq!(back.phone_set(), ds.phone_set());
    }

    #[test]
    fn malformed_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "a\tb\n").unwrap();
        let err = read_manifest(&p, None).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
