//! Text archive of fixed-dimension utterance vectors, shared by d-vectors and
//! i-vectors: one `utterance_id<TAB>v1 v2 ... vD` line per utterance, values
//! printed with 17 significant digits so they parse back exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorArchive {
    entries: IndexMap<String, Vec<f64>>,
    dim: Option<usize>,
}

impl VectorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a vector. All vectors must share one dimension.
    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::invalid("utterance_id", format!("{id:?} is empty or has whitespace")));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid("vector", format!("{id}: non-finite value {bad}")));
        }
        match self.dim {
            Some(d) if d != v.len() => return Err(Error::dim(format!("vector {id}"), d, v.len())),
            None => self.dim = Some(v.len()),
            _ => {}
        }
        self.entries.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.entries {
            out.push_str(id);
            out.push('\t');
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{x:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut archive = VectorArchive::new();
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
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| bad("missing tab after utterance id".into()))?;
            let v = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(format!("{t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            archive.insert(id, v).map_err(|e| bad(e.to_string()))?;
        }
        Ok(archive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn text_roundtrip_is_exact(vals in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 3), 1..6)) {
            let mut a = VectorArchive::new();
            for (i, v) in vals.iter().enumerate() {
                a.insert(format!("u{i}"), v.clone()).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("v.txt");
            a.save(&p).unwrap();
            prop_assert_eq!(VectorArchive::load(&p).unwrap(), a);
        }
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let mut a = VectorArchive::new();
        a.insert("a", vec![1.0, 2.0]).unwrap();
        assert!(a.insert("b", vec![1.0]).is_err());
        assert!(a.insert("c d", vec![1.0, 2.0]).is_err());
    }
}
