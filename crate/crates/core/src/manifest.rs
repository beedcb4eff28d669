//! Dataset manifest: image id → class label (+ optional source file).

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub class_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    index: HashMap<String, usize>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.image_id.is_empty() {
                return Err(Error::invalid(format!(
                    "manifest entry {i}: empty image_id"
                )));
            }
            if index.insert(e.image_id.clone(), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate image_id {:?} in manifest",
                    e.image_id
                )));
            }
        }
        Ok(DatasetManifest { entries, index })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.index.get(image_id).map(|&i| &self.entries[i])
    }

    pub fn class_of(&self, image_id: &str) -> Result<&str> {
        self.get(image_id)
            .map(|e| e.class_label.as_str())
            .ok_or_else(|| Error::invalid(format!("image {image_id:?} is not in the manifest")))
    }

    /// Distinct class labels in first-appearance order.
    pub fn classes(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.class_label.as_str()))
            .map(|e| e.class_label.as_str())
            .collect()
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::new(io::read_jsonl(path)?)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    io::write_jsonl(path, manifest.entries())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, class: &str) -> ManifestEntry {
        ManifestEntry {
            image_id: id.into(),
            class_label: class.into(),
            source_path: None,
        }
    }

    #[test]
    fn lookup_and_classes() {
        let m = DatasetManifest::new(vec![
            entry("a", "cat"),
            entry("b", "dog"),
            entry("c", "cat"),
        ])
        .unwrap();
        assert_eq!(m.class_of("b").unwrap(), "dog");
        assert!(m.class_of("zz").is_err());
        assert_eq!(m.classes(), vec!["cat", "dog"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(DatasetManifest::new(vec![entry("a", "x"), entry("a", "y")]).is_err());
    }

    #[test]
    fn jsonl_round_trip_with_optional_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut e = entry("img1", "cat");
        e.source_path = Some("images/img1.png".into());
        let m = DatasetManifest::new(vec![e, entry("img2", "dog")]).unwrap();
        write_manifest(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            r#"{"image_id":"img2","class_label":"dog"}"#
        );
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"image_id\":\"a\",\"class_label\":\"x\"}\n{oops\n").unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }
}
