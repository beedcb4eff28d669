//! Secondary-attribute frequencies, scarcity ranks and Compositional
//! Attribute Scarcity (CAS).
//!
//! Within each (scope, primary) the observed secondaries are ranked by
//! descending frequency with dense ranking: rank 1 is the most frequent,
//! equal counts share a rank and the next distinct count gets the next
//! integer. An image's CAS is the sum of the ranks of its assigned
//! secondaries, so rarer compositions score higher.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::dictionary::AnnotatedDataset;
use crate::error::{Error, Result};
use crate::io;

/// Scope key used for every image when frequencies are dataset-wide.
pub const GLOBAL_SCOPE_KEY: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    #[default]
    PerClass,
    Global,
}

impl Scope {
    pub fn key<'a>(&self, class_label: &'a str) -> &'a str {
        match self {
            Scope::PerClass => class_label,
            Scope::Global => GLOBAL_SCOPE_KEY,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::PerClass => "per-class",
            Scope::Global => "global",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-class" => Ok(Scope::PerClass),
            "global" => Ok(Scope::Global),
            other => Err(Error::invalid(format!(
                "unknown scope {other:?} (expected per-class or global)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedSecondary {
    pub secondary: String,
    pub count: u64,
    pub rank: u32,
}

/// Secondary → (count, dense rank) for one primary within one scope.
type CountRanks = HashMap<String, (u64, u32)>;

/// Counts and dense ranks per (scope key, primary).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    scope: Scope,
    primaries: Vec<String>,
    // scope key -> per primary -> counts and ranks
    entries: BTreeMap<String, Vec<CountRanks>>,
}

impl FrequencyTable {
    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn primaries(&self) -> &[String] {
        &self.primaries
    }

    pub fn scope_keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn lookup(&self, scope_key: &str, primary: &str, secondary: &str) -> Option<(u64, u32)> {
        let p = self.primaries.iter().position(|x| x == primary)?;
        self.entries.get(scope_key)?[p].get(secondary).copied()
    }

    pub fn count(&self, scope_key: &str, primary: &str, secondary: &str) -> Option<u64> {
        self.lookup(scope_key, primary, secondary).map(|(c, _)| c)
    }

    pub fn rank(&self, scope_key: &str, primary: &str, secondary: &str) -> Option<u32> {
        self.lookup(scope_key, primary, secondary).map(|(_, r)| r)
    }

    /// Observed secondaries under one (scope key, primary), sorted by
    /// descending count then name.
    pub fn ranked(&self, scope_key: &str, primary: &str) -> Vec<RankedSecondary> {
        let Some(p) = self.primaries.iter().position(|x| x == primary) else {
            return Vec::new();
        };
        let Some(per_primary) = self.entries.get(scope_key) else {
            return Vec::new();
        };
        let mut out: Vec<_> = per_primary[p]
            .iter()
            .map(|(s, &(count, rank))| RankedSecondary {
                secondary: s.clone(),
                count,
                rank,
            })
            .collect();
        out.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| a.secondary.cmp(&b.secondary))
        });
        out
    }
}

pub fn build_frequency_table(
    annotations: &AnnotatedDataset,
    scope: Scope,
) -> Result<FrequencyTable> {
    if annotations.is_empty() {
        return Err(Error::invalid(
            "cannot build a frequency table from zero annotations",
        ));
    }
    let n_primaries = annotations.primaries().len();
    let mut counts: BTreeMap<String, Vec<CountRanks>> = BTreeMap::new();
    for record in annotations.records() {
        let per_primary = counts
            .entry(scope.key(&record.class_label).to_string())
            .or_insert_with(|| vec![HashMap::new(); n_primaries]);
        for (p, secondary) in record.attributes.iter().enumerate() {
            per_primary[p].entry(secondary.clone()).or_insert((0, 0)).0 += 1;
        }
    }
    for per_primary in counts.values_mut() {
        for table in per_primary.iter_mut() {
            let mut distinct: Vec<u64> = table.values().map(|&(c, _)| c).collect();
            distinct.sort_unstable_by(|a, b| b.cmp(a));
            distinct.dedup();
            for (count, rank) in table.values_mut() {
                // position among distinct counts, descending
                *rank = distinct.partition_point(|&c| c > *count) as u32 + 1;
            }
        }
    }
    Ok(FrequencyTable {
        scope,
        primaries: annotations.primaries().to_vec(),
        entries: counts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasScore {
    pub image_id: String,
    pub class_label: String,
    /// (primary, scarcity rank of the assigned secondary), taxonomy order.
    pub components: Vec<(String, u32)>,
    pub cas: u64,
}

pub fn cas_of(annotations: &AnnotatedDataset, table: &FrequencyTable) -> Result<Vec<CasScore>> {
    if annotations.primaries() != table.primaries() {
        return Err(Error::invalid(
            "annotation primaries differ from the frequency table's primaries",
        ));
    }
    annotations
        .records()
        .iter()
        .map(|record| {
            let key = table.scope.key(&record.class_label);
            let components = table
                .primaries
                .iter()
                .zip(&record.attributes)
                .map(|(primary, secondary)| {
                    let rank = table.rank(key, primary, secondary).ok_or_else(|| {
                        Error::invalid(format!(
                            "no rank for {primary}/{secondary} under scope {key:?} (image {:?})",
                            record.image_id
                        ))
                    })?;
                    Ok((primary.clone(), rank))
                })
                .collect::<Result<Vec<_>>>()?;
            let cas = components.iter().map(|&(_, r)| r as u64).sum();
            Ok(CasScore {
                image_id: record.image_id.clone(),
                class_label: record.class_label.clone(),
                components,
                cas,
            })
        })
        .collect()
}

/// Frequency table + scores in one call.
pub fn compute_cas(annotations: &AnnotatedDataset, scope: Scope) -> Result<Vec<CasScore>> {
    let table = build_frequency_table(annotations, scope)?;
    cas_of(annotations, &table)
}

/// Mean and population standard deviation of CAS values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasStatistics {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy_fingerprint: Option<String>,
}

impl CasStatistics {
    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.taxonomy_fingerprint = Some(fingerprint.into());
        self
    }
}

pub fn cas_statistics(scores: &[CasScore]) -> Result<CasStatistics> {
    let values: Vec<f64> = scores.iter().map(|s| s.cas as f64).collect();
    statistics_of(&values)
}

pub(crate) fn statistics_of(values: &[f64]) -> Result<CasStatistics> {
    if values.is_empty() {
        return Err(Error::invalid("statistics of an empty score list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(CasStatistics {
        mean,
        std: var.sqrt(),
        n: values.len(),
        taxonomy_fingerprint: None,
    })
}

/// Fingerprint of an annotation schema (ordered primary names), used when
/// the full taxonomy is not at hand.
pub fn schema_fingerprint(primaries: &[String]) -> String {
    let bytes = serde_json::to_vec(primaries).expect("serializable names");
    format!("schema:{}", hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize, Deserialize)]
struct CasLine {
    image_id: String,
    class_label: String,
    cas: u64,
    components: Map<String, Value>,
}

pub fn scores_to_jsonl(scores: &[CasScore]) -> Vec<u8> {
    let lines: Vec<CasLine> = scores
        .iter()
        .map(|s| CasLine {
            image_id: s.image_id.clone(),
            class_label: s.class_label.clone(),
            cas: s.cas,
            components: s
                .components
                .iter()
                .map(|(p, r)| (p.clone(), Value::from(*r)))
                .collect(),
        })
        .collect();
    io::to_jsonl(&lines)
}

pub fn write_scores(scores: &[CasScore], path: &Path) -> Result<()> {
    io::write_atomic(path, &scores_to_jsonl(scores))
}

pub fn read_scores(path: &Path) -> Result<Vec<CasScore>> {
    let lines: Vec<CasLine> = io::read_jsonl(path)?;
    lines
        .into_iter()
        .map(|l| {
            let components = l
                .components
                .into_iter()
                .map(|(p, v)| {
                    let rank = v
                        .as_u64()
                        .filter(|&r| r >= 1 && r <= u32::MAX as u64)
                        .ok_or_else(|| {
                            Error::invalid(format!("image {:?}: bad rank for {p:?}", l.image_id))
                        })?;
                    Ok((p, rank as u32))
                })
                .collect::<Result<Vec<_>>>()?;
            let sum: u64 = components.iter().map(|&(_, r)| r as u64).sum();
            if !components.is_empty() && sum != l.cas {
                return Err(Error::invalid(format!(
                    "image {:?}: cas {} != sum of components {sum}",
                    l.image_id, l.cas
                )));
            }
            Ok(CasScore {
                image_id: l.image_id,
                class_label: l.class_label,
                components,
                cas: l.cas,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::AnnotationRecord;

    fn dataset(primaries: &[&str], rows: &[(&str, &[&str])]) -> AnnotatedDataset {
        AnnotatedDataset::new(
            primaries.iter().map(|s| s.to_string()).collect(),
            rows.iter()
                .enumerate()
                .map(|(i, (class, attrs))| AnnotationRecord {
                    image_id: format!("img{i}"),
                    class_label: class.to_string(),
                    attributes: attrs.iter().map(|s| s.to_string()).collect(),
                    similarities: vec![0.0; attrs.len()],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dense_ranks_with_ties() {
        let mut rows: Vec<(&str, &[&str])> = Vec::new();
        rows.extend(std::iter::repeat_n(("c", &["black"][..]), 5));
        rows.extend(std::iter::repeat_n(("c", &["white"][..]), 3));
        rows.extend(std::iter::repeat_n(("c", &["red"][..]), 3));
        rows.push(("c", &["purple"]));
        let t = build_frequency_table(&dataset(&["color"], &rows), Scope::PerClass).unwrap();
        assert_eq!(t.rank("c", "color", "black"), Some(1));
        assert_eq!(t.rank("c", "color", "white"), Some(2));
        assert_eq!(t.rank("c", "color", "red"), Some(2));
        assert_eq!(t.rank("c", "color", "purple"), Some(3));
        assert_eq!(t.count("c", "color", "white"), Some(3));
        assert_eq!(t.rank("c", "color", "green"), None);
    }

    #[test]
    fn equal_frequencies_all_rank_one() {
        let rows: Vec<(&str, &[&str])> =
            vec![("c", &["a"]), ("c", &["b"]), ("c", &["c"]), ("c", &["d"])];
        let t = build_frequency_table(&dataset(&["p"], &rows), Scope::PerClass).unwrap();
        for s in ["a", "b", "c", "d"] {
            assert_eq!(t.rank("c", "p", s), Some(1));
        }
    }

    #[test]
    fn empty_annotations_rejected() {
        let d = AnnotatedDataset::new(vec!["p".into()], vec![]).unwrap();
        assert!(build_frequency_table(&d, Scope::Global).is_err());
    }

    #[test]
    fn per_class_versus_global() {
        let rows: Vec<(&str, &[&str])> = vec![
            ("x", &["a"]),
            ("x", &["a"]),
            ("x", &["b"]),
            ("y", &["b"]),
            ("y", &["b"]),
            ("y", &["b"]),
        ];
        let d = dataset(&["p"], &rows);
        let per_class = build_frequency_table(&d, Scope::PerClass).unwrap();
        assert_eq!(per_class.rank("x", "p", "b"), Some(2));
        assert_eq!(per_class.rank("y", "p", "b"), Some(1));
        let global = build_frequency_table(&d, Scope::Global).unwrap();
        assert_eq!(global.rank(GLOBAL_SCOPE_KEY, "p", "b"), Some(1));
        assert_eq!(global.rank(GLOBAL_SCOPE_KEY, "p", "a"), Some(2));
    }

    #[test]
    fn single_shared_secondary_gives_cas_one() {
        let rows: Vec<(&str, &[&str])> = vec![("c", &["s"]); 4];
        let scores = compute_cas(&dataset(&["p"], &rows), Scope::PerClass).unwrap();
        assert!(scores.iter().all(|s| s.cas == 1));
    }

    #[test]
    fn all_most_frequent_gives_minimum() {
        let primaries: Vec<String> = (0..20).map(|i| format!("p{i}")).collect();
        let common: Vec<String> = vec!["common".into(); 20];
        let mut rare = common.clone();
        rare[3] = "rare".into();
        let rec = |id: &str, attrs: &[String]| AnnotationRecord {
            image_id: id.into(),
            class_label: "c".into(),
            attributes: attrs.to_vec(),
            similarities: vec![0.0; 20],
        };
        let d = AnnotatedDataset::new(
            primaries,
            vec![rec("a", &common), rec("b", &common), rec("c", &rare)],
        )
        .unwrap();
        let scores = compute_cas(&d, Scope::PerClass).unwrap();
        assert_eq!(scores[0].cas, 20);
        assert_eq!(scores[2].cas, 21);
        assert_eq!(scores[2].components[3], ("p3".to_string(), 2));
    }

    #[test]
    fn missing_rank_is_an_error() {
        let d = dataset(&["p"], &[("x", &["a"]), ("x", &["b"])]);
        let table = build_frequency_table(&d, Scope::PerClass).unwrap();
        let other = dataset(&["p"], &[("x", &["zzz"])]);
        assert!(cas_of(&other, &table).is_err());
    }

    #[test]
    fn statistics() {
        let s = |v: &[u64]| {
            let scores: Vec<CasScore> = v
                .iter()
                .map(|&cas| CasScore {
                    image_id: String::new(),
                    class_label: String::new(),
                    components: vec![],
                    cas,
                })
                .collect();
            cas_statistics(&scores).unwrap()
        };
        let a = s(&[100, 100]);
        assert_eq!((a.mean, a.std), (100.0, 0.0));
        let b = s(&[1, 3]);
        assert_eq!((b.mean, b.std), (2.0, 1.0));
        assert!(cas_statistics(&[]).is_err());
    }

    #[test]
    fn scores_jsonl_round_trip() {
        let d = dataset(
            &["color", "size"],
            &[("x", &["a", "s"]), ("x", &["b", "s"]), ("x", &["a", "t"])],
        );
        let scores = compute_cas(&d, Scope::PerClass).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cas.jsonl");
        write_scores(&scores, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"image_id":"img0","class_label":"x","cas":2,"components":{"color":1,"size":1}}"#
        );
        assert_eq!(read_scores(&path).unwrap(), scores);
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("per-class".parse::<Scope>().unwrap(), Scope::PerClass);
        assert_eq!("global".parse::<Scope>().unwrap(), Scope::Global);
        assert!("classwise".parse::<Scope>().is_err());
    }
}
