//! Data-side reports: attribute distributions, CAS interval bins,
//! high/middle/low partitions and before/after CAS comparisons.
//!
//! Every report is a flat list of rows. The CSV and JSON encodings carry the
//! same fields: CSV with a header line, JSON as an array of objects.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cas::{build_frequency_table, CasScore, CasStatistics, Scope};
use crate::dictionary::AnnotatedDataset;
use crate::error::{Error, Result};
use crate::io;

pub const NUM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Distribution,
    Bins,
    Partition,
    Compare,
}

impl FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distribution" => Ok(ReportKind::Distribution),
            "bins" => Ok(ReportKind::Bins),
            "partition" => Ok(ReportKind::Partition),
            "compare" => Ok(ReportKind::Compare),
            other => Err(Error::invalid(format!("unknown report kind {other:?}"))),
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportKind::Distribution => "distribution",
            ReportKind::Bins => "bins",
            ReportKind::Partition => "partition",
            ReportKind::Compare => "compare",
        })
    }
}

// ---------------------------------------------------------------- partition

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Middle,
    Low,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CasPartition {
    pub high: Vec<String>,
    pub middle: Vec<String>,
    pub low: Vec<String>,
}

/// `(⌈0.4N⌉, min(⌈0.3N⌉, rest), rest)`.
pub fn partition_sizes(n: usize) -> (usize, usize, usize) {
    let high = (4 * n).div_ceil(10);
    let middle = (3 * n).div_ceil(10).min(n - high);
    (high, middle, n - high - middle)
}

fn sorted_by_cas(scores: &[CasScore]) -> Vec<&CasScore> {
    let mut sorted: Vec<&CasScore> = scores.iter().collect();
    sorted.sort_by(|a, b| b.cas.cmp(&a.cas).then_with(|| a.image_id.cmp(&b.image_id)));
    sorted
}

/// Top 40% by CAS → high, next 30% → middle, the rest → low. Ties in CAS
/// are ordered by image id.
pub fn partition_by_cas(scores: &[CasScore]) -> Result<CasPartition> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot partition an empty score list"));
    }
    let sorted = sorted_by_cas(scores);
    let (h, m, _) = partition_sizes(sorted.len());
    let ids = |s: &[&CasScore]| s.iter().map(|x| x.image_id.clone()).collect();
    Ok(CasPartition {
        high: ids(&sorted[..h]),
        middle: ids(&sorted[h..h + m]),
        low: ids(&sorted[h + m..]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub image_id: String,
    pub cas: u64,
    pub partition: Tier,
}

pub fn partition_rows(scores: &[CasScore]) -> Result<Vec<PartitionRow>> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot partition an empty score list"));
    }
    let sorted = sorted_by_cas(scores);
    let (h, m, _) = partition_sizes(sorted.len());
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, s)| PartitionRow {
            image_id: s.image_id.clone(),
            cas: s.cas,
            partition: if i < h {
                Tier::High
            } else if i < h + m {
                Tier::Middle
            } else {
                Tier::Low
            },
        })
        .collect())
}

// ---------------------------------------------------------------- binning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_label: Option<String>,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_cas: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBinning {
    pub min: u64,
    pub max: u64,
    pub bins: Vec<BinRow>,
}

/// Bin index in `0..10` for a value in `[min, max]`. Integer arithmetic
/// keeps the ten intervals exactly equal width; the last is right-closed.
pub fn bin_index(value: u64, min: u64, max: u64) -> usize {
    if max == min {
        return 0;
    }
    let idx = ((value - min) as u128 * NUM_BINS as u128 / (max - min) as u128) as usize;
    idx.min(NUM_BINS - 1)
}

pub fn bin_cas(scores: &[CasScore]) -> Result<IntervalBinning> {
    let values: Vec<u64> = scores.iter().map(|s| s.cas).collect();
    bin_values(&values, None)
}

/// One binning per class, each over that class's own CAS range.
pub fn bin_cas_by_class(scores: &[CasScore]) -> Result<BTreeMap<String, IntervalBinning>> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot bin an empty score list"));
    }
    let mut by_class: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for s in scores {
        by_class
            .entry(s.class_label.clone())
            .or_default()
            .push(s.cas);
    }
    by_class
        .into_iter()
        .map(|(class, values)| {
            let b = bin_values(&values, Some(&class))?;
            Ok((class, b))
        })
        .collect()
}

fn bin_values(values: &[u64], class_label: Option<&str>) -> Result<IntervalBinning> {
    let (Some(&min), Some(&max)) = (values.iter().min(), values.iter().max()) else {
        return Err(Error::invalid("cannot bin an empty score list"));
    };
    let mut counts = [0usize; NUM_BINS];
    let mut sums = [0u128; NUM_BINS];
    for &v in values {
        let i = bin_index(v, min, max);
        counts[i] += 1;
        sums[i] += v as u128;
    }
    let width = (max - min) as f64 / NUM_BINS as f64;
    let bins = (0..NUM_BINS)
        .map(|i| BinRow {
            class_label: class_label.map(str::to_string),
            bin: i + 1,
            lo: min as f64 + width * i as f64,
            hi: if i + 1 == NUM_BINS {
                max as f64
            } else {
                min as f64 + width * (i + 1) as f64
            },
            count: counts[i],
            mean_cas: (counts[i] > 0).then(|| sums[i] as f64 / counts[i] as f64),
        })
        .collect();
    Ok(IntervalBinning { min, max, bins })
}

// ---------------------------------------------------------------- distribution

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub scope_key: String,
    pub primary: String,
    pub secondary: String,
    pub count: u64,
    pub rank: u32,
}

/// Per (scope key, primary): observed secondaries by descending count, ties
/// by name. Scope keys sort lexically; primaries keep taxonomy order.
pub fn attribute_distribution(
    annotations: &AnnotatedDataset,
    scope: Scope,
) -> Result<Vec<DistributionRow>> {
    let table = build_frequency_table(annotations, scope)?;
    let mut rows = Vec::new();
    for key in table.scope_keys() {
        for primary in table.primaries() {
            for r in table.ranked(key, primary) {
                rows.push(DistributionRow {
                    scope_key: key.to_string(),
                    primary: primary.clone(),
                    secondary: r.secondary,
                    count: r.count,
                    rank: r.rank,
                });
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasComparison {
    pub before: CasStatistics,
    pub after: CasStatistics,
    pub delta_mean: f64,
    pub delta_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub statistic: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

impl CasComparison {
    pub fn rows(&self) -> Vec<ComparisonRow> {
        let row = |name: &str, b: f64, a: f64| ComparisonRow {
            statistic: name.to_string(),
            before: b,
            after: a,
            delta: a - b,
        };
        vec![
            row("mean", self.before.mean, self.after.mean),
            row("std", self.before.std, self.after.std),
            row("n", self.before.n as f64, self.after.n as f64),
        ]
    }
}

pub fn compare_cas(before: &CasStatistics, after: &CasStatistics) -> Result<CasComparison> {
    if before.taxonomy_fingerprint != after.taxonomy_fingerprint {
        return Err(Error::invalid(format!(
            "taxonomy fingerprints differ: {:?} vs {:?}",
            before.taxonomy_fingerprint, after.taxonomy_fingerprint
        )));
    }
    Ok(CasComparison {
        before: before.clone(),
        after: after.clone(),
        delta_mean: after.mean - before.mean,
        delta_std: after.std - before.std,
    })
}

// ---------------------------------------------------------------- output

pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::invalid(format!("csv encoding: {e}")))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv encoding: {e}")))
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`.
pub fn write_report<T: Serialize>(rows: &[T], dir: &Path, stem: &str) -> Result<()> {
    io::write_atomic(&dir.join(format!("{stem}.csv")), &rows_to_csv(rows)?)?;
    io::write_json(&dir.join(format!("{stem}.json")), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::AnnotationRecord;

    fn scores(values: &[u64]) -> Vec<CasScore> {
        values
            .iter()
            .enumerate()
            .map(|(i, &cas)| CasScore {
                image_id: format!("img{i:03}"),
                class_label: if i % 2 == 0 { "a" } else { "b" }.into(),
                components: vec![],
                cas,
            })
            .collect()
    }

    #[test]
    fn partition_ten_distinct() {
        let s = scores(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let p = partition_by_cas(&s).unwrap();
        let cas_of = |ids: &[String]| -> Vec<u64> {
            ids.iter()
                .map(|id| s.iter().find(|x| &x.image_id == id).unwrap().cas)
                .collect()
        };
        assert_eq!(cas_of(&p.high), [10, 9, 8, 7]);
        assert_eq!(cas_of(&p.middle), [6, 5, 4]);
        assert_eq!(cas_of(&p.low), [3, 2, 1]);
    }

    #[test]
    fn partition_all_equal_uses_ids() {
        let p = partition_by_cas(&scores(&[5; 10])).unwrap();
        assert_eq!(p.high, ["img000", "img001", "img002", "img003"]);
        assert_eq!(p.middle.len(), 3);
        assert_eq!(p.low, ["img007", "img008", "img009"]);
    }

    #[test]
    fn partition_size_rule() {
        assert_eq!(partition_sizes(7), (3, 3, 1));
        assert_eq!(partition_sizes(10), (4, 3, 3));
        assert_eq!(partition_sizes(3), (2, 1, 0));
        assert_eq!(partition_sizes(1), (1, 0, 0));
        assert!(partition_by_cas(&[]).is_err());
    }

    #[test]
    fn bins_uniform_1_to_100() {
        let b = bin_cas(&scores(&(1..=100).collect::<Vec<_>>())).unwrap();
        assert!(b.bins.iter().all(|x| x.count == 10), "{:?}", b.bins);
        assert_eq!(b.bins[0].mean_cas, Some(5.5));
    }

    #[test]
    fn bins_degenerate() {
        let b = bin_cas(&scores(&[7; 5])).unwrap();
        assert_eq!(b.bins[0].count, 5);
        assert!(b.bins[1..]
            .iter()
            .all(|x| x.count == 0 && x.mean_cas.is_none()));
        assert!(bin_cas(&[]).is_err());
    }

    #[test]
    fn bins_per_class() {
        let by_class = bin_cas_by_class(&scores(&[1, 50, 2, 60, 3, 70])).unwrap();
        assert_eq!(by_class.len(), 2);
        assert_eq!(by_class["a"].min, 1);
        assert_eq!(by_class["b"].max, 70);
    }

    #[test]
    fn distribution_order() {
        let mut recs = Vec::new();
        let mut push = |s: &str, n: usize| {
            for _ in 0..n {
                let i = recs.len();
                recs.push(AnnotationRecord {
                    image_id: format!("i{i}"),
                    class_label: "c".into(),
                    attributes: vec![s.into()],
                    similarities: vec![0.0],
                });
            }
        };
        push("purple", 1);
        push("white", 3);
        push("red", 3);
        push("black", 5);
        let d = AnnotatedDataset::new(vec!["color".into()], recs).unwrap();
        let rows = attribute_distribution(&d, Scope::PerClass).unwrap();
        let got: Vec<_> = rows
            .iter()
            .map(|r| (r.secondary.as_str(), r.count))
            .collect();
        assert_eq!(got, [("black", 5), ("red", 3), ("white", 3), ("purple", 1)]);
    }

    fn stats(mean: f64, std: f64) -> CasStatistics {
        CasStatistics {
            mean,
            std,
            n: 100,
            taxonomy_fingerprint: Some("fp".into()),
        }
    }

    #[test]
    fn comparison_deltas() {
        let c = compare_cas(&stats(124.6, 37.6), &stats(129.8, 29.3)).unwrap();
        assert!((c.delta_mean - 5.2).abs() < 1e-9);
        assert!((c.delta_std + 8.3).abs() < 1e-9);
        let same = compare_cas(&stats(10.0, 2.0), &stats(10.0, 2.0)).unwrap();
        assert_eq!((same.delta_mean, same.delta_std), (0.0, 0.0));
    }

    #[test]
    fn comparison_fingerprint_mismatch() {
        let mut other = stats(1.0, 1.0);
        other.taxonomy_fingerprint = Some("other".into());
        assert!(compare_cas(&stats(1.0, 1.0), &other).is_err());
    }

    #[test]
    fn csv_and_json_share_fields() {
        let rows = partition_rows(&scores(&[3, 1, 2])).unwrap();
        let csv = String::from_utf8(rows_to_csv(&rows).unwrap()).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "image_id,cas,partition");
        assert_eq!(csv.lines().nth(1).unwrap(), "img000,3,high");
        let json = serde_json::to_value(&rows).unwrap();
        let keys: Vec<_> = json[0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["image_id", "cas", "partition"]);
    }
}
