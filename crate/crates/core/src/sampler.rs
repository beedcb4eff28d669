//! Scarcity-weighted sampling.
//!
//! Weights are `w_i = r_i^b` for CAS `r_i` and power `b`; probabilities are
//! `p_i = w_i / Σ w_k`. Draws are i.i.d. with replacement: one uniform from
//! the seeded ChaCha8 stream per draw, mapped through the cumulative weights
//! by binary search.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cas::CasScore;
use crate::error::{Error, Result};
use crate::io;
use crate::rng::SeedStream;

pub const DEFAULT_POWER: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSchedule {
    image_ids: Vec<String>,
    cas: Vec<u64>,
    weights: Vec<f64>,
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
    power: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleItem {
    image_id: String,
    cas: u64,
    weight: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    power: f64,
    seed: u64,
    items: Vec<ScheduleItem>,
}

impl SamplingSchedule {
    pub fn from_cas(image_ids: Vec<String>, cas: Vec<u64>, power: f64, seed: u64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::invalid(format!(
                "power must be positive, got {power}"
            )));
        }
        if cas.is_empty() {
            return Err(Error::invalid("cannot build a schedule from zero scores"));
        }
        if image_ids.len() != cas.len() {
            return Err(Error::invalid("image ids and cas values differ in length"));
        }
        if let Some(i) = cas.iter().position(|&r| r == 0) {
            return Err(Error::invalid(format!(
                "image {:?} has cas 0; scores must be >= 1",
                image_ids[i]
            )));
        }
        let weights: Vec<f64> = cas.iter().map(|&r| (r as f64).powf(power)).collect();
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::invalid(format!(
                "weight of image {:?} overflows",
                image_ids[i]
            )));
        }
        let total: f64 = weights.iter().sum();
        if !total.is_finite() {
            return Err(Error::invalid("total weight overflows"));
        }
        let probabilities = weights.iter().map(|w| w / total).collect();
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(SamplingSchedule {
            image_ids,
            cas,
            weights,
            probabilities,
            cumulative,
            power,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn cas(&self) -> &[u64] {
        &self.cas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Maps a uniform `u ∈ [0,1)` to an item index.
    pub fn index_for(&self, u: f64) -> usize {
        let total = *self.cumulative.last().expect("non-empty schedule");
        let target = u * total;
        self.cumulative
            .partition_point(|&c| c <= target)
            .min(self.len() - 1)
    }

    /// `n` indices drawn from a stream seeded with the schedule's seed.
    pub fn draw(&self, n: usize) -> Vec<usize> {
        self.draw_from(&mut SeedStream::new(self.seed), n)
    }

    /// `n` indices drawn from an existing stream, advancing it.
    pub fn draw_from(&self, stream: &mut SeedStream, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.index_for(stream.uniform())).collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let file = ScheduleFile {
            power: self.power,
            seed: self.seed,
            items: (0..self.len())
                .map(|i| ScheduleItem {
                    image_id: self.image_ids[i].clone(),
                    cas: self.cas[i],
                    weight: self.weights[i],
                    p: self.probabilities[i],
                })
                .collect(),
        };
        io::to_json_pretty(&file)
    }
}

pub fn compute_schedule(scores: &[CasScore], power: f64, seed: u64) -> Result<SamplingSchedule> {
    SamplingSchedule::from_cas(
        scores.iter().map(|s| s.image_id.clone()).collect(),
        scores.iter().map(|s| s.cas).collect(),
        power,
        seed,
    )
}

pub fn draw(schedule: &SamplingSchedule, n: usize) -> Vec<usize> {
    schedule.draw(n)
}

pub fn write_schedule(schedule: &SamplingSchedule, path: &Path) -> Result<()> {
    io::write_atomic(path, &schedule.to_json())
}

/// Reads a schedule file. Weights and probabilities are recomputed from the
/// stored CAS values; stored ones that disagree beyond 1e-9 are rejected.
pub fn read_schedule(path: &Path) -> Result<SamplingSchedule> {
    let file: ScheduleFile = io::read_json(path)?;
    let (ids, cas): (Vec<_>, Vec<_>) = file
        .items
        .iter()
        .map(|it| (it.image_id.clone(), it.cas))
        .unzip();
    let schedule = SamplingSchedule::from_cas(ids, cas, file.power, file.seed)?;
    for (item, p) in file.items.iter().zip(schedule.probabilities()) {
        if (item.p - p).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "{}: stored p for {:?} disagrees with its cas",
                path.display(),
                item.image_id
            )));
        }
    }
    Ok(schedule)
}

/// Draw output as newline-separated indices or image ids.
pub fn format_draws(schedule: &SamplingSchedule, indices: &[usize], as_ids: bool) -> String {
    let mut out = String::new();
    for &i in indices {
        if as_ids {
            out.push_str(&schedule.image_ids[i]);
        } else {
            out.push_str(&i.to_string());
        }
        out.push('\n');
    }
    out
}

/// Reads a draw file written by [`format_draws`] with `as_ids = true`.
pub fn read_draws(path: &Path) -> Result<Vec<String>> {
    Ok(io::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Positions of `drawn` ids within `ids`.
pub fn indices_of(ids: &[String], drawn: &[String]) -> Result<Vec<usize>> {
    let position: std::collections::HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    drawn
        .iter()
        .map(|id| {
            position
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("drawn image {id:?} is not in the dataset")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(cas: &[u64], power: f64) -> SamplingSchedule {
        let ids = (0..cas.len()).map(|i| format!("i{i}")).collect();
        SamplingSchedule::from_cas(ids, cas.to_vec(), power, 7).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn uniform_input() {
        for b in [0.3, 1.0, 1.2, 5.0] {
            close(schedule(&[1, 1, 1, 1], b).probabilities(), &[0.25; 4]);
        }
    }

    #[test]
    fn power_one_is_proportional() {
        close(
            schedule(&[1, 2, 3], 1.0).probabilities(),
            &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0],
        );
    }

    #[test]
    fn power_two() {
        let s = schedule(&[1, 2, 3], 2.0);
        close(s.weights(), &[1.0, 4.0, 9.0]);
        close(s.probabilities(), &[1.0 / 14.0, 4.0 / 14.0, 9.0 / 14.0]);
    }

    #[test]
    fn rejects_bad_power_and_empty() {
        let ids = vec!["a".to_string()];
        assert!(SamplingSchedule::from_cas(ids.clone(), vec![1], 0.0, 0).is_err());
        assert!(SamplingSchedule::from_cas(ids.clone(), vec![1], -1.0, 0).is_err());
        assert!(SamplingSchedule::from_cas(ids, vec![1], f64::NAN, 0).is_err());
        assert!(SamplingSchedule::from_cas(vec![], vec![], 1.0, 0).is_err());
    }

    #[test]
    fn single_item_forced() {
        assert_eq!(schedule(&[5], 1.2).draw(5), vec![0; 5]);
    }

    #[test]
    fn zero_draws() {
        assert!(schedule(&[1, 2], 1.0).draw(0).is_empty());
    }

    #[test]
    fn fair_coin_frequencies() {
        let s = schedule(&[3, 3], 1.2);
        let n = 1_000_000;
        let ones = s.draw(n).iter().filter(|&&i| i == 1).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.003);
    }

    #[test]
    fn same_seed_same_stream() {
        let s = schedule(&[1, 5, 9, 2], 1.2);
        assert_eq!(s.draw(1000), s.draw(1000));
    }

    #[test]
    fn index_for_boundaries() {
        let s = schedule(&[1, 1], 1.0);
        assert_eq!(s.index_for(0.0), 0);
        assert_eq!(s.index_for(0.4999), 0);
        assert_eq!(s.index_for(0.5), 1);
        assert_eq!(s.index_for(0.999_999), 1);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = schedule(&[1, 2, 30], 1.2);
        write_schedule(&s, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"power\": 1.2"));
        assert_eq!(read_schedule(&path).unwrap(), s);
    }

    #[test]
    fn draw_formatting() {
        let s = schedule(&[1, 2], 1.0);
        assert_eq!(format_draws(&s, &[1, 0], false), "1\n0\n");
        assert_eq!(format_draws(&s, &[1, 0], true), "i1\ni0\n");
    }
}
