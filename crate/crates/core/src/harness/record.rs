//! Run records, their persistence, and the small statistics they need.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::solvers::MonitorRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Floor,
    Inconclusive,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
            Status::Floor | Status::Inconclusive => 3,
        }
    }

    /// The worse of two statuses: fail beats inconclusive beats floor beats pass.
    pub fn and(self, other: Status) -> Status {
        let rank = |s: Status| match s {
            Status::Pass => 0,
            Status::Floor => 1,
            Status::Inconclusive => 2,
            Status::Fail => 3,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }

    pub fn from_bool(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

/// A fitted quantity with its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub status: Status,
    pub monitors: Vec<MonitorRow>,
    pub fits: Vec<Fit>,
    pub summary: serde_json::Value,
    pub warnings: Vec<String>,
    pub wall_time: f64,
}

pub fn version() -> String {
    format!("spdelab-{}", env!("CARGO_PKG_VERSION"))
}

impl RunRecord {
    /// Every field except `wall_time`, for reproducibility comparisons.
    pub fn numeric_fingerprint(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time");
        }
        Ok(serde_json::to_string(&v)?)
    }

    /// Appends the record as one line of `<out>/<experiment>.jsonl`.
    pub fn append_jsonl(&self, out: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out)?;
        let path = out.join(format!("{}.jsonl", self.experiment));
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        writeln!(file, "{}", serde_json::to_string(self)?)?;
        Ok(path)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Percentile bootstrap of the median: (standard error, 2.5%, 97.5%).
pub fn bootstrap_median(values: &[f64], resamples: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut meds: Vec<f64> = (0..resamples)
        .map(|_| {
            let sample: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
            median(&sample)
        })
        .collect();
    meds.sort_by(f64::total_cmp);
    let (_, se) = mean_se(&meds);
    let q = |p: f64| meds[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (se * (resamples as f64).sqrt(), q(0.025), q(0.975))
}

/// Median with bootstrap CI packed as a [`Fit`].
pub fn median_fit(name: &str, values: &[f64], resamples: usize, seed: u64) -> Fit {
    let (std_error, ci_low, ci_high) = bootstrap_median(values, resamples, seed);
    Fit { name: name.to_string(), value: median(values), std_error, ci_low, ci_high }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn mean_se_example() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_is_seeded_and_brackets_the_median() {
        let v: Vec<f64> = (0..41).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = bootstrap_median(&v, 200, 7);
        let b = bootstrap_median(&v, 200, 7);
        assert_eq!(a, b);
        let m = median(&v);
        assert!(a.1 <= m && m <= a.2);
        // constant data gives a degenerate interval
        let c = bootstrap_median(&[0.5; 10], 50, 1);
        assert_eq!((c.1, c.2), (0.5, 0.5));
        assert_eq!(c.0, 0.0);
    }

    #[test]
    fn status_combination() {
        assert_eq!(Status::Pass.and(Status::Floor), Status::Floor);
        assert_eq!(Status::Fail.and(Status::Inconclusive), Status::Fail);
        assert_eq!(Status::Inconclusive.exit_code(), 3);
        assert_eq!(Status::Fail.exit_code(), 2);
    }
}
