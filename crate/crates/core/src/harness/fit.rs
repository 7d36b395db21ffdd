//! Exponent fits on per-size medians and the two-sided sandwich check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrialRecord;
use crate::error::{Error, Result};
use crate::stats;

/// Which dimension the sizes are keyed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeKey {
    #[default]
    #[serde(rename = "n")]
    SmallN,
    #[serde(rename = "N")]
    BigN,
}

impl SizeKey {
    fn of(self, r: &TrialRecord) -> usize {
        match self {
            SizeKey::SmallN => r.n,
            SizeKey::BigN => r.big_n,
        }
    }
}

/// Coefficients of `log m = a + b log n + c log log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogTerm {
    pub intercept: f64,
    pub slope: f64,
    pub loglog: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r_squared: f64,
    /// `(log size, log median)` per size.
    pub points: Vec<(f64, f64)>,
    /// Fit with a `log log n` regressor, when there are at least four sizes.
    pub loglog: Option<LogLogTerm>,
}

/// Per-size `(size, median, count)` of `metric`, sorted by size.
pub fn medians_by_size(records: &[TrialRecord], key: SizeKey, metric: &str) -> Result<Vec<(usize, f64, usize)>> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        let v = r.metric(metric).ok_or_else(|| Error::InvalidParameter {
            name: "metric",
            reason: format!("record has no metric `{metric}`"),
        })?;
        groups.entry(key.of(r)).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(size, vs)| Ok((size, stats::median(&vs)?, vs.len())))
        .collect()
}

/// OLS of log median `metric` on log size across the distinct sizes.
pub fn fit_exponent(records: &[TrialRecord], key: SizeKey, metric: &str) -> Result<ScalingFit> {
    let med = medians_by_size(records, key, metric)?;
    if med.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "records",
            reason: format!("need at least 3 distinct sizes, got {}", med.len()),
        });
    }
    if let Some(&(size, m, _)) = med.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "records",
            reason: format!("median {metric} at size {size} is {m}, cannot take logs"),
        });
    }
    let xs: Vec<f64> = med.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = med.iter().map(|p| p.1.ln()).collect();
    let line = stats::ols(&xs, &ys)?;
    let loglog = if xs.len() >= 4 && xs.iter().all(|x| *x > 0.0) {
        let ll: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let beta = stats::least_squares(&[vec![1.0; xs.len()], xs.clone(), ll], &ys)?;
        Some(LogLogTerm {
            intercept: beta[0],
            slope: beta[1],
            loglog: beta[2],
        })
    } else {
        None
    };
    Ok(ScalingFit {
        slope: line.slope,
        intercept: line.intercept,
        stderr: line.stderr,
        r_squared: line.r_squared,
        points: xs.into_iter().zip(ys).collect(),
        loglog,
    })
}

/// Size profiles `(n^(1/a) (ln n)^(2(a-2)/a), n^(1/a) (ln n)^((a-2)/(2a)))` of
/// the lower and upper bounds.
pub fn sandwich_profiles(n: usize, alpha: f64) -> (f64, f64) {
    let nf = n as f64;
    let base = nf.powf(1.0 / alpha);
    let l = nf.ln();
    (
        base * l.powf(2.0 * (alpha - 2.0) / alpha),
        base * l.powf((alpha - 2.0) / (2.0 * alpha)),
    )
}

/// Constants `(c1, c2)` that just cover every calibration record: the
/// smallest and largest `sigma_min` over the corresponding profile.
pub fn calibrate_sandwich(records: &[TrialRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::Empty("calibrate_sandwich needs records"));
    }
    let (mut c1, mut c2) = (f64::INFINITY, 0.0f64);
    for r in records {
        let (lo, hi) = sandwich_profiles(r.n, r.alpha);
        c1 = c1.min(r.sigma_min / lo);
        c2 = c2.max(r.sigma_min / hi);
    }
    Ok((c1, c2))
}

/// Fraction of records with
/// `c1 lower_profile(n) <= sigma_min <= c2 upper_profile(n)`. Pass
/// `f64::INFINITY` as `c2` to disable the upper side.
pub fn sandwich_check(records: &[TrialRecord], c1: f64, c2: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("sandwich_check needs records"));
    }
    let inside = records
        .iter()
        .filter(|r| {
            let (lo, hi) = sandwich_profiles(r.n, r.alpha);
            // Ratios, so that calibrated constants reproduce exactly.
            let low_ok = c1 <= 0.0 || r.sigma_min / lo >= c1;
            let high_ok = c2 == f64::INFINITY || r.sigma_min / hi <= c2;
            low_ok && high_ok
        })
        .count();
    Ok(inside as f64 / records.len() as f64)
}
