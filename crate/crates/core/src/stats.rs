//! Small descriptive statistics used by the experiments.

use crate::error::{Error, Result};

/// Median of a sample; the mean of the two middle values for even sizes.
pub fn median(xs: &[f64]) -> Result<f64> {
    quantile(xs, 0.5)
}

/// Linearly interpolated sample quantile (the usual "type 7" definition).
pub fn quantile(xs: &[f64], level: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidParameter {
            name: "level",
            reason: format!("quantile level must lie in [0, 1], got {level}"),
        });
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = level * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for an exact fit on two points.
    pub stderr: f64,
    pub r_squared: f64,
}

pub fn ols(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            expected: (xs.len(), 1),
            actual: (ys.len(), 1),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Empty("ols needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter {
            name: "xs",
            reason: "regressor has zero spread".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let stderr = if xs.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LineFit {
        slope,
        intercept,
        stderr,
        r_squared,
    })
}

/// Least squares coefficients of `y` on the columns of `design` (no
/// implicit intercept).
pub fn least_squares(design: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>> {
    let p = design.len();
    if p == 0 || design.iter().any(|c| c.len() != ys.len()) {
        return Err(Error::ShapeMismatch {
            expected: (ys.len(), p),
            actual: (design.first().map_or(0, Vec::len), p),
        });
    }
    let x = nalgebra::DMatrix::from_fn(ys.len(), p, |i, j| design[j][i]);
    let y = nalgebra::DVector::from_column_slice(ys);
    let svd = x.svd(true, true);
    let beta = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::InvalidParameter {
            name: "design",
            reason: e.to_string(),
        })?;
    Ok(beta.iter().copied().collect())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("ks_statistic needs two non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic two-sample KS critical value at significance `level`:
/// `sqrt(-ln(level / 2) / 2) * sqrt((n + m) / (n m))`.
pub fn ks_critical(level: f64, n: usize, m: usize) -> f64 {
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.25).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn ols_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 2.0 * x).collect();
        let f = ols(&xs, &ys).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14);
        assert!((f.intercept - 0.5).abs() < 1e-14);
        assert!(f.stderr < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_matches_ols() {
        let xs = [1.0, 2.0, 3.0, 5.0, 8.0];
        let ys = [2.0, 2.9, 4.2, 6.1, 8.8];
        let f = ols(&xs, &ys).unwrap();
        let beta = least_squares(&[vec![1.0; 5], xs.to_vec()], &ys).unwrap();
        assert!((beta[0] - f.intercept).abs() < 1e-12);
        assert!((beta[1] - f.slope).abs() < 1e-12);
    }

    #[test]
    fn ks_of_identical_and_disjoint_samples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_statistic(&a, &[10.0, 11.0]).unwrap(), 1.0);
        // c(0.001) = 1.9495 for the asymptotic Kolmogorov distribution.
        let c = ks_critical(1e-3, 1, 1) / 2f64.sqrt();
        assert!((c - 1.9495).abs() < 1e-4);
    }
}
