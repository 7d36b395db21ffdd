//! The upper-bound argument on sampled instances: all-ones label columns,
//! the minor `Y^m`, and an empirical Seginer constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::spectra;
use crate::tail_sampler::{LabelMatrix, ThresholdBase, Threshold, TruncationScheme};
use crate::Mat;

/// Indices of the columns of `psi` that contain only ones.
pub fn find_all_ones_columns(psi: &LabelMatrix) -> Vec<usize> {
    let (_, cols) = psi.dims();
    (0..cols).filter(|&j| psi.column(j).iter().all(|b| *b)).collect()
}

/// Exact `P(no all-ones column) = (1 - p^N)^n` for i.i.d. labels with
/// `P(1) = p`.
pub fn no_all_ones_probability(p: f64, rows: usize, cols: usize) -> f64 {
    let col_all_ones = (rows as f64 * p.ln()).exp();
    (cols as f64 * (-col_all_ones).ln_1p()).exp()
}

/// The bound `exp(-n exp(-delta C_u base^(alpha e)))` on the probability of
/// no all-ones column (`delta` drops out for the row-based threshold).
pub fn no_all_ones_bound(scheme: &TruncationScheme, th: &Threshold, cols: usize) -> f64 {
    let rate = match scheme.base {
        ThresholdBase::SmallN => scheme.delta * scheme.c_u * th.power,
        ThresholdBase::BigN => scheme.c_u * th.power,
    };
    (-(cols as f64) * (-rate).exp()).exp()
}

/// Scale `base^(1/alpha - (1 - alpha/2) e)` that `||Y^m||` is compared with.
pub fn minor_scale(alpha: f64, th: &Threshold) -> f64 {
    (th.base_size as f64).powf(1.0 / alpha - (1.0 - alpha / 2.0) * th.epsilon_tilde)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorReport {
    pub all_ones_columns: Vec<usize>,
    /// `||Y^m||`.
    pub minor_norm: f64,
    /// `C base^(1/alpha - (1 - alpha/2) e)`.
    pub bound_value: f64,
    /// `minor_norm <= bound_value`.
    pub predicate_holds: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `sigma_min(X) <= ||Y^m||`, up to the spectral tolerance.
    pub sigma_min_below_minor: bool,
    /// Empirical constant `||Y^m|| / base^(1/alpha - (1 - alpha/2) e)`.
    pub constant_hat: f64,
}

/// Extracts the minor of `small` on the all-ones columns of `psi` and checks
/// `sigma_min(x) <= ||Y^m||` and `||Y^m|| <= constant * scale`.
///
/// `no_ones_bound` is reported in the error when no all-ones column exists.
pub fn minor_upper_bound(
    x: &Mat,
    psi: &LabelMatrix,
    small: &Mat,
    scale: f64,
    constant: f64,
    no_ones_bound: f64,
    tol: f64,
) -> Result<MinorReport> {
    let dims = psi.dims();
    for m in [x, small] {
        if m.shape() != dims {
            return Err(Error::ShapeMismatch {
                expected: dims,
                actual: m.shape(),
            });
        }
    }
    let cols = find_all_ones_columns(psi);
    if cols.is_empty() {
        return Err(Error::Inapplicable {
            probability_bound: no_ones_bound,
        });
    }
    let minor = small.select_columns(cols.iter());
    let minor_norm = spectra::singular_extremes(&minor, spectra::DEFAULT_TOL)?.sigma_max;
    let extremes = spectra::singular_extremes(x, spectra::DEFAULT_TOL)?;
    let sigma_min = extremes.sigma_min;
    let bound_value = constant * scale;
    Ok(MinorReport {
        all_ones_columns: cols,
        minor_norm,
        bound_value,
        predicate_holds: minor_norm <= bound_value,
        sigma_min,
        sigma_max: extremes.sigma_max,
        sigma_min_below_minor: sigma_min <= minor_norm * (1.0 + tol),
        constant_hat: minor_norm / scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeginerReport {
    pub m1: usize,
    pub m2: usize,
    pub q: u32,
    pub trials: usize,
    /// Monte Carlo `E ||Y||^q`.
    pub lhs: f64,
    /// Monte Carlo `E max_i ||Y_i.||^q`.
    pub rhs_rows: f64,
    /// Monte Carlo `E max_j ||Y_.j||^q`.
    pub rhs_cols: f64,
    /// `(lhs / (rhs_rows + rhs_cols))^(1/q)`, zero when both sides vanish.
    pub c_hat: f64,
}

/// Monte Carlo estimate of the smallest constant in
/// `E||Y||^q <= C^q (E max row norm^q + E max column norm^q)`.
///
/// `q` must be a positive even integer with `q <= 2 ln max(m1, m2)`; `q = 2`
/// is always accepted so that tiny matrices can be probed.
pub fn seginer_check(
    sampler: &dyn Fn(StreamKey) -> Mat,
    m1: usize,
    m2: usize,
    q: u32,
    trials: usize,
    key: StreamKey,
) -> Result<SeginerReport> {
    if q == 0 || q % 2 == 1 {
        return Err(Error::InvalidParameter {
            name: "q",
            reason: format!("must be a positive even integer, got {q}"),
        });
    }
    let limit = 2.0 * (m1.max(m2) as f64).ln();
    if q > 2 && q as f64 > limit {
        return Err(Error::InvalidParameter {
            name: "q",
            reason: format!("must not exceed 2 ln max(m1, m2) = {limit:.3}"),
        });
    }
    if trials == 0 {
        return Err(Error::Empty("seginer_check needs at least one trial"));
    }
    let qi = q as i32;
    let (mut lhs, mut rows, mut cols) = (0.0, 0.0, 0.0);
    for t in 0..trials {
        let y = sampler(key.child(t as u64));
        if y.shape() != (m1, m2) {
            return Err(Error::ShapeMismatch {
                expected: (m1, m2),
                actual: y.shape(),
            });
        }
        let norm = spectra::singular_extremes(&y, spectra::DEFAULT_TOL)?.sigma_max;
        let row_max = y.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        let col_max = y.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        lhs += norm.powi(qi);
        rows += row_max.powi(qi);
        cols += col_max.powi(qi);
    }
    let n = trials as f64;
    let (lhs, rhs_rows, rhs_cols) = (lhs / n, rows / n, cols / n);
    let denom = rhs_rows + rhs_cols;
    let c_hat = if denom == 0.0 {
        0.0
    } else {
        (lhs / denom).powf(1.0 / q as f64)
    };
    Ok(SeginerReport {
        m1,
        m2,
        q,
        trials,
        lhs,
        rhs_rows,
        rhs_cols,
        c_hat,
    })
}
