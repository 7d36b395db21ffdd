//! Matrix parameters `sigma`, `sigma_*`, `R` of a normalized pair, the
//! universality error `eps(t)`, and Monte Carlo comparisons of a truncated
//! heavy-tailed matrix with its Gaussian surrogate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{decompose, gaussian_surrogate, normalize, NormalizedPair};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::spectra::{self, hausdorff_distance};
use crate::stats;
use crate::tail_sampler::{Regime, TailLaw, TruncationScheme};
use crate::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixParams {
    /// `sigma(X)`: square root of the largest row or column sum of variances.
    pub sigma_param: f64,
    /// `sigma_*(X)`: square root of the largest entry variance.
    pub sigma_star: f64,
    /// `R(X)`: almost sure bound on the entries of the random part.
    pub r_param: f64,
    pub t_grid: Vec<f64>,
}

/// Parameters of the self-adjoint dilation of `pair` from its exact variance
/// profile. The deterministic regularizer `epsilon` does not change them.
pub fn matrix_params(pair: &NormalizedPair, epsilon: f64, t_grid: &[f64]) -> Result<MatrixParams> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("must be positive, got {epsilon}"),
        });
    }
    Ok(profile_params(&pair.variance, pair.q_theory, t_grid))
}

pub(crate) fn profile_params(variance: &Mat, q: f64, t_grid: &[f64]) -> MatrixParams {
    let row_max = variance.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let col_max = variance.column_iter().map(|c| c.sum()).fold(0.0, f64::max);
    let entry_max = variance.iter().cloned().fold(0.0, f64::max);
    MatrixParams {
        sigma_param: row_max.max(col_max).sqrt(),
        sigma_star: entry_max.sqrt(),
        r_param: q,
        t_grid: t_grid.to_vec(),
    }
}

/// `C M n^(-1/2) t^(1/2) + C M^(2/3) q^(1/3) t^(2/3) (N/n)^(1/3) + C q t`.
pub fn epsilon_bound(m: f64, q: f64, n: usize, big_n: usize, t: f64, c: f64) -> f64 {
    let n_f = n as f64;
    let ratio = big_n as f64 / n_f;
    c * m * (t / n_f).sqrt() + c * m.powf(2.0 / 3.0) * q.cbrt() * t.powf(2.0 / 3.0) * ratio.cbrt() + c * q * t
}

/// One row of a quantile-versus-bound comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub t: f64,
    /// `1 - failure(t)`; checks with a non-positive level are vacuous.
    pub level: f64,
    pub epsilon: f64,
    /// Empirical quantile of the deltas at `level` (NaN when vacuous).
    pub quantile: f64,
    pub holds: bool,
    /// Number of samples above `epsilon`.
    pub exceedances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    /// `|sigma_min(T) - sigma_min(G)|` per trial.
    pub deltas: Vec<f64>,
    pub sigma_min_t: Vec<f64>,
    pub sigma_min_g: Vec<f64>,
    pub epsilon_curve: Vec<BoundCheck>,
    /// Number of `t` values whose quantile exceeds `eps(t)`.
    pub violations: usize,
    pub constant: f64,
    /// Smallest constant making every non-vacuous quantile check pass.
    pub c_hat: f64,
    pub median_delta: f64,
    pub m: f64,
    pub q: f64,
}

fn bound_checks(
    samples: &[f64],
    t_grid: &[f64],
    failure: impl Fn(f64) -> f64,
    eps_unit: impl Fn(f64) -> f64,
    constant: f64,
) -> Result<(Vec<BoundCheck>, f64)> {
    let mut c_hat = 0.0f64;
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let level = 1.0 - failure(t);
        let unit = eps_unit(t);
        let epsilon = constant * unit;
        let exceedances = samples.iter().filter(|d| **d > epsilon).count();
        let (quantile, holds) = if level > 0.0 {
            let qv = stats::quantile(samples, level.min(1.0))?;
            if unit > 0.0 {
                c_hat = c_hat.max(qv / unit);
            } else if qv > 0.0 {
                c_hat = f64::INFINITY;
            }
            (qv, qv <= epsilon)
        } else {
            (f64::NAN, true)
        };
        out.push(BoundCheck {
            t,
            level,
            epsilon,
            quantile,
            holds,
            exceedances,
        });
    }
    Ok((out, c_hat))
}

/// For each trial: sample labels, `Y`, `Z`, normalize to `T`, draw an
/// independent Gaussian surrogate `G` with the same profile, and record
/// `|sigma_min(T) - sigma_min(G)|`. Quantiles at level `1 - 8N e^-t` are
/// compared with `eps(t)`.
///
/// Trial `k` uses `key.child(k)`; results do not depend on thread count.
#[allow(clippy::too_many_arguments)]
pub fn coupling_experiment(
    law: &TailLaw,
    scheme: &TruncationScheme,
    n: usize,
    big_n: usize,
    trials: usize,
    key: StreamKey,
    t_grid: &[f64],
    constant: f64,
) -> Result<CouplingReport> {
    if scheme.regime != Regime::Lower {
        return Err(Error::WrongRegime("the coupling experiment needs the lower-bound threshold"));
    }
    if trials == 0 {
        return Err(Error::Empty("coupling_experiment needs at least one trial"));
    }
    let per_trial: Vec<Result<(f64, f64, f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let tk = key.child(k as u64);
            let dec = decompose(law, scheme, big_n, n, tk.child(0))?;
            let pair = normalize(&dec)?;
            let g = gaussian_surrogate(&pair, tk.child(1));
            let st = spectra::singular_extremes(&pair.t(), spectra::DEFAULT_TOL)?.sigma_min;
            let sg = spectra::singular_extremes(&g, spectra::DEFAULT_TOL)?.sigma_min;
            Ok((st, sg, pair.m, pair.q_theory))
        })
        .collect();
    let mut sigma_min_t = Vec::with_capacity(trials);
    let mut sigma_min_g = Vec::with_capacity(trials);
    let (mut m, mut q) = (0.0f64, 0.0f64);
    for r in per_trial {
        let (st, sg, mk, qk) = r?;
        sigma_min_t.push(st);
        sigma_min_g.push(sg);
        m = m.max(mk);
        q = q.max(qk);
    }
    let deltas: Vec<f64> = sigma_min_t.iter().zip(&sigma_min_g).map(|(a, b)| (a - b).abs()).collect();
    let nf = big_n as f64;
    let (epsilon_curve, c_hat) = bound_checks(
        &deltas,
        t_grid,
        |t| 8.0 * nf * (-t).exp(),
        |t| epsilon_bound(m, q, n, big_n, t, 1.0),
        constant,
    )?;
    Ok(CouplingReport {
        violations: epsilon_curve.iter().filter(|c| !c.holds).count(),
        median_delta: stats::median(&deltas)?,
        deltas,
        sigma_min_t,
        sigma_min_g,
        epsilon_curve,
        constant,
        c_hat,
        m,
        q,
    })
}

/// Outcome of the dilation comparison for one pair `(H, G)` at `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub epsilon: f64,
    /// Hausdorff distance between the two dilation spectra.
    pub d_h: f64,
    /// `d_h <= epsilon`.
    pub hypothesis: bool,
    pub lambda_plus_ok: bool,
    pub lambda_minus_ok: bool,
    /// `sigma_min(H) >= sigma_min(G) - 3 epsilon`.
    pub sigma_min_ok: bool,
}

impl LemmaCheck {
    /// The implication "hypothesis implies all three conclusions".
    pub fn implication_holds(&self) -> bool {
        !self.hypothesis || (self.lambda_plus_ok && self.lambda_minus_ok && self.sigma_min_ok)
    }
}

/// Builds both dilations at `epsilon`, measures the Hausdorff distance of
/// their spectra and evaluates the conclusions, with slack `tol` relative to
/// the largest singular value involved.
pub fn lemma_check(h: &Mat, g: &Mat, epsilon: f64, tol: f64) -> Result<LemmaCheck> {
    if h.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            expected: h.shape(),
            actual: g.shape(),
        });
    }
    let dh = spectra::dilation_spectrum(h, epsilon)?;
    let dg = spectra::dilation_spectrum(g, epsilon)?;
    let d_h = hausdorff_distance(&dh.eigenvalues, &dg.eigenvalues)?;
    let sh = spectra::singular_extremes(h, spectra::DEFAULT_TOL)?.sigma_min;
    let sg = spectra::singular_extremes(g, spectra::DEFAULT_TOL)?.sigma_min;
    let slack = tol * dh.lambda_plus.max(dg.lambda_plus);
    Ok(LemmaCheck {
        epsilon,
        d_h,
        hypothesis: d_h <= epsilon,
        lambda_plus_ok: dh.lambda_plus <= dg.lambda_plus + epsilon + slack,
        lambda_minus_ok: dh.lambda_minus >= dg.lambda_minus - epsilon - slack,
        sigma_min_ok: sh >= sg - 3.0 * epsilon - slack,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HausdorffReport {
    pub distances: Vec<f64>,
    pub params: MatrixParams,
    pub checks: Vec<BoundCheck>,
    /// Smallest constant making every non-vacuous quantile check pass.
    pub c_hat: f64,
    /// Pairs where the dilation hypothesis held but a conclusion failed.
    pub implication_failures: usize,
}

/// Compares the dilation spectra of `T` and independent surrogates `G`
/// (trial `k` draws from `key.child(k)`). Quantiles at level
/// `1 - d e^-t`, `d = 2(N + n)`, are compared with `C eps(t)`.
pub fn hausdorff_universality(
    pair: &NormalizedPair,
    epsilon: f64,
    trials: usize,
    key: StreamKey,
    t_grid: &[f64],
    constant: f64,
) -> Result<HausdorffReport> {
    if trials == 0 {
        return Err(Error::Empty("hausdorff_universality needs at least one trial"));
    }
    let params = matrix_params(pair, epsilon, t_grid)?;
    let (big_n, n) = pair.dims();
    let t = pair.t();
    let results: Vec<Result<LemmaCheck>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let g = gaussian_surrogate(pair, key.child(k as u64));
            lemma_check(&t, &g, epsilon, 1e-9)
        })
        .collect();
    let mut distances = Vec::with_capacity(trials);
    let mut implication_failures = 0;
    for r in results {
        let c = r?;
        if !c.implication_holds() {
            implication_failures += 1;
        }
        distances.push(c.d_h);
    }
    let d = 2.0 * (big_n + n) as f64;
    let (checks, c_hat) = bound_checks(
        &distances,
        t_grid,
        |t| d * (-t).exp(),
        |t| epsilon_bound(pair.m, pair.q_theory, n, big_n, t, 1.0),
        constant,
    )?;
    Ok(HausdorffReport {
        distances,
        params,
        checks,
        c_hat,
        implication_failures,
    })
}
