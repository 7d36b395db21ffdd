//! Heavy-tailed entry laws, truncation thresholds, label matrices and the
//! conditional small/large laws of the resampling procedure.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::rng::{StreamKey, StreamRng};
use crate::Mat;

/// Family of a symmetric heavy-tailed law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    /// `P(|x| >= t) = min(1, t^-alpha)` with a fair random sign.
    SymmetricPareto,
    /// Symmetric stable law with characteristic function `exp(-sigma^alpha |t|^alpha)`.
    AlphaStable,
    /// `P(|x| >= t)` proportional to `(1 + ln t)^beta t^-alpha` for `t >= t0`.
    SlowVaryingPareto,
}

fn default_sigma() -> f64 {
    1.0
}

/// A symmetric entry law with tail index `alpha` in `(0, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailLaw {
    pub kind: TailKind,
    pub alpha: f64,
    /// Scale; used by `AlphaStable` only.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Log-power of the slowly varying factor; used by `SlowVaryingPareto` only.
    #[serde(default)]
    pub beta: f64,
}

/// `u^(-1/alpha)`, the inverse of the Pareto tail `t^-alpha` on `[1, inf)`.
#[inline]
pub fn pareto_magnitude(alpha: f64, u: f64) -> f64 {
    u.powf(-1.0 / alpha)
}

/// Uniform draw on the open interval `(0, 1)`.
#[inline]
fn open_open(rng: &mut StreamRng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl TailLaw {
    pub fn symmetric_pareto(alpha: f64) -> Result<Self> {
        Self::new(TailKind::SymmetricPareto, alpha, 1.0, 0.0)
    }

    pub fn alpha_stable(alpha: f64, sigma: f64) -> Result<Self> {
        Self::new(TailKind::AlphaStable, alpha, sigma, 0.0)
    }

    pub fn slow_varying_pareto(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(TailKind::SlowVaryingPareto, alpha, 1.0, beta)
    }

    fn new(kind: TailKind, alpha: f64, sigma: f64, beta: f64) -> Result<Self> {
        let law = TailLaw { kind, alpha, sigma, beta };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::InvalidLaw(format!(
                "alpha must lie in (0, 2), got {}",
                self.alpha
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidLaw(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidLaw("beta must be finite".into()));
        }
        Ok(())
    }

    /// Left end of the support of `|x|` for `SlowVaryingPareto`: the point
    /// past which `(1 + ln t)^beta t^-alpha` is non-increasing.
    pub fn slow_varying_origin(&self) -> f64 {
        (self.beta / self.alpha - 1.0).exp().max(1.0)
    }

    fn slow_log_tail(&self, t: f64) -> f64 {
        let s0 = self.slow_varying_origin().ln();
        let s = t.ln();
        self.beta * ((1.0 + s).ln() - (1.0 + s0).ln()) - self.alpha * (s - s0)
    }

    /// `P(|x| > t)`.
    pub fn abs_tail(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        match self.kind {
            TailKind::SymmetricPareto => {
                if t <= 1.0 {
                    1.0
                } else {
                    t.powf(-self.alpha)
                }
            }
            TailKind::SlowVaryingPareto => {
                if t <= self.slow_varying_origin() {
                    1.0
                } else {
                    self.slow_log_tail(t).exp()
                }
            }
            TailKind::AlphaStable => stable_abs_probabilities(self.alpha, t / self.sigma).1,
        }
    }

    /// `P(|x| <= t)`.
    pub fn abs_cdf(&self, t: f64) -> f64 {
        match self.kind {
            TailKind::AlphaStable => stable_abs_probabilities(self.alpha, t / self.sigma).0,
            _ => 1.0 - self.abs_tail(t),
        }
    }

    /// Constants `(c_lo, c_hi)` with `c_lo t^-alpha <= P(|x| >= t) <= c_hi t^-alpha`
    /// for all `t >= 1`. `None` when no such pair exists (slowly varying
    /// factor with `beta != 0`).
    ///
    /// For `AlphaStable` the extrema are taken over a logarithmic grid on
    /// `[1, 1e8]` together with the asymptotic constant
    /// `(2/pi) Gamma(alpha) sin(pi alpha / 2) sigma^alpha`.
    pub fn tail_constants(&self) -> Option<(f64, f64)> {
        match self.kind {
            TailKind::SymmetricPareto => Some((1.0, 1.0)),
            TailKind::SlowVaryingPareto => (self.beta == 0.0).then_some((1.0, 1.0)),
            TailKind::AlphaStable => {
                let asym = stable_tail_constant(self.alpha, self.sigma);
                let (mut lo, mut hi) = (asym, asym);
                for k in 0..=160 {
                    let t = 10f64.powf(k as f64 / 20.0);
                    let r = self.abs_tail(t) * t.powf(self.alpha);
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
                Some((lo, hi))
            }
        }
    }

    /// The constant `C_u` of the upper tail bound, when it exists.
    pub fn upper_tail_constant(&self) -> Option<f64> {
        self.tail_constants().map(|c| c.1)
    }

    /// Smallest `t` with `P(|x| > t) <= v`, for `v` in `(0, 1]`.
    pub fn inverse_abs_tail(&self, v: f64) -> f64 {
        debug_assert!(v > 0.0 && v <= 1.0);
        match self.kind {
            TailKind::SymmetricPareto => pareto_magnitude(self.alpha, v),
            TailKind::SlowVaryingPareto => self.slow_inverse_tail(v),
            TailKind::AlphaStable => self.stable_inverse_tail(v),
        }
    }

    fn slow_inverse_tail(&self, v: f64) -> f64 {
        let t0 = self.slow_varying_origin();
        if v >= 1.0 {
            return t0;
        }
        let target = v.ln();
        let s0 = t0.ln();
        // g(s) = log-tail at e^s minus target is non-increasing in s.
        let g = |s: f64| self.slow_log_tail(s.exp()) - target;
        let (mut lo, mut hi) = (s0, s0 + 1.0);
        while g(hi) > 0.0 {
            lo = hi;
            hi = s0 + 2.0 * (hi - s0);
        }
        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let gs = g(s);
            if gs == 0.0 {
                break;
            }
            if gs > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let slope = self.beta / (1.0 + s) - self.alpha;
            let newton = s - gs / slope;
            let next = if slope < 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let done = (next - s).abs() <= 4.0 * f64::EPSILON * s.abs().max(1.0);
            s = next;
            if done || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
                break;
            }
        }
        s.exp()
    }

    fn stable_inverse_tail(&self, v: f64) -> f64 {
        // Illinois false position on ln t for ln P(|x| > t) = ln v.
        let target = v.ln();
        let h = |s: f64| self.abs_tail(s.exp()).ln() - target;
        let guess = (stable_tail_constant(self.alpha, self.sigma) / v).powf(1.0 / self.alpha);
        let mut a = guess.max(1e-300).ln();
        let mut fa = h(a);
        let step = if fa > 0.0 { 1.0 } else { -1.0 };
        let mut b = a + step;
        let mut fb = h(b);
        while fa.signum() == fb.signum() && fb.is_finite() {
            a = b;
            fa = fb;
            b += step * (b - a).abs().max(1.0);
            fb = h(b);
        }
        let mut side = 0i8;
        for _ in 0..200 {
            let c = (a * fb - b * fa) / (fb - fa);
            let fc = h(c);
            if fc == 0.0 || (b - a).abs() <= 1e-13 * c.abs().max(1.0) {
                return c.exp();
            }
            if fc.signum() == fb.signum() {
                b = c;
                fb = fc;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            } else {
                a = c;
                fa = fc;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            }
        }
        (0.5 * (a + b)).exp()
    }
}

/// Asymptotic constant of `P(|x| > t) ~ C t^-alpha` for the symmetric
/// stable law of scale `sigma`.
pub fn stable_tail_constant(alpha: f64, sigma: f64) -> f64 {
    2.0 / PI * statrs::function::gamma::gamma(alpha) * (PI * alpha / 2.0).sin() * sigma.powf(alpha)
}

/// `(P(|X| <= x), P(|X| > x))` for the standard symmetric stable law,
/// computed from Nolan's integral representation so that whichever of the
/// two is small keeps full relative accuracy.
fn stable_abs_probabilities(alpha: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if !x.is_finite() {
        return (1.0, 0.0);
    }
    if alpha == 1.0 {
        let tail = 2.0 / PI * (1.0 / x).atan();
        return (1.0 - tail, tail);
    }
    let p = alpha / (alpha - 1.0);
    let lnx = x.ln();
    // ln(x^p V(theta)) with V(theta) = (cos t / sin(a t))^p cos((a-1)t) / cos t.
    let log_w = move |theta: f64| {
        let c = theta.cos();
        p * lnx + p * (c.ln() - (alpha * theta).sin().ln()) + ((alpha - 1.0) * theta).cos().ln()
            - c.ln()
    };
    let exp_part = |theta: f64| {
        let lw = log_w(theta);
        if lw.is_nan() {
            0.0
        } else {
            (-lw.exp()).exp()
        }
    };
    let m1_part = |theta: f64| {
        let lw = log_w(theta);
        if lw.is_nan() {
            0.0
        } else {
            -(-lw.exp()).exp_m1()
        }
    };
    // log_w is monotone in theta; split where it crosses a few levels so
    // the transition region, however narrow, gets its own subintervals.
    let lo_end = 1e-300f64.max(f64::EPSILON * 1e-3);
    let hi_end = FRAC_PI_2 * (1.0 - f64::EPSILON);
    let increasing = log_w(hi_end) > log_w(lo_end);
    let mut cuts = vec![0.0, FRAC_PI_2];
    for level in [-40.0, -6.0, -2.0, 0.0, 2.0, 4.0] {
        let (mut a, mut b) = (0.0f64, FRAC_PI_2);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if (log_w(m) < level) == increasing {
                a = m;
            } else {
                b = m;
            }
        }
        cuts.push(0.5 * (a + b));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pieces = cuts.len() - 1;
    let piecewise = |f: &dyn Fn(f64) -> f64| -> f64 {
        // A crude pass fixes an absolute tolerance relative to the total.
        let crude: f64 = cuts.windows(2).map(|w| integrate(f, w[0], w[1], 0.0, 0.0, 1).value).sum();
        let tol = 1e-13 * crude.abs() / pieces as f64;
        cuts.windows(2)
            .map(|w| integrate(f, w[0], w[1], tol.max(1e-300), 1e-13, 400).value)
            .sum()
    };
    let (tail_part, cdf_part): (&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64) = if alpha < 1.0 {
        (&m1_part, &exp_part)
    } else {
        (&exp_part, &m1_part)
    };
    let tail = (2.0 / PI * piecewise(tail_part)).clamp(0.0, 1.0);
    let cdf = if tail < 0.5 {
        1.0 - tail
    } else {
        (2.0 / PI * piecewise(cdf_part)).clamp(0.0, 1.0)
    };
    (cdf.clamp(0.0, 1.0), tail.clamp(0.0, 1.0))
}

impl TailLaw {
    /// One draw from the law.
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match self.kind {
            TailKind::SymmetricPareto => {
                let positive = rng.coin();
                let m = pareto_magnitude(self.alpha, rng.open01());
                if positive {
                    m
                } else {
                    -m
                }
            }
            TailKind::SlowVaryingPareto => {
                let positive = rng.coin();
                let m = self.slow_inverse_tail(rng.open01());
                if positive {
                    m
                } else {
                    -m
                }
            }
            TailKind::AlphaStable => {
                let v = PI * (open_open(rng) - 0.5);
                let w = -open_open(rng).ln();
                let a = self.alpha;
                let x = if a == 1.0 {
                    v.tan()
                } else {
                    (a * v).sin() / v.cos().powf(1.0 / a)
                        * (((1.0 - a) * v).cos() / w).powf((1.0 - a) / a)
                };
                self.sigma * x
            }
        }
    }
}

/// One draw of `law` from the generator.
pub fn sample_entry(law: &TailLaw, rng: &mut StreamRng) -> f64 {
    law.sample(rng)
}

/// `rows x cols` matrix of i.i.d. draws; entry `(i, j)` uses
/// `key.entry(i, j)`.
pub fn sample_matrix(law: &TailLaw, rows: usize, cols: usize, key: StreamKey) -> Mat {
    Mat::from_fn(rows, cols, |i, j| law.sample(&mut key.entry(i, j).rng()))
}

/// Which way the threshold was set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `base^(alpha e) = b ln(base) / (delta C_u)` (upper-bound argument).
    Upper,
    /// `base^(alpha e) = c (ln base)^4` (lower-bound argument).
    Lower,
}

/// Dimension the threshold is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdBase {
    /// The number of columns `n`.
    #[serde(rename = "n")]
    SmallN,
    /// The number of rows `N`; for `Upper` this uses
    /// `N^(alpha e) = (1 - b) ln n / C_u`.
    #[serde(rename = "N")]
    BigN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationScheme {
    pub regime: Regime,
    pub base: ThresholdBase,
    /// Used by `Upper`, in `(0, 1)`.
    #[serde(default = "default_b")]
    pub b: f64,
    /// Used by `Lower`, positive.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Aspect-ratio lower bound, `> 1`.
    pub delta: f64,
    /// Tail constant entering the `Upper` formula.
    #[serde(default = "default_c_u")]
    pub c_u: f64,
}

fn default_b() -> f64 {
    0.5
}
fn default_c() -> f64 {
    1.0
}
fn default_c_u() -> f64 {
    1.0
}

impl TruncationScheme {
    pub fn upper(b: f64, delta: f64, c_u: f64) -> Self {
        TruncationScheme {
            regime: Regime::Upper,
            base: ThresholdBase::SmallN,
            b,
            c: default_c(),
            delta,
            c_u,
        }
    }

    pub fn lower(c: f64, delta: f64) -> Self {
        TruncationScheme {
            regime: Regime::Lower,
            base: ThresholdBase::SmallN,
            b: default_b(),
            c,
            delta,
            c_u: default_c_u(),
        }
    }

    pub fn with_base(mut self, base: ThresholdBase) -> Self {
        self.base = base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 1.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                reason: format!("aspect-ratio bound must exceed 1, got {}", self.delta),
            });
        }
        match self.regime {
            Regime::Upper => {
                if !(self.b > 0.0 && self.b < 1.0) {
                    return Err(Error::InvalidParameter {
                        name: "b",
                        reason: format!("must lie in (0, 1), got {}", self.b),
                    });
                }
                if !(self.c_u > 0.0 && self.c_u.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "c_u",
                        reason: format!("must be positive, got {}", self.c_u),
                    });
                }
            }
            Regime::Lower => {
                if !(self.c > 0.0 && self.c.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "c",
                        reason: format!("must be positive, got {}", self.c),
                    });
                }
            }
        }
        Ok(())
    }

    /// `base^(alpha e)` as a function of the base size (and of `n` for the
    /// row-based upper regime).
    fn power(&self, base: f64, n: f64) -> f64 {
        match (self.regime, self.base) {
            (Regime::Upper, ThresholdBase::SmallN) => self.b * base.ln() / (self.delta * self.c_u),
            (Regime::Upper, ThresholdBase::BigN) => (1.0 - self.b) * n.ln() / self.c_u,
            (Regime::Lower, _) => self.c * base.ln().powi(4),
        }
    }

    /// Smallest base size `B` such that every base `>= B` gives an exponent in
    /// `(0, 1/alpha)`. For the row-based upper regime the power does not depend
    /// on the base, so only the upper constraint is resolved here.
    pub fn minimal_base(&self, n: u64) -> u64 {
        let nf = n as f64;
        let k = |x: f64| self.power(x, nf);
        // ln x - ln K(x) is increasing beyond this point for every regime.
        let mono = match self.regime {
            Regime::Upper => std::f64::consts::E,
            Regime::Lower => 4f64.exp(),
        };
        let bisect = |pred: &dyn Fn(f64) -> bool, mut lo: f64, mut hi: f64| {
            // pred(lo) false, pred(hi) true; works on s = ln x.
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if pred(mid.exp()) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi.exp()
        };
        let above_one = |x: f64| k(x) > 1.0;
        let below_base = |x: f64| k(x) < x;
        let lo1 = if above_one(1.0 + 1e-12) {
            1.0
        } else if above_one(f64::MAX.sqrt()) {
            bisect(&above_one, 0.0, f64::MAX.sqrt().ln())
        } else {
            f64::INFINITY
        };
        let lo2 = if below_base(mono) {
            1.0
        } else {
            bisect(&below_base, mono.ln(), f64::MAX.sqrt().ln())
        };
        let start = lo1.max(lo2).max(2.0);
        if !start.is_finite() || start > 1e18 {
            return u64::MAX;
        }
        let mut b = start.ceil() as u64;
        while !(above_one(b as f64) && below_base(b as f64)) && b < u64::MAX / 2 {
            b += 1;
        }
        b
    }
}

/// Truncation exponent and cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// The exponent `e` with `tau = base^(1/alpha - e)`.
    pub epsilon_tilde: f64,
    /// The cutoff `tau`.
    pub tau: f64,
    /// `base^(alpha e)`.
    pub power: f64,
    /// The base size the formula was evaluated at.
    pub base_size: u64,
}

/// Solves the threshold equation of `scheme` for the given dimensions.
pub fn threshold(scheme: &TruncationScheme, law: &TailLaw, n: usize, big_n: usize) -> Result<Threshold> {
    scheme.validate()?;
    law.validate()?;
    if n == 0 || big_n == 0 {
        return Err(Error::Empty("threshold needs positive dimensions"));
    }
    let base_size = match scheme.base {
        ThresholdBase::SmallN => n,
        ThresholdBase::BigN => big_n,
    } as u64;
    let base = base_size as f64;
    let power = scheme.power(base, n as f64);
    let epsilon_tilde = power.ln() / (law.alpha * base.ln());
    if !(power > 1.0 && power < base) {
        let min_base = if matches!((scheme.regime, scheme.base), (Regime::Upper, ThresholdBase::BigN))
            && power <= 1.0
        {
            // The power depends on n only; report the smallest admissible n.
            let mut m = (scheme.c_u / (1.0 - scheme.b)).exp().ceil() as u64;
            while scheme.power(0.0, m as f64) <= 1.0 {
                m += 1;
            }
            m
        } else if matches!(scheme.base, ThresholdBase::BigN) && matches!(scheme.regime, Regime::Upper) {
            power.floor() as u64 + 1
        } else {
            scheme.minimal_base(n as u64)
        };
        return Err(Error::Sizing {
            base: base_size,
            epsilon_tilde,
            min_base,
        });
    }
    let tau = (base / power).powf(1.0 / law.alpha);
    Ok(Threshold {
        epsilon_tilde,
        tau,
        power,
        base_size,
    })
}

/// Bernoulli label matrix, column-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl LabelMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                bits.push(f(i, j));
            }
        }
        LabelMatrix { rows, cols, bits }
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        LabelMatrix {
            rows,
            cols,
            bits: vec![value; rows * cols],
        }
    }

    /// `(N, n)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.rows + i]
    }

    pub fn column(&self, j: usize) -> &[bool] {
        &self.bits[j * self.rows..(j + 1) * self.rows]
    }

    pub fn ones_fraction(&self) -> f64 {
        self.bits.iter().filter(|b| **b).count() as f64 / self.bits.len().max(1) as f64
    }
}

/// Label bits with `P(bit = 1) = P(|x| <= tau)`. Entry `(i, j)` uses the
/// stream `key.entry(i, j)`.
pub fn sample_label_matrix(law: &TailLaw, tau: f64, rows: usize, cols: usize, key: StreamKey) -> Result<LabelMatrix> {
    law.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("label matrix needs positive dimensions"));
    }
    if law.kind == TailKind::SymmetricPareto && !(tau >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must be at least 1 for the Pareto law, got {tau}"),
        });
    }
    let p = law.abs_cdf(tau);
    Ok(label_bits(p, rows, cols, key))
}

pub(crate) fn label_bits(p: f64, rows: usize, cols: usize, key: StreamKey) -> LabelMatrix {
    LabelMatrix::from_fn(rows, cols, |i, j| key.entry(i, j).rng().unit() < p)
}

/// Side of the cutoff a conditional draw lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// `|x| <= tau`.
    Small,
    /// `|x| >= tau`.
    Large,
}

// Use rejection from the unconditional law above this conditioning mass.
const REJECTION_MASS: f64 = 0.05;

/// The two conditional laws of `law` given `|x| <= tau` and `|x| >= tau`,
/// with the conditioning probabilities computed once.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalLaws {
    pub law: TailLaw,
    pub tau: f64,
    /// `P(|x| <= tau)`.
    pub p_small: f64,
    /// `P(|x| > tau)`.
    pub p_large: f64,
}

impl ConditionalLaws {
    pub fn new(law: TailLaw, tau: f64) -> Result<Self> {
        law.validate()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: format!("must be positive and finite, got {tau}"),
            });
        }
        Ok(ConditionalLaws {
            law,
            tau,
            p_small: law.abs_cdf(tau),
            p_large: law.abs_tail(tau),
        })
    }

    fn check(&self, side: Side) -> Result<()> {
        let (name, p) = match side {
            Side::Small => ("small", self.p_small),
            Side::Large => ("large", self.p_large),
        };
        if p > 0.0 && p < 1.0 {
            Ok(())
        } else {
            Err(Error::DegenerateConditioning { side: name, probability: p })
        }
    }

    pub fn sample(&self, side: Side, rng: &mut StreamRng) -> Result<f64> {
        self.check(side)?;
        let law = &self.law;
        let magnitude = match (law.kind, side) {
            (TailKind::AlphaStable, Side::Small) if self.p_small >= REJECTION_MASS => loop {
                let x = law.sample(rng);
                if x.abs() <= self.tau {
                    return Ok(x);
                }
            },
            (TailKind::AlphaStable, Side::Large) if self.p_large >= REJECTION_MASS => loop {
                let x = law.sample(rng);
                if x.abs() >= self.tau {
                    return Ok(x);
                }
            },
            (_, Side::Small) => {
                let u = rng.open01();
                let m = law.inverse_abs_tail(self.p_large + u * self.p_small);
                m.min(self.tau)
            }
            (_, Side::Large) => {
                let u = rng.open01();
                law.inverse_abs_tail(u * self.p_large).max(self.tau)
            }
        };
        Ok(if rng.coin() { magnitude } else { -magnitude })
    }

    /// `E[x^2 | |x| <= tau]`.
    pub fn small_second_moment(&self) -> Result<f64> {
        self.check(Side::Small)?;
        let law = &self.law;
        let tau = self.tau;
        let a = law.alpha;
        Ok(match law.kind {
            TailKind::SymmetricPareto => {
                a / (2.0 - a) * (tau.powf(2.0 - a) - 1.0) / (1.0 - tau.powf(-a))
            }
            TailKind::SlowVaryingPareto => {
                // E[x^2; |x| <= tau] = int_0^tau 2t (P(|x|>t) - P(|x|>tau)) dt,
                // with P(|x| > t) = 1 below the origin t0.
                let t0 = law.slow_varying_origin();
                let gt = self.p_large;
                let head = t0 * t0 * (1.0 - gt);
                let body = integrate(|t| 2.0 * t * (law.abs_tail(t) - gt), t0, tau, 1e-12, 1e-13, 2000).value;
                (head + body) / self.p_small
            }
            TailKind::AlphaStable => {
                let gt = self.p_large;
                let body = integrate(|t| 2.0 * t * (law.abs_tail(t) - gt), 0.0, tau, 1e-12, 1e-12, 400).value;
                body / self.p_small
            }
        })
    }
}

/// One conditional draw on the given side of `tau`.
pub fn sample_conditional(law: &TailLaw, tau: f64, side: Side, rng: &mut StreamRng) -> Result<f64> {
    ConditionalLaws::new(*law, tau)?.sample(side, rng)
}

/// `E[x^2 | |x| <= tau]`, exact for the Pareto law and by quadrature otherwise.
pub fn truncated_second_moment(law: &TailLaw, tau: f64) -> Result<f64> {
    ConditionalLaws::new(*law, tau)?.small_second_moment()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn draws(law: &TailLaw, seed: u64, count: usize) -> Vec<f64> {
        let mut rng = StreamKey::root(seed).rng();
        (0..count).map(|_| law.sample(&mut rng)).collect()
    }

    #[test]
    fn pareto_inverse_cdf_identities() {
        assert_eq!(pareto_magnitude(1.0, 0.25), 4.0);
        assert_eq!(pareto_magnitude(0.5, 0.25), 16.0);
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(TailLaw::symmetric_pareto(0.0).is_err());
        assert!(TailLaw::symmetric_pareto(2.0).is_err());
        assert!(TailLaw::alpha_stable(1.0, -1.0).is_err());
    }

    #[test]
    fn pareto_tail_matches_power_law() {
        let law = TailLaw::symmetric_pareto(1.0).unwrap();
        let n = 1_000_000;
        let xs = draws(&law, 1, n);
        for t in [2.0f64, 4.0, 8.0, 16.0] {
            let p = t.powf(-1.0);
            let hat = xs.iter().filter(|x| x.abs() >= t).count() as f64 / n as f64;
            assert!((hat - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "t={t}");
        }
        let signs = xs.iter().map(|x| x.signum()).sum::<f64>() / n as f64;
        assert!(signs.abs() <= 4e-3);
    }

    #[test]
    fn cauchy_tail_at_ten() {
        let law = TailLaw::alpha_stable(1.0, 1.0).unwrap();
        let n = 1_000_000;
        let xs = draws(&law, 2, n);
        let hat = xs.iter().filter(|x| x.abs() >= 10.0).count() as f64 / n as f64;
        // Exact Cauchy value (2/pi) atan(1/10); 2/(10 pi) is its leading term.
        let p = 2.0 / PI * (0.1f64).atan();
        assert!((p - 2.0 / (PI * 10.0)).abs() < 5e-4);
        assert!((hat - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn stable_cdf_near_one_agrees_with_cauchy() {
        // The integral representation is continuous in alpha at 1.
        for x in [0.3, 1.0, 5.0] {
            let a = stable_abs_probabilities(0.999, x).0;
            let b = stable_abs_probabilities(1.001, x).0;
            let c = 2.0 / PI * f64::atan(x);
            assert!((a - c).abs() < 2e-3 && (b - c).abs() < 2e-3, "x={x} {a} {b} {c}");
        }
    }

    #[test]
    fn stable_cdf_and_tail_are_complementary() {
        for alpha in [0.5, 1.3, 1.8] {
            for x in [0.01, 0.7, 3.0, 200.0] {
                let (c, t) = stable_abs_probabilities(alpha, x);
                assert!((c + t - 1.0).abs() < 1e-11, "alpha={alpha} x={x}");
            }
        }
    }

    /// Density of the standard symmetric stable law by Fourier inversion,
    /// `(1/pi) int_0^inf cos(x t) exp(-t^alpha) dt`.
    fn fourier_density(alpha: f64, x: f64) -> f64 {
        let upper = 40f64.powf(1.0 / alpha);
        integrate(|t| (x * t).cos() * (-t.powf(alpha)).exp(), 0.0, upper, 1e-13, 1e-13, 4000).value / PI
    }

    #[test]
    fn stable_cdf_derivative_matches_fourier_density() {
        for alpha in [0.7, 1.5] {
            for x in [0.5, 2.0] {
                let h = 1e-4;
                let d = (stable_abs_probabilities(alpha, x + h).0 - stable_abs_probabilities(alpha, x - h).0) / (2.0 * h);
                let f = 2.0 * fourier_density(alpha, x);
                assert!((d - f).abs() < 1e-6, "alpha={alpha} x={x}: {d} vs {f}");
            }
        }
    }

    #[test]
    fn stable_tail_constant_matches_cauchy() {
        assert!((stable_tail_constant(1.0, 1.0) - 2.0 / PI).abs() < 1e-15);
        let law = TailLaw::alpha_stable(1.5, 1.0).unwrap();
        let t = 1e6;
        let ratio = law.abs_tail(t) * t.powf(1.5) / stable_tail_constant(1.5, 1.0);
        assert!((ratio - 1.0).abs() < 1e-3, "{ratio}");
        let (lo, hi) = law.tail_constants().unwrap();
        assert!(lo <= hi && lo > 0.0);
    }

    #[test]
    fn stable_inverse_tail_round_trips() {
        let law = TailLaw::alpha_stable(0.8, 2.0).unwrap();
        for v in [0.9, 0.3, 1e-3, 1e-7] {
            let t = law.inverse_abs_tail(v);
            assert!((law.abs_tail(t) / v - 1.0).abs() < 1e-9, "v={v} {}", law.abs_tail(t) / v - 1.0);
        }
    }

    #[test]
    fn slow_varying_tail_and_inverse() {
        let law = TailLaw::slow_varying_pareto(1.2, 2.0).unwrap();
        let t0 = law.slow_varying_origin();
        assert!((t0 - (2.0f64 / 1.2 - 1.0).exp()).abs() < 1e-15);
        assert_eq!(law.abs_tail(t0), 1.0);
        for v in [0.99, 0.5, 1e-4, 1e-9] {
            let t = law.inverse_abs_tail(v);
            assert!((law.abs_tail(t) / v - 1.0).abs() < 1e-10, "v={v} {}", law.abs_tail(t) / v - 1.0);
        }
        // Non-positive beta starts at 1.
        let flat = TailLaw::slow_varying_pareto(1.0, -1.0).unwrap();
        assert_eq!(flat.slow_varying_origin(), 1.0);
        let xs = draws(&law, 3, 200_000);
        let t = 50.0;
        let p = law.abs_tail(t);
        let hat = xs.iter().filter(|x| x.abs() > t).count() as f64 / xs.len() as f64;
        assert!((hat - p).abs() <= 4.0 * (p * (1.0 - p) / xs.len() as f64).sqrt());
    }

    #[test]
    fn upper_threshold_example() {
        let law = TailLaw::symmetric_pareto(1.0).unwrap();
        let s = TruncationScheme::upper(0.5, 2.0, 1.0);
        let th = threshold(&s, &law, 1000, 2000).unwrap();
        let k = 0.5 * 1000f64.ln() / 2.0;
        assert!((th.power - k).abs() < 1e-12);
        assert!((th.power - 1.7269).abs() < 1e-4);
        assert!((th.tau - 1000.0 / k).abs() < 1e-9);
        // 1000 / 1.72694 = 579.06, quoted as roughly 579.07.
        assert!((th.tau - 579.07).abs() < 0.02);
        assert!((1000f64.powf(law.alpha * th.epsilon_tilde) - k).abs() < 1e-12);
    }

    #[test]
    fn lower_threshold_rejections_report_minimal_base() {
        let law = TailLaw::symmetric_pareto(1.0).unwrap();
        match threshold(&TruncationScheme::lower(1.0, 2.0), &law, 1000, 2000) {
            Err(Error::Sizing { base, epsilon_tilde, min_base }) => {
                assert_eq!(base, 1000);
                assert!(epsilon_tilde >= 1.0);
                // (ln B)^4 = B has its last crossing near 5503.7.
                assert_eq!(min_base, 5504);
            }
            other => panic!("expected sizing error, got {other:?}"),
        }
        match threshold(&TruncationScheme::lower(1e-4, 2.0), &law, 1000, 2000) {
            Err(Error::Sizing { epsilon_tilde, min_base, .. }) => {
                assert!(epsilon_tilde < 0.0);
                // 1e-4 (ln B)^4 > 1 needs ln B > 10.
                assert_eq!(min_base, 22027);
            }
            other => panic!("expected sizing error, got {other:?}"),
        }
        let ok = threshold(&TruncationScheme::lower(1.0, 2.0), &law, 5504, 11008).unwrap();
        assert!(ok.epsilon_tilde > 0.0 && ok.epsilon_tilde < 1.0);
        assert!(threshold(&TruncationScheme::lower(1.0, 2.0), &law, 5503, 11006).is_err());
    }

    #[test]
    fn row_based_thresholds() {
        let law = TailLaw::symmetric_pareto(1.5).unwrap();
        let s = TruncationScheme::upper(0.5, 2.0, 1.0).with_base(ThresholdBase::BigN);
        let th = threshold(&s, &law, 1000, 50_000).unwrap();
        assert!((th.power - 0.5 * 1000f64.ln()).abs() < 1e-12);
        assert!((th.tau - (50_000.0 / th.power).powf(1.0 / 1.5)).abs() < 1e-9);
        let low = TruncationScheme::lower(0.01, 2.0).with_base(ThresholdBase::BigN);
        let th = threshold(&low, &law, 100, 4000).unwrap();
        assert!((th.power - 0.01 * 4000f64.ln().powi(4)).abs() < 1e-9);
    }

    #[test]
    fn label_probabilities() {
        let p1 = TailLaw::symmetric_pareto(1.0).unwrap().abs_cdf(10.0);
        assert!((p1 - 0.9).abs() < 1e-15);
        let p2 = TailLaw::symmetric_pareto(0.5).unwrap().abs_cdf(100.0);
        assert!((p2 - 0.9).abs() < 1e-15);
        let law = TailLaw::symmetric_pareto(1.0).unwrap();
        let psi = sample_label_matrix(&law, 10.0, 200, 100, StreamKey::root(4)).unwrap();
        assert_eq!(psi.dims(), (200, 100));
        let f = psi.ones_fraction();
        assert!((f - 0.9).abs() <= 4.0 * (0.09f64 / 20000.0).sqrt());
        let again = sample_label_matrix(&law, 10.0, 200, 100, StreamKey::root(4)).unwrap();
        assert_eq!(psi, again);
        assert!(sample_label_matrix(&law, 0.5, 2, 2, StreamKey::root(4)).is_err());
    }

    #[test]
    fn conditional_pareto_closed_forms() {
        let law = TailLaw::symmetric_pareto(1.0).unwrap();
        let cond = ConditionalLaws::new(law, 10.0).unwrap();
        // Large side: |z| = tau / u.
        assert!((law.inverse_abs_tail(0.5 * cond.p_large) - 20.0).abs() < 1e-12);
        let mut rng = StreamKey::root(5).rng();
        let n = 100_000;
        let ys: Vec<f64> = (0..n).map(|_| cond.sample(Side::Small, &mut rng).unwrap()).collect();
        assert!(ys.iter().all(|y| y.abs() <= 10.0));
        let hat = ys.iter().filter(|y| y.abs() <= 2.0).count() as f64 / n as f64;
        let p = 5.0 / 9.0;
        assert!((hat - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt());
        let zs: Vec<f64> = (0..n).map(|_| cond.sample(Side::Large, &mut rng).unwrap()).collect();
        assert!(zs.iter().all(|z| z.abs() >= 10.0));
        let hat = zs.iter().filter(|z| z.abs() >= 20.0).count() as f64 / n as f64;
        assert!((hat - 0.5).abs() <= 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn conditional_support_for_every_law() {
        let laws = [
            TailLaw::symmetric_pareto(0.7).unwrap(),
            TailLaw::alpha_stable(1.4, 1.0).unwrap(),
            TailLaw::slow_varying_pareto(1.0, 1.5).unwrap(),
        ];
        for law in laws {
            let tau = 30.0;
            let cond = ConditionalLaws::new(law, tau).unwrap();
            let mut rng = StreamKey::root(6).rng();
            for _ in 0..2000 {
                assert!(cond.sample(Side::Small, &mut rng).unwrap().abs() <= tau);
                assert!(cond.sample(Side::Large, &mut rng).unwrap().abs() >= tau);
            }
        }
    }

    #[test]
    fn degenerate_conditioning_is_an_error() {
        let law = TailLaw::symmetric_pareto(1.0).unwrap();
        let mut rng = StreamKey::root(7).rng();
        assert!(matches!(
            sample_conditional(&law, 0.5, Side::Small, &mut rng),
            Err(Error::DegenerateConditioning { .. })
        ));
        assert!(sample_conditional(&law, 0.5, Side::Large, &mut rng).is_err());
    }

    #[test]
    fn truncated_second_moments() {
        // Pareto alpha = 1: int_1^tau t^2 t^-2 dt / (1 - 1/tau) = tau.
        let law = TailLaw::symmetric_pareto(1.0).unwrap();
        let m = truncated_second_moment(&law, 10.0).unwrap();
        assert!((m - 10.0).abs() < 1e-12);
        let cond = ConditionalLaws::new(law, 10.0).unwrap();
        let mut rng = StreamKey::root(8).rng();
        let n = 400_000;
        let mc = (0..n).map(|_| cond.sample(Side::Small, &mut rng).unwrap().powi(2)).sum::<f64>() / n as f64;
        assert!((mc / m - 1.0).abs() < 0.01);

        // Quadrature path against the Pareto closed form (slowly varying, beta = 0).
        let flat = TailLaw::slow_varying_pareto(0.8, 0.0).unwrap();
        let q = truncated_second_moment(&flat, 25.0).unwrap();
        let exact = truncated_second_moment(&TailLaw::symmetric_pareto(0.8).unwrap(), 25.0).unwrap();
        assert!((q / exact - 1.0).abs() < 1e-9);

        // Cauchy: E[x^2; |x| <= tau] = (2/pi)(tau - atan tau).
        let cauchy = TailLaw::alpha_stable(1.0, 1.0).unwrap();
        let tau = 7.0f64;
        let s = truncated_second_moment(&cauchy, tau).unwrap();
        let exact = 2.0 / PI * (tau - tau.atan()) / (2.0 / PI * tau.atan());
        assert!((s / exact - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixture_reproduces_the_law() {
        let law = TailLaw::symmetric_pareto(1.0).unwrap();
        let tau = 5.0;
        let cond = ConditionalLaws::new(law, tau).unwrap();
        let n = 100_000;
        let root = StreamKey::root(9);
        let mixed: Vec<f64> = (0..n)
            .map(|k| {
                let mut r = root.child(k as u64).rng();
                let small = r.unit() < cond.p_small;
                let y = cond.sample(Side::Small, &mut r).unwrap();
                let z = cond.sample(Side::Large, &mut r).unwrap();
                if small {
                    y
                } else {
                    z
                }
            })
            .collect();
        let direct = draws(&law, 10, n);
        let d = stats::ks_statistic(&mixed, &direct).unwrap();
        assert!(d < stats::ks_critical(1e-3, n, n));
    }

    #[test]
    fn identical_state_identical_output() {
        let law = TailLaw::alpha_stable(1.3, 1.0).unwrap();
        assert_eq!(draws(&law, 11, 100), draws(&law, 11, 100));
    }
}
