//! The resampled matrix `X = Psi o Y + (1 - Psi) o Z`, its normalized split
//! `T = T0 + T1`, and the Gaussian surrogate with the same variance profile.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tail_sampler::{
    label_bits, threshold, ConditionalLaws, LabelMatrix, Regime, Side, TailLaw, Threshold,
    TruncationScheme,
};
use crate::Mat;

/// Labels plus the conditional small and large matrices.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub law: TailLaw,
    pub psi: LabelMatrix,
    /// `Y`, every entry has `|y| <= tau`.
    pub small: Mat,
    /// `Z`, every entry has `|z| >= tau`.
    pub large: Mat,
    pub scheme: TruncationScheme,
    pub threshold: Threshold,
}

impl Decomposition {
    pub fn tau(&self) -> f64 {
        self.threshold.tau
    }

    pub fn dims(&self) -> (usize, usize) {
        self.psi.dims()
    }
}

/// Samples labels, `Y` and `Z` for an `rows x cols` matrix.
///
/// Entry `(i, j)` of the labels, of `Y` and of `Z` use the streams
/// `key.child(0).entry(i, j)`, `key.child(1).entry(i, j)` and
/// `key.child(2).entry(i, j)`.
pub fn decompose(
    law: &TailLaw,
    scheme: &TruncationScheme,
    rows: usize,
    cols: usize,
    key: StreamKey,
) -> Result<Decomposition> {
    let th = threshold(scheme, law, cols, rows)?;
    let cond = ConditionalLaws::new(*law, th.tau)?;
    let psi = label_bits(cond.p_small, rows, cols, key.child(0));
    let draw = |side: Side, k: StreamKey| -> Result<Mat> {
        let mut out = Mat::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                out[(i, j)] = cond.sample(side, &mut k.entry(i, j).rng())?;
            }
        }
        Ok(out)
    };
    let small = draw(Side::Small, key.child(1))?;
    let large = draw(Side::Large, key.child(2))?;
    Ok(Decomposition {
        law: *law,
        psi,
        small,
        large,
        scheme: *scheme,
        threshold: th,
    })
}

fn check_shape(expected: (usize, usize), m: &Mat) -> Result<()> {
    if m.shape() == expected {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected,
            actual: m.shape(),
        })
    }
}

/// Entrywise `psi * y + (1 - psi) * z`.
pub fn mix(psi: &LabelMatrix, y: &Mat, z: &Mat) -> Result<Mat> {
    let dims = psi.dims();
    check_shape(dims, y)?;
    check_shape(dims, z)?;
    Ok(Mat::from_fn(dims.0, dims.1, |i, j| {
        if psi.get(i, j) {
            y[(i, j)]
        } else {
            z[(i, j)]
        }
    }))
}

/// Reconstructs `X` from a decomposition.
pub fn assemble(dec: &Decomposition) -> Result<Mat> {
    mix(&dec.psi, &dec.small, &dec.large)
}

/// `T = T0 + T1` with `T1 = s Psi o Y`, `T0 = s (1 - Psi) o Z (+ s B)` and
/// `s = base^(-1/alpha + (1 - alpha/2) e)`.
#[derive(Debug, Clone)]
pub struct NormalizedPair {
    pub t0: Mat,
    /// Realized `T1`.
    pub t1: Mat,
    /// `E[t1_ij^2] = psi_ij s^2 E[y^2]`, exact.
    pub variance: Mat,
    /// Realized `max |T1_ij|`.
    pub q: f64,
    /// `c^(-1/2) (ln base)^(-2)`, equal to `s tau`.
    pub q_theory: f64,
    /// `sqrt(n max_ij variance_ij)`, so `variance <= M^2 / n`.
    pub m: f64,
    /// `base s^2 E[y^2]`, the variance of a scaled small entry times the base.
    pub c_n: f64,
    pub scale: f64,
    /// `E[y^2]` of the truncated law.
    pub second_moment: f64,
}

impl NormalizedPair {
    pub fn t(&self) -> Mat {
        &self.t0 + &self.t1
    }

    pub fn dims(&self) -> (usize, usize) {
        self.t0.shape()
    }

    /// Adds the scaled deterministic shift `scale * b` to `T0`.
    pub fn with_shift(mut self, b: &Mat) -> Result<Self> {
        check_shape(self.dims(), b)?;
        self.t0 += b * self.scale;
        Ok(self)
    }
}

/// Normalizes a decomposition built under the lower-bound regime.
pub fn normalize(dec: &Decomposition) -> Result<NormalizedPair> {
    if dec.scheme.regime != Regime::Lower {
        return Err(Error::WrongRegime(
            "normalization is only defined for the lower-bound threshold",
        ));
    }
    let (rows, cols) = dec.dims();
    let alpha = dec.law.alpha;
    let th = &dec.threshold;
    let base = th.base_size as f64;
    let scale = base.powf(-1.0 / alpha + (1.0 - alpha / 2.0) * th.epsilon_tilde);
    let second_moment = ConditionalLaws::new(dec.law, th.tau)?.small_second_moment()?;
    let v = scale * scale * second_moment;
    let mut t0 = Mat::zeros(rows, cols);
    let mut t1 = Mat::zeros(rows, cols);
    let mut variance = Mat::zeros(rows, cols);
    let mut q = 0.0f64;
    let mut any_small = false;
    for j in 0..cols {
        for i in 0..rows {
            if dec.psi.get(i, j) {
                let t = scale * dec.small[(i, j)];
                t1[(i, j)] = t;
                q = q.max(t.abs());
                variance[(i, j)] = v;
                any_small = true;
            } else {
                t0[(i, j)] = scale * dec.large[(i, j)];
            }
        }
    }
    let q_theory = dec.scheme.c.powf(-0.5) * base.ln().powi(-2);
    Ok(NormalizedPair {
        t0,
        t1,
        variance,
        q,
        q_theory,
        m: if any_small { (cols as f64 * v).sqrt() } else { 0.0 },
        c_n: base * v,
        scale,
        second_moment,
    })
}

/// `G = T0 + sqrt(variance) o g` with i.i.d. standard normal `g`; entry
/// `(i, j)` draws from `key.entry(i, j)`.
pub fn gaussian_surrogate(pair: &NormalizedPair, key: StreamKey) -> Mat {
    let (rows, cols) = pair.dims();
    &pair.t0 + gaussian_part(&pair.variance, rows, cols, key)
}

fn gaussian_part(variance: &Mat, rows: usize, cols: usize, key: StreamKey) -> Mat {
    Mat::from_fn(rows, cols, |i, j| {
        let v = variance[(i, j)];
        if v == 0.0 {
            0.0
        } else {
            let g: f64 = StandardNormal.sample(&mut key.entry(i, j).rng());
            v.sqrt() * g
        }
    })
}

/// The pair whose random part is the Gaussian surrogate; its variance
/// profile is the same matrix.
pub fn surrogate_pair(pair: &NormalizedPair, key: StreamKey) -> NormalizedPair {
    let (rows, cols) = pair.dims();
    let t1 = gaussian_part(&pair.variance, rows, cols, key);
    let q = t1.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    NormalizedPair {
        t1,
        q,
        ..pair.clone()
    }
}

/// Entrywise weights `a_ij` in `[a1, a2]` with `a1 > 0`.
#[derive(Debug, Clone)]
pub struct WeightProfile {
    a: Mat,
    bounds: (f64, f64),
}

impl WeightProfile {
    pub fn new(a: Mat, a1: f64, a2: f64) -> Result<Self> {
        if !(a1 > 0.0 && a1 <= a2) {
            return Err(Error::InvalidParameter {
                name: "bounds",
                reason: format!("need 0 < A1 <= A2, got ({a1}, {a2})"),
            });
        }
        if let Some(bad) = a.iter().find(|x| !(**x >= a1 && **x <= a2)) {
            return Err(Error::InvalidParameter {
                name: "a",
                reason: format!("weight {bad} outside [{a1}, {a2}]"),
            });
        }
        Ok(WeightProfile { a, bounds: (a1, a2) })
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(Mat::from_element(rows, cols, value), value, value)
    }

    pub fn weights(&self) -> &Mat {
        &self.a
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

/// Entrywise `a_ij x_ij + b_ij`.
pub fn apply_weights_and_shift(x: &Mat, w: &WeightProfile, b: &Mat) -> Result<Mat> {
    check_shape(x.shape(), &w.a)?;
    check_shape(x.shape(), b)?;
    Ok(x.component_mul(&w.a) + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra;

    fn pareto(alpha: f64) -> TailLaw {
        TailLaw::symmetric_pareto(alpha).unwrap()
    }

    fn lower_dec(n: usize, c: f64, seed: u64) -> Decomposition {
        let scheme = TruncationScheme::lower(c, 2.0);
        decompose(&pareto(1.0), &scheme, 2 * n, n, StreamKey::root(seed)).unwrap()
    }

    #[test]
    fn mix_identity_cases() {
        let y = Mat::from_element(2, 2, 1.0);
        let z = Mat::from_element(2, 2, 5.0);
        assert_eq!(mix(&LabelMatrix::filled(2, 2, true), &y, &z).unwrap(), y);
        assert_eq!(mix(&LabelMatrix::filled(2, 2, false), &y, &z).unwrap(), z);
        let psi = LabelMatrix::from_fn(2, 2, |i, j| i == j);
        let x = mix(&psi, &y, &z).unwrap();
        assert_eq!(x, Mat::from_row_slice(2, 2, &[1.0, 5.0, 5.0, 1.0]));
        assert!(matches!(
            mix(&psi, &Mat::zeros(3, 2), &z),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn support_separation_and_reconstruction() {
        let dec = lower_dec(200, 0.002, 1);
        let tau = dec.tau();
        assert!(dec.small.iter().all(|y| y.abs() <= tau));
        assert!(dec.large.iter().all(|z| z.abs() >= tau));
        let x = assemble(&dec).unwrap();
        let (rows, cols) = dec.dims();
        for j in 0..cols {
            for i in 0..rows {
                let want = if dec.psi.get(i, j) {
                    dec.small[(i, j)]
                } else {
                    dec.large[(i, j)]
                };
                assert_eq!(x[(i, j)], want);
            }
        }
        // Scaling equivariance.
        let c = -3.5;
        let scaled = mix(&dec.psi, &(&dec.small * c), &(&dec.large * c)).unwrap();
        assert_eq!(scaled, x * c);
    }

    #[test]
    fn realized_bound_respects_theory() {
        for seed in 0..5 {
            let dec = lower_dec(200, 0.002, seed);
            let pair = normalize(&dec).unwrap();
            assert!(pair.q <= pair.q_theory * (1.0 + 1e-12));
            assert!((pair.scale * dec.tau() - pair.q_theory).abs() < 1e-12 * pair.q_theory);
            let bound = pair.m * pair.m / 200.0;
            assert!(pair.variance.iter().all(|v| *v <= bound * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn upper_regime_has_no_normalization() {
        let scheme = TruncationScheme::upper(0.5, 2.0, 1.0);
        let dec = decompose(&pareto(1.0), &scheme, 100, 50, StreamKey::root(2));
        // n = 50 is below exp(delta C_u / b) = e^4, so use a larger size.
        assert!(dec.is_err());
        let dec = decompose(&pareto(1.0), &scheme, 200, 100, StreamKey::root(2)).unwrap();
        assert!(matches!(normalize(&dec), Err(Error::WrongRegime(_))));
    }

    #[test]
    fn t1_entries_are_centered() {
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0.0;
        for seed in 0..13 {
            let dec = lower_dec(200, 0.002, 100 + seed);
            let pair = normalize(&dec).unwrap();
            for (t, (i, j)) in pair.t1.iter().zip((0..200).flat_map(|j| (0..400).map(move |i| (i, j)))) {
                if dec.psi.get(i, j) {
                    sum += t;
                    sq += t * t;
                    count += 1.0;
                }
            }
        }
        assert!(count >= 1e6);
        let mean = sum / count;
        let sd = (sq / count - mean * mean).sqrt();
        assert!(mean.abs() <= 4.0 * sd / count.sqrt());
    }

    #[test]
    fn pareto_second_moment_against_monte_carlo() {
        let dec = lower_dec(200, 0.002, 7);
        let pair = normalize(&dec).unwrap();
        // Exact: alpha = 1 gives E[y^2] = tau.
        assert!((pair.second_moment - dec.tau()).abs() < 1e-9 * dec.tau());
        let mc = dec.small.iter().map(|y| y * y).sum::<f64>() / dec.small.len() as f64;
        // Heavy right skew of y^2: compare over a larger pool of draws.
        let mut pool = vec![mc];
        for seed in 8..40 {
            let d = lower_dec(200, 0.002, seed);
            pool.push(d.small.iter().map(|y| y * y).sum::<f64>() / d.small.len() as f64);
        }
        let est = pool.iter().sum::<f64>() / pool.len() as f64;
        assert!((est / pair.second_moment - 1.0).abs() < 0.01);
    }

    #[test]
    fn surrogate_matches_profile() {
        let pair = normalize(&lower_dec(100, 0.005, 3)).unwrap();
        let g = gaussian_surrogate(&pair, StreamKey::root(4));
        let (rows, cols) = pair.dims();
        for j in 0..cols {
            for i in 0..rows {
                if pair.variance[(i, j)] == 0.0 {
                    assert_eq!(g[(i, j)], pair.t0[(i, j)]);
                }
            }
        }
        let again = surrogate_pair(&surrogate_pair(&pair, StreamKey::root(5)), StreamKey::root(6));
        assert_eq!(again.variance, pair.variance);
        assert_eq!(again.t0, pair.t0);
    }

    #[test]
    fn surrogate_sample_variance() {
        let v = 0.37;
        let variance = Mat::from_element(1, 1, v);
        let n = 1_000_000;
        let root = StreamKey::root(9);
        let mut s = 0.0;
        let mut s2 = 0.0;
        for k in 0..n {
            let g = gaussian_part(&variance, 1, 1, root.child(k))[(0, 0)];
            s += g;
            s2 += g * g;
        }
        let var = s2 / n as f64 - (s / n as f64).powi(2);
        assert!((var / v - 1.0).abs() < 0.01);
    }

    #[test]
    fn weights_and_shift() {
        let mut rng = StreamKey::root(10).rng();
        let x = Mat::from_fn(30, 10, |_, _| pareto(1.0).sample(&mut rng));
        let zero = Mat::zeros(30, 10);
        let one = WeightProfile::constant(30, 10, 1.0).unwrap();
        assert_eq!(apply_weights_and_shift(&x, &one, &zero).unwrap(), x);
        let two = WeightProfile::constant(30, 10, 2.0).unwrap();
        let y = apply_weights_and_shift(&x, &two, &zero).unwrap();
        let sx = spectra::singular_extremes(&x, 1e-10).unwrap().sigma_min;
        let sy = spectra::singular_extremes(&y, 1e-10).unwrap().sigma_min;
        assert!((sy - 2.0 * sx).abs() <= 1e-9 * sy);
        assert!(WeightProfile::new(Mat::from_element(2, 2, 3.0), 1.0, 2.0).is_err());
        assert!(WeightProfile::new(Mat::from_element(2, 2, 1.0), 0.0, 2.0).is_err());
        assert!(apply_weights_and_shift(&x, &one, &Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn shift_enters_t0_scaled() {
        let pair = normalize(&lower_dec(50, 0.01, 11)).unwrap();
        let b = Mat::from_element(100, 50, 1e6);
        let shifted = pair.clone().with_shift(&b).unwrap();
        let diff = &shifted.t0 - &pair.t0;
        assert!(diff.iter().all(|d| (d - 1e6 * pair.scale).abs() < 1e-9 * 1e6 * pair.scale));
    }
}
