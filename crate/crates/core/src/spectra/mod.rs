//! Dense spectral kernels: extremal singular values, operator norms,
//! subspace distances, dilation spectra and Hausdorff distance of spectra.

mod svd;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Mat;

pub use svd::two_by_two as two_by_two_singular_values;

/// Default relative tolerance of the spectral kernels.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Extremal singular values of a matrix, with optional full spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Descending, length `min(N, n)`; present when requested.
    pub all_singular_values: Option<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

fn check_finite(x: &Mat) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// All singular values of `x`, descending.
pub fn singular_values(x: &Mat) -> Result<Vec<f64>> {
    Ok(svd_summary(x, DEFAULT_TOL, true)?
        .all_singular_values
        .unwrap_or_default())
}

/// Smallest and largest singular values via bidiagonalization and
/// implicit-shift QR. Wide inputs are transposed first.
pub fn singular_extremes(x: &Mat, tol: f64) -> Result<SpectralSummary> {
    svd_summary(x, tol, false)
}

/// Same as [`singular_extremes`] but keeps the full spectrum.
pub fn singular_spectrum(x: &Mat, tol: f64) -> Result<SpectralSummary> {
    svd_summary(x, tol, true)
}

fn svd_summary(x: &Mat, tol: f64, keep_all: bool) -> Result<SpectralSummary> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("relative tolerance must lie in (0, 1), got {tol}"),
        });
    }
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("matrix has a zero dimension"));
    }
    check_finite(x)?;
    let (mut data, m, n) = if rows >= cols {
        (x.as_slice().to_vec(), rows, cols)
    } else {
        (x.transpose().as_slice().to_vec(), cols, rows)
    };
    let (d, e) = svd::bidiagonalize(&mut data, m, n);
    let out = svd::bidiagonal_qr(d, e)?;
    if out.residual > tol {
        return Err(Error::NoConvergence(out.iterations));
    }
    Ok(SpectralSummary {
        sigma_min: *out.values.last().expect("non-empty spectrum"),
        sigma_max: out.values[0],
        iterations: out.iterations,
        residual: out.residual,
        all_singular_values: keep_all.then_some(out.values),
    })
}

/// Largest singular value by power iteration on the Gram operator `x^T x`.
///
/// The start vector is the normalized all-ones vector. Iteration stops when
/// the change in the Rayleigh quotient, extrapolated by the observed
/// contraction rate, falls below `tol` relative.
pub fn operator_norm(x: &Mat, tol: f64) -> Result<f64> {
    check_finite(x)?;
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Ok(0.0);
    }
    if x.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let ones = nalgebra::DVector::from_element(cols, 1.0 / (cols as f64).sqrt());
    let mut v = ones;
    if (x * &v).norm() == 0.0 {
        // Start vector annihilated; fall back to a fixed irregular start.
        v = nalgebra::DVector::from_fn(cols, |j, _| ((j as f64 + 1.0) * 0.754_877_666).fract() + 0.1);
        v /= v.norm();
    }

    let max_iter = 200_000usize;
    let mut prev = 0.0f64;
    let mut prev_delta = f64::INFINITY;
    for _ in 0..max_iter {
        let xv = x * &v;
        let rq = xv.norm_squared();
        let mut g = x.tr_mul(&xv);
        let gn = g.norm();
        if gn == 0.0 {
            return Ok(rq.sqrt());
        }
        g /= gn;
        v = g;
        let delta = (rq - prev).abs();
        let rate = if prev_delta.is_finite() && prev_delta > 0.0 {
            (delta / prev_delta).min(0.999_999)
        } else {
            0.0
        };
        let bound = if rate > 0.0 { delta * rate / (1.0 - rate) } else { delta };
        if prev > 0.0 && delta <= tol * rq && bound <= tol * rq {
            let xv = x * &v;
            return Ok(xv.norm_squared().max(rq).sqrt());
        }
        prev = rq;
        prev_delta = delta;
    }
    Err(Error::NoConvergence(max_iter))
}

/// Euclidean distance from `v` to the span of `basis`.
///
/// The basis is orthogonalized by modified Gram–Schmidt with one
/// reorthogonalization pass; numerically dependent vectors are dropped.
pub fn distance_to_subspace(v: &[f64], basis: &[Vec<f64>]) -> Result<f64> {
    let dim = v.len();
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        if b.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: (dim, 1),
                actual: (b.len(), 1),
            });
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let original = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if original == 0.0 {
            continue;
        }
        let mut w = b.clone();
        for _ in 0..2 {
            for q in &ortho {
                let c: f64 = q.iter().zip(&w).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 * original {
            w.iter_mut().for_each(|x| *x /= norm);
            ortho.push(w);
        }
    }
    let mut r = v.to_vec();
    for _ in 0..2 {
        for q in &ortho {
            let c: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
        }
    }
    Ok(r.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Spectrum of the self-adjoint dilation
///
/// ```text
/// [ 0    0  H   2e*I ]
/// [ 0    0  0   0    ]
/// [ H^T  0  0   0    ]
/// [ 2e*I 0  0   0    ]
/// ```
///
/// with block sizes `(N, n, n, N)`, so the dimension is `2(N + n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationSpectrum {
    /// All eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// `sqrt(sigma_max(H)^2 + 4 e^2)`.
    pub lambda_plus: f64,
    /// `sqrt(sigma_min(H)^2 + 4 e^2)`, taken over the `n` column directions.
    pub lambda_minus: f64,
    pub epsilon: f64,
}

/// Assembles the dilation matrix described on [`DilationSpectrum`].
pub fn dilation_matrix(h: &Mat, epsilon: f64) -> Mat {
    let (big, small) = h.shape();
    let dim = 2 * (big + small);
    let mut g = DMatrix::zeros(dim, dim);
    let off3 = big + small;
    let off4 = big + 2 * small;
    let shift = 2.0 * epsilon;
    for i in 0..big {
        for j in 0..small {
            g[(i, off3 + j)] = h[(i, j)];
            g[(off3 + j, i)] = h[(i, j)];
        }
        g[(i, off4 + i)] = shift;
        g[(off4 + i, i)] = shift;
    }
    g
}

/// Eigenvalues of the dilation of `h` (symmetric eigensolver) together with
/// the regularized extremal values derived from the singular values of `h`.
pub fn dilation_spectrum(h: &Mat, epsilon: f64) -> Result<DilationSpectrum> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("must be positive, got {epsilon}"),
        });
    }
    check_finite(h)?;
    let g = dilation_matrix(h, epsilon);
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(g).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let s = singular_extremes(h, DEFAULT_TOL)?;
    let four_eps2 = 4.0 * epsilon * epsilon;
    Ok(DilationSpectrum {
        eigenvalues,
        lambda_plus: (s.sigma_max * s.sigma_max + four_eps2).sqrt(),
        lambda_minus: (s.sigma_min * s.sigma_min + four_eps2).sqrt(),
        epsilon,
    })
}

/// Hausdorff distance between two finite sets of reals given as sorted
/// slices. Multiplicities are irrelevant.
pub fn hausdorff_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("hausdorff_distance needs two non-empty sets"));
    }
    Ok(directed(a, b).max(directed(b, a)))
}

/// `sup_{x in a} dist(x, b)` by a two-pointer sweep over sorted inputs.
fn directed(a: &[f64], b: &[f64]) -> f64 {
    let mut k = 0usize;
    let mut worst = 0.0f64;
    for &x in a {
        while k + 1 < b.len() && b[k + 1] <= x {
            k += 1;
        }
        let mut d = (x - b[k]).abs();
        if k + 1 < b.len() {
            d = d.min((b[k + 1] - x).abs());
        }
        worst = worst.max(d);
    }
    worst
}
