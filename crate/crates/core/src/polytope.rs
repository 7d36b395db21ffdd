//! Inradius of the symmetric polytope `conv(±rows of X)`.
//!
//! The inradius equals `min_{|z| = 1} ||Xz||_inf`. Since
//! `||Xz||_inf >= ||Xz||_2 / sqrt(N) >= sigma_min(X) / sqrt(N)`, the
//! smallest singular value certifies a ball of that radius. Two oracles
//! bracket the truth in low dimension: an exact angular solve for `n = 2`
//! and a refining sphere mesh for `n <= 6`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra;
use crate::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InradiusMethod {
    SigmaMinCertificate,
    ExactSweep2D,
    GridRefine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InradiusCertificate {
    pub radius: f64,
    pub method: InradiusMethod,
    pub sigma_min_used: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub n: usize,
}

/// Certified inradius `sigma_min(X) / sqrt(N)` of `conv(±rows of x)`.
pub fn certificate(x: &Mat) -> Result<InradiusCertificate> {
    let (big_n, n) = x.shape();
    if big_n < n || n == 0 {
        return Err(Error::ShapeMismatch {
            expected: (n.max(1), n),
            actual: (big_n, n),
        });
    }
    let s = spectra::singular_extremes(x, spectra::DEFAULT_TOL)?.sigma_min;
    Ok(InradiusCertificate {
        radius: certificate_from_sigma_min(s, big_n),
        method: InradiusMethod::SigmaMinCertificate,
        sigma_min_used: s,
        big_n,
        n,
    })
}

/// Certified radius for an `N`-row matrix with smallest singular value `s`.
pub fn certificate_from_sigma_min(s: f64, big_n: usize) -> f64 {
    s / (big_n as f64).sqrt()
}

/// Support function `max_j |<z, row_j>|` of the polytope in direction `z`.
pub fn support_value(x: &Mat, z: &[f64]) -> f64 {
    x.row_iter()
        .map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// Exact `min_{|z| = 1} max_j |<z, r_j>|` for planar rows.
///
/// Each `|<z, r_j>|` is concave in the angle of `z` between its zeros, so
/// the upper envelope attains its minimum where two branches cross or a
/// branch vanishes. Those are the directions orthogonal to `r_j` and to
/// `r_i ± r_j`; all of them are evaluated.
pub fn exact_inradius_2d(rows: &[[f64; 2]]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Empty("exact_inradius_2d needs at least one row"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let support = |z: [f64; 2]| {
        rows.iter()
            .map(|r| (r[0] * z[0] + r[1] * z[1]).abs())
            .fold(0.0, f64::max)
    };
    let mut best = f64::INFINITY;
    let mut try_normal = |v: [f64; 2]| {
        let len = v[0].hypot(v[1]);
        if len > 0.0 {
            best = best.min(support([-v[1] / len, v[0] / len]));
        }
    };
    for (i, a) in rows.iter().enumerate() {
        try_normal(*a);
        for b in &rows[..i] {
            try_normal([a[0] - b[0], a[1] - b[1]]);
            try_normal([a[0] + b[0], a[1] + b[1]]);
        }
    }
    // All rows zero: every direction gives zero.
    Ok(if best.is_finite() { best } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInradius {
    /// Smallest support value found; an upper bound on the inradius.
    pub upper: f64,
    /// `upper - mesh_error`-style lower bound: mesh minimum minus the
    /// Lipschitz slack of the finest mesh.
    pub lower: f64,
    pub mesh_error: f64,
    /// Finest mesh resolution per face.
    pub resolution: usize,
    pub evaluations: usize,
}

const MAX_GRID_DIM: usize = 6;

/// Points of the faces `z_k = 1` of the cube, with `resolution` steps per
/// edge, projected to the sphere. By symmetry `z ~ -z` these cover the
/// sphere.
fn face_mesh(n: usize, resolution: usize, mut visit: impl FnMut(&[f64])) {
    let per_face = (resolution + 1).pow(n as u32 - 1);
    let step = 2.0 / resolution as f64;
    let mut z = vec![0.0; n];
    for face in 0..n {
        for idx in 0..per_face {
            let mut rest = idx;
            for (k, zk) in z.iter_mut().enumerate() {
                if k == face {
                    *zk = 1.0;
                } else {
                    *zk = -1.0 + step * (rest % (resolution + 1)) as f64;
                    rest /= resolution + 1;
                }
            }
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let unit: Vec<f64> = z.iter().map(|v| v / norm).collect();
            visit(&unit);
        }
    }
}

/// Brackets the inradius of `conv(±rows of x)` for `n <= 6` columns.
///
/// Meshes of the sphere are refined by doubling until the Lipschitz slack
/// drops below `tol` or the next mesh would exceed `budget` evaluations,
/// then the best mesh point is polished by a shrinking pattern search.
/// The slack uses the covering radius `sqrt(n - 1) / resolution` of the
/// projected face grid and the Lipschitz constant `max_j |r_j|`.
pub fn grid_refine_inradius(x: &Mat, budget: usize, tol: f64) -> Result<GridInradius> {
    let n = x.ncols();
    if n == 0 || x.nrows() == 0 {
        return Err(Error::Empty("grid_refine_inradius needs a non-empty matrix"));
    }
    if n > MAX_GRID_DIM {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("mesh refinement supports at most {MAX_GRID_DIM} columns, got {n}"),
        });
    }
    let lipschitz = x.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let cost = |r: usize| n * (r + 1).pow(n as u32 - 1);
    let mut resolution = 2;
    if cost(resolution) > budget {
        return Err(Error::Budget {
            required: cost(resolution) as f64,
            budget: budget as f64,
        });
    }
    let mut evaluations = 0;
    let mut best = (f64::INFINITY, vec![0.0; n]);
    loop {
        face_mesh(n, resolution, |z| {
            let v = support_value(x, z);
            if v < best.0 {
                best = (v, z.to_vec());
            }
        });
        evaluations += cost(resolution);
        let slack = lipschitz * ((n - 1) as f64).sqrt() / resolution as f64;
        if slack <= tol || evaluations + cost(2 * resolution) > budget {
            break;
        }
        resolution *= 2;
    }
    let mesh_min = best.0;
    let mesh_error = lipschitz * ((n - 1) as f64).sqrt() / resolution as f64;

    // Pattern search on the sphere around the best mesh point.
    let (mut value, mut z) = best;
    let mut step = 2.0 / resolution as f64;
    while step > 1e-12 {
        let mut improved = false;
        for k in 0..n {
            for sign in [-1.0, 1.0] {
                let mut c = z.clone();
                c[k] += sign * step;
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                c.iter_mut().for_each(|v| *v /= norm);
                let v = support_value(x, &c);
                evaluations += 1;
                if v < value {
                    value = v;
                    z = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    Ok(GridInradius {
        upper: value,
        lower: (mesh_min - mesh_error).max(0.0),
        mesh_error,
        resolution,
        evaluations,
    })
}
