//! Singular values of dense real matrices by Householder bidiagonalization
//! followed by implicit-shift QR on the bidiagonal (Demmel–Kahan, with the
//! zero-shift sweep when relative accuracy demands it).

use crate::error::{Error, Result};

/// Outcome of the bidiagonal QR iteration.
#[derive(Debug, Clone)]
pub(crate) struct BidiagonalSvd {
    /// Singular values, sorted descending.
    pub values: Vec<f64>,
    /// Number of inner rotation steps taken.
    pub iterations: usize,
    /// Largest neglected off-diagonal entry relative to the largest
    /// singular value.
    pub residual: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let ia = &a[c * 8..c * 8 + 8];
        let ib = &b[c * 8..c * 8 + 8];
        for k in 0..8 {
            acc[k] += ia[k] * ib[k];
        }
    }
    let mut tail = 0.0;
    for k in chunks * 8..n {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Scaled Euclidean norm, safe against overflow for huge heavy-tailed entries.
fn norm2(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let inv = 1.0 / scale;
    let ss: f64 = x.iter().map(|v| (v * inv) * (v * inv)).sum();
    scale * ss.sqrt()
}

/// Builds an elementary reflector `H = I - tau v v^T` with `v[0] = 1` such
/// that `H x = beta e_1`. On return `x[1..]` holds `v[1..]`; `x[0]` is
/// overwritten with `beta`. Returns `(tau, beta)`.
fn householder(x: &mut [f64]) -> (f64, f64) {
    let alpha = x[0];
    let xnorm = norm2(&x[1..]);
    if xnorm == 0.0 {
        return (0.0, alpha);
    }
    let beta = -alpha.signum() * alpha.hypot(xnorm);
    let beta = if alpha == 0.0 { -alpha.hypot(xnorm) } else { beta };
    let tau = (beta - alpha) / beta;
    let inv = 1.0 / (alpha - beta);
    for v in &mut x[1..] {
        *v *= inv;
    }
    x[0] = beta;
    (tau, beta)
}

/// Reduces the column-major `rows x cols` matrix in `a` (with `rows >= cols`)
/// to upper bidiagonal form. Returns the diagonal and superdiagonal. The
/// contents of `a` are destroyed.
///
/// Each step makes one read-write pass over the trailing columns (pending
/// right update, left reflector) and one read pass (product with the next
/// right reflector).
pub(crate) fn bidiagonalize(a: &mut [f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(rows >= cols, "bidiagonalize expects a tall matrix");
    assert_eq!(a.len(), rows * cols);
    let m = rows;
    let n = cols;
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n.saturating_sub(1)];
    let mut v = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mut u = vec![0.0; n];
    let mut pending = 0.0f64;

    for k in 0..n {
        let (head, tail) = a.split_at_mut((k + 1) * m);
        let col_k = &mut head[k * m..];
        if pending != 0.0 {
            axpy(-pending * u[k], &w[k..], &mut col_k[k..]);
        }
        let (tau, beta) = householder(&mut col_k[k..]);
        diag[k] = beta;
        v[k] = 1.0;
        v[k + 1..].copy_from_slice(&col_k[k + 1..]);

        for (jj, col_j) in tail.chunks_exact_mut(m).enumerate() {
            let j = k + 1 + jj;
            let seg = &mut col_j[k..];
            if pending != 0.0 {
                axpy(-pending * u[j], &w[k..], seg);
            }
            if tau != 0.0 {
                let s = dot(&v[k..], seg);
                axpy(-tau * s, &v[k..], seg);
            }
        }

        if k + 1 < n {
            for (jj, col_j) in tail.chunks_exact(m).enumerate() {
                u[k + 1 + jj] = col_j[k];
            }
            let (tau_r, beta_r) = householder(&mut u[k + 1..]);
            sup[k] = beta_r;
            u[k + 1] = 1.0;
            pending = tau_r;
            if tau_r != 0.0 {
                let wk = &mut w[k + 1..];
                wk.iter_mut().for_each(|x| *x = 0.0);
                for (jj, col_j) in tail.chunks_exact(m).enumerate() {
                    axpy(u[k + 1 + jj], &col_j[k + 1..], wk);
                }
            }
        } else {
            pending = 0.0;
        }
    }
    (diag, sup)
}

/// Plane rotation `[c s; -s c] [f; g] = [r; 0]`.
#[inline]
fn rotation(f: f64, g: f64) -> (f64, f64, f64) {
    if g == 0.0 {
        (1.0, 0.0, f)
    } else if f == 0.0 {
        (0.0, g.signum(), g.abs())
    } else {
        let d = f.hypot(g);
        let r = d.copysign(f);
        (f.abs() / d, g / r, r)
    }
}

/// Singular values `(min, max)` of the upper triangular 2x2 `[f g; 0 h]`.
pub fn two_by_two(f: f64, g: f64, h: f64) -> (f64, f64) {
    let fa = f.abs();
    let ga = g.abs();
    let ha = h.abs();
    let fhmn = fa.min(ha);
    let fhmx = fa.max(ha);
    if fhmn == 0.0 {
        let ssmax = if fhmx == 0.0 {
            ga
        } else {
            let (lo, hi) = (fhmx.min(ga), fhmx.max(ga));
            hi * (1.0 + (lo / hi) * (lo / hi)).sqrt()
        };
        (0.0, ssmax)
    } else if ga < fhmx {
        let as_ = 1.0 + fhmn / fhmx;
        let at = (fhmx - fhmn) / fhmx;
        let au = (ga / fhmx) * (ga / fhmx);
        let c = 2.0 / ((as_ * as_ + au).sqrt() + (at * at + au).sqrt());
        (fhmn * c, fhmx / c)
    } else {
        let au = fhmx / ga;
        if au == 0.0 {
            ((fhmn * fhmx) / ga, ga)
        } else {
            let as_ = 1.0 + fhmn / fhmx;
            let at = (fhmx - fhmn) / fhmx;
            let c = 1.0 / ((1.0 + (as_ * au) * (as_ * au)).sqrt() + (1.0 + (at * au) * (at * au)).sqrt());
            let ssmin = 2.0 * (fhmn * c) * au;
            (ssmin, ga / (c + c))
        }
    }
}

/// Singular values of the upper bidiagonal matrix with diagonal `d` and
/// superdiagonal `e`, to high relative accuracy.
///
/// Indices below follow the 1-based convention of the classical formulation:
/// `dd(i)` is `d[i - 1]` and `ee(i)` couples `dd(i)` with `dd(i + 1)`.
pub(crate) fn bidiagonal_qr(mut d: Vec<f64>, mut e: Vec<f64>) -> Result<BidiagonalSvd> {
    let n = d.len();
    assert_eq!(e.len(), n.saturating_sub(1));
    let mut residual = 0.0f64;
    if n == 0 {
        return Ok(BidiagonalSvd {
            values: d,
            iterations: 0,
            residual,
        });
    }
    let eps = f64::EPSILON * 0.5;
    let unfl = f64::MIN_POSITIVE;
    let maxitr = 6usize;
    let tolmul = 10.0f64.max(100.0f64.min(eps.powf(-0.125)));
    let tol = tolmul * eps;

    let global_max = d
        .iter()
        .chain(e.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    if global_max == 0.0 || n == 1 {
        for x in &mut d {
            *x = x.abs();
        }
        return Ok(BidiagonalSvd {
            values: d,
            iterations: 0,
            residual,
        });
    }

    let mut sminoa = d[0].abs();
    if sminoa != 0.0 {
        let mut mu = sminoa;
        for i in 1..n {
            mu = d[i].abs() * (mu / (mu + e[i - 1].abs()));
            sminoa = sminoa.min(mu);
            if sminoa == 0.0 {
                break;
            }
        }
    }
    sminoa /= (n as f64).sqrt();
    let thresh = (tol * sminoa).max(maxitr as f64 * (n as f64 * (n as f64 * unfl)));
    let maxit = maxitr * n * n;

    let neglect = |x: &mut f64, residual: &mut f64| {
        *residual = residual.max(x.abs() / global_max);
        *x = 0.0;
    };

    let mut iter = 0usize;
    let mut oldll = 0usize;
    let mut oldm = 0usize;
    let mut idir = 0u8;
    let mut m = n;

    macro_rules! dd {
        ($i:expr) => {
            d[$i - 1]
        };
    }
    macro_rules! ee {
        ($i:expr) => {
            e[$i - 1]
        };
    }

    'outer: while m > 1 {
        if iter > maxit {
            return Err(Error::NoConvergence(iter));
        }

        // Locate the bottom unreduced block dd(ll..=m).
        let mut smax = dd!(m).abs();
        let mut split = 0usize;
        for lll in 1..m {
            let l = m - lll;
            let abss = dd!(l).abs();
            let abse = ee!(l).abs();
            if abse <= thresh {
                split = l;
                break;
            }
            smax = smax.max(abss).max(abse);
        }
        if split > 0 {
            neglect(&mut ee!(split), &mut residual);
            if split == m - 1 {
                m -= 1;
                continue;
            }
        }
        let ll = split + 1;

        if ll == m - 1 {
            let (sigmn, sigmx) = two_by_two(dd!(m - 1), ee!(m - 1), dd!(m));
            dd!(m - 1) = sigmx;
            ee!(m - 1) = 0.0;
            dd!(m) = sigmn;
            m -= 2;
            continue;
        }

        // Chase direction: towards the smaller end of the block.
        if ll > oldm || m < oldll {
            idir = if dd!(ll).abs() >= dd!(m).abs() { 1 } else { 2 };
        }

        let mut sminl;
        if idir == 1 {
            if ee!(m - 1).abs() <= tol * dd!(m).abs() {
                neglect(&mut ee!(m - 1), &mut residual);
                continue;
            }
            let mut mu = dd!(ll).abs();
            sminl = mu;
            for lll in ll..m {
                if ee!(lll).abs() <= tol * mu {
                    neglect(&mut ee!(lll), &mut residual);
                    continue 'outer;
                }
                mu = dd!(lll + 1).abs() * (mu / (mu + ee!(lll).abs()));
                sminl = sminl.min(mu);
            }
        } else {
            if ee!(ll).abs() <= tol * dd!(ll).abs() {
                neglect(&mut ee!(ll), &mut residual);
                continue;
            }
            let mut mu = dd!(m).abs();
            sminl = mu;
            for lll in (ll..m).rev() {
                if ee!(lll).abs() <= tol * mu {
                    neglect(&mut ee!(lll), &mut residual);
                    continue 'outer;
                }
                mu = dd!(lll).abs() * (mu / (mu + ee!(lll).abs()));
                sminl = sminl.min(mu);
            }
        }
        oldll = ll;
        oldm = m;

        let mut shift = 0.0;
        if !((n as f64) * tol * (sminl / smax) <= eps.max(0.01 * tol)) {
            let sll;
            if idir == 1 {
                sll = dd!(ll).abs();
                shift = two_by_two(dd!(m - 1), ee!(m - 1), dd!(m)).0;
            } else {
                sll = dd!(m).abs();
                shift = two_by_two(dd!(ll), ee!(ll), dd!(ll + 1)).0;
            }
            if sll > 0.0 && (shift / sll) * (shift / sll) < eps {
                shift = 0.0;
            }
        }
        iter += m - ll;

        if shift == 0.0 {
            if idir == 1 {
                let mut cs = 1.0;
                let mut oldcs = 1.0;
                let mut oldsn = 0.0;
                for i in ll..m {
                    let (c, s, r) = rotation(dd!(i) * cs, ee!(i));
                    cs = c;
                    if i > ll {
                        ee!(i - 1) = oldsn * r;
                    }
                    let (oc, os, di) = rotation(oldcs * r, dd!(i + 1) * s);
                    oldcs = oc;
                    oldsn = os;
                    dd!(i) = di;
                }
                let h = dd!(m) * cs;
                dd!(m) = h * oldcs;
                ee!(m - 1) = h * oldsn;
                if ee!(m - 1).abs() <= thresh {
                    neglect(&mut ee!(m - 1), &mut residual);
                }
            } else {
                let mut cs = 1.0;
                let mut oldcs = 1.0;
                let mut oldsn = 0.0;
                for i in (ll + 1..=m).rev() {
                    let (c, s, r) = rotation(dd!(i) * cs, ee!(i - 1));
                    cs = c;
                    if i < m {
                        ee!(i) = oldsn * r;
                    }
                    let (oc, os, di) = rotation(oldcs * r, dd!(i - 1) * s);
                    oldcs = oc;
                    oldsn = os;
                    dd!(i) = di;
                }
                let h = dd!(ll) * cs;
                dd!(ll) = h * oldcs;
                ee!(ll) = h * oldsn;
                if ee!(ll).abs() <= thresh {
                    neglect(&mut ee!(ll), &mut residual);
                }
            }
        } else if idir == 1 {
            let mut f = (dd!(ll).abs() - shift) * (1.0f64.copysign(dd!(ll)) + shift / dd!(ll));
            let mut g = ee!(ll);
            for i in ll..m {
                let (cosr, sinr, r) = rotation(f, g);
                if i > ll {
                    ee!(i - 1) = r;
                }
                f = cosr * dd!(i) + sinr * ee!(i);
                ee!(i) = cosr * ee!(i) - sinr * dd!(i);
                g = sinr * dd!(i + 1);
                dd!(i + 1) *= cosr;
                let (cosl, sinl, r) = rotation(f, g);
                dd!(i) = r;
                f = cosl * ee!(i) + sinl * dd!(i + 1);
                dd!(i + 1) = cosl * dd!(i + 1) - sinl * ee!(i);
                if i < m - 1 {
                    g = sinl * ee!(i + 1);
                    ee!(i + 1) *= cosl;
                }
            }
            ee!(m - 1) = f;
            if ee!(m - 1).abs() <= thresh {
                neglect(&mut ee!(m - 1), &mut residual);
            }
        } else {
            let mut f = (dd!(m).abs() - shift) * (1.0f64.copysign(dd!(m)) + shift / dd!(m));
            let mut g = ee!(m - 1);
            for i in (ll + 1..=m).rev() {
                let (cosr, sinr, r) = rotation(f, g);
                if i < m {
                    ee!(i) = r;
                }
                f = cosr * dd!(i) + sinr * ee!(i - 1);
                ee!(i - 1) = cosr * ee!(i - 1) - sinr * dd!(i);
                g = sinr * dd!(i - 1);
                dd!(i - 1) *= cosr;
                let (cosl, sinl, r) = rotation(f, g);
                dd!(i) = r;
                f = cosl * ee!(i - 1) + sinl * dd!(i - 1);
                dd!(i - 1) = cosl * dd!(i - 1) - sinl * ee!(i - 1);
                if i > ll + 1 {
                    g = sinl * ee!(i - 2);
                    ee!(i - 2) *= cosl;
                }
            }
            ee!(ll) = f;
            if ee!(ll).abs() <= thresh {
                neglect(&mut ee!(ll), &mut residual);
            }
        }
    }

    for x in &mut d {
        *x = x.abs();
    }
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(BidiagonalSvd {
        values: d,
        iterations: iter,
        residual,
    })
}
