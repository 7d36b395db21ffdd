//! Lévy concentration estimates, the Rogozin and projection checks, the
//! peaky / almost-sparse / generic split of the sphere, and sparse nets.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{StreamKey, StreamRng};
use crate::Mat;

/// Scalar sampler driven by a stream.
pub type Sampler<'a> = &'a (dyn Fn(&mut StreamRng) -> f64 + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationEstimate {
    pub h: f64,
    /// Largest fraction of the sample in a closed interval of length `2h`.
    pub q_hat: f64,
    pub sample_size: usize,
    /// Binomial standard error `sqrt(q (1 - q) / k)`.
    pub std_error: f64,
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("window half-width must be positive, got {h}"),
        });
    }
    Ok(())
}

/// Exact empirical `sup_l P(|xi - l| <= h)` of a sample.
///
/// The sample is sorted internally, so any order is accepted. An optimal
/// window can always be slid right until its left end hits a sample point,
/// so only windows `[x_i, x_i + 2h]` need to be scanned.
pub fn levy_concentration(samples: &[f64], h: f64) -> Result<ConcentrationEstimate> {
    check_h(h)?;
    if samples.is_empty() {
        return Err(Error::Empty("levy_concentration of an empty sample"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let width = 2.0 * h;
    let mut best = 0usize;
    let mut hi = 0usize;
    for lo in 0..xs.len() {
        while hi < xs.len() && xs[hi] - xs[lo] <= width {
            hi += 1;
        }
        best = best.max(hi - lo);
    }
    Ok(estimate(h, best, xs.len()))
}

/// Quadratic reference for [`levy_concentration`] using the same predicate.
pub fn levy_concentration_brute(samples: &[f64], h: f64) -> Result<ConcentrationEstimate> {
    check_h(h)?;
    if samples.is_empty() {
        return Err(Error::Empty("levy_concentration of an empty sample"));
    }
    let width = 2.0 * h;
    let best = samples
        .iter()
        .map(|&a| {
            samples
                .iter()
                .filter(|&&b| b >= a && b - a <= width)
                .count()
        })
        .max()
        .unwrap_or(0);
    Ok(estimate(h, best, samples.len()))
}

/// Concentration of the sample restricted to the entries where `keep` holds;
/// this is how conditioning on a label event is realized.
pub fn conditional_concentration(
    samples: &[f64],
    keep: &[bool],
    h: f64,
) -> Result<ConcentrationEstimate> {
    if samples.len() != keep.len() {
        return Err(Error::ShapeMismatch {
            expected: (samples.len(), 1),
            actual: (keep.len(), 1),
        });
    }
    let kept: Vec<f64> = samples
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(x, _)| *x)
        .collect();
    levy_concentration(&kept, h)
}

fn estimate(h: f64, count: usize, k: usize) -> ConcentrationEstimate {
    let q = count as f64 / k as f64;
    ConcentrationEstimate {
        h,
        q_hat: q,
        sample_size: k,
        std_error: (q * (1.0 - q) / k as f64).sqrt(),
    }
}

fn draw(sampler: Sampler<'_>, trials: usize, key: StreamKey) -> Vec<f64> {
    (0..trials)
        .into_par_iter()
        .map(|t| sampler(&mut key.child(t as u64).rng()))
        .collect()
}

/// One summand `xi_j` of a Rogozin sum together with its own window `h_j`.
#[derive(Clone, Copy)]
pub struct Component<'a> {
    pub sampler: Sampler<'a>,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RogozinReport {
    pub h: f64,
    pub trials: usize,
    /// Estimated `Q(sum xi_j, h)`.
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// Estimated `Q(xi_j, h_j)` per component.
    pub component_q: Vec<f64>,
    /// `sum (1 - Q(xi_j, h_j)) h_j^2`.
    pub bracket: f64,
    /// `h * bracket^(-1/2)`, the right-hand side without its constant.
    pub rhs_unit: f64,
    /// Smallest constant making the inequality hold: `lhs / rhs_unit`.
    pub c_hat: f64,
}

/// Monte Carlo estimate of both sides of
/// `Q(sum xi_j, h) <= C h (sum (1 - Q(xi_j, h_j)) h_j^2)^(-1/2)`.
pub fn rogozin_check(
    components: &[Component<'_>],
    h: f64,
    trials: usize,
    key: StreamKey,
) -> Result<RogozinReport> {
    check_h(h)?;
    if components.is_empty() || trials < 2 {
        return Err(Error::Empty("rogozin_check needs components and at least two trials"));
    }
    if let Some(c) = components.iter().find(|c| !(c.h > 0.0) || c.h > h) {
        return Err(Error::InvalidParameter {
            name: "h_j",
            reason: format!("component windows must lie in (0, h = {h}], got {}", c.h),
        });
    }
    let mut component_q = Vec::with_capacity(components.len());
    let mut bracket = 0.0;
    for (j, c) in components.iter().enumerate() {
        let xs = draw(c.sampler, trials, key.child(0).child(j as u64));
        let q = levy_concentration(&xs, c.h)?.q_hat;
        bracket += (1.0 - q) * c.h * c.h;
        component_q.push(q);
    }
    let sum_key = key.child(1);
    let sums: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = sum_key.child(t as u64).rng();
            components.iter().map(|c| (c.sampler)(&mut rng)).sum()
        })
        .collect();
    let lhs = levy_concentration(&sums, h)?;
    let rhs_unit = if bracket > 0.0 { h / bracket.sqrt() } else { f64::INFINITY };
    Ok(RogozinReport {
        h,
        trials,
        lhs: lhs.q_hat,
        lhs_std_error: lhs.std_error,
        component_q,
        bracket,
        rhs_unit,
        c_hat: lhs.q_hat / rhs_unit,
    })
}

/// Largest fraction of `points` inside a Euclidean ball of the given radius
/// centred at one of the first `max_centers` points.
pub fn ball_concentration(points: &[Vec<f64>], radius: f64, max_centers: usize) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let r2 = radius * radius;
    let best = points
        .par_iter()
        .take(max_centers.max(1))
        .map(|c| {
            points
                .iter()
                .filter(|p| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2)
                .count()
        })
        .max()
        .unwrap_or(0);
    best as f64 / points.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub dim: usize,
    pub d: usize,
    pub ell: usize,
    /// `h sqrt(d) / ell`.
    pub radius: f64,
    /// Estimated `Q(X_i, h)` of a single coordinate.
    pub coordinate_q: f64,
    /// Estimated ball concentration of `Proj_E X`.
    pub q_hat: f64,
    /// `(ell tau)^(-d / (2 ell))`, the bound without its constant.
    pub bound_unit: f64,
    /// Smallest `C` with `q_hat <= (C / sqrt(ell tau))^(d / ell)`.
    pub c_hat: f64,
}

/// Orthonormal `dim x d` frame from a Gaussian matrix.
fn random_frame(dim: usize, d: usize, key: StreamKey) -> Mat {
    let g = Mat::from_fn(dim, d, |i, j| key.entry(i, j).rng().sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Ball concentration of the projection of a random vector with i.i.d.
/// coordinates onto a random `d`-dimensional subspace of `R^dim`, at radius
/// `h sqrt(d) / ell`.
///
/// The coordinate precondition `Q(X_i, h) <= 1 - tau` is checked on a
/// fresh sample first. Centres are taken from the first 512 projected
/// points.
pub fn projection_anticoncentration(
    coords: Sampler<'_>,
    dim: usize,
    h: f64,
    tau: f64,
    d: usize,
    ell: usize,
    trials: usize,
    key: StreamKey,
) -> Result<ProjectionReport> {
    check_h(h)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must lie in (0, 1), got {tau}"),
        });
    }
    if d == 0 || d > dim || ell == 0 || trials < 2 {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: format!("need 1 <= d <= dim, ell >= 1, trials >= 2; got d={d}, dim={dim}, ell={ell}"),
        });
    }
    let coordinate_q = levy_concentration(&draw(coords, trials, key.child(0)), h)?.q_hat;
    if coordinate_q > 1.0 - tau {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("coordinate concentration {coordinate_q} exceeds 1 - tau = {}", 1.0 - tau),
        });
    }
    let frame = random_frame(dim, d, key.child(1));
    let vkey = key.child(2);
    let points: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = vkey.child(t as u64).rng();
            let x: Vec<f64> = (0..dim).map(|_| coords(&mut rng)).collect();
            (0..d)
                .map(|k| frame.column(k).iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let radius = h * (d as f64).sqrt() / ell as f64;
    let q_hat = ball_concentration(&points, radius, 512);
    let power = d as f64 / ell as f64;
    let scale = (ell as f64 * tau).sqrt();
    Ok(ProjectionReport {
        dim,
        d,
        ell,
        radius,
        coordinate_q,
        q_hat,
        bound_unit: scale.powf(-power),
        c_hat: q_hat.powf(1.0 / power) * scale,
    })
}

/// Class of a unit vector in the peaky / almost-sparse / generic split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SphereClass {
    /// `|y_index| >= theta`.
    Peaky { theta: f64, index: usize },
    /// The `m` largest coordinates carry norm at least 1/2.
    AlmostSparse { m: usize, support: Vec<usize> },
    /// Greedy selection `J` among coordinates below `cap`.
    Generic {
        support: Vec<usize>,
        norm: f64,
        /// `(1/2) sqrt(m / n)`.
        bound: f64,
        /// `1 / floor(N^(1/4))`.
        cap: f64,
        /// False flags a counterexample to the greedy choice.
        bound_met: bool,
    },
}

impl SphereClass {
    /// Re-checks the class invariants against `y`.
    pub fn witness_ok(&self, y: &[f64], m: usize) -> bool {
        let mass = |j: &[usize]| j.iter().map(|&i| y[i] * y[i]).sum::<f64>().sqrt();
        match self {
            SphereClass::Peaky { theta, index } => y[*index].abs() >= *theta,
            SphereClass::AlmostSparse { support, .. } => support.len() <= m && mass(support) >= 0.5,
            SphereClass::Generic {
                support,
                norm,
                bound,
                cap,
                bound_met,
            } => {
                support.len() <= m
                    && support.iter().all(|&i| y[i].abs() <= *cap)
                    && (mass(support) - norm).abs() <= 1e-12
                    && *bound_met == (*norm >= *bound)
            }
        }
    }
}

/// Classifies a unit vector `y` as peaky, almost sparse, or generic.
pub fn classify_sphere_vector(y: &[f64], theta: f64, m: usize, big_n: usize) -> Result<SphereClass> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("classify_sphere_vector of an empty vector"));
    }
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= 1e-10) {
        return Err(Error::NotUnit(norm));
    }
    if m == 0 || m > n || big_n == 0 || !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "m",
            reason: format!("need 1 <= m <= n, N >= 1, theta in (0, 1]; got m={m}, n={n}, N={big_n}, theta={theta}"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[b].abs().total_cmp(&y[a].abs()).then(a.cmp(&b)));
    if y[order[0]].abs() >= theta {
        return Ok(SphereClass::Peaky {
            theta,
            index: order[0],
        });
    }
    let top = &order[..m];
    if top.iter().map(|&i| y[i] * y[i]).sum::<f64>().sqrt() >= 0.5 {
        let mut support = top.to_vec();
        support.sort_unstable();
        return Ok(SphereClass::AlmostSparse { m, support });
    }
    // Integer fourth root, robust to rounding of powf.
    let mut root = (big_n as f64).powf(0.25).round() as usize;
    while root.pow(4) > big_n {
        root -= 1;
    }
    while (root + 1).pow(4) <= big_n {
        root += 1;
    }
    let cap = 1.0 / root as f64;
    let mut support: Vec<usize> = order.iter().copied().filter(|&i| y[i].abs() <= cap).take(m).collect();
    let mass = support.iter().map(|&i| y[i] * y[i]).sum::<f64>().sqrt();
    support.sort_unstable();
    let bound = 0.5 * (m as f64 / n as f64).sqrt();
    Ok(SphereClass::Generic {
        support,
        norm: mass,
        bound,
        cap,
        bound_met: mass >= bound,
    })
}

/// Net of `m`-sparse vectors in the unit ball on a coordinate grid.
#[derive(Debug, Clone)]
pub struct SparseNet {
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub pitch: f64,
    /// Nonzero grid coordinates `(index, k)` of each point, `value = k * pitch`.
    points: Vec<Vec<(usize, i64)>>,
    by_support: HashMap<Vec<usize>, Vec<usize>>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Budget proxy `C(n, m) (2 sqrt(m) / epsilon)^m`.
pub fn sparse_net_cost(n: usize, m: usize, epsilon: f64) -> f64 {
    binomial(n, m) * (2.0 * (m as f64).sqrt() / epsilon).powi(m as i32)
}

/// Builds the net on supports of size `m` with pitch `epsilon / sqrt(m)`.
///
/// Every `m`-sparse `y` in the unit ball is within `epsilon` of the point
/// obtained by rounding its coordinates toward zero, which lies in the net.
pub fn sparse_net(n: usize, m: usize, epsilon: f64, budget: f64) -> Result<SparseNet> {
    if m == 0 || m > n {
        return Err(Error::InvalidParameter {
            name: "m",
            reason: format!("need 1 <= m <= n, got m={m}, n={n}"),
        });
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("must lie in (0, 1], got {epsilon}"),
        });
    }
    let required = sparse_net_cost(n, m, epsilon);
    if required > budget {
        return Err(Error::Budget { required, budget });
    }
    let pitch = epsilon / (m as f64).sqrt();
    let kmax = (1.0 / pitch).floor() as i64;
    let mut seen = BTreeSet::new();
    let mut support: Vec<usize> = (0..m).collect();
    loop {
        let mut ks = vec![-kmax; m];
        loop {
            let r2: f64 = ks.iter().map(|&k| (k as f64 * pitch).powi(2)).sum();
            if r2 <= 1.0 + 1e-12 {
                let point: Vec<(usize, i64)> = support
                    .iter()
                    .zip(&ks)
                    .filter(|(_, k)| **k != 0)
                    .map(|(&i, &k)| (i, k))
                    .collect();
                seen.insert(point);
            }
            if !advance_grid(&mut ks, kmax) {
                break;
            }
        }
        if !advance_subset(&mut support, n) {
            break;
        }
    }
    let points: Vec<Vec<(usize, i64)>> = seen.into_iter().collect();
    let mut by_support: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for (idx, p) in points.iter().enumerate() {
        by_support.entry(p.iter().map(|e| e.0).collect()).or_default().push(idx);
    }
    Ok(SparseNet {
        n,
        m,
        epsilon,
        pitch,
        points,
        by_support,
    })
}

fn advance_grid(ks: &mut [i64], kmax: i64) -> bool {
    for k in ks.iter_mut() {
        if *k < kmax {
            *k += 1;
            return true;
        }
        *k = -kmax;
    }
    false
}

/// Next `m`-subset of `0..n` in lexicographic order.
fn advance_subset(s: &mut [usize], n: usize) -> bool {
    let m = s.len();
    for i in (0..m).rev() {
        if s[i] < n - m + i {
            s[i] += 1;
            for j in i + 1..m {
                s[j] = s[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

impl SparseNet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Dense copy of point `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for &(i, k) in &self.points[idx] {
            v[i] = k as f64 * self.pitch;
        }
        v
    }

    /// Smallest distance from `y` to net points supported inside `supp(y)`,
    /// found by scanning the buckets of every subset of the support.
    pub fn distance_within_support(&self, y: &[f64]) -> f64 {
        let supp: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 0.0).collect();
        let y2: f64 = y.iter().map(|v| v * v).sum();
        let mut best = f64::INFINITY;
        for mask in 0u64..(1u64 << supp.len()) {
            let sub: Vec<usize> = (0..supp.len()).filter(|b| mask >> b & 1 == 1).map(|b| supp[b]).collect();
            let Some(bucket) = self.by_support.get(&sub) else {
                continue;
            };
            for &idx in bucket {
                // |y - p|^2 = |y|^2 + sum over supp(p) of (p_i^2 - 2 y_i p_i).
                let d2 = self.points[idx].iter().fold(y2, |acc, &(i, k)| {
                    let p = k as f64 * self.pitch;
                    acc + p * p - 2.0 * y[i] * p
                });
                best = best.min(d2.max(0.0));
            }
        }
        best.sqrt()
    }
}

/// Random unit vector supported on `m` distinct coordinates of `0..n`.
///
/// Odd draws use Gaussian values; even draws use equal magnitudes
/// `1/sqrt(m)` with signs, which sit far from the grid and stress the
/// rounding argument.
pub fn sparse_probe(n: usize, m: usize, key: StreamKey, index: u64) -> Vec<f64> {
    let mut rng = key.child(index).rng();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = i + (rng.unit() * (n - i) as f64) as usize;
        idx.swap(i, j.min(n - 1));
    }
    let mut y = vec![0.0; n];
    if index % 2 == 0 {
        for &i in &idx[..m] {
            y[i] = if rng.coin() { 1.0 } else { -1.0 } / (m as f64).sqrt();
        }
    } else {
        loop {
            for &i in &idx[..m] {
                y[i] = rng.sample::<f64, _>(StandardNormal);
            }
            let norm = idx[..m].iter().map(|&i| y[i] * y[i]).sum::<f64>().sqrt();
            if norm > 0.0 && idx[..m].iter().all(|&i| y[i] != 0.0) {
                for v in &mut y {
                    *v /= norm;
                }
                break;
            }
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub probes: usize,
    pub net_size: usize,
    /// Largest probe-to-net distance observed.
    pub max_distance: f64,
    pub uncovered: usize,
}

/// Measures the covering radius of `net` on `probes` random sparse unit
/// vectors.
pub fn covering_check(net: &SparseNet, probes: usize, key: StreamKey) -> CoveringReport {
    let dists: Vec<f64> = (0..probes as u64)
        .into_par_iter()
        .map(|t| net.distance_within_support(&sparse_probe(net.n, net.m, key, t)))
        .collect();
    CoveringReport {
        probes,
        net_size: net.len(),
        max_distance: dists.iter().copied().fold(0.0, f64::max),
        uncovered: dists.iter().filter(|&&d| d > net.epsilon).count(),
    }
}
