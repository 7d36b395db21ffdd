//! Seeded sweeps over matrix sizes, JSON-lines records, exponent fits and
//! the command line front end.
//!
//! A sweep is a pure function of its configuration: trial `t` at size
//! `(n, N)` draws everything from the stream
//! `root(root_seed).child(n).child(N).child(t)`, and records are written in
//! trial order whatever the worker count.

pub mod cli;
pub mod fit;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{apply_weights_and_shift, assemble, decompose, gaussian_surrogate, normalize, WeightProfile};
use crate::error::{Error, Result};
use crate::polytope;
use crate::rng::StreamKey;
use crate::spectra;
use crate::tail_sampler::{sample_matrix, Regime, TailLaw, TruncationScheme};
use crate::upper_bound::{minor_scale, minor_upper_bound, no_all_ones_bound};
use crate::Mat;

pub use fit::{calibrate_sandwich, fit_exponent, sandwich_check, ScalingFit, SizeKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Plain `sigma_min` / `sigma_max` of an i.i.d. heavy-tailed matrix.
    SigmaMin,
    /// Gaussian entries, compared with `sqrt(N/n) - 1`.
    BaiYin,
    /// Minor `Y^m` on all-ones label columns against `sigma_min(X)`.
    UpperBound,
    /// `|sigma_min(T) - sigma_min(G)|` for the normalized pair.
    Coupling,
    /// `sigma_min(A o X + B)` for bounded weights and a constant shift.
    Perturbed,
    /// Inradius certificate `sigma_min / sqrt(N)`.
    Polytope,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SigmaMin => "sigma_min",
            ExperimentKind::BaiYin => "bai_yin",
            ExperimentKind::UpperBound => "upper_bound",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::Perturbed => "perturbed",
            ExperimentKind::Polytope => "polytope",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: ExperimentKind,
    /// Constant multiplying the `Y^m` scale in `upper_bound`.
    #[serde(default = "one")]
    pub constant: f64,
    /// Weight range `[weight_low, weight_high]` for `perturbed`.
    #[serde(default = "one")]
    pub weight_low: f64,
    #[serde(default = "one")]
    pub weight_high: f64,
    /// Constant entry of the shift matrix for `perturbed`.
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `(n, N)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub trials: usize,
    pub root_seed: u64,
    /// Declared aspect ratio; every size needs `N >= ceil(delta n)`.
    #[serde(default = "one")]
    pub delta: f64,
    /// Worker threads, 0 for one per core.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative stopping tolerance of the singular value kernel.
    #[serde(default = "default_spectral")]
    pub spectral: f64,
    /// Relative slack allowed in asserted inequalities.
    #[serde(default = "default_assertion")]
    pub assertion: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            spectral: default_spectral(),
            assertion: default_assertion(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn default_spectral() -> f64 {
    spectra::DEFAULT_TOL
}
fn default_assertion() -> f64 {
    1e-8
}

/// A full sweep description, normally read from TOML with dotted keys such
/// as `experiment.name`, `law.alpha` or `sweep.sizes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    /// Entry law; not used by `bai_yin`.
    pub law: Option<TailLaw>,
    /// Truncation scheme for `upper_bound` (upper regime) and `coupling`
    /// (lower regime).
    pub scheme: Option<TruncationScheme>,
    pub sweep: SweepSection,
    #[serde(default)]
    pub tolerance: Tolerances,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::Config(format!("{key}: {why}")));
        let s = &self.sweep;
        if s.trials == 0 {
            return bad("sweep.trials", "must be at least 1".into());
        }
        if s.sizes.is_empty() {
            return bad("sweep.sizes", "must list at least one (n, N) pair".into());
        }
        if !(s.delta >= 1.0) {
            return bad("sweep.delta", format!("must be at least 1, got {}", s.delta));
        }
        for &(n, big_n) in &s.sizes {
            let need = (s.delta * n as f64 - 1e-9).ceil() as usize;
            if n == 0 || big_n < need.max(n) {
                return bad(
                    "sweep.sizes",
                    format!("({n}, {big_n}) violates 1 <= n and N >= ceil(delta n) = {need}"),
                );
            }
        }
        if !(self.tolerance.spectral > 0.0 && self.tolerance.assertion >= 0.0) {
            return bad("tolerance", "tolerances must be positive".into());
        }
        let kind = self.experiment.name;
        match (&self.law, kind) {
            (None, ExperimentKind::BaiYin) => {}
            (None, _) => return bad("law", format!("experiment {} needs a law", kind.name())),
            (Some(law), _) => law.validate().or_else(|e| bad("law", e.to_string()))?,
        }
        let need_regime = match kind {
            ExperimentKind::UpperBound => Some(Regime::Upper),
            ExperimentKind::Coupling => Some(Regime::Lower),
            _ => None,
        };
        if let Some(regime) = need_regime {
            match &self.scheme {
                None => return bad("scheme", format!("experiment {} needs a scheme", kind.name())),
                Some(sc) if sc.regime != regime => {
                    return bad("scheme.regime", format!("experiment {} needs the {regime:?} regime", kind.name()))
                }
                Some(sc) => sc.validate().or_else(|e| bad("scheme", e.to_string()))?,
            }
        }
        if kind == ExperimentKind::Perturbed {
            let e = &self.experiment;
            if !(e.weight_low > 0.0 && e.weight_low <= e.weight_high) {
                return bad("experiment.weight_low", "need 0 < weight_low <= weight_high".into());
            }
        }
        Ok(())
    }

    fn alpha(&self) -> f64 {
        self.law.map_or(2.0, |l| l.alpha)
    }

    fn regime_label(&self) -> String {
        match (self.experiment.name, &self.scheme) {
            (ExperimentKind::UpperBound | ExperimentKind::Coupling, Some(sc)) => match sc.regime {
                Regime::Upper => "upper".into(),
                Regime::Lower => "lower".into(),
            },
            _ => "none".into(),
        }
    }
}

/// One Monte Carlo outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub experiment: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub alpha: f64,
    pub regime: String,
    /// Stream key value of this trial; `StreamKey::from_value(seed)` replays it.
    pub seed: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub extras: BTreeMap<String, f64>,
    pub wall_time_ms: f64,
}

impl TrialRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Config(format!("bad record: {e}")))
    }

    /// Serialized record without the wall-clock field, for determinism
    /// comparisons.
    pub fn payload(&self) -> String {
        let mut v = serde_json::to_value(self).expect("records serialize");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time_ms");
        }
        v.to_string()
    }

    /// `sigma_min`, `sigma_max` or one of the extras.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "sigma_min" => Some(self.sigma_min),
            "sigma_max" => Some(self.sigma_max),
            other => self.extras.get(other).copied(),
        }
    }
}

/// Reads JSON-lines records, skipping blank lines.
pub fn read_records(text: &str) -> Result<Vec<TrialRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(TrialRecord::from_json_line)
        .collect()
}

/// Stream key of trial `t` at size `(n, N)`.
pub fn trial_key(root_seed: u64, n: usize, big_n: usize, trial: usize) -> StreamKey {
    StreamKey::root(root_seed)
        .child(n as u64)
        .child(big_n as u64)
        .child(trial as u64)
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Runs a single trial of the configured experiment.
pub fn run_trial(cfg: &ExperimentConfig, n: usize, big_n: usize, trial: usize) -> Result<TrialRecord> {
    let start = Instant::now();
    let key = trial_key(cfg.sweep.root_seed, n, big_n, trial);
    let tol = cfg.tolerance.spectral;
    let mut extras = BTreeMap::new();
    let extremes = |x: &Mat| spectra::singular_extremes(x, tol);
    let (sigma_min, sigma_max) = match cfg.experiment.name {
        ExperimentKind::SigmaMin => {
            let law = cfg.law.expect("validated");
            let s = extremes(&sample_matrix(&law, big_n, n, key))?;
            (s.sigma_min, s.sigma_max)
        }
        ExperimentKind::Polytope => {
            let law = cfg.law.expect("validated");
            let x = sample_matrix(&law, big_n, n, key);
            let s = extremes(&x)?;
            extras.insert("radius".into(), polytope::certificate_from_sigma_min(s.sigma_min, big_n));
            (s.sigma_min, s.sigma_max)
        }
        ExperimentKind::BaiYin => {
            let x = Mat::from_fn(big_n, n, |i, j| key.entry(i, j).rng().sample::<f64, _>(StandardNormal));
            let s = extremes(&x)?;
            extras.insert("normalized".into(), s.sigma_min / (n as f64).sqrt());
            extras.insert("predicted".into(), (big_n as f64 / n as f64).sqrt() - 1.0);
            (s.sigma_min, s.sigma_max)
        }
        ExperimentKind::UpperBound => {
            let law = cfg.law.expect("validated");
            let scheme = cfg.scheme.expect("validated");
            let dec = decompose(&law, &scheme, big_n, n, key)?;
            let x = assemble(&dec)?;
            let bound = no_all_ones_bound(&scheme, &dec.threshold, n);
            let scale = minor_scale(law.alpha, &dec.threshold);
            extras.insert("tau".into(), dec.tau());
            extras.insert("no_all_ones_bound".into(), bound);
            let sigmas = match minor_upper_bound(
                &x,
                &dec.psi,
                &dec.small,
                scale,
                cfg.experiment.constant,
                bound,
                cfg.tolerance.assertion,
            ) {
                Ok(r) => {
                    extras.insert("applicable".into(), 1.0);
                    extras.insert("all_ones_columns".into(), r.all_ones_columns.len() as f64);
                    extras.insert("minor_norm".into(), r.minor_norm);
                    extras.insert("bound_value".into(), r.bound_value);
                    extras.insert("predicate_holds".into(), flag(r.predicate_holds));
                    extras.insert("below_minor".into(), flag(r.sigma_min_below_minor));
                    extras.insert("constant_hat".into(), r.constant_hat);
                    (r.sigma_min, r.sigma_max)
                }
                Err(Error::Inapplicable { .. }) => {
                    extras.insert("applicable".into(), 0.0);
                    let s = extremes(&x)?;
                    (s.sigma_min, s.sigma_max)
                }
                Err(e) => return Err(e),
            };
            sigmas
        }
        ExperimentKind::Coupling => {
            let law = cfg.law.expect("validated");
            let scheme = cfg.scheme.expect("validated");
            let pair = normalize(&decompose(&law, &scheme, big_n, n, key.child(0))?)?;
            let g = gaussian_surrogate(&pair, key.child(1));
            let st = extremes(&pair.t())?;
            let sg = extremes(&g)?.sigma_min;
            extras.insert("sigma_min_g".into(), sg);
            extras.insert("delta".into(), (st.sigma_min - sg).abs());
            extras.insert("m".into(), pair.m);
            extras.insert("q".into(), pair.q);
            extras.insert("q_theory".into(), pair.q_theory);
            (st.sigma_min, st.sigma_max)
        }
        ExperimentKind::Perturbed => {
            let law = cfg.law.expect("validated");
            let e = &cfg.experiment;
            let x = sample_matrix(&law, big_n, n, key.child(0));
            let a = Mat::from_fn(big_n, n, |i, j| {
                e.weight_low + (e.weight_high - e.weight_low) * key.child(1).entry(i, j).rng().unit()
            });
            let w = WeightProfile::new(a, e.weight_low, e.weight_high)?;
            let b = Mat::from_element(big_n, n, e.shift);
            let base = extremes(&x)?.sigma_min;
            let s = extremes(&apply_weights_and_shift(&x, &w, &b)?)?;
            extras.insert("sigma_min_base".into(), base);
            extras.insert("ratio".into(), s.sigma_min / base);
            (s.sigma_min, s.sigma_max)
        }
    };
    Ok(TrialRecord {
        experiment: cfg.experiment.name.name().into(),
        n,
        big_n,
        alpha: cfg.alpha(),
        regime: cfg.regime_label(),
        seed: key.value(),
        sigma_min,
        sigma_max,
        extras,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

// Trials per batch between writes.
const BATCH: usize = 64;

/// Runs every trial of the sweep on a pool of `sweep.workers` threads,
/// writing each record to `sink` as one JSON line in trial order.
///
/// On a trial or write failure the records completed before it stay
/// written, and the error reports how many there were.
pub fn run_sweep(cfg: &ExperimentConfig, sink: &mut dyn Write) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.workers)
        .build()
        .map_err(|e| Error::Config(format!("sweep.workers: {e}")))?;
    let mut out = Vec::new();
    for &(n, big_n) in &cfg.sweep.sizes {
        let mut start = 0;
        while start < cfg.sweep.trials {
            let end = (start + BATCH.max(4 * pool.current_num_threads())).min(cfg.sweep.trials);
            let batch: Vec<Result<TrialRecord>> =
                pool.install(|| (start..end).into_par_iter().map(|t| run_trial(cfg, n, big_n, t)).collect());
            for rec in batch {
                let rec = rec?;
                writeln!(sink, "{}", rec.to_json_line()).map_err(|source| Error::Io {
                    written: out.len(),
                    source,
                })?;
                out.push(rec);
            }
            start = end;
        }
    }
    sink.flush().map_err(|source| Error::Io {
        written: out.len(),
        source,
    })?;
    Ok(out)
}
