//! `sigmin` command line: `sample`, `sweep`, `fit`, `universality`,
//! `polytope`, `nets` and `report`.
//!
//! Exit codes: 0 on success, 1 when an experiment assertion fails, 2 on a
//! usage or configuration error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::fit::{fit_exponent, medians_by_size, SizeKey};
use super::{read_records, run_sweep, ExperimentConfig, ExperimentKind, TrialRecord};
use crate::anticoncentration::{covering_check, sparse_net};
use crate::error::{Error, Result};
use crate::polytope::{certificate, exact_inradius_2d, grid_refine_inradius};
use crate::rng::StreamKey;
use crate::spectra;
use crate::stats;
use crate::tail_sampler::{sample_matrix, TailKind, TailLaw};
use crate::universality_check::coupling_experiment;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sigmin", version, about = "Smallest singular values of heavy-tailed random matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw one matrix and print its extreme singular values.
    Sample(SampleArgs),
    /// Run a configured sweep and write JSON-lines records.
    Sweep(SweepArgs),
    /// Fit log median against log size from a record file.
    Fit(FitArgs),
    /// Compare sigma_min of the normalized matrix and its Gaussian surrogate.
    Universality(UniversalityArgs),
    /// Check the inradius certificate against exact and mesh oracles.
    Polytope(PolytopeArgs),
    /// Build a sparse net and measure its covering radius.
    Nets(NetsArgs),
    /// Summarize a record file per size.
    Report(ReportArgs),
}

/// Overrides shared by the config-driven subcommands.
#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated `nxN` pairs, e.g. `100x200,200x400`.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Spectral tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct LawArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: Option<TailKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Overrides,
    #[command(flatten)]
    law: LawArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "sigma_min")]
    metric: String,
    /// Size column to regress on: `n` or `N`.
    #[arg(long, default_value = "n")]
    size_key: String,
    /// Keep only records of this experiment.
    #[arg(long)]
    experiment: Option<String>,
    /// Expected slope; the command fails when the fit is farther than `--within`.
    #[arg(long)]
    expect: Option<f64>,
    #[arg(long, default_value_t = 0.15)]
    within: f64,
}

#[derive(Debug, Args)]
struct UniversalityArgs {
    #[command(flatten)]
    common: Overrides,
    /// Values of t at which quantiles are compared with eps(t); defaults to
    /// `ln(8N) + {1, 2, 4, 8}`.
    #[arg(long, value_delimiter = ',')]
    t_grid: Vec<f64>,
    /// Fail when any quantile exceeds `constant * eps(t)`.
    #[arg(long)]
    constant: Option<f64>,
}

#[derive(Debug, Args)]
struct PolytopeArgs {
    #[command(flatten)]
    law: LawArgs,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long = "rows", default_value_t = 6)]
    big_n: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2_000_000)]
    budget: usize,
}

#[derive(Debug, Args)]
struct NetsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 100_000)]
    probes: usize,
    #[arg(long, default_value_t = 1e7)]
    budget: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Tab-separated `(log n, log median sigma_min, err)` plot data.
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn parse_kind(s: &str) -> std::result::Result<TailKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown law kind `{s}` (symmetric_pareto, alpha_stable, slow_varying_pareto)"))
}

fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|p| {
            let (a, b) = p
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::Config(format!("--sizes: `{p}` is not of the form nxN")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("--sizes: `{p}`: {e}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

impl LawArgs {
    fn law(&self) -> Result<Option<TailLaw>> {
        match (self.kind, self.alpha) {
            (None, None) => Ok(None),
            (kind, Some(alpha)) => {
                let law = TailLaw {
                    kind: kind.unwrap_or(TailKind::SymmetricPareto),
                    alpha,
                    sigma: self.sigma,
                    beta: self.beta,
                };
                law.validate()?;
                Ok(Some(law))
            }
            (Some(_), None) => Err(Error::Config("--alpha is required with --kind".into())),
        }
    }
}

impl Overrides {
    /// Config file with command line overrides applied, or `None` when no
    /// config file was given.
    fn config(&self) -> Result<Option<ExperimentConfig>> {
        let Some(path) = &self.config else {
            return Ok(None);
        };
        let mut cfg = ExperimentConfig::from_file(path)?;
        if let Some(s) = self.seed {
            cfg.sweep.root_seed = s;
        }
        if let Some(t) = self.trials {
            cfg.sweep.trials = t;
        }
        if let Some(s) = &self.sizes {
            cfg.sweep.sizes = parse_sizes(s)?;
        }
        if let Some(w) = self.workers {
            cfg.sweep.workers = w;
        }
        if let Some(t) = self.tolerance {
            cfg.tolerance.spectral = t;
        }
        if let Some(o) = &self.out {
            cfg.output.path = Some(o.clone());
        }
        cfg.validate()?;
        Ok(Some(cfg))
    }
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io { written: 0, source })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParameter { .. }
        | Error::InvalidLaw(_)
        | Error::Sizing { .. }
        | Error::WrongRegime(_)
        | Error::Budget { .. } => EXIT_USAGE,
        _ => EXIT_ASSERTION,
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Sample(a) => sample(a),
        Command::Sweep(a) => sweep(a),
        Command::Fit(a) => fit(a),
        Command::Universality(a) => universality(a),
        Command::Polytope(a) => polytope(a),
        Command::Nets(a) => nets(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn sample(a: SampleArgs) -> Result<i32> {
    let cfg = a.common.config()?;
    let law = match (a.law.law()?, cfg.as_ref().and_then(|c| c.law)) {
        (Some(l), _) | (None, Some(l)) => l,
        (None, None) => return Err(Error::Config("give --config or --alpha".into())),
    };
    let (n, big_n) = match (&a.common.sizes, &cfg) {
        (Some(s), _) => parse_sizes(s)?[0],
        (None, Some(c)) => c.sweep.sizes[0],
        (None, None) => (100, 200),
    };
    let seed = a.common.seed.or(cfg.as_ref().map(|c| c.sweep.root_seed)).unwrap_or(0);
    let x = sample_matrix(&law, big_n, n, StreamKey::root(seed));
    let tol = a.common.tolerance.unwrap_or(spectra::DEFAULT_TOL);
    let s = spectra::singular_extremes(&x, tol)?;
    if let Some(path) = &a.common.out {
        let mut w = open_out(path)?;
        let io = |source| Error::Io { written: 0, source };
        for row in x.row_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    println!("n,N,alpha,seed,sigma_min,sigma_max,max_abs_entry");
    println!(
        "{n},{big_n},{},{seed},{},{},{}",
        law.alpha,
        s.sigma_min,
        s.sigma_max,
        x.amax()
    );
    Ok(EXIT_OK)
}

fn summary_table(records: &[TrialRecord]) -> Result<String> {
    let mut out = String::from("experiment,alpha,n,N,trials,median_sigma_min,q25_sigma_min,q75_sigma_min,median_sigma_max\n");
    let mut groups: std::collections::BTreeMap<(String, u64, usize, usize), Vec<&TrialRecord>> = Default::default();
    for r in records {
        groups
            .entry((r.experiment.clone(), r.alpha.to_bits(), r.n, r.big_n))
            .or_default()
            .push(r);
    }
    for ((exp, alpha, n, big_n), rs) in groups {
        let mins: Vec<f64> = rs.iter().map(|r| r.sigma_min).collect();
        let maxs: Vec<f64> = rs.iter().map(|r| r.sigma_max).collect();
        out.push_str(&format!(
            "{exp},{},{n},{big_n},{},{},{},{},{}\n",
            f64::from_bits(alpha),
            rs.len(),
            stats::median(&mins)?,
            stats::quantile(&mins, 0.25)?,
            stats::quantile(&mins, 0.75)?,
            stats::median(&maxs)?
        ));
    }
    Ok(out)
}

fn sweep(a: SweepArgs) -> Result<i32> {
    let cfg = a
        .common
        .config()?
        .ok_or_else(|| Error::Config("sweep needs --config".into()))?;
    let records = match &cfg.output.path {
        Some(path) => {
            let mut w = open_out(path)?;
            let recs = run_sweep(&cfg, &mut w)?;
            print!("{}", summary_table(&recs)?);
            recs
        }
        None => {
            let stdout = std::io::stdout();
            let recs = run_sweep(&cfg, &mut stdout.lock())?;
            eprint!("{}", summary_table(&recs)?);
            recs
        }
    };
    if cfg.experiment.name == ExperimentKind::UpperBound {
        let applicable: Vec<&TrialRecord> = records.iter().filter(|r| r.extras.get("applicable") == Some(&1.0)).collect();
        let failures = applicable.iter().filter(|r| r.extras.get("below_minor") != Some(&1.0)).count();
        eprintln!("upper_bound: {} applicable, {failures} violations", applicable.len());
        if failures > 0 {
            return Ok(EXIT_ASSERTION);
        }
    }
    Ok(EXIT_OK)
}

fn load_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    read_records(&text)
}

fn fit(a: FitArgs) -> Result<i32> {
    let mut records = load_records(&a.input)?;
    if let Some(exp) = &a.experiment {
        records.retain(|r| &r.experiment == exp);
    }
    let key = match a.size_key.as_str() {
        "n" => SizeKey::SmallN,
        "N" => SizeKey::BigN,
        other => return Err(Error::Config(format!("--size-key must be n or N, got `{other}`"))),
    };
    let f = fit_exponent(&records, key, &a.metric)?;
    println!("slope,intercept,stderr,r_squared,sizes");
    println!("{},{},{},{},{}", f.slope, f.intercept, f.stderr, f.r_squared, f.points.len());
    if let Some(ll) = f.loglog {
        println!("loglog_slope,loglog_coefficient");
        println!("{},{}", ll.slope, ll.loglog);
    }
    if let Some(expect) = a.expect {
        if (f.slope - expect).abs() > a.within {
            eprintln!("slope {} outside {expect} ± {}", f.slope, a.within);
            return Ok(EXIT_ASSERTION);
        }
    }
    Ok(EXIT_OK)
}

fn universality(a: UniversalityArgs) -> Result<i32> {
    let cfg = a
        .common
        .config()?
        .ok_or_else(|| Error::Config("universality needs --config".into()))?;
    let (Some(law), Some(scheme)) = (cfg.law, cfg.scheme) else {
        return Err(Error::Config("universality needs law and scheme sections".into()));
    };
    let constant = a.constant.unwrap_or(1.0);
    println!("n,N,trials,median_delta,c_hat,violations");
    let mut failed = false;
    for &(n, big_n) in &cfg.sweep.sizes {
        let grid: Vec<f64> = if a.t_grid.is_empty() {
            let t0 = (8.0 * big_n as f64).ln();
            [1.0, 2.0, 4.0, 8.0].iter().map(|d| t0 + d).collect()
        } else {
            a.t_grid.clone()
        };
        let key = StreamKey::root(cfg.sweep.root_seed).child(n as u64).child(big_n as u64);
        let r = coupling_experiment(&law, &scheme, n, big_n, cfg.sweep.trials, key, &grid, constant)?;
        println!("{n},{big_n},{},{},{},{}", cfg.sweep.trials, r.median_delta, r.c_hat, r.violations);
        failed |= r.violations > 0;
    }
    Ok(if failed && a.constant.is_some() { EXIT_ASSERTION } else { EXIT_OK })
}

fn polytope(a: PolytopeArgs) -> Result<i32> {
    let law = a.law.law()?.unwrap_or(TailLaw::symmetric_pareto(1.0)?);
    if a.big_n < a.n {
        return Err(Error::Config(format!("--rows {} must be at least --n {}", a.big_n, a.n)));
    }
    let mut unsound = 0;
    let mut gap = 0.0f64;
    for t in 0..a.trials {
        let x = sample_matrix(&law, a.big_n, a.n, StreamKey::root(a.seed).child(t as u64));
        let c = certificate(&x)?.radius;
        let scale = x.amax();
        let upper = if a.n == 2 {
            let rows: Vec<[f64; 2]> = x.row_iter().map(|r| [r[0], r[1]]).collect();
            exact_inradius_2d(&rows)?
        } else {
            grid_refine_inradius(&x, a.budget, 1e-3 * scale)?.upper
        };
        if c > upper + 1e-10 * scale {
            unsound += 1;
        }
        gap = gap.max(c / upper);
    }
    println!("n,N,trials,unsound,max_certificate_ratio");
    println!("{},{},{},{unsound},{gap}", a.n, a.big_n, a.trials);
    Ok(if unsound > 0 { EXIT_ASSERTION } else { EXIT_OK })
}

fn nets(a: NetsArgs) -> Result<i32> {
    let net = sparse_net(a.n, a.m, a.epsilon, a.budget)?;
    let r = covering_check(&net, a.probes, StreamKey::root(a.seed));
    println!("n,m,epsilon,net_size,probes,max_distance,uncovered");
    println!(
        "{},{},{},{},{},{},{}",
        a.n, a.m, a.epsilon, r.net_size, r.probes, r.max_distance, r.uncovered
    );
    Ok(if r.uncovered > 0 { EXIT_ASSERTION } else { EXIT_OK })
}

fn report(a: ReportArgs) -> Result<i32> {
    let records = load_records(&a.input)?;
    print!("{}", summary_table(&records)?);
    if let Some(path) = &a.plot {
        let mut w = open_out(path)?;
        let io = |source| Error::Io { written: 0, source };
        writeln!(w, "log_n\tlog_median_sigma_min\terr").map_err(io)?;
        for (size, med, count) in medians_by_size(&records, SizeKey::SmallN, "sigma_min")? {
            let logs: Vec<f64> = records
                .iter()
                .filter(|r| r.n == size)
                .map(|r| r.sigma_min.ln())
                .collect();
            // Large-sample standard error of a median, on the log scale.
            let err = if count > 1 {
                1.2533 * stats::variance(&logs).sqrt() / (count as f64).sqrt()
            } else {
                0.0
            };
            writeln!(w, "{}\t{}\t{err}", (size as f64).ln(), med.ln()).map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    Ok(EXIT_OK)
}
