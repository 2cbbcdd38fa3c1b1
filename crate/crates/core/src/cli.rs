//! Command-line pipeline: moment tables, basis dumps, fits, Monte Carlo baselines,
//! closed-form statistics and output densities.
//!
//! Every subcommand writes its outputs as CSV into one directory together with
//! `config.json` (the fully resolved configuration) and `summary.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::bench::{self, BlackBoxModel, SampleTable};
use crate::error::{Error, Result};
use crate::ftt::MomentTable;
use crate::gmm::GaussianMixture;
use crate::indexing::{GradedLexOrder, MultiIndex};
use crate::linalg::select_rows;
use crate::oracle;
use crate::rng::{stream, substream, Stream};
use crate::solver::{self, CandidatePool, ModelSource, SolverConfig, SparseFit, TableSource};
use crate::stats::{self, SurrogateModel};

pub const VERSION: &str = concat!("gmpce ", env!("CARGO_PKG_VERSION"));

/// Relative tolerance of quadrature verification.
pub const QUAD_TOL: f64 = 1e-8;
/// Standard errors allowed by Monte Carlo verification.
pub const MC_SIGMAS: f64 = 5.0;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const NUMERICAL: i32 = 2;
    pub const IO: i32 = 3;
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::IllConditionedMoments { .. } | Error::Numerical(_) | Error::PoolExhausted { .. } => {
            exit::NUMERICAL
        }
        Error::Io(_) => exit::IO,
        _ => exit::VALIDATION,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gmpce",
    version,
    about = "Polynomial chaos for Gaussian-mixture parameters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// All mixture moments of degree ≤ 2p, optionally cross-checked against oracles
    Moments {
        #[command(flatten)]
        common: CommonArgs,
        /// Compare against quadrature (d ≤ 4) or Monte Carlo
        #[arg(long)]
        verify: bool,
        /// Moments checked by Monte Carlo verification
        #[arg(long)]
        verify_count: Option<usize>,
        /// Monte Carlo samples for verification
        #[arg(long)]
        verify_samples: Option<usize>,
    },
    /// Multi-index order and Cholesky factor of the moment matrix
    Basis {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Adaptive sparse fit of a model or sample table
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also fit from random samples at the same budgets
        #[arg(long)]
        compare_random: bool,
        /// Surrogate draws for the output density
        #[arg(long)]
        density_samples: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Monte Carlo baseline of a builtin model
    Mc {
        #[command(flatten)]
        common: CommonArgs,
        /// Sample sizes, comma separated
        #[arg(long, value_delimiter = ',')]
        samples: Option<Vec<usize>>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Mean and variance from a coefficients file
    Stats {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        coefficients: Option<PathBuf>,
    },
    /// Output density of a fitted surrogate
    Density {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        coefficients: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Resolved configuration from an earlier run (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Builtin model: filter19, osc57, tiny2, tiny3, poly-planted-<d>
    #[arg(long)]
    pub model: Option<String>,
    /// Mixture file (JSON); defaults to the model's bundled mixture
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    /// Sample table for offline fitting
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Expansion order p
    #[arg(short = 'p', long)]
    pub order: Option<usize>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Initial pivoted-QR samples (default 2·s_max)
    #[arg(long)]
    pub initial: Option<usize>,
    #[arg(long)]
    pub s_max: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub tol_stop: Option<f64>,
    #[arg(long)]
    pub outer_max: Option<usize>,
    /// Cap on model evaluations
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Fresh samples for the testing error
    #[arg(long)]
    pub held_out: Option<usize>,
}

/// Fully resolved run configuration, written to every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    pub command: String,
    pub model: Option<String>,
    pub mixture: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub order: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub pool_size: usize,
    pub held_out: usize,
    pub solver: SolverConfig,
    pub compare_random: bool,
    pub verify: bool,
    pub verify_count: usize,
    pub verify_samples: usize,
    pub samples: Vec<usize>,
    pub bins: usize,
    pub density_samples: usize,
    pub coefficients: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: VERSION.into(),
            command: String::new(),
            model: None,
            mixture: None,
            table: None,
            order: None,
            seed: 1,
            out: PathBuf::from("out"),
            pool_size: 1000,
            held_out: 9000,
            solver: SolverConfig::default(),
            compare_random: false,
            verify: false,
            verify_count: 50,
            verify_samples: 1_000_000,
            samples: vec![100, 10_000, 1_000_000],
            bins: 100,
            density_samples: 100_000,
            coefficients: None,
        }
    }
}

impl RunConfig {
    /// Configuration of a subcommand: the `--config` file (if any) overridden by flags.
    pub fn from_command(command: &Command) -> Result<Self> {
        let (name, common) = match command {
            Command::Moments { common, .. } => ("moments", common),
            Command::Basis { common } => ("basis", common),
            Command::Fit { common, .. } => ("fit", common),
            Command::Mc { common, .. } => ("mc", common),
            Command::Stats { common, .. } => ("stats", common),
            Command::Density { common, .. } => ("density", common),
        };
        let mut cfg = match &common.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        cfg.version = VERSION.into();
        cfg.command = name.into();
        set(&mut cfg.model, common.model.clone());
        set(&mut cfg.mixture, common.mixture.clone());
        set(&mut cfg.table, common.table.clone());
        set(&mut cfg.order, common.order);
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(o) = &common.out {
            cfg.out = o.clone();
        }
        match command {
            Command::Moments {
                verify,
                verify_count,
                verify_samples,
                ..
            } => {
                cfg.verify |= verify;
                override_with(&mut cfg.verify_count, *verify_count);
                override_with(&mut cfg.verify_samples, *verify_samples);
            }
            Command::Fit {
                solver,
                compare_random,
                density_samples,
                bins,
                ..
            } => {
                let s = &mut cfg.solver;
                set(&mut s.initial_samples, solver.initial);
                override_with(&mut s.s_max, solver.s_max);
                override_with(&mut s.t_max, solver.t_max);
                override_with(&mut s.tol_stop, solver.tol_stop);
                override_with(&mut s.outer_max, solver.outer_max);
                set(&mut s.max_samples, solver.max_samples);
                override_with(&mut cfg.pool_size, solver.pool_size);
                override_with(&mut cfg.held_out, solver.held_out);
                cfg.compare_random |= compare_random;
                override_with(&mut cfg.density_samples, *density_samples);
                override_with(&mut cfg.bins, *bins);
            }
            Command::Mc { samples, bins, .. } => {
                override_with(&mut cfg.samples, samples.clone());
                override_with(&mut cfg.bins, *bins);
            }
            Command::Stats { coefficients, .. } => set(&mut cfg.coefficients, coefficients.clone()),
            Command::Density {
                coefficients,
                samples,
                bins,
                ..
            } => {
                set(&mut cfg.coefficients, coefficients.clone());
                override_with(&mut cfg.density_samples, *samples);
                override_with(&mut cfg.bins, *bins);
            }
            Command::Basis { .. } => {}
        }
        Ok(cfg)
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn override_with<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::VALIDATION
            } else {
                exit::OK
            };
            let _ = e.print();
            return code;
        }
    };
    let result = RunConfig::from_command(&cli.command).and_then(|cfg| run(&cfg));
    match result {
        Ok(summary) => {
            print!("{summary}");
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a resolved configuration and returns the summary text.
pub fn run(cfg: &RunConfig) -> Result<String> {
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    let summary = match cfg.command.as_str() {
        "moments" => cmd_moments(cfg),
        "basis" => cmd_basis(cfg),
        "fit" => cmd_fit(cfg),
        "mc" => cmd_mc(cfg),
        "stats" => cmd_stats(cfg),
        "density" => cmd_density(cfg),
        other => Err(Error::InvalidArgument(format!("unknown command '{other}'"))),
    }?;
    fs::write(cfg.out.join("summary.txt"), &summary)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn resolve_model(cfg: &RunConfig) -> Result<Option<BlackBoxModel>> {
    cfg.model.as_deref().map(bench::model_by_name).transpose()
}

/// The mixture file if given, else the model's bundled mixture.
fn resolve_mixture(cfg: &RunConfig, model: Option<&BlackBoxModel>) -> Result<GaussianMixture> {
    match (&cfg.mixture, model) {
        (Some(path), _) => GaussianMixture::load(path),
        (None, Some(m)) => Ok(m.mixture().clone()),
        (None, None) => Err(Error::InvalidArgument(
            "either --mixture or --model is required".into(),
        )),
    }
}

fn resolve_order(cfg: &RunConfig, model: Option<&BlackBoxModel>) -> Result<usize> {
    cfg.order
        .or(model.map(|m| m.order()))
        .ok_or_else(|| Error::InvalidArgument("expansion order -p is required".into()))
}

fn exponents(alpha: &MultiIndex) -> String {
    format!("\"{alpha}\"")
}

fn cmd_moments(cfg: &RunConfig) -> Result<String> {
    let model = resolve_model(cfg)?;
    let gmm = resolve_mixture(cfg, model.as_ref())?;
    let p = resolve_order(cfg, model.as_ref())?;
    gmm.save(&cfg.out.join("mixture.json"))?;
    let table = MomentTable::compute(&gmm, p);
    let mut csv = String::from("index,exponents,value\n");
    for (j, (alpha, v)) in table
        .order()
        .indices()
        .iter()
        .zip(table.values())
        .enumerate()
    {
        writeln!(csv, "{j},{},{v}", exponents(alpha)).unwrap();
    }
    fs::write(cfg.out.join("moments.csv"), csv)?;
    let mut summary = format!(
        "{VERSION} moments\nd = {}, p = {p}, moments of degree <= {}: {}\n",
        gmm.dim(),
        2 * p,
        table.values().len()
    );
    if cfg.verify {
        let report = verify_moments(&table, &gmm, cfg)?;
        fs::write(cfg.out.join("verify.csv"), &report.csv)?;
        summary.push_str(&report.summary);
        if !report.passed {
            fs::write(cfg.out.join("summary.txt"), &summary)?;
            return Err(Error::Numerical(format!(
                "moment verification failed: {}",
                report.summary.trim()
            )));
        }
    }
    Ok(summary)
}

struct VerifyReport {
    csv: String,
    summary: String,
    passed: bool,
}

fn verify_moments(
    table: &MomentTable,
    gmm: &GaussianMixture,
    cfg: &RunConfig,
) -> Result<VerifyReport> {
    let order = table.order();
    if gmm.dim() <= oracle::MAX_QUAD_DIM {
        let nodes = order
            .indices()
            .iter()
            .map(|a| a.degree())
            .max()
            .unwrap_or(0)
            / 2
            + 2;
        let mut csv = String::from("index,exponents,ftt,quadrature,relative_error\n");
        let mut worst: f64 = 0.0;
        for (j, (alpha, &v)) in order.indices().iter().zip(table.values()).enumerate() {
            let q = oracle::quad_mixture_moment(alpha, gmm, nodes)?;
            let scale = oracle::quad_abs_scale(alpha, gmm, nodes)?.max(q.abs());
            let rel = if scale > 0.0 {
                (v - q).abs() / scale
            } else {
                (v - q).abs()
            };
            worst = worst.max(rel);
            writeln!(csv, "{j},{},{v},{q},{rel}", exponents(alpha)).unwrap();
        }
        let passed = worst < QUAD_TOL;
        Ok(VerifyReport {
            csv,
            summary: format!(
                "verification: tensor Gauss-Hermite quadrature, {} moments, max relative discrepancy {worst:e} (tolerance {QUAD_TOL:e}): {}\n",
                order.len(),
                if passed { "pass" } else { "FAIL" }
            ),
            passed,
        })
    } else {
        let mut rng = stream(cfg.seed, Stream::Oracle);
        let count = cfg.verify_count.min(order.len());
        let mut picks = sample_indices(&mut rng, order.len(), count).into_vec();
        picks.sort_unstable();
        let alphas: Vec<MultiIndex> = picks.iter().map(|&j| order.get(j).clone()).collect();
        let est = oracle::mc_moments(&alphas, gmm, cfg.verify_samples, &mut rng);
        let mut csv = String::from("index,exponents,ftt,monte_carlo,std_error,sigmas\n");
        let mut worst: f64 = 0.0;
        for ((&j, alpha), e) in picks.iter().zip(&alphas).zip(&est) {
            let v = table.values()[j];
            let z = if e.std_error > 0.0 {
                (v - e.estimate).abs() / e.std_error
            } else if v == e.estimate {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
            writeln!(
                csv,
                "{j},{},{v},{},{},{z}",
                exponents(alpha),
                e.estimate,
                e.std_error
            )
            .unwrap();
        }
        let passed = worst <= MC_SIGMAS;
        Ok(VerifyReport {
            csv,
            summary: format!(
                "verification: Monte Carlo, {count} moments, {} samples, max deviation {worst:.3} standard errors (tolerance {MC_SIGMAS}): {}\n",
                cfg.verify_samples,
                if passed { "pass" } else { "FAIL" }
            ),
            passed,
        })
    }
}

fn cmd_basis(cfg: &RunConfig) -> Result<String> {
    let model = resolve_model(cfg)?;
    let gmm = resolve_mixture(cfg, model.as_ref())?;
    let p = resolve_order(cfg, model.as_ref())?;
    gmm.save(&cfg.out.join("mixture.json"))?;
    let basis = BasisSet::build(&gmm, p)?;
    write_index(&cfg.out.join("index.csv"), basis.order())?;
    let l = basis.chol();
    let mut csv = String::from("row,col,value\n");
    for i in 0..l.nrows() {
        for j in 0..l.ncols() {
            if l[(i, j)] != 0.0 {
                writeln!(csv, "{i},{j},{}", l[(i, j)]).unwrap();
            }
        }
    }
    fs::write(cfg.out.join("cholesky.csv"), csv)?;
    let mut map = String::from("coordinate,shift,scale\n");
    for k in 0..basis.dim() {
        writeln!(map, "{k},{},{}", basis.map().shift[k], basis.map().scale[k]).unwrap();
    }
    fs::write(cfg.out.join("standardization.csv"), map)?;
    let diag = basis.diagnostics();
    let mut s = format!(
        "{VERSION} basis\nd = {}, p = {p}, N = {}\njitter = {:e}, diag(L) in [{:e}, {:e}]\n",
        basis.dim(),
        basis.len(),
        diag.jitter,
        diag.min_diag,
        diag.max_diag
    );
    writeln!(s, "max |L^-1 M L^-T - I| = {:e}", basis.gram_residual()).unwrap();
    if let Some(w) = &diag.warning {
        writeln!(s, "warning: {w}").unwrap();
    }
    Ok(s)
}

fn write_index(path: &Path, order: &GradedLexOrder) -> Result<()> {
    let mut csv = String::from("index,degree,exponents\n");
    for (j, a) in order.indices().iter().enumerate() {
        writeln!(csv, "{j},{},{}", a.degree(), exponents(a)).unwrap();
    }
    fs::write(path, csv)?;
    Ok(())
}

/// Pool, outputs and held-out set for a fit.
struct FitData {
    pool: CandidatePool,
    /// Known outputs (offline tables only).
    outputs: Option<Vec<f64>>,
    test: Option<(nalgebra::DMatrix<f64>, Vec<f64>)>,
}

fn fit_data(
    cfg: &RunConfig,
    basis: &BasisSet,
    gmm: &GaussianMixture,
    model: Option<&BlackBoxModel>,
) -> Result<FitData> {
    if let Some(path) = &cfg.table {
        let table = SampleTable::load(path)?;
        if table.dim() != gmm.dim() {
            return Err(Error::DimensionMismatch {
                expected: gmm.dim(),
                got: table.dim(),
            });
        }
        // rows beyond the pool size are held out
        let m0 = cfg.pool_size.min(table.len());
        let rows: Vec<usize> = (0..m0).collect();
        let pool = CandidatePool::new(basis, select_rows(&table.points, &rows))?;
        let test = (table.len() > m0).then(|| {
            let rest: Vec<usize> = (m0..table.len()).collect();
            (
                basis.evaluate_many(&select_rows(&table.points, &rest)),
                table.outputs[m0..].to_vec(),
            )
        });
        return Ok(FitData {
            pool,
            outputs: Some(table.outputs[..m0].to_vec()),
            test,
        });
    }
    let model =
        model.ok_or_else(|| Error::InvalidArgument("fit needs --model or --table".into()))?;
    let pool = CandidatePool::sample(
        basis,
        gmm,
        cfg.pool_size,
        &mut stream(cfg.seed, Stream::Pool),
    )?;
    let test = (cfg.held_out > 0).then(|| {
        let pts = gmm.sample(&mut stream(cfg.seed, Stream::HeldOut), cfg.held_out);
        let y = model.evaluate_rows(&pts);
        (basis.evaluate_many(&pts), y)
    });
    Ok(FitData {
        pool,
        outputs: None,
        test,
    })
}

fn testing_error(test: &Option<(nalgebra::DMatrix<f64>, Vec<f64>)>, coeffs: &[f64]) -> Option<f64> {
    test.as_ref()
        .and_then(|(phi, y)| stats::relative_error(phi, coeffs, y).ok())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_fit(cfg: &RunConfig) -> Result<String> {
    let model = resolve_model(cfg)?;
    let gmm = resolve_mixture(cfg, model.as_ref())?;
    let p = resolve_order(cfg, model.as_ref())?;
    gmm.save(&cfg.out.join("mixture.json"))?;
    let basis = BasisSet::build(&gmm, p)?;
    let data = fit_data(cfg, &basis, &gmm, model.as_ref())?;
    let n = basis.len();

    let mut evaluations = 0;
    let fit = match (&data.outputs, &model) {
        (Some(y), _) => solver::adaptive_fit(&data.pool, &mut TableSource::new(y), &cfg.solver)?,
        (None, Some(m)) => {
            let mut src = ModelSource::new(|x: &[f64]| m.evaluate(x));
            let fit = solver::adaptive_fit(&data.pool, &mut src, &cfg.solver)?;
            evaluations = src.calls();
            fit
        }
        (None, None) => unreachable!("fit_data requires a model or table"),
    };

    // coefficients
    let mut csv = String::from("index,exponents,value\n");
    for (j, c) in fit.coeffs.iter().enumerate() {
        writeln!(csv, "{j},{},{c}", exponents(basis.order().get(j))).unwrap();
    }
    fs::write(cfg.out.join("coefficients.csv"), csv)?;

    // sample log and convergence
    let mut log =
        String::from("outer,inner,candidate,score,samples,training_error,testing_error,change\n");
    let mut conv = String::from("samples,training_error,testing_error\n");
    for h in &fit.history {
        let test = testing_error(&data.test, &h.coeffs(n));
        writeln!(
            log,
            "{},{},{},{},{},{},{},{}",
            h.outer,
            h.inner,
            h.candidate.map(|c| c.to_string()).unwrap_or_default(),
            fmt_opt(h.score),
            h.samples,
            h.training_error,
            fmt_opt(test),
            fmt_opt(h.change)
        )
        .unwrap();
        writeln!(conv, "{},{},{}", h.samples, h.training_error, fmt_opt(test)).unwrap();
    }
    fs::write(cfg.out.join("samples.csv"), log)?;
    fs::write(cfg.out.join("convergence.csv"), conv)?;
    let mut selected = String::from("order,candidate\n");
    for (k, i) in fit.selected.iter().enumerate() {
        writeln!(selected, "{k},{i}").unwrap();
    }
    fs::write(cfg.out.join("selected.csv"), selected)?;

    let random_rows = if cfg.compare_random {
        Some(compare_random(cfg, &data, &fit, model.as_ref())?)
    } else {
        None
    };

    // density of the surrogate
    let surrogate = SurrogateModel::new(basis.clone(), fit.coeffs.clone())?;
    let dens = stats::density(
        &surrogate,
        &gmm,
        cfg.density_samples,
        &mut stream(cfg.seed, Stream::Surrogate),
        cfg.seed,
        cfg.bins,
        false,
    );
    write_density(&cfg.out, &dens)?;

    let max_c = fit.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let significant = fit.coeffs.iter().filter(|c| c.abs() > 1e-3 * max_c).count();
    let mut s = format!("{VERSION} fit\n");
    if let Some(m) = &model {
        writeln!(s, "model = {}", m.name()).unwrap();
    }
    writeln!(
        s,
        "d = {}, p = {p}, N = {n}, pool = {}",
        gmm.dim(),
        data.pool.len()
    )
    .unwrap();
    writeln!(
        s,
        "samples = {}{}, termination = {:?}, refactorizations = {}",
        fit.samples(),
        if evaluations > 0 {
            format!(" ({evaluations} model evaluations)")
        } else {
            String::new()
        },
        fit.termination,
        fit.refactorizations
    )
    .unwrap();
    if fit.rank_limited {
        writeln!(
            s,
            "warning: pivoted QR ran out of rank before the requested initial samples"
        )
        .unwrap();
    }
    if !fit.dependent_columns.is_empty() {
        writeln!(
            s,
            "warning: dependent columns dropped: {:?}",
            fit.dependent_columns
        )
        .unwrap();
    }
    writeln!(
        s,
        "support = {}, coefficients above 1e-3 max|c| = {significant}",
        fit.support.len()
    )
    .unwrap();
    writeln!(s, "training error = {:e}", fit.training_error(&data.pool)).unwrap();
    if let Some(e) = testing_error(&data.test, &fit.coeffs) {
        writeln!(
            s,
            "testing error = {e:e} ({} held-out samples)",
            data.test.as_ref().unwrap().1.len()
        )
        .unwrap();
    }
    writeln!(s, "mean = {}", stats::mean(&fit.coeffs)).unwrap();
    writeln!(s, "variance = {}", stats::variance(&fit.coeffs)).unwrap();
    if let Some(rows) = random_rows {
        writeln!(
            s,
            "random baseline (samples, adaptive testing error, random testing error):"
        )
        .unwrap();
        for (b, a, r) in rows {
            writeln!(s, "  {b}, {}, {}", fmt_opt(a), fmt_opt(r)).unwrap();
        }
    }
    Ok(s)
}

type RandomRow = (usize, Option<f64>, Option<f64>);

/// Random-selection fits at the sample counts where the adaptive fit ran a sparse solve.
fn compare_random(
    cfg: &RunConfig,
    data: &FitData,
    fit: &SparseFit,
    model: Option<&BlackBoxModel>,
) -> Result<Vec<RandomRow>> {
    let n = data.pool.phi().ncols();
    let mut rows = Vec::new();
    let mut csv =
        String::from("samples,adaptive_testing_error,random_testing_error,random_training_error\n");
    let mut budgets: Vec<(usize, Vec<f64>)> = Vec::new();
    for h in fit.history.iter().filter(|h| h.inner == 0) {
        match budgets.last_mut() {
            Some(last) if last.0 == h.samples => last.1 = h.coeffs(n),
            _ => budgets.push((h.samples, h.coeffs(n))),
        }
    }
    for (k, (budget, coeffs)) in budgets.iter().enumerate() {
        let mut rng = substream(cfg.seed, Stream::RandomBaseline, k as u64);
        let rf = match (&data.outputs, model) {
            (Some(y), _) => solver::random_fit(
                &data.pool,
                &mut TableSource::new(y),
                *budget,
                &cfg.solver,
                &mut rng,
            )?,
            (None, Some(m)) => {
                let mut src = ModelSource::new(|x: &[f64]| m.evaluate(x));
                solver::random_fit(&data.pool, &mut src, *budget, &cfg.solver, &mut rng)?
            }
            (None, None) => unreachable!(),
        };
        let a = testing_error(&data.test, coeffs);
        let r = testing_error(&data.test, &rf.coeffs);
        writeln!(
            csv,
            "{budget},{},{},{}",
            fmt_opt(a),
            fmt_opt(r),
            rf.training_error(&data.pool)
        )
        .unwrap();
        rows.push((*budget, a, r));
    }
    fs::write(cfg.out.join("random.csv"), csv)?;
    Ok(rows)
}

fn write_density(out: &Path, dens: &stats::DensityEstimate) -> Result<()> {
    let mut csv = String::from("x,density\n");
    if let Some(kde) = &dens.kde {
        for (x, f) in kde.grid.iter().zip(&kde.density) {
            writeln!(csv, "{x},{f}").unwrap();
        }
    }
    fs::write(out.join("density.csv"), csv)?;
    write_histogram(&out.join("histogram.csv"), &dens.histogram)
}

fn write_histogram(path: &Path, h: &stats::Histogram) -> Result<()> {
    let mut csv = String::from("center,count,density\n");
    for (k, (c, f)) in h.counts.iter().zip(h.density()).enumerate() {
        writeln!(csv, "{},{c},{f}", h.center(k)).unwrap();
    }
    fs::write(path, csv)?;
    Ok(())
}

fn cmd_mc(cfg: &RunConfig) -> Result<String> {
    let model =
        resolve_model(cfg)?.ok_or_else(|| Error::InvalidArgument("mc needs --model".into()))?;
    let gmm = resolve_mixture(cfg, Some(&model))?;
    gmm.save(&cfg.out.join("mixture.json"))?;
    if cfg.samples.is_empty() || cfg.samples.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument(
            "mc sample sizes must be at least 2".into(),
        ));
    }
    let runs: Vec<bench::McBaseline> = cfg
        .samples
        .iter()
        .enumerate()
        .map(|(k, &n)| bench::mc_baseline(&model, &gmm, n, cfg.seed.wrapping_add(k as u64)))
        .collect();
    let reference = runs.iter().max_by_key(|r| r.samples).expect("nonempty");
    let mut csv =
        String::from("samples,seed,mean,std_error,variance,variance_std_error,matching_digits\n");
    for r in &runs {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.samples,
            r.seed,
            r.mean,
            r.std_error,
            r.variance,
            r.variance_std_error,
            stats::matching_digits(r.mean, reference.mean)
        )
        .unwrap();
    }
    fs::write(cfg.out.join("mc.csv"), csv)?;
    write_histogram(&cfg.out.join("histogram.csv"), &reference.histogram)?;
    let mut s = format!("{VERSION} mc\nmodel = {}\n", model.name());
    writeln!(s, "{}", table_report(&runs, None)).unwrap();
    Ok(s)
}

/// Table-style comparison of means, underlining the digits that agree with the
/// largest Monte Carlo run.
pub fn table_report(runs: &[bench::McBaseline], surrogate: Option<(usize, f64)>) -> String {
    let reference = runs
        .iter()
        .max_by_key(|r| r.samples)
        .map(|r| r.mean)
        .unwrap_or(f64::NAN);
    let mut header = String::from("method     ");
    let mut count = String::from("# samples  ");
    let mut means = String::from("mean       ");
    if let Some((n, m)) = surrogate {
        write!(header, "| {:<12}", "surrogate").unwrap();
        write!(count, "| {:<12}", n).unwrap();
        write!(
            means,
            "| {}",
            pad(
                &stats::underline_digits(m, 4, stats::matching_digits(m, reference)),
                12
            )
        )
        .unwrap();
    }
    for r in runs {
        write!(header, "| {:<12}", "Monte Carlo").unwrap();
        write!(count, "| {:<12}", r.samples).unwrap();
        let digits = if r.mean == reference {
            0
        } else {
            stats::matching_digits(r.mean, reference)
        };
        write!(
            means,
            "| {}",
            pad(&stats::underline_digits(r.mean, 4, digits), 12)
        )
        .unwrap();
    }
    format!("{header}\n{count}\n{means}\n(underlined: significant digits agreeing with the largest Monte Carlo run)")
}

fn pad(s: &str, width: usize) -> String {
    let visible = s.chars().filter(|&c| c != '\u{332}').count();
    format!("{s}{}", " ".repeat(width.saturating_sub(visible)))
}

/// Reads a coefficients CSV written by `fit`: `(exponents, value)` rows in index order.
pub fn read_coefficients(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let ln = k + 1;
        if k == 0 {
            if line != "index,exponents,value" {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("expected header 'index,exponents,value', found '{line}'"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parse_err = |m: &str| Error::Parse {
            line: ln,
            message: m.to_string(),
        };
        let (index, rest) = line
            .split_once(',')
            .ok_or_else(|| parse_err("missing fields"))?;
        let (tuple, value) = rest
            .rsplit_once(',')
            .ok_or_else(|| parse_err("missing value"))?;
        let index: usize = index.parse().map_err(|_| parse_err("invalid index"))?;
        if index != rows.len() {
            return Err(parse_err("indices must be consecutive from 0"));
        }
        let value: f64 = value.parse().map_err(|_| parse_err("invalid value"))?;
        rows.push((tuple.trim_matches('"').to_string(), value));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no coefficients".into(),
        });
    }
    Ok(rows)
}

fn coeffs_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.coefficients
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--coefficients is required".into()))
}

fn cmd_stats(cfg: &RunConfig) -> Result<String> {
    let rows = read_coefficients(coeffs_path(cfg)?)?;
    let c: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let mean = stats::mean(&c);
    let variance = stats::variance(&c);
    let nonzero = c.iter().filter(|v| **v != 0.0).count();
    fs::write(
        cfg.out.join("stats.csv"),
        format!(
            "mean,variance,std_dev,coefficients,nonzero\n{mean},{variance},{},{},{nonzero}\n",
            variance.sqrt(),
            c.len()
        ),
    )?;
    Ok(format!(
        "{VERSION} stats\ncoefficients = {} ({nonzero} nonzero)\nmean = {mean}\nvariance = {variance}\n",
        c.len()
    ))
}

fn cmd_density(cfg: &RunConfig) -> Result<String> {
    let model = resolve_model(cfg)?;
    let gmm = resolve_mixture(cfg, model.as_ref())?;
    let p = resolve_order(cfg, model.as_ref())?;
    if cfg.density_samples < 10_000 {
        return Err(Error::InvalidArgument(
            "density needs at least 10^4 samples".into(),
        ));
    }
    let rows = read_coefficients(coeffs_path(cfg)?)?;
    let basis = BasisSet::build(&gmm, p)?;
    if rows.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            got: rows.len(),
        });
    }
    for (j, (tuple, _)) in rows.iter().enumerate() {
        if *tuple != basis.order().get(j).to_string() {
            return Err(Error::Parse {
                line: j + 2,
                message: format!(
                    "exponents {tuple} do not match basis function {}",
                    basis.order().get(j)
                ),
            });
        }
    }
    let c: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let surrogate = SurrogateModel::new(basis, c)?;
    let dens = stats::density(
        &surrogate,
        &gmm,
        cfg.density_samples,
        &mut stream(cfg.seed, Stream::Surrogate),
        cfg.seed,
        cfg.bins,
        false,
    );
    write_density(&cfg.out, &dens)?;
    let modes = dens
        .kde
        .as_ref()
        .map(|k| {
            stats::find_modes(&k.density, 0.05)
                .iter()
                .map(|&i| k.grid[i])
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    Ok(format!(
        "{VERSION} density\nsamples = {}, seed = {}, bins = {}\nbandwidth = {}\nmodes at {:?}\n",
        dens.samples,
        dens.seed,
        cfg.bins,
        dens.kde.as_ref().map(|k| k.bandwidth).unwrap_or(0.0),
        modes
    ))
}
