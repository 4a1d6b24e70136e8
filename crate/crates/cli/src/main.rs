//! Command-line front end for the elastic-string correlation library.
//!
//! Subcommands: `fit` (calibrate a model variant to an empirical surface or a
//! tick history), `simulate` (integrate the lattice dynamics and estimate the
//! binned covariance), `epps` (measure and fit a tenor pair's correlation
//! build-up across bin widths), `curvature` (anti-diagonal curvature profile
//! of a surface), and `export` (evaluate a model surface at explicit
//! parameters).
//!
//! Every command is deterministic given its inputs, flags and `--seed`, and
//! writes a `manifest.json` recording the fully resolved configuration.
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 optimizer
//! non-convergence.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stiffstring::calib::{self, EppsFitOptions, EppsModelSpec, FitOptions};
use stiffstring::empirics::{self, BinAlignment, EppsCurve};
use stiffstring::sim::{self, CovEstimate, Integrator, OperatorSpec, SimConfig};
use stiffstring::{
    CorrelationSurface, Error, ErrorCategory, ModelParams, ModelVariant, Result, TenorGrid,
    MONTHS_PER_UNIT,
};

const TICK_HEADER: &str = "timestamp,tenor_months,price";

/// Open a user-supplied file, naming it in the error message.
fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::InvalidArgument {
        detail: format!("cannot open {}: {e}", path.display()),
    })
}

#[derive(Parser)]
#[command(
    name = "stiffstring",
    version,
    about = "Elastic-string forward-curve correlation toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model variant to an empirical correlation surface or a tick
    /// history, writing the report and the fitted/empirical/error surfaces.
    Fit(FitArgs),
    /// Integrate the lattice relaxation dynamics and estimate the binned
    /// equal-time covariance of the simulated path.
    Simulate(SimulateArgs),
    /// Measure one tenor pair's correlation across bin widths and fit the
    /// build-up curve for the memory time and idiosyncratic noise weight.
    Epps(EppsArgs),
    /// Profile the curvature of a correlation surface along anti-diagonals
    /// of constant tenor sum.
    Curvature(CurvatureArgs),
    /// Evaluate a model correlation surface at explicit parameters.
    Export(ExportArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Serialize)]
struct Common {
    /// Directory that receives every output file (created if missing).
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,

    /// Seed for every random draw; the fixed default makes runs reproducible.
    #[arg(long, default_value_t = calib::DEFAULT_SEED)]
    seed: u64,

    /// Cap on worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,

    /// Format for surface outputs; `json` writes both `.csv` and `.json`.
    #[arg(long, value_enum, default_value_t = SurfaceFormat::Csv)]
    format: SurfaceFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SurfaceFormat {
    Csv,
    Json,
}

/// Model-parameter overrides; which ones are required or forbidden depends
/// on the chosen variant and is validated before any computation.
#[derive(Args, Serialize)]
struct ParamFlags {
    /// Perceived-time slope ψ (months).
    #[arg(long)]
    psi: Option<f64>,

    /// Blend weight ψ̄ of the mixed perceived-time map, in (0, 1].
    #[arg(long)]
    psi_bar: Option<f64>,

    /// Tension coupling μ.
    #[arg(long)]
    mu: Option<f64>,

    /// Stiffness coupling ν.
    #[arg(long)]
    nu: Option<f64>,

    /// Lattice coupling κ of the one-parameter variant.
    #[arg(long)]
    kappa: Option<f64>,
}

impl ParamFlags {
    fn params_for(&self, variant: ModelVariant) -> ModelParams {
        ModelParams {
            variant,
            psi: self.psi,
            psi_bar: self.psi_bar,
            mu: self.mu,
            nu: self.nu,
            kappa: self.kappa,
        }
    }
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,

    /// Correlation-surface CSV (tenor-month header row) or tick CSV with
    /// header `timestamp,tenor_months,price`; detected from the first line.
    #[arg(long)]
    input: PathBuf,

    /// Model variant: bb04, bbl3, bbl2, bbd3, bbd2 or bbdl.
    #[arg(long)]
    variant: String,

    /// Operator size for the one-parameter lattice variant.
    #[arg(long, default_value_t = 500)]
    n_mat: usize,

    /// Drop diagonal entries from the error sums.
    #[arg(long)]
    exclude_diagonal: bool,

    /// Simplex restarts.
    #[arg(long, default_value_t = 10)]
    starts: usize,

    /// Objective-evaluation budget per restart.
    #[arg(long, default_value_t = 5000)]
    max_evals: usize,

    /// Bin width in days when the input is a tick file.
    #[arg(long, default_value_t = 1)]
    bin_days: i64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum IntegratorArg {
    Euler,
    Exact,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,

    /// Relaxation-matrix coupling κ (tension only; add --kappa2 for
    /// stiffness). Mutually exclusive with --mu/--nu.
    #[arg(long, conflicts_with_all = ["mu", "nu"])]
    kappa: Option<f64>,

    /// Stiffness coupling κ₂ of the relaxation matrix.
    #[arg(long, requires = "kappa")]
    kappa2: Option<f64>,

    /// Tension coupling μ of the translation-invariant stencil.
    #[arg(long, requires = "nu")]
    mu: Option<f64>,

    /// Stiffness coupling ν of the translation-invariant stencil.
    #[arg(long, requires = "mu")]
    nu: Option<f64>,

    /// Lattice sites, counting the spot site.
    #[arg(long, default_value_t = 10)]
    tenors: usize,

    /// Memory time τ of the relaxation dynamics (arbitrary time units).
    #[arg(long, default_value_t = 1.0)]
    tau: f64,

    /// Noise strength D.
    #[arg(long, default_value_t = 0.5)]
    big_d: f64,

    /// Idiosyncratic observation-noise weight ε.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,

    /// Integration step (default τ/40; must stay at or below τ/10).
    #[arg(long)]
    dt_step: Option<f64>,

    /// Recorded steps after burn-in.
    #[arg(long, default_value_t = 20_000)]
    n_steps: usize,

    /// Discarded equilibration steps (default: 10τ divided by the step).
    #[arg(long)]
    burn_in: Option<usize>,

    #[arg(long, value_enum, default_value_t = IntegratorArg::Exact)]
    integrator: IntegratorArg,

    /// Observation bin width for the sample covariance (default 2τ).
    #[arg(long)]
    delta_t: Option<f64>,
}

#[derive(Args, Serialize)]
struct EppsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,

    /// Tick CSV with header `timestamp,tenor_months,price`.
    #[arg(long)]
    input: PathBuf,

    /// Tenor pair in months, e.g. 30,33; each a positive multiple of 3.
    #[arg(long)]
    pair: String,

    /// Comma-separated bin widths in seconds, increasing, at least five.
    #[arg(long, default_value = "4,16,64,256,1024,3600")]
    scales: String,

    /// Lattice coupling of the spectral evaluator (ignored with --psi).
    #[arg(long, default_value_t = 0.92)]
    kappa: f64,

    /// Operator size for the spectral evaluator.
    #[arg(long, default_value_t = 150)]
    n_mat: usize,

    /// Perceived-time slope; switches to the infinite-lattice evaluator.
    #[arg(long, requires = "mu")]
    psi: Option<f64>,

    /// Tension coupling of the infinite-lattice evaluator.
    #[arg(long, requires = "psi")]
    mu: Option<f64>,

    /// Stiffness coupling of the infinite-lattice evaluator (optional).
    #[arg(long, requires = "psi")]
    nu: Option<f64>,

    /// Simplex restarts for the (τ, ε) fit.
    #[arg(long, default_value_t = 8)]
    starts: usize,

    /// Objective-evaluation budget per restart.
    #[arg(long, default_value_t = 5000)]
    max_evals: usize,
}

#[derive(Args, Serialize)]
struct CurvatureArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,

    /// Correlation-surface CSV to profile; omit to profile a model surface.
    #[arg(long)]
    input: Option<PathBuf>,

    /// Model variant evaluated when no --input is given.
    #[arg(long)]
    variant: Option<String>,

    #[command(flatten)]
    #[serde(flatten)]
    params: ParamFlags,

    /// Operator size for the one-parameter lattice variant.
    #[arg(long, default_value_t = 500)]
    n_mat: usize,

    /// Largest tenor of the model grid, in months (multiple of 3).
    #[arg(long, default_value_t = 117)]
    max_months: u32,
}

#[derive(Args, Serialize)]
struct ExportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,

    /// Model variant: bb04, bbl3, bbl2, bbd3, bbd2 or bbdl.
    #[arg(long)]
    variant: String,

    #[command(flatten)]
    #[serde(flatten)]
    params: ParamFlags,

    /// Operator size for the one-parameter lattice variant.
    #[arg(long, default_value_t = 500)]
    n_mat: usize,

    /// Largest tenor of the model grid, in months (multiple of 3).
    #[arg(long, default_value_t = 117)]
    max_months: u32,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Input => 2,
                ErrorCategory::Numerical => 3,
                ErrorCategory::Convergence => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Epps(a) => cmd_epps(a),
        Command::Curvature(a) => cmd_curvature(a),
        Command::Export(a) => cmd_export(a),
    }
}

impl Common {
    /// Create the output directory and apply the thread cap.
    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir)?;
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Error::InvalidArgument {
                    detail: "--threads must be at least 1".into(),
                });
            }
            // If a global pool somehow exists already the build call fails
            // harmlessly and the existing pool is kept.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        Ok(())
    }
}

/// Collects output files under one directory and finishes with a manifest
/// naming them all next to the fully resolved configuration.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let file = File::create(self.dir.join(name))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        Ok(())
    }

    fn write_surface(
        &mut self,
        stem: &str,
        surface: &CorrelationSurface,
        format: SurfaceFormat,
    ) -> Result<()> {
        let mut w = self.create(&format!("{stem}.csv"))?;
        surface.write_csv(&mut w)?;
        drop(w);
        if format == SurfaceFormat::Json {
            let mut w = self.create(&format!("{stem}.json"))?;
            surface.write_json(&mut w)?;
        }
        Ok(())
    }

    fn finish(mut self, command: &str, config: &impl Serialize) -> Result<()> {
        let manifest = serde_json::json!({
            "command": command,
            "library_version": stiffstring::VERSION,
            "config": serde_json::to_value(config)?,
            "outputs": self.written.clone(),
        });
        self.write_json("manifest.json", &manifest)
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn cmd_fit(args: FitArgs) -> Result<()> {
    args.common.prepare()?;
    let variant: ModelVariant = args.variant.parse()?;
    let empirical = load_surface_or_ticks(&args.input, args.bin_days)?;
    let opts = FitOptions {
        seed: args.common.seed,
        n_starts: args.starts,
        max_evals: args.max_evals,
        n_mat: args.n_mat,
        exclude_diagonal: args.exclude_diagonal,
    };
    let report = calib::fit(variant, &empirical, &opts)?;
    let model = calib::model_surface(&report.params, empirical.grid(), args.n_mat)?;

    let mut out = Outputs::new(&args.common.output_dir);
    out.write_json("fit_report.json", &report)?;
    out.write_surface("empirical_surface", &empirical, args.common.format)?;
    out.write_surface("model_surface", &model, args.common.format)?;
    let mut w = out.create("error_surface.csv")?;
    write_error_surface(&mut w, &model, &empirical)?;
    drop(w);
    out.finish("fit", &args)
}

/// Read either a correlation surface or a tick history (binned into daily
/// increments and correlated pairwise), deciding by the first line.
fn load_surface_or_ticks(path: &Path, bin_days: i64) -> Result<CorrelationSurface> {
    let mut first = String::new();
    BufReader::new(open_input(path)?).read_line(&mut first)?;
    if first.trim_end() == TICK_HEADER {
        if bin_days <= 0 {
            return Err(Error::NonPositiveParameter {
                name: "bin_days",
                value: bin_days as f64,
            });
        }
        let series = empirics::ingest_csv(path)?;
        let grid = TenorGrid::new(series.tenors())?;
        let panel = empirics::increments(
            &series,
            chrono::Duration::days(bin_days),
            BinAlignment::Epoch,
        )?;
        empirics::pearson_surface(&panel, &grid, empirics::DEFAULT_MIN_PAIRED)
    } else {
        CorrelationSurface::read_csv(BufReader::new(open_input(path)?))
    }
}

/// Matrix of model-minus-empirical differences in the same layout as the
/// surface CSVs: tenor-month header row, then one row per tenor.
fn write_error_surface(
    w: &mut impl Write,
    model: &CorrelationSurface,
    empirical: &CorrelationSurface,
) -> Result<()> {
    let months: Vec<String> = model.grid().months().iter().map(u32::to_string).collect();
    writeln!(w, "{}", months.join(","))?;
    let diff = model.values() - empirical.values();
    for row in diff.rows() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    args.common.prepare()?;
    let operator = match (args.kappa, args.mu, args.nu) {
        (Some(kappa), None, None) => OperatorSpec::MMatrix {
            kappa,
            kappa2: args.kappa2,
        },
        (None, Some(mu), Some(nu)) => OperatorSpec::LdStencil { mu, nu },
        _ => {
            return Err(Error::InvalidArgument {
                detail: "give either --kappa (plus optional --kappa2) or both --mu and --nu"
                    .into(),
            })
        }
    };
    let dt_step = args.dt_step.unwrap_or(args.tau / 40.0);
    let burn_in = args.burn_in.unwrap_or_else(|| {
        if dt_step > 0.0 && args.tau > 0.0 {
            (10.0 * args.tau / dt_step).ceil() as usize
        } else {
            0
        }
    });
    let delta_t = args.delta_t.unwrap_or(2.0 * args.tau);
    let cfg = SimConfig {
        operator,
        n_tenors: args.tenors,
        tau: args.tau,
        big_d: args.big_d,
        dt_step,
        n_steps: args.n_steps,
        burn_in,
        seed: args.common.seed,
        sigma: Vec::new(),
        epsilon: args.epsilon,
        integrator: match args.integrator {
            IntegratorArg::Euler => Integrator::EulerMaruyama,
            IntegratorArg::Exact => Integrator::ExactOu,
        },
    };
    let path = sim::simulate(&cfg)?;
    let est = sim::sample_equal_time_cov(&path, delta_t)?;

    let mut out = Outputs::new(&args.common.output_dir);
    let mut w = out.create("path.csv")?;
    path.write_csv(&mut w)?;
    drop(w);
    let mut w = out.create("sample_covariance.csv")?;
    writeln!(w, "site_i,site_j,covariance,standard_error")?;
    for i in 0..est.cov.nrows() {
        for j in 0..est.cov.ncols() {
            writeln!(w, "{i},{j},{},{}", est.cov[[i, j]], est.se[[i, j]])?;
        }
    }
    drop(w);
    if let Some(surface) = correlation_away_from_spot(&est)? {
        out.write_surface("sample_correlation", &surface, args.common.format)?;
    }
    out.finish("simulate", &args)
}

/// Sample correlation over sites 1.. (dropping the spot site so the result
/// lives on a valid tenor grid and can feed straight into `fit`).
fn correlation_away_from_spot(est: &CovEstimate) -> Result<Option<CorrelationSurface>> {
    let n = est.cov.nrows();
    if n < 2 || (1..n).any(|i| est.cov[[i, i]] <= 0.0) {
        return Ok(None);
    }
    let grid = TenorGrid::new((1..n as u32).collect())?;
    let surface = CorrelationSurface::from_fn(grid, |i, j| {
        if i == j {
            return 1.0;
        }
        let (a, b) = (i + 1, j + 1);
        let denom = (est.cov[[a, a]] * est.cov[[b, b]]).sqrt();
        (est.cov[[a, b]] / denom).clamp(-1.0, 1.0)
    })?;
    Ok(Some(surface))
}

// ---------------------------------------------------------------------------
// epps
// ---------------------------------------------------------------------------

fn cmd_epps(args: EppsArgs) -> Result<()> {
    args.common.prepare()?;
    let pair = parse_pair_months(&args.pair)?;
    let scales = parse_scales(&args.scales)?;
    let series = empirics::ingest_csv(&args.input)?;
    let empirical = empirics::epps_curve(&series, pair, &scales)?;

    let model = match (args.psi, args.mu) {
        (Some(psi), Some(mu)) => EppsModelSpec::Symbol {
            psi,
            mu,
            nu: args.nu,
        },
        _ => EppsModelSpec::Lattice {
            kappa: args.kappa,
            n_mat: args.n_mat,
        },
    };
    let opts = EppsFitOptions {
        seed: args.common.seed,
        n_starts: args.starts,
        max_evals: args.max_evals,
    };
    let fit = calib::fit_epps(&empirical, &model, &opts)?;

    let evaluator = calib::EppsEvaluator::new(&model, pair)?;
    let tau_seconds = fit.tau_minutes * 60.0;
    let fitted: Vec<f64> = scales
        .iter()
        .map(|&s| evaluator.correlation(s, tau_seconds, fit.epsilon))
        .collect::<Result<_>>()?;
    let fitted_curve = EppsCurve::new(pair, scales.clone(), fitted)?;

    let mut out = Outputs::new(&args.common.output_dir);
    let mut w = out.create("epps_empirical.csv")?;
    empirical.write_csv(&mut w)?;
    drop(w);
    let mut w = out.create("epps_fitted.csv")?;
    fitted_curve.write_csv(&mut w)?;
    drop(w);
    out.write_json("epps_fit.json", &fit)?;
    out.finish("epps", &args)
}

fn parse_pair_months(text: &str) -> Result<(u32, u32)> {
    let invalid = |detail: String| Error::InvalidArgument { detail };
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| invalid(format!("--pair must be `a,b` in months, got `{text}`")))?;
    let parse = |s: &str| -> Result<u32> {
        s.trim()
            .parse()
            .map_err(|e| invalid(format!("--pair entry `{}`: {e}", s.trim())))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    for m in [a, b] {
        if m == 0 || m % MONTHS_PER_UNIT != 0 {
            return Err(invalid(format!(
                "tenor {m} months is not a positive multiple of {MONTHS_PER_UNIT}"
            )));
        }
    }
    Ok((a / MONTHS_PER_UNIT, b / MONTHS_PER_UNIT))
}

fn parse_scales(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            part.trim().parse().map_err(|e| Error::InvalidArgument {
                detail: format!("--scales entry `{}`: {e}", part.trim()),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// curvature
// ---------------------------------------------------------------------------

fn cmd_curvature(args: CurvatureArgs) -> Result<()> {
    args.common.prepare()?;
    let surface = match (&args.input, &args.variant) {
        (Some(path), _) => CorrelationSurface::read_csv(BufReader::new(open_input(path)?))?,
        (None, Some(variant)) => {
            let variant: ModelVariant = variant.parse()?;
            let grid = grid_up_to_months(args.max_months)?;
            calib::model_surface(&args.params.params_for(variant), &grid, args.n_mat)?
        }
        (None, None) => {
            return Err(Error::InvalidArgument {
                detail: "give --input (a surface CSV) or --variant with model parameters".into(),
            })
        }
    };
    let profile = empirics::antidiagonal_curvature(&surface)?;
    warn_omitted_antidiagonals(&surface, &profile);

    let mut out = Outputs::new(&args.common.output_dir);
    let mut w = out.create("curvature.csv")?;
    writeln!(w, "theta_months,curvature")?;
    for &(theta_units, c) in &profile {
        writeln!(w, "{},{c}", theta_units * MONTHS_PER_UNIT)?;
    }
    drop(w);
    out.finish("curvature", &args)
}

/// Anti-diagonals with fewer than the ten points a parabola fit needs are
/// skipped by the profiler; name them on stderr so short grids don't surprise.
fn warn_omitted_antidiagonals(surface: &CorrelationSurface, profile: &[(u32, f64)]) {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let units = surface.grid().units();
    for &a in units {
        for &b in units {
            *counts.entry(a + b).or_default() += 1;
        }
    }
    let kept: Vec<u32> = profile.iter().map(|&(t, _)| t).collect();
    let omitted: Vec<String> = counts
        .keys()
        .filter(|t| !kept.contains(t))
        .map(|t| (t * MONTHS_PER_UNIT).to_string())
        .collect();
    if !omitted.is_empty() {
        eprintln!(
            "warning: {} anti-diagonal(s) with fewer than 10 points omitted (tenor-sum months: {})",
            omitted.len(),
            omitted.join(", ")
        );
    }
}

fn grid_up_to_months(max_months: u32) -> Result<TenorGrid> {
    if max_months == 0 || max_months % MONTHS_PER_UNIT != 0 {
        return Err(Error::InvalidArgument {
            detail: format!(
                "--max-months {max_months} is not a positive multiple of {MONTHS_PER_UNIT}"
            ),
        });
    }
    TenorGrid::new((1..=max_months / MONTHS_PER_UNIT).collect())
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

fn cmd_export(args: ExportArgs) -> Result<()> {
    args.common.prepare()?;
    let variant: ModelVariant = args.variant.parse()?;
    let grid = grid_up_to_months(args.max_months)?;
    let surface = calib::model_surface(&args.params.params_for(variant), &grid, args.n_mat)?;

    let mut out = Outputs::new(&args.common.output_dir);
    out.write_surface("model_surface", &surface, args.common.format)?;
    out.finish("export", &args)
}
