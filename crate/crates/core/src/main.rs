use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ab_horizon::bench::{run_benchmark, BenchConfig, MethodId};
use ab_horizon::data::{compute_spectrum, compute_suffstats, ArrivalCurve, PilotSummary, SuffStats, TriggerData};
use ab_horizon::fit::{fit, fit_regression, two_thirds_anchor, FitConfig, FitMethod};
use ab_horizon::io;
use ab_horizon::model::{forecast, forecast_new_users, ForecastOptions, HyperParams};
use ab_horizon::simulate::{sample_model, sample_zipf, SimConfig};
use ab_horizon::{Error, RhoConvention};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_UNCONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "ab-horizon", version, about = "Forecast new users and activity in online experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw synthetic trigger data
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Fit hyperparameters on the pilot days
    Fit(FitArgs),
    /// Forecast the follow-up window from fitted hyperparameters
    Predict(PredictArgs),
    /// Benchmark methods on a set of datasets
    Evaluate(EvaluateArgs),
    /// Frequency spectrum of the pilot days
    Spectrum(SpectrumArgs),
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Sample from the model with the urn scheme
    Model(ModelArgs),
    /// Sample from the Zipf–Poisson generator
    Zipf(ZipfArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    c: f64,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    days: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ZipfArgs {
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    n_users: u64,
    #[arg(long)]
    days: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    Long,
    Aggregate,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Mle,
    Regression,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Text,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    NegbinPmf,
    AsWritten,
}

impl From<ConventionArg> for RhoConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::NegbinPmf => RhoConvention::NegBinPmf,
            ConventionArg::AsWritten => RhoConvention::AsWritten,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "long")]
    format: InputFormat,
    #[arg(long, value_enum, default_value = "mle")]
    method: MethodArg,
    #[arg(long)]
    pilot_days: u32,
    /// JSON file with fitting options
    #[arg(long)]
    config: Option<PathBuf>,
    /// Regression anchor day: a number or `two-thirds`
    #[arg(long)]
    regression_d0: Option<String>,
    /// Overrides the seed of the config file
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "long")]
    format: InputFormat,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    pilot_days: u32,
    #[arg(long)]
    horizon: u32,
    #[arg(long, default_value_t = 10)]
    freq_max: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    n_mc: usize,
    #[arg(long, value_enum, default_value = "negbin-pmf")]
    convention: ConventionArg,
    #[arg(long, value_enum, default_value = "json")]
    report: ReportFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Glob matching long-format CSV files
    #[arg(long)]
    inputs: String,
    #[arg(long)]
    pilot_days: u32,
    #[arg(long)]
    horizon: u32,
    /// Comma-separated methods: nbp-mle, nbp-regression, jk1..jk4, gt, bb, bg
    #[arg(long, default_value = "nbp-mle,nbp-regression,jk1,jk2,jk3,jk4,gt,bb,bg")]
    methods: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with fitting options for the model methods
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record wall-clock time per cell (makes output non-reproducible)
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    pilot_days: u32,
    #[arg(long)]
    out: PathBuf,
}

/// An error with its exit code and context naming the flag involved.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }
}

trait Context<T> {
    fn ctx(self, what: &str) -> Result<T, Failure>;
}

impl<T> Context<T> for Result<T, Error> {
    fn ctx(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            },
            msg: format!("{what}: {e}"),
        })
    }
}

fn flag_path(flag: &str, path: &Path) -> String {
    format!("{flag} {}", path.display())
}

fn output(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> ab_horizon::Result<()>) -> Result<(), Failure> {
    let what = flag_path("--out", path);
    let file = File::create(path).map_err(Error::from).ctx(&what)?;
    let mut w = BufWriter::new(file);
    write(&mut w).ctx(&what)?;
    w.flush().map_err(Error::from).ctx(&what)
}

fn load_long(path: &Path) -> Result<TriggerData, Failure> {
    io::parse_long_csv(path).ctx(&flag_path("--input", path))
}

fn load_config(path: Option<&Path>) -> Result<FitConfig, Failure> {
    match path {
        None => Ok(FitConfig::default()),
        Some(p) => {
            let what = flag_path("--config", p);
            let text = std::fs::read_to_string(p).map_err(Error::from).ctx(&what)?;
            serde_json::from_str(&text).map_err(Error::from).ctx(&what)
        }
    }
}

fn pilot_stats(data: &TriggerData, pilot_days: u32) -> Result<SuffStats, Failure> {
    let pilot = data.restrict(pilot_days).ctx("--pilot-days")?;
    compute_suffstats(&pilot, pilot_days).ctx("--pilot-days")
}

fn pilot_arrivals(path: &Path, pilot_days: u32) -> Result<ArrivalCurve, Failure> {
    let curve = io::parse_aggregate_csv(path).ctx(&flag_path("--input", path))?;
    if pilot_days == 0 {
        return Err(Failure::usage("--pilot-days: must be at least 1"));
    }
    curve.truncate(pilot_days).ctx("--pilot-days")
}

fn run_simulate(cmd: SimulateCmd) -> Result<u8, Failure> {
    let (data, out) = match cmd {
        SimulateCmd::Model(a) => {
            let params = HyperParams::new(a.beta, a.sigma, a.c, a.r).ctx("--beta/--sigma/--c/--r")?;
            (sample_model(&SimConfig::model(params, a.days, a.seed)).ctx("simulate model")?, a.out)
        }
        SimulateCmd::Zipf(a) => (
            sample_zipf(&SimConfig::zipf(a.tau, a.n_users, a.days, a.seed)).ctx("--tau/--n-users")?,
            a.out,
        ),
    };
    output(&out, |w| io::write_long_csv(&data, w))?;
    Ok(0)
}

fn run_fit(a: FitArgs) -> Result<u8, Failure> {
    let mut config = load_config(a.config.as_deref())?;
    config.method = match a.method {
        MethodArg::Mle => FitMethod::Mle,
        MethodArg::Regression => FitMethod::Regression,
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(anchor) = &a.regression_d0 {
        config.regression_d0 = match anchor.as_str() {
            "two-thirds" => two_thirds_anchor(a.pilot_days),
            n => n
                .parse()
                .map_err(|_| Failure::usage(format!("--regression-d0: `{n}` is neither a day nor `two-thirds`")))?,
        };
    }
    let outcome = match a.format {
        InputFormat::Long => {
            let data = load_long(&a.input)?;
            let stats = pilot_stats(&data, a.pilot_days)?;
            fit(&stats, &config).ctx("fit")?
        }
        InputFormat::Aggregate => {
            if config.method == FitMethod::Mle {
                return Err(Failure::usage(
                    "--method mle needs per-user counts; use --method regression with --format aggregate",
                ));
            }
            let curve = pilot_arrivals(&a.input, a.pilot_days)?;
            fit_regression(&curve, &config).ctx("fit")?
        }
    };
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let file = io::ParamsFile::from_outcome(&outcome, a.pilot_days);
    output(&a.out, |w| io::write_params_json(&file, w))?;
    if outcome.converged {
        Ok(0)
    } else {
        eprintln!("warning: optimizer did not converge; best point written to {}", a.out.display());
        Ok(EXIT_UNCONVERGED)
    }
}

fn run_predict(a: PredictArgs) -> Result<u8, Failure> {
    let params = io::load_params_json(&a.params).ctx(&flag_path("--params", &a.params))?;
    let opts = ForecastOptions {
        freq_max: a.freq_max,
        level: a.level,
        n_mc: a.n_mc,
        seed: a.seed,
        j_max: 50,
        convention: a.convention.into(),
    };
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Failure::usage("--level: must lie strictly between 0 and 1"));
    }
    if a.n_mc == 0 {
        return Err(Failure::usage("--n-mc: must be at least 1"));
    }
    let report = match a.format {
        InputFormat::Long => {
            let data = load_long(&a.input)?;
            let stats = pilot_stats(&data, a.pilot_days)?;
            forecast(&params, &stats, a.horizon, &opts).ctx("predict")?
        }
        InputFormat::Aggregate => {
            let curve = pilot_arrivals(&a.input, a.pilot_days)?;
            log::info!("aggregate input: {} users over {} days", curve.n_users(), curve.pilot_days());
            forecast_new_users(&params, &curve, a.horizon, &opts).ctx("predict")?
        }
    };
    let file = io::ForecastFile::new(&report, params, a.seed);
    output(&a.out, |w| match a.report {
        ReportFormat::Json => io::write_forecast_json(&file, w),
        ReportFormat::Text => io::write_forecast_text(&file, w),
    })?;
    Ok(0)
}

fn run_evaluate(a: EvaluateArgs) -> Result<u8, Failure> {
    let methods = a
        .methods
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<MethodId>())
        .collect::<Result<Vec<_>, _>>()
        .ctx("--methods")?;
    let mut paths: Vec<PathBuf> = glob::glob(&a.inputs)
        .map_err(|e| Failure::usage(format!("--inputs: {e}")))?
        .collect::<Result<_, _>>()
        .map_err(|e| Failure {
            code: EXIT_DATA,
            msg: format!("--inputs: {e}"),
        })?;
    paths.sort();
    if paths.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            msg: format!("--inputs: no files match `{}`", a.inputs),
        });
    }
    let datasets = paths.iter().map(|p| load_long(p)).collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let mut config = BenchConfig::new(a.pilot_days, a.horizon, methods, a.seed);
    config.fit = load_config(a.config.as_deref())?;
    config.timings = a.timings;
    let reports = run_benchmark(&datasets, &config);
    for r in reports.iter().filter(|r| r.error.is_some()) {
        log::warn!("{} / {}: {}", names[r.dataset], r.method, r.error.as_deref().unwrap_or(""));
    }
    output(&a.out, |w| io::write_results_csv(&reports, &names, a.timings, w))?;
    Ok(0)
}

fn run_spectrum(a: SpectrumArgs) -> Result<u8, Failure> {
    let data = load_long(&a.input)?;
    let spectrum = compute_spectrum(&data, a.pilot_days).ctx("--pilot-days")?;
    output(&a.out, |w| io::write_spectrum_csv(&spectrum, w))?;
    Ok(0)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("AB_HORIZON_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("AB_HORIZON_THREADS: `{raw}` is not a number")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("AB_HORIZON_THREADS: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Simulate(cmd) => run_simulate(cmd),
        Command::Fit(a) => run_fit(a),
        Command::Predict(a) => run_predict(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Spectrum(a) => run_spectrum(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
