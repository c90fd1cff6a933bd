//! `gps`: estimate latent group structure in panel data, run selective
//! tests on group coefficients, and drive Monte Carlo rejection studies.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gps_core::cli::{
    covariance_for_fit, default_covariance, fit_summary, HypothesisFile, RunManifest, StudyConfig,
};
use gps_core::error::{Error, Result};
use gps_core::estimators::{gfe_fit, pcr_fit, tsk_fit, unit_ols, FitInput, GroupFit, Method};
use gps_core::panel::{load_panel, CsvSchema, PanelDataset};
use gps_core::selective::selective_test;
use gps_core::simulation::{run_rejection_study, write_rejection_csv};
use gps_core::variance::CovMethod;

#[derive(Parser)]
#[command(name = "gps", version, about = "Group panel structure estimation and selective inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate group memberships and group-specific coefficients.
    Estimate(EstimateArgs),
    /// Run a trace-conditioned selective test of R alpha = r.
    Test(TestArgs),
    /// Run a Monte Carlo rejection-rate study from a config file.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Tsk,
    Pcr,
    Gfe,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Tsk => Method::Tsk,
            MethodArg::Pcr => Method::Pcr,
            MethodArg::Gfe => Method::Gfe,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceArg {
    Pesaran,
    Dk,
    Theory,
}

impl From<VarianceArg> for CovMethod {
    fn from(v: VarianceArg) -> CovMethod {
        match v {
            VarianceArg::Pesaran => CovMethod::Pesaran,
            VarianceArg::Dk => CovMethod::DriscollKraay,
            VarianceArg::Theory => CovMethod::Theoretical,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Long-format CSV with header unit,time,y,x1..xK.
    #[arg(long)]
    data: PathBuf,
    /// Column name holding the unit identifier.
    #[arg(long, default_value = "unit")]
    unit_col: String,
    /// Column name holding the time identifier.
    #[arg(long, default_value = "time")]
    time_col: String,
    /// Column name holding the outcome.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Explicit regressor columns (defaults to x1..xK from the header).
    #[arg(long, value_delimiter = ',')]
    x_cols: Option<Vec<String>>,
    /// Apply the one-way within transformation before fitting/testing.
    #[arg(long)]
    within: bool,
}

impl DataArgs {
    fn load(&self) -> Result<PanelDataset> {
        let schema = CsvSchema {
            unit: self.unit_col.clone(),
            time: self.time_col.clone(),
            y: self.y_col.clone(),
            x_columns: self.x_cols.clone(),
        };
        let d = load_panel(&self.data, &schema)?;
        if self.within {
            d.within_transform()
        } else {
            Ok(d)
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Estimator: tsk, pcr, or gfe.
    #[arg(long)]
    method: MethodArg,
    /// Number of groups G.
    #[arg(long)]
    groups: usize,
    /// Random restarts of the assignment loop.
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    /// RNG seed (falls back to GPS_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for the fit JSON.
    #[arg(long, default_value = "fit.json")]
    out: PathBuf,
    /// Worker threads for restarts (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fit JSON produced by `gps estimate`.
    #[arg(long)]
    fit: PathBuf,
    /// Hypothesis JSON: {"r_matrix": [[..]], "r_vec": [..]}.
    #[arg(long)]
    hypothesis: PathBuf,
    /// Covariance estimator (defaults to pesaran for TSK, dk for PCR/GFE).
    #[arg(long)]
    variance: Option<VarianceArg>,
    /// Driscoll-Kraay bandwidth (defaults to floor(4 (T/100)^{2/9}) + 1).
    #[arg(long)]
    bandwidth: Option<usize>,
    /// Known error variance for --variance theory.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Output path for the test JSON.
    #[arg(long, default_value = "test.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study config JSON (a scenario object or {"name", "scenarios": [..]}).
    #[arg(long)]
    config: PathBuf,
    /// Override replication count for every scenario.
    #[arg(long)]
    reps: Option<usize>,
    /// Override seed for every scenario (falls back to GPS_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (created if absent).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("GPS_SEED")
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
    })
    .unwrap_or(0)
}

fn init_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::InvalidInput("jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    init_jobs(args.jobs)?;
    if args.groups == 0 {
        return Err(Error::InvalidInput("groups must be >= 1".into()));
    }
    let d = args.data.load()?;
    let seed = resolve_seed(args.seed);
    let method: Method = args.method.into();
    let fit = match method {
        Method::Tsk => {
            if d.t() < d.k() {
                return Err(Error::InvalidInput(format!(
                    "TSK requires T >= K (T = {}, K = {})",
                    d.t(),
                    d.k()
                )));
            }
            let b = unit_ols(&d)?;
            tsk_fit(&b, args.groups, args.restarts, seed)?
        }
        Method::Pcr => pcr_fit(&d, args.groups, args.restarts, seed)?,
        Method::Gfe => gfe_fit(&d, args.groups, args.restarts, seed)?,
    };
    std::fs::write(&args.out, fit.to_json()?)?;
    print!("{}", fit_summary(&fit, d.unit_ids()));
    println!("fit written to {}", args.out.display());
    Ok(())
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let d = args.data.load()?;
    let fit = GroupFit::from_json(&std::fs::read_to_string(&args.fit)?)?;
    let h = HypothesisFile::parse(&std::fs::read_to_string(&args.hypothesis)?)?;
    let cov_method = args
        .variance
        .map(CovMethod::from)
        .unwrap_or_else(|| default_covariance(fit.method));
    let cov = covariance_for_fit(&d, &fit, cov_method, args.bandwidth, args.sigma2)?;
    let result = selective_test(&fit, FitInput::Panel(&d), &h, &cov)?;
    std::fs::write(&args.out, result.to_json()?)?;
    println!(
        "method: {}   statistic: {:.6}   df: {}",
        result.method, result.statistic, result.df
    );
    println!("naive p:     {:.6}", result.naive_p);
    println!("selective p: {:.6}", result.selective_p);
    let intervals: Vec<String> = result
        .truncation
        .intervals()
        .iter()
        .map(|&(lo, hi)| {
            if hi.is_finite() {
                format!("[{lo:.4}, {hi:.4}]")
            } else {
                format!("[{lo:.4}, inf)")
            }
        })
        .collect();
    println!("truncation set (phi scale): {}", intervals.join(" U "));
    println!("result written to {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    init_jobs(args.jobs)?;
    let config_bytes = std::fs::read(&args.config)?;
    let mut study = StudyConfig::parse(std::str::from_utf8(&config_bytes).map_err(|e| {
        Error::InvalidInput(format!("config is not UTF-8: {e}"))
    })?)?;
    for scenario in &mut study.scenarios {
        if let Some(reps) = args.reps {
            scenario.reps = reps;
        }
        if let Some(seed) = args.seed.or_else(|| {
            std::env::var("GPS_SEED").ok().and_then(|s| s.parse().ok())
        }) {
            scenario.seed = seed;
        }
        scenario.validate()?;
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let seed_echo = study.scenarios[0].seed;
    let mut manifest = RunManifest::start(
        std::env::args().collect::<Vec<_>>().join(" "),
        &config_bytes,
        seed_echo,
    );

    let mut all_rows = Vec::new();
    let mut any_invalid = false;
    for (idx, scenario) in study.scenarios.iter().enumerate() {
        log::info!(
            "scenario {}/{}: {} {} T={} reps={}",
            idx + 1,
            study.scenarios.len(),
            scenario.dgp,
            scenario.case,
            scenario.t,
            scenario.reps
        );
        let result = run_rejection_study(scenario)?;
        any_invalid |= result.invalid;
        all_rows.extend(result.rows);
    }
    let csv_path = args.out_dir.join("rejections.csv");
    let file = std::fs::File::create(&csv_path)?;
    write_rejection_csv(&all_rows, file)?;
    manifest.add_output(&csv_path);
    let manifest_path = args.out_dir.join("manifest.json");
    manifest.finish(&manifest_path)?;

    for row in &all_rows {
        println!(
            "T={:<4} {:<5} {:<9} {:<4} {:<16} rate={:.3} se={:.3} failures={}",
            row.t, row.dgp, row.case, row.hypothesis, row.procedure, row.rate, row.se, row.failures
        );
    }
    println!("table written to {}", csv_path.display());
    println!("manifest written to {}", manifest_path.display());
    if any_invalid {
        return Err(Error::InvalidInput(
            "study invalid: more than 5% of replications failed for some row".into(),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
