use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use callout_core::harness::{
    generate_benchmark, learn_scenario_duals, peaks, run_many, run_suite, sweep, validate_duals, write_rows_csv,
    write_summary_csv, BenchmarkOptions, Family, SimReport, SuiteResult, SUITES,
};
use callout_core::{DistKind, DualSolution, Error, LpMode, Objective, PolicyKind, PolicyParams, Scenario, SimOptions};
use clap::{Args, Parser, Subcommand};
use log::info;

/// Selective call-out simulator for ad exchanges.
#[derive(Parser, Debug)]
#[command(name = "callout", version, about)]
struct Cli {
    /// Worker threads for replications (default: available cores).
    #[arg(long, global = true, env = "CALLOUT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic benchmark scenario.
    Generate(GenerateArgs),
    /// Learn duals from exploration samples of a scenario.
    Learn(LearnArgs),
    /// Run one policy over independent replications.
    Simulate(SimulateArgs),
    /// Run a policy family over a parameter grid.
    Sweep(SweepArgs),
    /// Run the invariant suites.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, env = "CALLOUT_KIND", default_value = "gaussian")]
    kind: DistKind,
    #[arg(long, env = "CALLOUT_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "CALLOUT_OUT")]
    out: PathBuf,
    #[arg(long, env = "CALLOUT_OBJECTIVE", default_value = "sales")]
    objective: Objective,
    #[arg(long, env = "CALLOUT_NETWORKS", default_value_t = 32)]
    networks: usize,
    #[arg(long, env = "CALLOUT_VERTICALS", default_value_t = 10)]
    verticals: usize,
    #[arg(long, env = "CALLOUT_BINS", default_value_t = 100)]
    bins: usize,
    /// Minimum price range as `LOW,HIGH` fractions of the bid scale, or `none`.
    #[arg(long, env = "CALLOUT_MIN_PRICE", default_value = "0.2,1.0")]
    min_price: String,
    /// Slot discounts, comma separated, starting at 1.
    #[arg(long, env = "CALLOUT_SLOTS", default_value = "1.0")]
    slots: String,
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[arg(long, env = "CALLOUT_SCENARIO")]
    scenario: PathBuf,
    #[arg(long, env = "CALLOUT_SAMPLES", default_value_t = 500)]
    samples: usize,
    #[arg(long, env = "CALLOUT_SHRINK", default_value_t = 0.05)]
    shrink: f64,
    /// LP family; defaults to the one matching the scenario objective.
    #[arg(long, env = "CALLOUT_MODE")]
    mode: Option<LpMode>,
    #[arg(long, env = "CALLOUT_OUT")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, env = "CALLOUT_SCENARIO")]
    scenario: PathBuf,
    /// Fixed duals instead of learning per replication.
    #[arg(long, env = "CALLOUT_DUALS")]
    duals: Option<PathBuf>,
    #[arg(long, env = "CALLOUT_EXPLORE", default_value_t = 500)]
    explore: usize,
    #[arg(long, env = "CALLOUT_IMPRESSIONS", default_value_t = 2000)]
    impressions: usize,
    #[arg(long, env = "CALLOUT_REPS", default_value_t = 10)]
    reps: usize,
    #[arg(long, env = "CALLOUT_SHRINK", default_value_t = 0.05)]
    shrink: f64,
    /// Standard deviation of survival estimate errors.
    #[arg(long, env = "CALLOUT_NOISE", default_value_t = 0.0)]
    noise: f64,
    /// Overrides every network's bucket size.
    #[arg(long, env = "CALLOUT_BUCKET_SIZE")]
    bucket_size: Option<f64>,
    /// Drop impressions of the bucket start-up period from metrics.
    #[arg(long, env = "CALLOUT_SKIP_WARMUP")]
    skip_warmup: bool,
    /// Skip the exact-LP upper bound.
    #[arg(long, env = "CALLOUT_NO_OPT_UB")]
    no_opt_ub: bool,
    /// Per-replication CSV.
    #[arg(long, env = "CALLOUT_OUT")]
    out: PathBuf,
    /// Per-configuration summary CSV.
    #[arg(long, env = "CALLOUT_SUMMARY")]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, env = "CALLOUT_POLICY")]
    policy: PolicyKind,
    #[arg(long, env = "CALLOUT_K", default_value_t = 4)]
    k: usize,
    #[arg(long, env = "CALLOUT_THRESHOLD", default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, env = "CALLOUT_DELTA", default_value_t = 0.25)]
    delta: f64,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, env = "CALLOUT_FAMILY")]
    family: Family,
    /// `default` or comma-separated values.
    #[arg(long, env = "CALLOUT_GRID", default_value = "default")]
    grid: String,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Suite to run; repeatable. All suites when omitted.
    #[arg(long, env = "CALLOUT_SUITE", value_delimiter = ',')]
    suite: Vec<String>,
    /// Check a duals file.
    #[arg(long, env = "CALLOUT_DUALS")]
    duals: Option<PathBuf>,
}

fn config_error(field: &str, reason: impl Into<String>) -> anyhow::Error {
    Error::InvalidParameter {
        name: field.to_string(),
        reason: reason.into(),
    }
    .into()
}

fn parse_list(field: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| config_error(field, format!("`{s}`: {e}")))
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(Scenario::from_json(&text)?)
}

fn load_duals(path: &Path) -> Result<DualSolution> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        Error::InvalidScenario {
            field: format!("duals.{}", e.path()),
            reason: e.into_inner().to_string(),
        }
        .into()
    })
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let min_price = match a.min_price.as_str() {
        "none" => None,
        text => match parse_list("min_price", text)?.as_slice() {
            [low, high] => Some((*low, *high)),
            _ => return Err(config_error("min_price", "expected LOW,HIGH or none")),
        },
    };
    let opts = BenchmarkOptions {
        kind: a.kind,
        networks: a.networks,
        verticals: a.verticals,
        bins: a.bins,
        min_price,
        objective: a.objective,
        slots: parse_list("slots", &a.slots)?,
        ..Default::default()
    };
    let scenario = generate_benchmark(a.seed, &opts)?;
    let mut out = create(&a.out)?;
    writeln!(out, "{}", scenario.to_json()?)?;
    out.flush()?;
    println!(
        "wrote {} ({} networks, {} impression types)",
        a.out.display(),
        scenario.networks.len(),
        scenario.impression_types.len()
    );
    Ok(())
}

fn learn(a: &LearnArgs) -> Result<()> {
    if a.samples == 0 {
        return Err(config_error("samples", "must be positive"));
    }
    let model = load_scenario(&a.scenario)?.resolve()?;
    let mode = a.mode.unwrap_or(model.objective().lp_mode());
    let duals = learn_scenario_duals(&model, mode, a.samples, a.shrink)?;
    let mut out = create(&a.out)?;
    serde_json::to_writer_pretty(&mut out, &duals)?;
    writeln!(out)?;
    out.flush()?;
    let lambda: Vec<String> = duals.lambda.iter().map(|l| format!("{l:.6}")).collect();
    println!("mode {mode}, objective {:.6}", duals.objective);
    println!("lambda [{}]", lambda.join(", "));
    let check = validate_duals(&duals);
    println!(
        "validation {}: {}",
        if check.passed { "PASS" } else { "FAIL" },
        check.detail
    );
    if !check.passed {
        anyhow::bail!("learned duals violate {}", check.detail);
    }
    Ok(())
}

fn sim_options(r: &RunArgs) -> Result<SimOptions> {
    let duals = r.duals.as_deref().map(load_duals).transpose()?;
    Ok(SimOptions {
        t_explore: r.explore,
        m_exploit: r.impressions,
        replications: r.reps,
        shrink: r.shrink,
        noise_std: r.noise,
        skip_warmup: r.skip_warmup,
        bucket_size: r.bucket_size,
        compute_opt_ub: !r.no_opt_ub,
        duals,
    })
}

fn emit(r: &RunArgs, reports: &[SimReport]) -> Result<()> {
    let mut out = create(&r.out)?;
    write_rows_csv(reports, &mut out)?;
    out.flush()?;
    if let Some(path) = &r.summary {
        let mut out = create(path)?;
        write_summary_csv(reports, &mut out)?;
        out.flush()?;
    }
    for rep in reports {
        println!(
            "{:<16} {:<12} value {:.6} +- {:.6}",
            rep.policy, rep.param, rep.value.mean, rep.value.half_width
        );
    }
    if let Some(ub) = reports.first().and_then(|r| r.opt_ub) {
        println!("opt-ub {ub:.6}");
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let model = load_scenario(&a.run.scenario)?.resolve()?;
    let params = PolicyParams::new(a.policy)
        .with_k(a.k)
        .with_threshold(a.threshold)
        .with_delta(a.delta);
    let opts = sim_options(&a.run)?;
    info!("simulating {} on {}", params.label(), model.scenario.name);
    let reports = run_many(&model, &[params], &opts)?;
    emit(&a.run, &reports)
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let model = load_scenario(&a.run.scenario)?.resolve()?;
    let grid = match a.grid.as_str() {
        "default" => a.family.default_grid(model.networks()),
        text => parse_list("grid", text)?,
    };
    let opts = sim_options(&a.run)?;
    let reports = sweep(&model, a.family, &grid, &opts)?;
    emit(&a.run, &reports)?;
    for p in peaks(&reports) {
        println!("peak {:<16} {:<12} {:.6}", p.policy, p.param, p.value.mean);
    }
    Ok(())
}

fn print_suite(r: &SuiteResult) {
    println!(
        "[{}] {:<14} {} ({:.2}s)",
        if r.passed { "PASS" } else { "FAIL" },
        r.name,
        r.detail,
        r.elapsed.as_secs_f64()
    );
}

fn validate(a: &ValidateArgs) -> Result<bool> {
    if let Some(bad) = a.suite.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return Err(config_error(
            "suite",
            format!("`{bad}` is not one of {}", SUITES.join(", ")),
        ));
    }
    let names: Vec<&str> = match (a.suite.is_empty(), &a.duals) {
        (true, Some(_)) => Vec::new(),
        (true, None) => SUITES.to_vec(),
        (false, _) => a.suite.iter().map(String::as_str).collect(),
    };
    let mut ok = true;
    if let Some(path) = &a.duals {
        let r = validate_duals(&load_duals(path)?);
        print_suite(&r);
        ok &= r.passed;
    }
    for name in names {
        let r = run_suite(name).expect("suite names checked above");
        print_suite(&r);
        ok &= r.passed;
    }
    println!("{}", if ok { "all suites passed" } else { "validation failed" });
    Ok(ok)
}

fn is_config_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<Error>(),
        Some(
            Error::InvalidScenario { .. }
                | Error::InvalidParameter { .. }
                | Error::InvalidDistribution(_)
                | Error::InvalidSlots(_)
                | Error::UnknownPolicy(_)
                | Error::DualModeMismatch { .. }
                | Error::Json(_)
        )
    )
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Generate(a) => generate(a).map(|_| true),
        Command::Learn(a) => learn(a).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Sweep(a) => run_sweep(a).map(|_| true),
        Command::Validate(a) => validate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CALLOUT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
