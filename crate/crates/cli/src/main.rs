use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use afpo::analytic::{sensitivity_sweep, solve_zeta, Cara2Params, SweepParam};
use afpo::catsim::build_correlation;
use afpo::io::{fmt_f64, load_matrix, load_premiums, load_regions, matrix_table, Metadata, Table};
use afpo::mechanism::MechanismKind;
use afpo::pipeline::{
    align_columns, align_premiums, alpha_table, compare_table, event_transfers_for, execute, export, output_dir,
    rule_grid, scenario_transfers, solve_samples, trace_table, transfer_table, RunConfig, SolveConfig, VERSION,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

/// Actuarially fair Pareto-optimal sharing of residual catastrophe losses.
#[derive(Debug, Parser)]
#[command(name = "afpo", version, arg_required_else_help = true)]
struct Cli {
    /// Number of worker threads (all cores by default).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate correlated storm losses and write losses.csv.
    Simulate(RunArgs),
    /// Fit AFPO weights to a sample file of residual claims.
    Solve(SolveArgs),
    /// Closed-form two-region CARA solution.
    Analytic(AnalyticArgs),
    /// Sweep the two-region closed form over a parameter ratio.
    Sensitivity(SensitivityArgs),
    /// Expected outlay and disutility per mechanism, scenario class and region.
    Compare(RunArgs),
    /// Per-region transfers for one event.
    Transfers(TransferArgs),
    /// Full pipeline: simulate, settle, fit, compare and export with a manifest.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, env = "AFPO_OUTPUT_DIR", value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// CSV of residual claims, one row per scenario and one column per region id.
    #[arg(long, value_name = "CSV")]
    samples: PathBuf,
    /// Region CSV (`id,name,wealth,cx,cy`).
    #[arg(long, value_name = "CSV")]
    regions: PathBuf,
    /// JSON with optional `solver` and `disutility` blocks.
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    /// `region_id,premium` CSV; tax capacity becomes wealth minus premium.
    #[arg(long, value_name = "CSV")]
    premiums: Option<PathBuf>,
    /// Points of the exported rule grid.
    #[arg(long, default_value_t = 512, value_name = "N")]
    grid_points: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct AnalyticArgs {
    #[arg(long)]
    w1: f64,
    #[arg(long)]
    w2: f64,
    #[arg(long)]
    gamma1: f64,
    #[arg(long)]
    gamma2: f64,
    /// Mean loss of region 2 given a loss.
    #[arg(long)]
    mu2: f64,
    /// Probability of no loss.
    #[arg(long)]
    p0: f64,
    /// Mean loss of region 1; must equal `(1-p0)(w1+w2)/2 - mu2` when given.
    #[arg(long)]
    mu1: Option<f64>,
}

#[derive(Debug, Args)]
struct SensitivityArgs {
    /// Ratio to sweep: `mu` (mu2/mu1) or `gamma` (gamma2/gamma1).
    #[arg(long, value_parser = ["mu", "gamma"])]
    vary: String,
    #[arg(long)]
    min: f64,
    #[arg(long)]
    max: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 4.5)]
    w1: f64,
    #[arg(long, default_value_t = 10.0)]
    w2: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma1: f64,
    /// Ignored when sweeping `gamma`.
    #[arg(long, default_value_t = 2.0)]
    gamma2: f64,
    /// Ignored when sweeping `mu`.
    #[arg(long, default_value_t = 4.0)]
    mu2: f64,
    #[arg(long, default_value_t = 0.2)]
    p0: f64,
    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "CSV")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("event_source").required(true).args(["scenario", "event"]))]
struct TransferArgs {
    /// JSON run configuration whose fitted rules are used.
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    /// Index of a simulated scenario.
    #[arg(long, value_name = "ID")]
    scenario: Option<usize>,
    /// One-row loss CSV with a column per region id.
    #[arg(long, value_name = "CSV")]
    event: Option<PathBuf>,
    /// `hybrid` or `pure_risk_sharing`.
    #[arg(long, default_value = "hybrid")]
    mechanism: MechanismKind,
    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "CSV")]
    output: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

fn load_config(path: &Path, out: &OutArg) -> Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
    let dir = match &out.out {
        Some(dir) => dir.clone(),
        None => output_dir(&cfg, Path::new("afpo-out")),
    };
    Ok((cfg, dir))
}

fn emit(table: &Table, meta: &Metadata, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => table.write(path, meta)?,
        None => {
            let stdout = std::io::stdout();
            table.write_to(stdout.lock(), meta)?;
        }
    }
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<()> {
    let (cfg, dir) = load_config(&args.config, &args.out)?;
    cfg.validate()?;
    let regions = load_regions(&cfg.regions_path)?;
    let corr = build_correlation(&regions, cfg.correlation_normalizer)?;
    let losses = afpo::catsim::sample_losses(&regions, &cfg.storm, &corr, cfg.n_sims, cfg.seed)?;
    std::fs::create_dir_all(&dir)?;
    let ids: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
    let meta = Metadata::new()
        .with("afpo", VERSION)
        .with("seed", cfg.seed)
        .with("n_sims", cfg.n_sims)
        .with("repair_delta", fmt_f64(corr.repair_delta))
        .with("repair_delta_relative", fmt_f64(corr.repair_delta_relative));
    let path = dir.join("losses.csv");
    matrix_table(&ids, &losses).write(&path, &meta)?;
    println!("wrote {} ({} scenarios, {} regions)", path.display(), losses.n_scenarios(), ids.len());
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<()> {
    if args.grid_points < 2 {
        bail!("--grid-points must be at least 2");
    }
    let cfg = SolveConfig::load(&args.config).with_context(|| format!("reading config {}", args.config.display()))?;
    let regions = load_regions(&args.regions)?;
    let (columns, samples) = load_matrix(&args.samples)?;
    let residuals = align_columns(&columns, &samples, &regions)?;
    let premiums = match &args.premiums {
        Some(path) => Some(align_premiums(&load_premiums(path)?, &regions)?),
        None => None,
    };
    let sol = solve_samples(&residuals, &regions, premiums.as_deref(), &cfg)?;
    let dir = args.out.out.clone().unwrap_or_else(|| PathBuf::from("afpo-out"));
    std::fs::create_dir_all(&dir)?;
    let ids: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
    let meta = Metadata::new()
        .with("afpo", VERSION)
        .with("stop", format!("{:?}", sol.stop).to_lowercase())
        .with("relative_gap", fmt_f64(sol.relative_gap()));
    alpha_table(&sol.rule, &ids).write(&dir.join("alpha.csv"), &meta)?;
    rule_grid(&sol.rule, &ids, args.grid_points)?.write(&dir.join("rule.csv"), &meta)?;
    trace_table(&sol).write(&dir.join("trace.csv"), &meta)?;
    println!(
        "stop={:?} iterations={} relative_gap={:.3e}",
        sol.stop,
        sol.trace.len() - 1,
        sol.relative_gap()
    );
    for (id, a) in ids.iter().zip(sol.alpha()) {
        println!("alpha[{id}]={a:.6}");
    }
    Ok(())
}

fn analytic(args: &AnalyticArgs) -> Result<()> {
    let p = match args.mu1 {
        Some(mu1) => Cara2Params::new(args.w1, args.w2, args.gamma1, args.gamma2, mu1, args.mu2, args.p0)?,
        None => Cara2Params::from_mu2(args.w1, args.w2, args.gamma1, args.gamma2, args.mu2, args.p0)?,
    };
    let sol = solve_zeta(&p)?;
    println!(
        "case={} zeta={:.6} alpha1={:.6} alpha2={:.6} mu1={:.6} M={:.6} layer_start={:.6} layer_end={:.6}",
        sol.case.id(),
        sol.zeta,
        sol.alpha1,
        sol.alpha2,
        p.mu1,
        p.m(),
        sol.breakpoints.0,
        sol.breakpoints.1,
    );
    Ok(())
}

fn sensitivity(args: &SensitivityArgs) -> Result<()> {
    let vary: SweepParam = args.vary.parse()?;
    let base = Cara2Params::from_mu2(args.w1, args.w2, args.gamma1, args.gamma2, args.mu2, args.p0)?;
    let rows = sensitivity_sweep(&base, vary, args.min, args.max, args.steps)?;
    let mut t = Table::new(["ratio", "case", "alpha1", "alpha2", "zeta"]);
    for r in &rows {
        match r.case {
            Some(case) => t.push(vec![
                fmt_f64(r.ratio),
                case.id().to_string(),
                fmt_f64(r.alpha1),
                fmt_f64(r.alpha2),
                fmt_f64(r.zeta),
            ]),
            None => t.push(vec![fmt_f64(r.ratio), String::new(), String::new(), String::new(), String::new()]),
        }
    }
    let meta = Metadata::new()
        .with("afpo", VERSION)
        .with("vary", &args.vary)
        .with("w1", args.w1)
        .with("w2", args.w2)
        .with("gamma1", args.gamma1)
        .with("gamma2", args.gamma2)
        .with("mu2", args.mu2)
        .with("p0", args.p0);
    emit(&t, &meta, args.output.as_deref())
}

fn compare(args: &RunArgs) -> Result<()> {
    let (cfg, dir) = load_config(&args.config, &args.out)?;
    let state = execute(&cfg, Some(&dir.join("cache")))?;
    std::fs::create_dir_all(&dir)?;
    let ids: Vec<String> = state.regions.iter().map(|r| r.id.clone()).collect();
    let meta = Metadata::new()
        .with("afpo", VERSION)
        .with("seed", cfg.seed)
        .with("repair_delta", fmt_f64(state.simulation.repair_delta))
        .with("loss_cache_hit", state.simulation.cache_hit);
    let path = dir.join("compare.csv");
    compare_table(&state.summary, &ids).write(&path, &meta)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn transfers(args: &TransferArgs) -> Result<()> {
    if !args.mechanism.shares_losses() {
        bail!("mechanism {} does not share losses between regions", args.mechanism);
    }
    let (mut cfg, dir) = load_config(&args.config, &args.out)?;
    if !cfg.mechanisms.contains(&args.mechanism) {
        cfg.mechanisms.push(args.mechanism);
    }
    let state = execute(&cfg, Some(&dir.join("cache")))?;
    let ids: Vec<String> = state.regions.iter().map(|r| r.id.clone()).collect();
    let (report, label) = match (args.scenario, &args.event) {
        (Some(s), _) => (scenario_transfers(&state, args.mechanism, s)?, format!("scenario:{s}")),
        (None, Some(path)) => {
            let (columns, m) = load_matrix(path)?;
            if m.n_scenarios() != 1 {
                bail!("{} must hold exactly one event, found {}", path.display(), m.n_scenarios());
            }
            let losses = align_columns(&columns, &m, &state.regions)?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            (event_transfers_for(&state, args.mechanism, losses.row(0))?, format!("event:{name}"))
        }
        (None, None) => unreachable!("clap requires --scenario or --event"),
    };
    let meta = Metadata::new()
        .with("afpo", VERSION)
        .with("seed", cfg.seed)
        .with("mechanism", args.mechanism)
        .with("source", label)
        .with("total_residual", fmt_f64(report.total_residual));
    emit(&transfer_table(&report, &ids), &meta, args.output.as_deref())
}

fn run(args: &RunArgs) -> Result<()> {
    let started = Instant::now();
    let (cfg, dir) = load_config(&args.config, &args.out)?;
    let state = execute(&cfg, Some(&dir.join("cache")))?;
    let manifest = export(&cfg, &state, &dir, started)?;
    println!(
        "wrote {} files to {} (k={:.4} K={:.4} solvency={:.4})",
        manifest.files.len() + 1,
        dir.display(),
        manifest.collected_premium,
        manifest.total_capital,
        manifest.solvency_share
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Solve(a) => solve(a),
        Command::Analytic(a) => analytic(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Compare(a) => compare(a),
        Command::Transfers(a) => transfers(a),
        Command::Run(a) => run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
