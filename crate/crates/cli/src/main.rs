//! Command-line front end: estimation on user data (`estimate`),
//! Monte-Carlo studies (`simulate`, `coverage`), and data export (`dgp`).

mod config;
mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dmlcqr::data::{build_design, load_csv};
use dmlcqr::dml::estimate_dml;
use dmlcqr::rng::stream_seed;
use dmlcqr::sim::mc::{coverage_grid, run_mc};
use dmlcqr::sim::generate_replication;
use dmlcqr::{Error, Result};

use config::{CensorPlan, EstimateFile, EstimatePlan, StudyFile, StudyPlan};

#[derive(Parser)]
#[command(name = "dmlcqr", version, about = "Quantile treatment effects under censoring with high-dimensional controls")]
struct Cli {
    /// Worker thread count (default: DMLCQR_THREADS env var, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate quantile treatment effects from a CSV file.
    Estimate(EstimateArgs),
    /// Run a Monte-Carlo study on the built-in simulation design.
    Simulate(StudyArgs),
    /// Map rejection rates over a grid of signal strengths.
    Coverage(StudyArgs),
    /// Export one simulated replication as a CSV usable by `estimate`.
    Dgp(StudyArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// TOML configuration file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (header row required; `#` lines ignored).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    /// Comma-separated control columns (default: all remaining columns).
    #[arg(long, value_delimiter = ',')]
    controls: Option<Vec<String>>,
    /// Constant censoring point.
    #[arg(long)]
    censor_constant: Option<f64>,
    /// Column holding per-row censoring points.
    #[arg(long)]
    censor_column: Option<String>,
    /// Column holding a 0/1 not-censored indicator.
    #[arg(long)]
    censor_indicator: Option<String>,
    /// Censoring side: left (default) or right.
    #[arg(long)]
    side: Option<String>,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    /// Cross-fitting folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Aggregation: dml1 or dml2.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Confidence level for intervals.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    penalty_c: Option<f64>,
    #[arg(long)]
    penalty_gamma: Option<f64>,
    #[arg(long)]
    penalty_alpha: Option<f64>,
    #[arg(long)]
    penalty_ndraws: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "dmlcqr-out")]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// TOML configuration file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Raw control count.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// True treatment coefficient.
    #[arg(long)]
    theta: Option<f64>,
    /// AR(1) correlation of the controls.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    r2_y: Option<f64>,
    #[arg(long)]
    r2_d: Option<f64>,
    #[arg(long)]
    coef_y: Option<f64>,
    #[arg(long)]
    coef_d: Option<f64>,
    #[arg(long)]
    censor_quantile: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated estimator names (dmlcqr, naive_ps, hdcqr, oracle).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
    /// Comma-separated grid axis for the coverage command.
    #[arg(long, value_delimiter = ',')]
    r2_d_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    r2_y_grid: Option<Vec<f64>>,
    /// Replication index for the dgp command.
    #[arg(long)]
    rep: Option<usize>,
    #[arg(long)]
    penalty_c: Option<f64>,
    #[arg(long)]
    penalty_gamma: Option<f64>,
    #[arg(long)]
    penalty_alpha: Option<f64>,
    #[arg(long)]
    penalty_ndraws: Option<usize>,
    /// Output directory for simulate/coverage, output file for dgp.
    #[arg(long, default_value = "dmlcqr-out")]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    init_threads(cli.threads);
    let code = match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", output::error_record(&e));
            output::exit_code(&e)
        }
    };
    std::process::exit(code);
}

/// Flag beats the DMLCQR_THREADS variable; neither set means one worker
/// per core. Results are identical at any setting.
fn init_threads(flag: Option<usize>) {
    let from_env = std::env::var("DMLCQR_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t > 0);
    if let Some(threads) = flag.filter(|&t| t > 0).or(from_env) {
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Estimate(args) => cmd_estimate(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Coverage(args) => cmd_coverage(args),
        Cmd::Dgp(args) => cmd_dgp(args),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Schema(format!("cannot create output directory {}: {e}", dir.display())))
}

fn merge_estimate(args: &EstimateArgs) -> Result<EstimatePlan> {
    let mut file: EstimateFile = match &args.config {
        Some(path) => config::read_toml(path)?,
        None => EstimateFile::default(),
    };
    if let Some(v) = &args.data {
        file.data = Some(v.clone());
    }
    if let Some(v) = &args.outcome {
        file.outcome = Some(v.clone());
    }
    if let Some(v) = &args.treatment {
        file.treatment = Some(v.clone());
    }
    if let Some(v) = &args.controls {
        file.controls = Some(v.clone());
    }
    if let Some(v) = args.censor_constant {
        file.censor_constant = Some(v);
        file.censor_column = None;
        file.censor_indicator = None;
    }
    if let Some(v) = &args.censor_column {
        file.censor_constant = None;
        file.censor_column = Some(v.clone());
        file.censor_indicator = None;
    }
    if let Some(v) = &args.censor_indicator {
        file.censor_constant = None;
        file.censor_column = None;
        file.censor_indicator = Some(v.clone());
    }
    if let Some(v) = &args.side {
        file.side = Some(v.clone());
    }
    if let Some(v) = &args.tau {
        file.tau = Some(v.clone());
    }
    if let Some(v) = args.folds {
        file.folds = Some(v);
    }
    if let Some(v) = &args.mode {
        file.mode = Some(v.clone());
    }
    if let Some(v) = args.seed {
        file.seed = Some(v);
    }
    if let Some(v) = args.level {
        file.level = Some(v);
    }
    if let Some(v) = args.penalty_c {
        file.penalty.c = Some(v);
    }
    if let Some(v) = args.penalty_gamma {
        file.penalty.gamma = Some(v);
    }
    if let Some(v) = args.penalty_alpha {
        file.penalty.alpha = Some(v);
    }
    if let Some(v) = args.penalty_ndraws {
        file.penalty.ndraws = Some(v);
    }
    EstimatePlan::from_file(file)
}

fn merge_study(args: &StudyArgs) -> Result<StudyPlan> {
    let mut file: StudyFile = match &args.config {
        Some(path) => config::read_toml(path)?,
        None => StudyFile::default(),
    };
    if let Some(v) = args.n {
        file.n = Some(v);
    }
    if let Some(v) = args.p {
        file.p = Some(v);
    }
    if let Some(v) = args.tau {
        file.tau = Some(v);
    }
    if let Some(v) = args.theta {
        file.theta = Some(v);
    }
    if let Some(v) = args.rho {
        file.rho = Some(v);
    }
    if let Some(v) = args.r2_y {
        file.r2_y = Some(v);
    }
    if let Some(v) = args.r2_d {
        file.r2_d = Some(v);
    }
    if let Some(v) = args.coef_y {
        file.coef_y = Some(v);
    }
    if let Some(v) = args.coef_d {
        file.coef_d = Some(v);
    }
    if let Some(v) = args.censor_quantile {
        file.censor_quantile = Some(v);
    }
    if let Some(v) = args.reps {
        file.reps = Some(v);
    }
    if let Some(v) = &args.estimators {
        file.estimators = Some(v.clone());
    }
    if let Some(v) = args.folds {
        file.folds = Some(v);
    }
    if let Some(v) = &args.mode {
        file.mode = Some(v.clone());
    }
    if let Some(v) = args.seed {
        file.seed = Some(v);
    }
    if let Some(v) = args.level {
        file.level = Some(v);
    }
    if let Some(v) = &args.r2_d_grid {
        file.r2_d_grid = Some(v.clone());
    }
    if let Some(v) = &args.r2_y_grid {
        file.r2_y_grid = Some(v.clone());
    }
    if let Some(v) = args.rep {
        file.rep = Some(v);
    }
    if let Some(v) = args.penalty_c {
        file.penalty.c = Some(v);
    }
    if let Some(v) = args.penalty_gamma {
        file.penalty.gamma = Some(v);
    }
    if let Some(v) = args.penalty_alpha {
        file.penalty.alpha = Some(v);
    }
    if let Some(v) = args.penalty_ndraws {
        file.penalty.ndraws = Some(v);
    }
    StudyPlan::from_file(file)
}

/// Column names of the input CSV, for defaulting the control set.
fn csv_columns(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("cannot open input file {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Parse {
        row: 0,
        msg: format!("cannot read header row: {e}"),
    })?;
    Ok(headers.iter().map(|h| h.to_string()).collect())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let mut plan = merge_estimate(&args)?;
    if plan.controls.is_empty() {
        let used: Vec<&String> = match &plan.censor {
            CensorPlan::Column(c) | CensorPlan::Indicator(c) => {
                vec![&plan.outcome, &plan.treatment, c]
            }
            CensorPlan::Constant(_) => vec![&plan.outcome, &plan.treatment],
        };
        plan.controls = csv_columns(&plan.data)?
            .into_iter()
            .filter(|c| !used.iter().any(|u| *u == c))
            .collect();
        if plan.controls.is_empty() {
            return Err(Error::Schema(format!(
                "no control columns left in {}",
                plan.data.display()
            )));
        }
    }
    let hash = output::config_hash(&plan)?;
    let data = load_csv(&plan.data, &plan.schema())?;
    let (design, report) = build_design(&data.z_raw.view(), &plan.controls, &plan.expansion())?;

    let mut records = vec![output::header_record("estimate", &hash, plan.seed)];
    records.push(serde_json::json!({
        "record": "design",
        "n": data.n(),
        "columns": design.p(),
        "dropped_collinear": report.dropped,
        "uncensored": data.t.iter().map(|&t| t as usize).sum::<usize>(),
    }));
    let mut estimates = Vec::new();
    for &tau in &plan.tau {
        let cfg = plan.dml_config(tau, data.n())?;
        let est = estimate_dml(&data, &design, &cfg)?;
        let mut value = serde_json::to_value(&est)
            .map_err(|e| Error::Parameter(format!("cannot serialize result: {e}")))?;
        value["record"] = "result".into();
        records.push(value);
        estimates.push(est);
    }

    ensure_dir(&args.out)?;
    output::write_jsonl(&args.out.join("results.jsonl"), &records)?;
    let head = output::csv_header("estimate", &hash, plan.seed);
    let summary = format!("{head}{}", output::estimate_summary(&estimates));
    output::write_text(&args.out.join("summary.txt"), &summary)?;
    print!("{}", output::estimate_summary(&estimates));
    Ok(())
}

fn cmd_simulate(args: StudyArgs) -> Result<()> {
    let plan = merge_study(&args)?;
    let hash = output::config_hash(&("simulate", &plan))?;
    let cfg = plan.mc_config();
    let report = run_mc(&cfg)?;

    ensure_dir(&args.out)?;
    let head = output::csv_header("simulate", &hash, plan.dgp.seed);
    output::write_text(
        &args.out.join("metrics.csv"),
        &output::metrics_csv(&head, &report),
    )?;

    let mut records = vec![output::header_record("simulate", &hash, plan.dgp.seed)];
    for r in &report.records {
        let mut value = serde_json::to_value(r)
            .map_err(|e| Error::Parameter(format!("cannot serialize record: {e}")))?;
        value["record"] = "rep".into();
        records.push(value);
    }
    for m in &report.metrics {
        let mut value = serde_json::to_value(m)
            .map_err(|e| Error::Parameter(format!("cannot serialize metrics: {e}")))?;
        value["record"] = "metrics".into();
        records.push(value);
    }
    output::write_jsonl(&args.out.join("estimates.jsonl"), &records)?;

    let summary = format!("{head}{}", output::simulate_summary(&report));
    output::write_text(&args.out.join("summary.txt"), &summary)?;
    print!("{}", output::simulate_summary(&report));
    Ok(())
}

fn cmd_coverage(args: StudyArgs) -> Result<()> {
    let plan = merge_study(&args)?;
    let hash = output::config_hash(&("coverage", &plan))?;
    let template = plan.mc_config();
    let report = coverage_grid(&plan.grid(), &template)?;

    ensure_dir(&args.out)?;
    let head = output::csv_header("coverage", &hash, plan.dgp.seed);
    for kind in &plan.estimators {
        let name = kind.to_string();
        let csv = output::coverage_csv(&head, &report, &name, &plan.r2_d_grid, &plan.r2_y_grid);
        output::write_text(&args.out.join(format!("coverage_{name}.csv")), &csv)?;
    }
    let mut records = vec![output::header_record("coverage", &hash, plan.dgp.seed)];
    for cell in &report.cells {
        let mut value = serde_json::to_value(cell)
            .map_err(|e| Error::Parameter(format!("cannot serialize cell: {e}")))?;
        value["record"] = "cell".into();
        records.push(value);
    }
    output::write_jsonl(&args.out.join("cells.jsonl"), &records)?;
    println!(
        "coverage grid: {} cells x {} estimators, {} reps per cell",
        report.cells.len(),
        plan.estimators.len(),
        report.reps
    );
    Ok(())
}

/// Writes one replication in the estimate-command schema: outcome `y`,
/// treatment `d`, censoring points `c`, controls `z1..zp`.
fn cmd_dgp(args: StudyArgs) -> Result<()> {
    let plan = merge_study(&args)?;
    let hash = output::config_hash(&("dgp", &plan))?;
    let rep_seed = stream_seed(plan.dgp.seed, plan.rep as u64);
    let data = generate_replication(&plan.dgp, rep_seed)?;
    let censor = data
        .censor_value
        .as_ref()
        .ok_or_else(|| Error::DegenerateData("generated data lacks censoring points".into()))?;

    let mut out = output::csv_header("dgp", &hash, plan.dgp.seed);
    out.push_str("y,d,c");
    for j in 1..=plan.dgp.p {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for i in 0..data.n() {
        out.push_str(&format!("{},{},{}", data.y[i], data.d[i], censor[i]));
        for j in 0..plan.dgp.p {
            out.push_str(&format!(",{}", data.z_raw[[i, j]]));
        }
        out.push('\n');
    }
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    let path = if args.out.extension().is_some() {
        args.out.clone()
    } else {
        ensure_dir(&args.out)?;
        args.out.join("data.csv")
    };
    output::write_text(&path, &out)?;
    println!(
        "wrote {} rows ({} censored) to {}",
        data.n(),
        data.n() - data.t.iter().map(|&t| t as usize).sum::<usize>(),
        path.display()
    );
    Ok(())
}
