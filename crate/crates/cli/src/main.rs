use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use sdot::costs::CostSpec;
use sdot::discrete::{extract_dual_face, read_cost_matrix_csv, solve_discrete, DualOptimalFace, TransportPlanLP};
use sdot::experiments::{
    emit_report, run_experiment, truth_and_limit_law, ExperimentConfig, ReportFormat, TruthSummary,
};
use sdot::inference::{simulate_limit, LimitLaw};
use sdot::measures::MeasureSpec;
use sdot::solver::{solve_exact_1d, solve_potentials, Backend, SolveReport, SolverConfig};

const DEFAULT_MC_SAMPLES: usize = 20_000;

#[derive(Debug, Parser)]
#[command(name = "sdot", version, about = "Semidiscrete optimal transport: solves, limit laws and replication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,

    /// seed for Monte Carlo integration, law draws or the experiment master seed
    #[arg(long)]
    seed: Option<u64>,

    /// integration backend, overrides the config
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,

    /// sample count for `--backend mc`
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    samples: usize,

    /// output directory; results go to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One semidiscrete solve
    Solve(Common),
    /// Discrete transport LP and its dual optimal face
    Discrete(Common),
    /// Truth values and the theoretical limit law
    Infer(Common),
    /// Draws from the theoretical limit law
    Simulate {
        #[command(flatten)]
        common: Common,
        /// number of draws; defaults to the config's `law_draws`
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Full replication experiment
    Experiment {
        #[command(flatten)]
        common: Common,
        /// exit with status 4 when any configured threshold is breached
        #[arg(long)]
        check: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Mc,
    Quadrature,
    Exact1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sdot::Error),
    #[error("{0} threshold check(s) failed")]
    Breach(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use sdot::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidArgument(_) | E::Json(_) | E::UnsupportedBackend(_) | E::AssumptionViolation(_)) => 2,
            CliError::Core(E::NoConvergence { .. } | E::ReplicateFailures { .. } | E::HessianDegenerate { .. }) => 3,
            CliError::Breach(_) => 4,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveConfig {
    source: MeasureSpec,
    target: MeasureSpec,
    cost: CostSpec,
    #[serde(default)]
    solver: Option<SolverConfig<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscreteConfig {
    source: MeasureSpec,
    target: MeasureSpec,
    #[serde(default)]
    cost: Option<CostSpec>,
    #[serde(default)]
    cost_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    cost_matrix_csv: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct DiscreteOutput {
    plan: TransportPlanLP<f64>,
    face: DualOptimalFace<f64>,
}

#[derive(Debug, Serialize)]
struct InferOutput {
    truth: TruthSummary,
    law: LimitLaw<f64>,
    /// Variance of the scaled law when it is Gaussian.
    variance: Option<f64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Law-only commands accept an experiment config without the replication
/// fields.
fn read_law_config(path: &Path) -> CliResult<ExperimentConfig> {
    let mut value: Value = read_json(path)?;
    let obj = value.as_object_mut().ok_or_else(|| CliError::Config("expected a JSON object".into()))?;
    for (key, default) in [("n", 1u64), ("replicates", 2), ("master_seed", 0)] {
        obj.entry(key).or_insert(Value::from(default));
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}

fn backend_override(arg: Option<BackendArg>, common: &Common, current: Backend) -> Backend {
    match arg {
        None => match (current, common.seed) {
            (Backend::Mc { samples, .. }, Some(seed)) => Backend::Mc { samples, seed },
            _ => current,
        },
        Some(BackendArg::Mc) => Backend::Mc { samples: common.samples, seed: common.seed.unwrap_or(0) },
        Some(BackendArg::Quadrature) => Backend::Quadrature,
        Some(BackendArg::Exact1d) => Backend::Exact1d,
    }
}

/// A closed downstream pipe (`sdot ... | head`) is not an error.
fn ignore_broken_pipe(r: io::Result<()>) -> io::Result<()> {
    match r {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => other,
    }
}

fn write_output(common: &Common, stem: &str, json: &impl Serialize, rows: Vec<Vec<String>>, header: &[&str]) -> CliResult<()> {
    match (&common.out, common.format) {
        (None, FormatArg::Json) => {
            let text = serde_json::to_string_pretty(json).map_err(sdot::Error::from)?;
            ignore_broken_pipe(writeln!(io::stdout().lock(), "{text}"))?;
        }
        (None, FormatArg::Csv) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            let bytes = w.into_inner().map_err(|e| e.into_error())?;
            ignore_broken_pipe(io::stdout().lock().write_all(&bytes))?;
        }
        (Some(dir), FormatArg::Json) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("{stem}.json"));
            fs::write(&path, serde_json::to_string_pretty(json).map_err(sdot::Error::from)?)?;
            eprintln!("wrote {}", path.display());
        }
        (Some(dir), FormatArg::Csv) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_solve(common: &Common) -> CliResult<()> {
    let cfg: SolveConfig = read_json(&common.config)?;
    let p = cfg.source.build_discrete::<f64>()?;
    let q = cfg.target.build_continuous::<f64>()?;
    let cost = cfg.cost.build::<f64>()?;
    let mut solver = cfg.solver.unwrap_or_default();
    solver.backend = backend_override(common.backend, common, solver.backend);
    let report: SolveReport<f64> = if solver.backend == Backend::Exact1d {
        solve_exact_1d(&p, &q, &cost)?
    } else {
        solve_potentials(&p, &q, &cost, &solver)?
    };
    eprintln!(
        "cost {:.10} after {} iterations ({} Newton), gradient norm {:.2e}",
        report.cost, report.iterations, report.newton_steps, report.grad_norm
    );
    let rows = (0..report.cell_probs.len())
        .map(|k| {
            vec![
                k.to_string(),
                report.potentials.values[k].to_string(),
                report.cell_probs[k].to_string(),
                p.weights()[k].to_string(),
            ]
        })
        .collect();
    write_output(common, "solve", &report, rows, &["atom", "potential", "cell_probability", "weight"])
}

fn cmd_discrete(common: &Common) -> CliResult<()> {
    let cfg: DiscreteConfig = read_json(&common.config)?;
    let p = cfg.source.build_discrete::<f64>()?;
    let q = cfg.target.build_discrete::<f64>()?;
    let cost = match (cfg.cost_matrix, cfg.cost_matrix_csv, cfg.cost) {
        (Some(c), _, _) => c,
        (None, Some(path), _) => read_cost_matrix_csv(path)?,
        (None, None, Some(spec)) => {
            let c = spec.build::<f64>()?;
            p.points().iter().map(|x| q.points().iter().map(|y| c.eval(x, y)).collect()).collect()
        }
        (None, None, None) => return Err(CliError::Config("needs `cost`, `cost_matrix` or `cost_matrix_csv`".into())),
    };
    let plan = solve_discrete(p.weights(), q.weights(), &cost)?;
    let face = extract_dual_face(&plan)?;
    eprintln!(
        "cost {:.10}, dual face is {}",
        plan.primal_value,
        if face.is_singleton() { "a single point" } else { "polyhedral" }
    );
    let rows = plan
        .plan
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, v)| vec![i.to_string(), j.to_string(), v.to_string()]))
        .collect();
    write_output(common, "discrete", &DiscreteOutput { plan, face }, rows, &["row", "col", "mass"])
}

fn law_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = read_law_config(&common.config)?;
    if common.backend.is_some() {
        let current = cfg.backend.unwrap_or(Backend::Quadrature);
        cfg.backend = Some(backend_override(common.backend, common, current));
    }
    Ok(cfg)
}

fn cmd_infer(common: &Common) -> CliResult<()> {
    let cfg = law_config(common)?;
    let (truth, law) = truth_and_limit_law(&cfg)?;
    let variance = law.variance();
    eprintln!("truth cost {:.10}, limit law scale {:.6}", truth.cost, law.scale_factor);
    let mut rows = vec![vec!["truth_cost".to_string(), truth.cost.to_string()], vec!["scale_factor".into(), law.scale_factor.to_string()]];
    if let Some(v) = variance {
        rows.push(vec!["variance".into(), v.to_string()]);
    }
    for (k, z) in truth.potentials.iter().enumerate() {
        rows.push(vec![format!("potential_{k}"), z.to_string()]);
    }
    write_output(common, "infer", &InferOutput { truth, law, variance }, rows, &["quantity", "value"])
}

fn cmd_simulate(common: &Common, draws: Option<usize>) -> CliResult<()> {
    let cfg = law_config(common)?;
    let (_, law) = truth_and_limit_law(&cfg)?;
    let draws = simulate_limit(&law, draws.unwrap_or(cfg.law_draws), common.seed.unwrap_or(cfg.master_seed))?;
    let rows = draws.iter().map(|v| vec!["law".to_string(), v.to_string()]).collect();
    write_output(common, "simulate", &draws, rows, &["source", "value"])
}

fn cmd_experiment(common: &Common, check: bool) -> CliResult<()> {
    let mut cfg: ExperimentConfig = read_json(&common.config)?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if common.backend.is_some() {
        let current = cfg.backend.unwrap_or(Backend::Quadrature);
        cfg.backend = Some(backend_override(common.backend, common, current));
    }
    if check && cfg.thresholds.is_none() {
        return Err(CliError::Config("--check needs `thresholds` in the config".into()));
    }
    let report = run_experiment(&cfg)?;
    let m = &report.metrics;
    eprintln!(
        "{} replicates ({} failed): KS {:.4} (5% critical {:.4}), mean {:.5}, variance {:.5}",
        report.statistics.len(),
        report.failed_replicates.len(),
        m.ks,
        m.ks_critical_5pct,
        m.mean,
        m.variance
    );
    for c in &report.checks {
        eprintln!("check {}: {} (observed {:.5}, bound {})", c.name, if c.passed { "pass" } else { "FAIL" }, c.observed, c.bound);
    }
    let format = match common.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    match common.out.clone().or_else(|| cfg.output_dir.clone()) {
        Some(dir) => {
            let path = emit_report(&report, &dir, format)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let rows = report
                .statistics
                .iter()
                .map(|v| vec!["empirical".to_string(), v.to_string()])
                .chain(report.law_draws.iter().map(|v| vec!["law".to_string(), v.to_string()]))
                .collect();
            write_output(common, "report", &report, rows, &["source", "value"])?;
        }
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if check && failed > 0 {
        return Err(CliError::Breach(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Discrete(c) => cmd_discrete(c),
        Command::Infer(c) => cmd_infer(c),
        Command::Simulate { common, draws } => cmd_simulate(common, *draws),
        Command::Experiment { common, check } => cmd_experiment(common, *check),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
