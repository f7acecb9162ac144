//! Monte Carlo replication experiments.
//!
//! A run computes the truth once, then for every replicate draws a
//! multinomial sample of size `n` from `P`, re-solves with the empirical
//! weights and records the √n-scaled fluctuation. The fluctuations are
//! compared with draws from the theoretical limit law.
//!
//! Replicate `r` uses `derive_seed(master_seed, STREAM_REPLICATE, r)` and
//! the law is simulated from `derive_seed(master_seed, STREAM_LAW_DRAW, 0)`;
//! replicates run on the rayon pool and are collected in index order, so a
//! configuration always produces the same report.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{CostFunction, CostSpec};
use crate::discrete::{extract_dual_face, read_cost_matrix_csv, solve_discrete};
use crate::error::{invalid, Error, Result};
use crate::inference::{
    cost_limit_law, potentials_covariance, simulate_limit, sup_norm_potential_law, wp_limit_law, CostLawMode,
    LimitKind, LimitLaw,
};
use crate::measures::{sample_counts, ContinuousMeasure, DiscreteMeasure, Measure, MeasureSpec};
use crate::solver::{solve_exact_1d_weights, solve_problem, Backend, SemidiscreteProblem, SolveReport, SolverConfig};
use crate::seeds::{derive_seed, STREAM_LAW_DRAW, STREAM_REPLICATE};

/// Quantile levels reported for both samples.
pub const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `√n (T̂ − T)`
    Cost,
    /// `√n (T̂^{1/p} − T^{1/p})`
    Wp,
    /// `√n c·(ẑ − z)` for a contrast `c` (sum-zero gauge); the full vector
    /// is kept as well.
    Potentials,
    /// `√n max_i |ẑ_i − z_i|` (sum-zero gauge).
    SupNormPotentials,
}

/// Optional pass/fail thresholds evaluated by [`ExperimentReport::checks`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub ks_max: Option<f64>,
    pub variance_target: Option<f64>,
    pub variance_rel_tol: Option<f64>,
    pub mean_target: Option<f64>,
    pub mean_abs_tol: Option<f64>,
    pub mean_rel_tol: Option<f64>,
    /// Minimum fraction of statistics that are `≥ −1e-9`.
    pub min_nonneg_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Discrete measure `P` that is sampled.
    pub source: MeasureSpec,
    /// Target `Q`: continuous (semidiscrete solver) or discrete (LP).
    pub target: MeasureSpec,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    /// Explicit cost matrix for a discrete target (overrides `cost`).
    #[serde(default)]
    pub cost_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub cost_matrix_csv: Option<PathBuf>,
    pub n: u64,
    pub replicates: usize,
    pub master_seed: u64,
    pub statistic: Statistic,
    /// Defaults to `exact1d` for one-dimensional power costs, else
    /// `quadrature`.
    #[serde(default)]
    pub backend: Option<Backend>,
    #[serde(default = "default_law_draws")]
    pub law_draws: usize,
    /// Exponent for the `wp` statistic; defaults to the power-cost exponent,
    /// or 1 for an explicit cost matrix.
    #[serde(default)]
    pub wp_exponent: Option<f64>,
    /// Contrast for the `potentials` statistic; defaults to `e_m − e_1`.
    #[serde(default)]
    pub contrast: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: Option<SolverConfig<f64>>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_law_draws() -> usize {
    100_000
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(invalid("replicates must be at least 2"));
        }
        if self.n < 1 {
            return Err(invalid("n must be at least 1"));
        }
        if self.law_draws < 1 {
            return Err(invalid("law_draws must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub cost: f64,
    /// Sum-zero gauge (simplex duals for a discrete target).
    pub potentials: Vec<f64>,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub level: f64,
    pub empirical: f64,
    pub law: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ks: f64,
    /// Two-sample KS critical value at the 5% level for these sizes,
    /// `1.358 √((a + b) / (a b))`.
    pub ks_critical_5pct: f64,
    pub mean: f64,
    pub variance: f64,
    pub law_mean: f64,
    pub law_variance: f64,
    /// Exact variance of the law when it is Gaussian.
    pub law_variance_exact: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub variance_ratio: Option<f64>,
    pub nonneg_fraction: f64,
    pub quantiles: Vec<QuantileRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub observed: f64,
    pub bound: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub truth: TruthSummary,
    pub law: LimitLaw<f64>,
    /// Scalar statistic per successful replicate, in replicate order.
    pub statistics: Vec<f64>,
    /// Vector statistic per successful replicate (`potentials` only).
    pub vector_statistics: Option<Vec<Vec<f64>>>,
    pub failed_replicates: Vec<usize>,
    pub law_draws: Vec<f64>,
    pub metrics: Metrics,
    pub checks: Vec<CheckResult>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("KS needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Linear-interpolation quantile (type 7) of an unsorted sample.
pub fn quantile(sample: &[f64], level: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, level)
}

fn quantile_sorted(s: &[f64], level: f64) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    let h = (s.len() - 1) as f64 * level.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Everything a replicate needs, fixed before the loop.
enum Setup {
    Semi {
        problem: SemidiscreteProblem<f64>,
        p: DiscreteMeasure<f64>,
        truth: SolveReport<f64>,
        solver: SolverConfig<f64>,
    },
    Lp {
        p: Vec<f64>,
        q: Vec<f64>,
        cost: Vec<Vec<f64>>,
        truth_cost: f64,
        truth_u: Vec<f64>,
    },
}

struct Replicate {
    scalar: f64,
    vector: Option<Vec<f64>>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let setup = build_setup(cfg)?;
    let (truth, law) = truth_and_law(cfg, &setup)?;

    let outcomes: Vec<Result<Replicate>> =
        (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, &setup, &truth, r)).collect();
    let mut statistics = Vec::with_capacity(cfg.replicates);
    let mut vectors = Vec::new();
    let mut failed = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => {
                statistics.push(rep.scalar);
                if let Some(v) = rep.vector {
                    vectors.push(v);
                }
            }
            Err(_) => failed.push(r),
        }
    }
    // More than 1% failures invalidates the run.
    if failed.len() * 100 > cfg.replicates {
        return Err(Error::ReplicateFailures { failed: failed.len(), total: cfg.replicates });
    }
    if statistics.is_empty() {
        return Err(Error::ReplicateFailures { failed: failed.len(), total: cfg.replicates });
    }

    let law_draws = simulate_limit(&law, cfg.law_draws, derive_seed(cfg.master_seed, STREAM_LAW_DRAW, 0))?;
    let metrics = compute_metrics(&statistics, &law_draws, &law)?;
    let checks = cfg.thresholds.as_ref().map(|t| evaluate_checks(t, &metrics)).unwrap_or_default();
    Ok(ExperimentReport {
        config: cfg.clone(),
        truth,
        law,
        statistics,
        vector_statistics: (cfg.statistic == Statistic::Potentials).then_some(vectors),
        failed_replicates: failed,
        law_draws,
        metrics,
        checks,
    })
}

/// Truth values and the theoretical limit law for `cfg` without running
/// any replicates. `n`, `replicates` and `master_seed` are not used.
pub fn truth_and_limit_law(cfg: &ExperimentConfig) -> Result<(TruthSummary, LimitLaw<f64>)> {
    let setup = build_setup(cfg)?;
    truth_and_law(cfg, &setup)
}

fn build_setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let p = cfg.source.build_discrete::<f64>()?;
    match cfg.target.build::<f64>()? {
        Measure::Continuous(q) => {
            let cost = cfg.cost.as_ref().ok_or_else(|| invalid("a continuous target needs a cost"))?.build::<f64>()?;
            let backend = cfg.backend.unwrap_or_else(|| default_backend(&p, &q, &cost));
            if backend == Backend::Exact1d && !p.is_sorted_1d() {
                return Err(invalid("exact1d backend needs sorted one-dimensional atoms"));
            }
            let mut solver = cfg.solver.clone().unwrap_or_default();
            solver.backend = backend;
            let problem = SemidiscreteProblem::from_measures(&p, &q, &cost)?;
            let truth = solve_problem(&problem, p.weights(), &SolverConfig { report_hessian: true, ..solver.clone() })?;
            Ok(Setup::Semi { problem, p, truth, solver })
        }
        Measure::Discrete(qm) => {
            let cost = match (&cfg.cost_matrix, &cfg.cost_matrix_csv, &cfg.cost) {
                (Some(c), _, _) => c.clone(),
                (None, Some(path), _) => read_cost_matrix_csv(path)?,
                (None, None, Some(spec)) => {
                    let c: CostFunction<f64> = spec.build()?;
                    p.points().iter().map(|x| qm.points().iter().map(|y| c.eval(x, y)).collect()).collect()
                }
                (None, None, None) => return Err(invalid("a discrete target needs a cost or a cost matrix")),
            };
            if matches!(cfg.statistic, Statistic::Potentials | Statistic::SupNormPotentials) {
                return Err(invalid("potential statistics need a continuous target"));
            }
            let sol = solve_discrete(p.weights(), qm.weights(), &cost)?;
            Ok(Setup::Lp {
                p: p.weights().to_vec(),
                q: qm.weights().to_vec(),
                cost,
                truth_cost: sol.primal_value,
                truth_u: sol.dual_u,
            })
        }
    }
}

fn default_backend(p: &DiscreteMeasure<f64>, q: &ContinuousMeasure<f64>, cost: &CostFunction<f64>) -> Backend {
    let strictly_convex_power = cost.exponent().is_some_and(|e| e > 1.0);
    if q.dim() == 1 && p.is_sorted_1d() && strictly_convex_power {
        Backend::Exact1d
    } else {
        Backend::Quadrature
    }
}

fn wp_exponent(cfg: &ExperimentConfig) -> f64 {
    cfg.wp_exponent.unwrap_or(match (&cfg.cost_matrix, &cfg.cost_matrix_csv, &cfg.cost) {
        (None, None, Some(CostSpec::Power { exponent })) => *exponent,
        _ => 1.0,
    })
}

fn contrast(cfg: &ExperimentConfig, m: usize) -> Result<Vec<f64>> {
    match &cfg.contrast {
        Some(c) if c.len() == m => Ok(c.clone()),
        Some(_) => Err(invalid("contrast length does not match the number of atoms")),
        None => {
            let mut c = vec![0.0; m];
            if m > 1 {
                c[0] = -1.0;
                c[m - 1] = 1.0;
            }
            Ok(c)
        }
    }
}

fn truth_and_law(cfg: &ExperimentConfig, setup: &Setup) -> Result<(TruthSummary, LimitLaw<f64>)> {
    match setup {
        Setup::Semi { problem, p, truth, solver } => {
            let summary = TruthSummary {
                cost: truth.cost,
                potentials: truth.potentials.values.clone(),
                backend: format!("{:?}", solver.backend.kind()).to_lowercase(),
            };
            let w = p.weights();
            let cost_law = || {
                cost_limit_law(
                    w,
                    CostLawMode::Unique {
                        potentials: &truth.potentials.values,
                        cost: &problem.cost,
                        target: &problem.target,
                    },
                )
            };
            let potentials_cov = || {
                let h = truth.hessian.as_ref().ok_or_else(|| invalid("truth solve did not produce a Hessian"))?;
                potentials_covariance(h, w)
            };
            let law = match cfg.statistic {
                Statistic::Cost => cost_law()?,
                Statistic::Wp => wp_limit_law(&cost_law()?, wp_exponent(cfg), truth.cost)?,
                Statistic::Potentials => {
                    let c = contrast(cfg, w.len())?;
                    LimitLaw::gaussian(potentials_cov()?.matrix.quad_form(&c))
                }
                Statistic::SupNormPotentials => sup_norm_potential_law(&potentials_cov()?),
            };
            Ok((summary, law))
        }
        Setup::Lp { p, q, cost, truth_cost, truth_u } => {
            let summary = TruthSummary { cost: *truth_cost, potentials: truth_u.clone(), backend: "lp".into() };
            let face = extract_dual_face(&solve_discrete(p, q, cost)?)?;
            let cost_law = cost_limit_law(p, CostLawMode::Face(&face))?;
            let law = match cfg.statistic {
                Statistic::Cost => cost_law,
                Statistic::Wp => wp_limit_law(&cost_law, wp_exponent(cfg), *truth_cost)?,
                _ => unreachable!("rejected in build_setup"),
            };
            Ok((summary, law))
        }
    }
}

fn run_replicate(cfg: &ExperimentConfig, setup: &Setup, truth: &TruthSummary, r: usize) -> Result<Replicate> {
    let seed = derive_seed(cfg.master_seed, STREAM_REPLICATE, r as u64);
    let sqrt_n = (cfg.n as f64).sqrt();
    let wp = |t: f64| t.max(0.0).powf(1.0 / wp_exponent(cfg));
    match setup {
        Setup::Semi { problem, p, solver, .. } => {
            let phat = sample_counts(p.weights(), cfg.n, seed)?.frequencies::<f64>();
            let (cost, z) = if solver.backend == Backend::Exact1d {
                let rep = solve_exact_1d_weights(&problem.atoms, &phat, &problem.target, &problem.cost)?;
                (rep.cost, Some(rep.potentials.values))
            } else {
                let keep: Vec<usize> = (0..phat.len()).filter(|&i| phat[i] > 0.0).collect();
                let sub = SemidiscreteProblem::new(
                    keep.iter().map(|&i| problem.atoms[i].clone()).collect(),
                    problem.cost.clone(),
                    problem.target.clone(),
                )?;
                let weights: Vec<f64> = keep.iter().map(|&i| phat[i]).collect();
                let warm = SolverConfig {
                    initial: Some(keep.iter().map(|&i| truth.potentials[i]).collect()),
                    report_hessian: false,
                    ..solver.clone()
                };
                let rep = solve_problem(&sub, &weights, &warm)?;
                let z = (keep.len() == phat.len()).then_some(rep.potentials.values);
                (rep.cost, z)
            };
            let need_z = || z.clone().ok_or_else(|| invalid("an atom received no sample; potentials undefined"));
            match cfg.statistic {
                Statistic::Cost => Ok(Replicate { scalar: sqrt_n * (cost - truth.cost), vector: None }),
                Statistic::Wp => Ok(Replicate { scalar: sqrt_n * (wp(cost) - wp(truth.cost)), vector: None }),
                Statistic::Potentials => {
                    let z = need_z()?;
                    let v: Vec<f64> = z.iter().zip(&truth.potentials).map(|(a, b)| sqrt_n * (a - b)).collect();
                    let c = contrast(cfg, v.len())?;
                    Ok(Replicate { scalar: v.iter().zip(&c).map(|(a, b)| a * b).sum(), vector: Some(v) })
                }
                Statistic::SupNormPotentials => {
                    let z = need_z()?;
                    let s = z.iter().zip(&truth.potentials).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
                    Ok(Replicate { scalar: sqrt_n * s, vector: None })
                }
            }
        }
        Setup::Lp { p, q, cost, truth_cost, .. } => {
            let phat = sample_counts(p, cfg.n, seed)?.frequencies::<f64>();
            let keep: Vec<usize> = (0..phat.len()).filter(|&i| phat[i] > 0.0).collect();
            let w: Vec<f64> = keep.iter().map(|&i| phat[i]).collect();
            let c: Vec<Vec<f64>> = keep.iter().map(|&i| cost[i].clone()).collect();
            let value = solve_discrete(&w, q, &c)?.primal_value;
            let scalar = match cfg.statistic {
                Statistic::Cost => sqrt_n * (value - truth_cost),
                Statistic::Wp => sqrt_n * (wp(value) - wp(*truth_cost)),
                _ => unreachable!("rejected in build_setup"),
            };
            Ok(Replicate { scalar, vector: None })
        }
    }
}

fn compute_metrics(stats: &[f64], law: &[f64], limit: &LimitLaw<f64>) -> Result<Metrics> {
    let ks = ks_statistic(stats, law)?;
    let (a, b) = (stats.len() as f64, law.len() as f64);
    let (mean, variance) = mean_var(stats);
    let (law_mean, law_variance) = mean_var(law);
    let law_variance_exact = match limit.kind {
        LimitKind::Gaussian { .. } => limit.variance(),
        _ => None,
    };
    let ref_var = law_variance_exact.unwrap_or(law_variance);
    let ratio = |x: f64, y: f64| (y.abs() > 1e-300).then(|| x / y);
    let mut s = stats.to_vec();
    s.sort_by(f64::total_cmp);
    let mut l = law.to_vec();
    l.sort_by(f64::total_cmp);
    let quantiles = QUANTILE_LEVELS
        .iter()
        .map(|&level| QuantileRow { level, empirical: quantile_sorted(&s, level), law: quantile_sorted(&l, level) })
        .collect();
    Ok(Metrics {
        ks,
        ks_critical_5pct: 1.358 * ((a + b) / (a * b)).sqrt(),
        mean,
        variance,
        law_mean,
        law_variance,
        law_variance_exact,
        mean_ratio: ratio(mean, law_mean),
        variance_ratio: ratio(variance, ref_var),
        nonneg_fraction: stats.iter().filter(|&&v| v >= -1e-9).count() as f64 / a,
        quantiles,
    })
}

fn evaluate_checks(t: &Thresholds, m: &Metrics) -> Vec<CheckResult> {
    let mut out = Vec::new();
    if let Some(max) = t.ks_max {
        out.push(CheckResult { name: "ks".into(), observed: m.ks, bound: format!("<= {max}"), passed: m.ks <= max });
    }
    if let Some(target) = t.variance_target {
        let tol = t.variance_rel_tol.unwrap_or(0.15);
        let rel = (m.variance / target - 1.0).abs();
        out.push(CheckResult {
            name: "variance".into(),
            observed: m.variance,
            bound: format!("{target} ± {:.0}%", tol * 100.0),
            passed: rel <= tol,
        });
    }
    if let Some(target) = t.mean_target {
        let (passed, bound) = match (t.mean_abs_tol, t.mean_rel_tol) {
            (Some(abs), _) => ((m.mean - target).abs() <= abs, format!("{target} ± {abs}")),
            (None, rel) => {
                let rel = rel.unwrap_or(0.1);
                ((m.mean / target - 1.0).abs() <= rel, format!("{target} ± {:.0}%", rel * 100.0))
            }
        };
        out.push(CheckResult { name: "mean".into(), observed: m.mean, bound, passed });
    }
    if let Some(min) = t.min_nonneg_fraction {
        out.push(CheckResult {
            name: "nonneg_fraction".into(),
            observed: m.nonneg_fraction,
            bound: format!(">= {min}"),
            passed: m.nonneg_fraction >= min,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes `report.json` or `samples.csv` (columns `source,value`, one row
/// per replicate statistic then one per law draw) into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>, format: ReportFormat) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            fs::write(&path, serde_json::to_string_pretty(report)?)?;
            Ok(path)
        }
        ReportFormat::Csv => {
            let path = dir.join("samples.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["source", "value"])?;
            for v in &report.statistics {
                w.write_record(["empirical", &v.to_string()])?;
            }
            for v in &report.law_draws {
                w.write_record(["law", &v.to_string()])?;
            }
            w.flush()?;
            Ok(path)
        }
    }
}
