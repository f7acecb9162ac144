//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Reference values are computed here by hand or by independent
//! oracles in `common`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_rational::BigRational;
use rand::Rng;

use sdot::costs::{power_cost, CostFunction, CostSpec};
use sdot::discrete::{extract_dual_face, solve_discrete, sup_over_opt};
use sdot::experiments::{ks_statistic, run_experiment, ExperimentConfig, Statistic};
use sdot::inference::{
    asymptotic_variance_cost, gradient_outer_products, hadamard_derivative, potentials_covariance, sigma_p, OptSet,
};
use sdot::linalg::symmetric_eigen;
use sdot::measures::{ContinuousMeasure, DiscreteMeasure, MeasureSpec};
use sdot::solver::{
    eval_m, grad_m_z, hessian_m_z, solve_exact_1d, solve_potentials, solve_problem, Backend, HessianMethod,
    SemidiscreteProblem, SolverConfig,
};

use common::*;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, format!("{name} = {got:.8} not within {tol:e} of {want:.8}"))
}

fn timed(limit: Duration, start: Instant) -> Result<(), String> {
    let el = start.elapsed();
    ensure(el <= limit, format!("took {el:?}, limit {limit:?}"))
}

fn oracle_1d() -> (DiscreteMeasure<f64>, ContinuousMeasure<f64>, CostFunction<f64>) {
    (
        DiscreteMeasure::on_line(&[0.0, 1.0], vec![0.25, 0.75]).unwrap(),
        ContinuousMeasure::unit_cube(1),
        CostFunction::quadratic(),
    )
}

fn oracle_config(statistic: Statistic) -> ExperimentConfig {
    ExperimentConfig {
        name: None,
        source: MeasureSpec::Discrete { points: vec![vec![0.0], vec![1.0]], weights: vec![0.25, 0.75] },
        target: MeasureSpec::UniformBox { lo: vec![0.0], hi: vec![1.0], quadrature: None },
        cost: Some(CostSpec::Power { exponent: 2.0 }),
        cost_matrix: None,
        cost_matrix_csv: None,
        n: 10_000,
        replicates: 2000,
        master_seed: 20240611,
        statistic,
        backend: None,
        law_draws: 100_000,
        wp_exponent: None,
        contrast: None,
        solver: None,
        thresholds: None,
        output_dir: None,
    }
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let (p, q, c) = oracle_1d();
    let quad = solve_potentials(&p, &q, &c, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let exact = solve_exact_1d(&p, &q, &c).map_err(|e| e.to_string())?;
    for (label, r) in [("quadrature", &quad), ("exact1d", &exact)] {
        within(&format!("{label} cost"), r.cost, 7.0 / 48.0, 1e-6)?;
        within(&format!("{label} z1"), r.potentials.values[0], -0.25, 1e-5)?;
        within(&format!("{label} z2"), r.potentials.values[1], 0.25, 1e-5)?;
        within(&format!("{label} Q(A1)"), r.cell_probs[0], 0.25, 1e-6)?;
        within(&format!("{label} Q(A2)"), r.cell_probs[1], 0.75, 1e-6)?;
    }
    timed(Duration::from_secs(1), start)?;
    Ok(format!("cost {:.9}, z ({:.7}, {:.7}), {:?}", quad.cost, quad.potentials.values[0], quad.potentials.values[1], start.elapsed()))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let p = DiscreteMeasure::new(vec![vec![0.0, 0.5], vec![1.0, 0.5]], vec![0.5, 0.5]).unwrap();
    let q = ContinuousMeasure::unit_cube(2);
    let r = solve_potentials(&p, &q, &CostFunction::quadratic(), &SolverConfig::default()).map_err(|e| e.to_string())?;
    // Each half cell contributes ∫₀^{1/2} x² dx = 1/24 per unit height.
    within("cost", r.cost, 2.0 * (1.0 / 24.0 + 1.0 / 24.0), 5e-4)?;
    within("z1", r.potentials.values[0], 0.0, 1e-3)?;
    within("z2", r.potentials.values[1], 0.0, 1e-3)?;
    timed(Duration::from_secs(10), start)?;
    Ok(format!("cost {:.7}, z ({:.2e}, {:.2e}), {:?}", r.cost, r.potentials.values[0], r.potentials.values[1], start.elapsed()))
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let rep = run_experiment(&oracle_config(Statistic::Cost)).map_err(|e| e.to_string())?;
    // σ² = zᵀΣ(p)z = (3/16)(z₁ − z₂)² = 3/64
    let sigma2 = 3.0 / 64.0;
    let reference = normal_draws(sigma2, 100_000, 3);
    let ks = ks_statistic(&rep.statistics, &reference).unwrap();
    ensure(ks <= 0.05, format!("KS {ks:.4} > 0.05"))?;
    ensure(rep.metrics.ks <= 0.05, format!("KS vs law draws {:.4} > 0.05", rep.metrics.ks))?;
    let (_, var) = mean_var(&rep.statistics);
    ensure((var / sigma2 - 1.0).abs() <= 0.15, format!("variance {var:.5} vs {sigma2:.5}"))?;
    timed(Duration::from_secs(120), start)?;
    Ok(format!("KS {ks:.4}, variance {var:.5} (target {sigma2:.5}), {:?}", start.elapsed()))
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let rep = run_experiment(&oracle_config(Statistic::Wp)).map_err(|e| e.to_string())?;
    let factor = 1.0 / (2.0 * (7.0f64 / 48.0).sqrt());
    let target = 3.0 / 64.0 * factor * factor;
    let (_, var) = mean_var(&rep.statistics);
    ensure((var / target - 1.0).abs() <= 0.15, format!("variance {var:.5} vs {target:.5}"))?;
    within("law scale factor", rep.law.scale_factor, factor, 1e-9)?;
    Ok(format!("variance {var:.5} (target {target:.5}), {:?}", start.elapsed()))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let rep = run_experiment(&oracle_config(Statistic::Potentials)).map_err(|e| e.to_string())?;
    let (_, var) = mean_var(&rep.statistics);
    // Closed loop: ẑ₂ − ẑ₁ = 1 − 2p̂₁ for this instance, so the variance is
    // 4·p₁(1 − p₁).
    let closed = 4.0 * 0.25 * 0.75;
    // Σ(z̃) from the exact Hessian and A.
    let (p, q, c) = oracle_1d();
    let truth = solve_exact_1d(&p, &q, &c).map_err(|e| e.to_string())?;
    let cov = potentials_covariance(truth.hessian.as_ref().unwrap(), p.weights()).map_err(|e| e.to_string())?;
    let sandwich = cov.matrix.quad_form(&[-1.0, 1.0]);
    within("sandwich vs closed loop", sandwich, closed, 1e-9)?;
    within("law variance", rep.law.variance().unwrap(), closed, 1e-9)?;
    ensure((var / closed - 1.0).abs() <= 0.15, format!("variance {var:.4} vs {closed}"))?;
    Ok(format!("variance {var:.4}, sandwich {sandwich:.6}, closed loop {closed}, {:?}", start.elapsed()))
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let rep = run_experiment(&oracle_config(Statistic::SupNormPotentials)).map_err(|e| e.to_string())?;
    // max_i |N_i| = |D|/2 with D ~ N(0, 3/4).
    let target = 0.75f64.sqrt() * (2.0 / std::f64::consts::PI).sqrt() / 2.0;
    let reference: Vec<f64> = normal_draws(0.75, 100_000, 6).iter().map(|d| d.abs() / 2.0).collect();
    let ks = ks_statistic(&rep.statistics, &reference).unwrap();
    ensure(ks <= 0.05, format!("KS {ks:.4} > 0.05"))?;
    ensure(rep.metrics.ks <= 0.05, format!("KS vs law draws {:.4} > 0.05", rep.metrics.ks))?;
    let (mean, _) = mean_var(&rep.statistics);
    ensure((mean / target - 1.0).abs() <= 0.10, format!("mean {mean:.4} vs {target:.4}"))?;
    Ok(format!("KS {ks:.4}, mean {mean:.4} (target {target:.4}), {:?}", start.elapsed()))
}

fn criterion_7() -> Check {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        source: MeasureSpec::Discrete { points: vec![vec![0.0], vec![1.0]], weights: vec![0.5, 0.5] },
        target: MeasureSpec::Discrete { points: vec![vec![0.0], vec![1.0]], weights: vec![0.5, 0.5] },
        cost: None,
        cost_matrix: Some(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
        ..oracle_config(Statistic::Cost)
    };
    let rep = run_experiment(&cfg).map_err(|e| e.to_string())?;
    // |X₁| with X₁ ~ N(0, 1/4).
    let reference: Vec<f64> = normal_draws(0.25, 100_000, 7).iter().map(|x| x.abs()).collect();
    let ks = ks_statistic(&rep.statistics, &reference).unwrap();
    let (mean, _) = mean_var(&rep.statistics);
    let target = 0.5 * (2.0 / std::f64::consts::PI).sqrt();
    ensure(ks <= 0.06, format!("KS {ks:.4} > 0.06"))?;
    within("mean", mean, target, 0.02)?;
    let nonneg = rep.statistics.iter().filter(|&&v| v >= -1e-9).count() as f64 / rep.statistics.len() as f64;
    ensure(nonneg >= 0.99, format!("nonnegative fraction {nonneg}"))?;
    timed(Duration::from_secs(60), start)?;
    Ok(format!("KS {ks:.4}, mean {mean:.4} (target {target:.4}), nonneg {nonneg}, {:?}", start.elapsed()))
}

fn random_1d_problem(r: &mut rand_chacha::ChaCha8Rng, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs: Vec<f64> = (0..m).map(|_| r.random_range(-0.5..1.5)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let w: Vec<f64> = (0..xs.len()).map(|_| r.random_range(0.2..1.0)).collect();
    let t: f64 = w.iter().sum();
    (xs, w.iter().map(|v| v / t).collect())
}

fn criterion_8() -> Check {
    let start = Instant::now();
    let mut r = rng(8);
    let q1 = ContinuousMeasure::unit_cube(1);
    let q2 = ContinuousMeasure::unit_cube(2);

    // Hessian structure on 50 random instances (1D and 2D, at the optimum).
    let mut worst_eig = f64::NEG_INFINITY;
    for k in 0..50 {
        let two_d = k % 2 == 1;
        let m = r.random_range(2..=5);
        let (problem, w) = if two_d {
            let atoms: Vec<Vec<f64>> = (0..m).map(|_| vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(0.2..1.0)).collect();
            let t: f64 = w.iter().sum();
            (SemidiscreteProblem::new(atoms, CostFunction::quadratic(), q2.clone()).unwrap(), w.iter().map(|v| v / t).collect::<Vec<_>>())
        } else {
            let (xs, w) = random_1d_problem(&mut r, m);
            let cost = if k % 4 == 0 { power_cost(3.0).unwrap() } else { CostFunction::quadratic() };
            (SemidiscreteProblem::new(xs.iter().map(|&x| vec![x]).collect(), cost, q1.clone()).unwrap(), w)
        };
        let sol = solve_problem(&problem, &w, &SolverConfig::default()).map_err(|e| format!("instance {k}: {e}"))?;
        let h = hessian_m_z(&problem, &sol.potentials.values, HessianMethod::InterfaceQuadrature, 1e-3, Backend::Quadrature, 0.0)
            .map_err(|e| e.to_string())?;
        let n = h.nrows();
        ensure(h.is_symmetric(1e-12), format!("instance {k}: asymmetric"))?;
        ensure(h.row_sums().iter().all(|s| s.abs() < 1e-10), format!("instance {k}: row sums"))?;
        for i in 0..n {
            for j in 0..n {
                ensure(i == j || h[(i, j)] >= 0.0, format!("instance {k}: negative off-diagonal"))?;
            }
        }
        let (eig, _) = symmetric_eigen(&h);
        let top = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst_eig = worst_eig.max(top);
        ensure(top <= 1e-8, format!("instance {k}: eigenvalue {top:e}"))?;
    }

    // Gradient against central differences of M, common nodes.
    let mut worst_grad = 0.0f64;
    for k in 0..20 {
        let (xs, w) = random_1d_problem(&mut r, 4);
        let pr = SemidiscreteProblem::new(xs.iter().map(|&x| vec![x]).collect(), CostFunction::quadratic(), q1.clone()).unwrap();
        let z: Vec<f64> = (0..xs.len()).map(|_| r.random_range(-0.2..0.2)).collect();
        let g = grad_m_z(&pr, &z, &w, Backend::Quadrature).unwrap();
        let h = 1e-5;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (eval_m(&pr, &zp, &w, Backend::Quadrature).unwrap() - eval_m(&pr, &zm, &w, Backend::Quadrature).unwrap()) / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1.0);
            worst_grad = worst_grad.max(rel);
            ensure(rel <= 1e-5, format!("gradient instance {k}, component {i}: fd {fd} vs {}", g[i]))?;
        }
    }

    // Gauge invariance of M, σ² and the maximizer; concavity.
    let (p, q, c) = oracle_1d();
    let pr = SemidiscreteProblem::from_measures(&p, &q, &c).unwrap();
    for _ in 0..20 {
        let z = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let zp = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let lam = r.random_range(-5.0..5.0);
        let m0 = eval_m(&pr, &z, p.weights(), Backend::Quadrature).unwrap();
        let m1 = eval_m(&pr, &[z[0] + lam, z[1] + lam], p.weights(), Backend::Quadrature).unwrap();
        within("M gauge", m1, m0, 1e-12)?;
        let s0 = asymptotic_variance_cost(&z, p.weights()).unwrap();
        let s1 = asymptotic_variance_cost(&[z[0] + lam, z[1] + lam], p.weights()).unwrap();
        within("sigma gauge", s1, s0, 1e-14)?;
        let t = r.random_range(0.0..1.0);
        let mix = [t * z[0] + (1.0 - t) * zp[0], t * z[1] + (1.0 - t) * zp[1]];
        let mm = eval_m(&pr, &mix, p.weights(), Backend::Quadrature).unwrap();
        let mp = eval_m(&pr, &zp, p.weights(), Backend::Quadrature).unwrap();
        ensure(mm >= t * m0 + (1.0 - t) * mp - 1e-10, "concavity")?;
    }
    let base = solve_potentials(&p, &q, &c, &SolverConfig::default()).unwrap();
    let shifted = solve_potentials(&p, &q, &c, &SolverConfig { initial: Some(vec![3.7, 3.7]), ..SolverConfig::default() }).unwrap();
    ensure(base.potentials.values == shifted.potentials.values, "argmax changes with the initial gauge")?;

    // A = Σ(p) at the optimum.
    let exact = solve_exact_1d(&p, &q, &c).unwrap();
    let a = gradient_outer_products(&exact.cell_probs);
    ensure(a.max_abs_diff(&sigma_p(p.weights()).unwrap().matrix) <= 1e-12, "A differs from Σ(p)")?;

    // Hadamard derivative against finite differences of the optimal cost.
    let t = 1e-4;
    let dir = [1.0, -1.0];
    let gamma = |w: &[f64]| solve_problem(&pr, w, &SolverConfig::default()).unwrap().cost;
    let fd = (gamma(&[0.25 + t, 0.75 - t]) - gamma(&[0.25, 0.75])) / t;
    let hd = hadamard_derivative(OptSet::Point(&base.potentials.values), p.weights(), &dir).unwrap();
    within("hadamard derivative", hd, fd, 1e-3)?;
    within("hadamard derivative value", hd, -0.5, 1e-6)?;

    // LP: strong duality, face re-evaluation, and brute-force face maxima.
    let mut instances: Vec<(Vec<BigRational>, Vec<BigRational>, Vec<Vec<BigRational>>)> = vec![
        (vec![rat(1, 2), rat(1, 2)], vec![rat(1, 2), rat(1, 2)], vec![vec![rat(0, 1), rat(1, 1)], vec![rat(1, 1), rat(0, 1)]]),
        (vec![rat(1, 4), rat(3, 4)], vec![rat(1, 2), rat(1, 2)], vec![vec![rat(0, 1), rat(1, 1)], vec![rat(1, 1), rat(0, 1)]]),
    ];
    for _ in 0..40 {
        instances.push(random_rational_instance(&mut r, 3, 3));
    }
    for (k, (pp, qq, cc)) in instances.iter().enumerate() {
        let sol = solve_discrete(pp, qq, cc).map_err(|e| e.to_string())?;
        ensure(sol.primal_value == sol.dual_value(), format!("LP {k}: duality gap"))?;
        let face = extract_dual_face(&sol).map_err(|e| e.to_string())?;
        let verts = face_vertices(&face);
        for v in &verts {
            ensure(face.c_transform_value(&v[..face.m()]) == sol.primal_value, format!("LP {k}: vertex re-evaluation"))?;
        }
        ensure(face.contains(&sol.dual_u), format!("LP {k}: simplex duals outside the face"))?;
        for _ in 0..5 {
            let x: Vec<BigRational> = (0..face.m()).map(|_| rat(r.random_range(-5..=5), 1)).collect();
            let s = sup_over_opt(&face, &x).map_err(|e| e.to_string())?;
            ensure(s == brute_force_sup(&face, &x), format!("LP {k}: sup differs from vertex enumeration"))?;
        }
        // Floating LP agrees with the exact one.
        let pf: Vec<f64> = pp.iter().map(to_f64).collect();
        let qf: Vec<f64> = qq.iter().map(to_f64).collect();
        let cf: Vec<Vec<f64>> = cc.iter().map(|row| row.iter().map(to_f64).collect()).collect();
        let solf = solve_discrete(&pf, &qf, &cf).map_err(|e| e.to_string())?;
        within("float LP value", solf.primal_value, to_f64(&sol.primal_value), 1e-9)?;
        within("float strong duality", solf.dual_value(), solf.primal_value, 1e-8)?;
    }
    timed(Duration::from_secs(120), start)?;
    Ok(format!(
        "50 Hessians (max eigenvalue {worst_eig:.1e}), gradient rel. error {worst_grad:.1e}, {} LPs, {:?}",
        instances.len(),
        start.elapsed()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("1D oracle solve", criterion_1),
        ("2D symmetric solve", criterion_2),
        ("cost CLT", criterion_3),
        ("W_p delta method", criterion_4),
        ("potentials CLT", criterion_5),
        ("sup-norm potentials", criterion_6),
        ("sup-of-Gaussian limit", criterion_7),
        ("structural properties", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
