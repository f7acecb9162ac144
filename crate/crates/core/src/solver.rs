//! Semidiscrete dual functional, its derivatives, and the ascent solver.
//!
//! For atoms `x_1..x_m`, weights `p` and a target `Q`,
//!
//! ```text
//! M(z, p)      = Σ_k p_k z_k / ‖p‖₁ + ∫ min_i { c(y, x_i) − z_i } dQ(y)
//! ∂M/∂z_k      = p_k / ‖p‖₁ − Q(A_k(z))
//! ∂²M/∂z_i∂z_j = ∫_{A_i ∩ A_j} 1 / |∇_y c(x_i, y) − ∇_y c(x_j, y)| dQ   (i ≠ j)
//! ```
//!
//! where `A_k(z)` is the Laguerre cell of atom `k`. The Hessian diagonal is
//! minus the off-diagonal row sum. `M` is concave and invariant under
//! `z ↦ z + λ1`; the solver works in the sum-zero gauge.

use serde::{Deserialize, Serialize};

use crate::costs::CostFunction;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm2, solve, DenseMatrix};
use crate::measures::{ContinuousMeasure, DiscreteMeasure};
use crate::quadrature::{gauss_legendre, BoxCell};
use crate::scalar::{pairwise_sum, Real};
use crate::seeds::rng_from_seed;

/// Representative chosen for the additive-constant ambiguity of `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    SumZero,
    FirstZero,
    Raw,
}

/// Dual potential vector together with its gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct PotentialVector<T> {
    pub values: Vec<T>,
    pub gauge: Gauge,
}

impl<T: Real> PotentialVector<T> {
    pub fn raw(values: Vec<T>) -> Self {
        Self { values, gauge: Gauge::Raw }
    }

    pub fn sum_zero(values: &[T]) -> Self {
        Self::raw(values.to_vec()).regauge(Gauge::SumZero)
    }

    /// Shifts by a constant so that the requested gauge holds.
    pub fn regauge(self, gauge: Gauge) -> Self {
        let shift = match gauge {
            Gauge::Raw => T::zero(),
            Gauge::SumZero => self.values.iter().copied().sum::<T>() / T::of_usize(self.values.len().max(1)),
            Gauge::FirstZero => self.values.first().copied().unwrap_or_else(T::zero),
        };
        let mut values: Vec<T> = self.values.into_iter().map(|v| v - shift).collect();
        if gauge == Gauge::FirstZero {
            if let Some(first) = values.first_mut() {
                *first = T::zero();
            }
        }
        Self { values, gauge }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Integration backend for `∫ · dQ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Sample average over one fixed seeded sample (common random numbers
    /// across every evaluation that shares the seed).
    Mc { samples: usize, seed: u64 },
    /// Composite Gauss–Legendre on the measure's grid, adaptively refined
    /// on grid cells cut by a Laguerre boundary.
    Quadrature,
    /// Monotone rearrangement in one dimension (solver only; evaluation
    /// falls back to quadrature).
    Exact1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mc,
    Quadrature,
    Exact1d,
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Mc { .. } => BackendKind::Mc,
            Backend::Quadrature => BackendKind::Quadrature,
            Backend::Exact1d => BackendKind::Exact1d,
        }
    }
}

/// Hessian evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMethod {
    /// Central differences of the gradient with common nodes.
    FdGradient,
    /// Direct integral over the cell interfaces.
    InterfaceQuadrature,
}

/// Result of a semidiscrete solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SolveReport<T> {
    pub potentials: PotentialVector<T>,
    pub cost: T,
    pub cell_probs: Vec<T>,
    pub grad_norm: T,
    pub hessian: Option<DenseMatrix<T>>,
    pub iterations: usize,
    pub newton_steps: usize,
    pub backend: BackendKind,
    /// Standard error of the integral term (zero for deterministic backends).
    pub integration_noise: T,
    /// Line search could not improve further; accepted because the
    /// gradient was below the stall tolerance.
    pub stalled: bool,
}

/// The pieces of a semidiscrete transport problem that do not change with
/// the weights: atoms, cost and target.
#[derive(Debug, Clone)]
pub struct SemidiscreteProblem<T: Real> {
    pub atoms: Vec<Vec<T>>,
    pub cost: CostFunction<T>,
    pub target: ContinuousMeasure<T>,
}

impl<T: Real> SemidiscreteProblem<T> {
    pub fn new(atoms: Vec<Vec<T>>, cost: CostFunction<T>, target: ContinuousMeasure<T>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("no atoms"));
        }
        if atoms.iter().any(|x| x.len() != target.dim()) {
            return Err(invalid("atom dimension does not match the target measure"));
        }
        Ok(Self { atoms, cost, target })
    }

    pub fn from_measures(p: &DiscreteMeasure<T>, q: &ContinuousMeasure<T>, cost: &CostFunction<T>) -> Result<Self> {
        Self::new(p.points().to_vec(), cost.clone(), q.clone())
    }

    pub fn m(&self) -> usize {
        self.atoms.len()
    }
}

/// `argmin_i { c(y, x_i) − z_i }` with ties resolved to the lowest index.
pub fn cell_assign<T: Real>(y: &[T], z: &[T], cost: &CostFunction<T>, atoms: &[Vec<T>]) -> usize {
    assign(y, z, cost, atoms).0
}

#[inline]
fn assign<T: Real>(y: &[T], z: &[T], cost: &CostFunction<T>, atoms: &[Vec<T>]) -> (usize, T) {
    let mut best = 0;
    let mut best_val = cost.eval(&atoms[0], y) - z[0];
    for (i, x) in atoms.iter().enumerate().skip(1) {
        let v = cost.eval(x, y) - z[i];
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    (best, best_val)
}

/// One evaluation of the integral term and the cell masses.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation<T> {
    integral: T,
    integral_se: T,
    masses: Vec<T>,
    /// Unresolved (finest-level) boundary crossings in one dimension:
    /// location in target space, label on the left, label on the right.
    breakpoints: Vec<(T, usize, usize)>,
}

/// Fixed integration state for one backend: either a frozen Monte Carlo
/// sample with its cost matrix, or the quadrature grid.
pub(crate) enum Integrator<'a, T: Real> {
    Mc {
        problem: &'a SemidiscreteProblem<T>,
        /// Row-major `samples × m` matrix of `c(y_s, x_i)`.
        costs: Vec<T>,
        samples: usize,
    },
    Quad {
        problem: &'a SemidiscreteProblem<T>,
        cells: Vec<BoxCell<T>>,
        rule: (Vec<T>, Vec<T>),
        max_depth: usize,
    },
}

/// Default refinement depth of the adaptive quadrature.
pub fn default_max_depth(dim: usize) -> usize {
    match dim {
        1 => 52,
        2 => 8,
        _ => 3,
    }
}

impl<'a, T: Real> Integrator<'a, T> {
    pub(crate) fn new(problem: &'a SemidiscreteProblem<T>, backend: Backend, max_depth: Option<usize>) -> Result<Self> {
        match backend {
            Backend::Mc { samples, seed } => {
                if samples < 2 {
                    return Err(invalid("Monte Carlo backend needs at least 2 samples"));
                }
                let m = problem.m();
                let mut rng = rng_from_seed(seed);
                let mut costs = Vec::with_capacity(samples * m);
                for _ in 0..samples {
                    let y = problem.target.sample(&mut rng);
                    for x in &problem.atoms {
                        let c = problem.cost.eval(x, &y);
                        if !c.is_finite() {
                            return Err(Error::IntegrationFailure {
                                point: y.iter().map(|v| v.to_f64_lossy()).collect(),
                            });
                        }
                        costs.push(c);
                    }
                }
                Ok(Integrator::Mc { problem, costs, samples })
            }
            Backend::Quadrature | Backend::Exact1d => {
                let scheme = problem
                    .target
                    .quadrature()
                    .ok_or_else(|| Error::UnsupportedBackend("target measure has no quadrature scheme".into()))?;
                let cells = problem.target.base_cells()?;
                let rule = gauss_legendre(scheme.nodes_per_cell);
                let max_depth = max_depth.unwrap_or_else(|| default_max_depth(problem.target.dim()));
                Ok(Integrator::Quad { problem, cells, rule, max_depth })
            }
        }
    }

    fn problem(&self) -> &SemidiscreteProblem<T> {
        match self {
            Integrator::Mc { problem, .. } | Integrator::Quad { problem, .. } => problem,
        }
    }

    pub(crate) fn evaluate(&self, z: &[T]) -> Result<Evaluation<T>> {
        let m = self.problem().m();
        if z.len() != m {
            return Err(invalid(format!("potential has {} entries, expected {m}", z.len())));
        }
        match self {
            Integrator::Mc { costs, samples, .. } => {
                let mut mins = Vec::with_capacity(*samples);
                let mut counts = vec![0usize; m];
                for row in costs.chunks_exact(m) {
                    let mut best = 0;
                    let mut best_val = row[0] - z[0];
                    for i in 1..m {
                        let v = row[i] - z[i];
                        if v < best_val {
                            best = i;
                            best_val = v;
                        }
                    }
                    counts[best] += 1;
                    mins.push(best_val);
                }
                let est = crate::measures::mean_and_std_error(&mins);
                let nf = T::of_usize(*samples);
                Ok(Evaluation {
                    integral: est.value,
                    integral_se: est.std_error,
                    masses: counts.into_iter().map(|c| T::of_usize(c) / nf).collect(),
                    breakpoints: Vec::new(),
                })
            }
            Integrator::Quad { problem, cells, rule, max_depth } => {
                let mut acc = QuadAcc { terms: Vec::new(), masses: vec![T::zero(); m], breakpoints: Vec::new() };
                for cell in cells {
                    quad_cell(problem, z, cell, rule, 0, *max_depth, &mut acc)?;
                }
                let total: T = acc.masses.iter().copied().sum();
                let masses = acc.masses.iter().map(|&w| w / total).collect();
                Ok(Evaluation {
                    integral: pairwise_sum(&acc.terms),
                    integral_se: T::zero(),
                    masses,
                    breakpoints: acc.breakpoints,
                })
            }
        }
    }
}

struct QuadAcc<T> {
    terms: Vec<T>,
    masses: Vec<T>,
    breakpoints: Vec<(T, usize, usize)>,
}

fn quad_cell<T: Real>(
    problem: &SemidiscreteProblem<T>,
    z: &[T],
    cell: &BoxCell<T>,
    rule: &(Vec<T>, Vec<T>),
    depth: usize,
    max_depth: usize,
    acc: &mut QuadAcc<T>,
) -> Result<()> {
    let q = &problem.target;
    let corner_labels: Vec<usize> = cell
        .corners()
        .iter()
        .map(|u| assign(&q.transform(u), z, &problem.cost, &problem.atoms).0)
        .collect();
    let first = corner_labels[0];
    let corners_agree = corner_labels.iter().all(|&l| l == first);
    if !corners_agree && depth < max_depth {
        for child in cell.split() {
            quad_cell(problem, z, &child, rule, depth + 1, max_depth, acc)?;
        }
        return Ok(());
    }
    let nodes = cell.nodes(rule);
    let mut evals = Vec::with_capacity(nodes.len());
    for (u, w) in &nodes {
        let y = q.transform(u);
        let (label, val) = assign(&y, z, &problem.cost, &problem.atoms);
        if !val.is_finite() {
            return Err(Error::IntegrationFailure { point: y.iter().map(|v| v.to_f64_lossy()).collect() });
        }
        evals.push((label, val, *w));
    }
    let uniform = corners_agree && evals.iter().all(|e| e.0 == first);
    if uniform || depth >= max_depth {
        for (label, val, w) in evals {
            let w = q.base_probability(w);
            acc.terms.push(w * val);
            acc.masses[label] = acc.masses[label] + w;
        }
        if !uniform && cell.lo.len() == 1 && corner_labels[0] != corner_labels[1] {
            let mid = (cell.lo[0] + cell.hi[0]) * T::of(0.5);
            acc.breakpoints.push((q.transform(&[mid])[0], corner_labels[0], corner_labels[1]));
        }
        return Ok(());
    }
    for child in cell.split() {
        quad_cell(problem, z, &child, rule, depth + 1, max_depth, acc)?;
    }
    Ok(())
}

fn normalized_weights<T: Real>(p: &[T]) -> Result<Vec<T>> {
    if p.iter().any(|&w| !(w > T::zero()) || !w.is_finite()) {
        return Err(invalid("weights must lie in the open positive hyperoctant"));
    }
    let total: T = p.iter().copied().sum();
    Ok(p.iter().map(|&w| w / total).collect())
}

/// `M(z, p)` with the given backend.
pub fn eval_m<T: Real>(problem: &SemidiscreteProblem<T>, z: &[T], p: &[T], backend: Backend) -> Result<T> {
    let pbar = check_weights(problem, p)?;
    let e = Integrator::new(problem, backend, None)?.evaluate(z)?;
    Ok(dot(&pbar, z) + e.integral)
}

/// `∇_z M(z, p)`; components sum to zero.
pub fn grad_m_z<T: Real>(problem: &SemidiscreteProblem<T>, z: &[T], p: &[T], backend: Backend) -> Result<Vec<T>> {
    let pbar = check_weights(problem, p)?;
    let e = Integrator::new(problem, backend, None)?.evaluate(z)?;
    Ok(pbar.iter().zip(&e.masses).map(|(&a, &b)| a - b).collect())
}

fn check_weights<T: Real>(problem: &SemidiscreteProblem<T>, p: &[T]) -> Result<Vec<T>> {
    if p.len() != problem.m() {
        return Err(invalid(format!("{} weights for {} atoms", p.len(), problem.m())));
    }
    normalized_weights(p)
}

/// Cell probabilities `Q(A_k(z))`.
pub fn cell_probabilities<T: Real>(problem: &SemidiscreteProblem<T>, z: &[T], backend: Backend) -> Result<Vec<T>> {
    Ok(Integrator::new(problem, backend, None)?.evaluate(z)?.masses)
}

/// Hessian `D²_z M(z, p)`. It does not depend on `p`.
///
/// `FdGradient` differentiates [`grad_m_z`] with step `h` using the same
/// nodes (or Monte Carlo sample) on both sides. `InterfaceQuadrature`
/// integrates over the cell interfaces directly: boundary points in one
/// dimension, bisector segments for the quadratic cost in two dimensions.
pub fn hessian_m_z<T: Real>(
    problem: &SemidiscreteProblem<T>,
    z: &[T],
    method: HessianMethod,
    h: T,
    backend: Backend,
    mass_floor: T,
) -> Result<DenseMatrix<T>> {
    let integrator = Integrator::new(problem, backend, None)?;
    hessian_with(&integrator, z, method, h, mass_floor)
}

pub(crate) fn hessian_with<T: Real>(
    integrator: &Integrator<'_, T>,
    z: &[T],
    method: HessianMethod,
    h: T,
    mass_floor: T,
) -> Result<DenseMatrix<T>> {
    let problem = integrator.problem();
    let m = problem.m();
    if !problem.cost.has_grad_y() {
        return Err(Error::UnsupportedBackend("cost has no y-gradient".into()));
    }
    let base = integrator.evaluate(z)?;
    if let Some((cell, &mass)) = base.masses.iter().enumerate().find(|(_, &w)| w < mass_floor) {
        return Err(Error::HessianDegenerate { cell, mass: mass.to_f64_lossy() });
    }
    let mut hess = match method {
        HessianMethod::FdGradient => {
            if !(h > T::zero()) {
                return Err(invalid("finite-difference step must be positive"));
            }
            let mut hm = DenseMatrix::zeros(m, m);
            let mut zp = z.to_vec();
            for j in 0..m {
                zp[j] = z[j] + h;
                let plus = integrator.evaluate(&zp)?.masses;
                zp[j] = z[j] - h;
                let minus = integrator.evaluate(&zp)?.masses;
                zp[j] = z[j];
                for i in 0..m {
                    // ∂(p_i − Q(A_i)) / ∂z_j
                    hm[(i, j)] = -(plus[i] - minus[i]) / (h + h);
                }
            }
            hm
        }
        HessianMethod::InterfaceQuadrature => interface_hessian(integrator, z, &base)?,
    };
    hess.symmetrize();
    Ok(hess)
}

fn interface_hessian<T: Real>(integrator: &Integrator<'_, T>, z: &[T], base: &Evaluation<T>) -> Result<DenseMatrix<T>> {
    let problem = integrator.problem();
    let m = problem.m();
    let mut hm = DenseMatrix::zeros(m, m);
    match problem.target.dim() {
        1 => {
            // Locate boundaries with the quadrature refinement even when
            // the caller integrates by Monte Carlo.
            let breakpoints = if matches!(integrator, Integrator::Quad { .. }) {
                base.breakpoints.clone()
            } else {
                Integrator::new(problem, Backend::Quadrature, None)?.evaluate(z)?.breakpoints
            };
            for (b, i, j) in breakpoints {
                let y = [b];
                let gi = problem.cost.grad_y(&problem.atoms[i], &y);
                let gj = problem.cost.grad_y(&problem.atoms[j], &y);
                let (Some(gi), Some(gj)) = (gi, gj) else {
                    return Err(Error::UnsupportedBackend("cost gradient undefined on an interface".into()));
                };
                let gap = (gi[0] - gj[0]).abs();
                let q = problem.target.density(&y).unwrap_or_else(T::zero);
                let v = q / gap;
                hm[(i, j)] = hm[(i, j)] + v;
                hm[(j, i)] = hm[(j, i)] + v;
            }
        }
        2 if problem.cost.is_quadratic() => {
            for i in 0..m {
                for j in (i + 1)..m {
                    let v = bisector_integral(problem, z, i, j);
                    hm[(i, j)] = v;
                    hm[(j, i)] = v;
                }
            }
        }
        d => {
            return Err(Error::UnsupportedBackend(format!(
                "interface quadrature is available in 1D and for the quadratic cost in 2D (d = {d})"
            )))
        }
    }
    for i in 0..m {
        let off: T = (0..m).filter(|&j| j != i).map(|j| hm[(i, j)]).sum();
        hm[(i, i)] = -off;
    }
    Ok(hm)
}

/// `∫ q dℓ / |∇_y c(x_i,·) − ∇_y c(x_j,·)|` over the i–j interface for the
/// quadratic cost in the plane. The interface is the bisector line clipped
/// to the support box and to the half-planes where no other atom is
/// strictly better.
fn bisector_integral<T: Real>(problem: &SemidiscreteProblem<T>, z: &[T], i: usize, j: usize) -> T {
    let xi = &problem.atoms[i];
    let xj = &problem.atoms[j];
    let two = T::of(2.0);
    let sq = |v: &[T]| v.iter().fold(T::zero(), |a, &b| a + b * b);
    let n = [xj[0] - xi[0], xj[1] - xi[1]];
    let nn = n[0] * n[0] + n[1] * n[1];
    let norm_n = nn.sqrt();
    // 2 y·n = |x_j|² − |x_i|² − z_j + z_i
    let rhs = sq(xj) - sq(xi) - z[j] + z[i];
    let y0 = [n[0] * rhs / (two * nn), n[1] * rhs / (two * nn)];
    let dir = [-n[1] / norm_n, n[0] / norm_n];
    let mut t_lo = T::neg_infinity();
    let mut t_hi = T::infinity();
    // a t ≤ b
    let mut clip = |a: T, b: T| {
        if a.abs() <= T::epsilon() {
            if b < T::zero() {
                t_lo = T::infinity();
            }
        } else if a > T::zero() {
            t_hi = t_hi.min(b / a);
        } else {
            t_lo = t_lo.max(b / a);
        }
    };
    let (lo, hi) = problem.target.support_box();
    for a in 0..2 {
        clip(dir[a], hi[a] - y0[a]);
        clip(-dir[a], y0[a] - lo[a]);
    }
    for (k, xk) in problem.atoms.iter().enumerate() {
        if k == i || k == j {
            continue;
        }
        // 2 y·(x_k − x_i) ≤ |x_k|² − |x_i|² − z_k + z_i
        let dk = [xk[0] - xi[0], xk[1] - xi[1]];
        let bk = sq(xk) - sq(xi) - z[k] + z[i];
        let a = two * (dk[0] * dir[0] + dk[1] * dir[1]);
        let b = bk - two * (dk[0] * y0[0] + dk[1] * y0[1]);
        clip(a, b);
    }
    if !(t_hi > t_lo) {
        return T::zero();
    }
    let gap = two * norm_n;
    let point = |t: T| [y0[0] + t * dir[0], y0[1] + t * dir[1]];
    if problem.target.is_uniform() {
        let mid = point((t_lo + t_hi) * T::of(0.5));
        let q = problem.target.density(&mid).unwrap_or_else(T::zero);
        return q * (t_hi - t_lo) / gap;
    }
    let rule = gauss_legendre::<T>(10);
    let pieces = 16;
    let width = (t_hi - t_lo) / T::of_usize(pieces);
    let half = T::of(0.5);
    let mut terms = Vec::with_capacity(pieces * 10);
    for s in 0..pieces {
        let a = t_lo + width * T::of_usize(s);
        let mid = a + width * half;
        for (&x, &w) in rule.0.iter().zip(&rule.1) {
            let y = point(mid + x * width * half);
            let q = problem.target.density(&y).unwrap_or_else(T::zero);
            terms.push(w * width * half * q);
        }
    }
    pairwise_sum(&terms) / gap
}

/// Solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
#[serde(default)]
pub struct SolverConfig<T> {
    pub backend: Backend,
    /// Stop when `|∇_z M| < tol`. For the Monte Carlo backend the effective
    /// tolerance is at least three standard errors of the cell masses.
    pub tol: T,
    pub max_iter: usize,
    pub newton: bool,
    /// Newton activation floor on cell masses; default `min_k p_k / 2`.
    pub newton_floor: Option<T>,
    pub hessian_method: Option<HessianMethod>,
    pub fd_step: T,
    pub max_depth: Option<usize>,
    /// Warm start (any gauge).
    pub initial: Option<Vec<T>>,
    /// Gradient norm below which a stalled line search counts as converged.
    pub stall_tol: T,
    /// Attach the Hessian at the solution to the report.
    pub report_hessian: bool,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        let eps = T::epsilon();
        Self {
            backend: Backend::Quadrature,
            tol: T::of(1e-7).max(eps.sqrt() * T::of(10.0)),
            max_iter: 500,
            newton: true,
            newton_floor: None,
            hessian_method: None,
            fd_step: T::of(1e-4).max(eps.cbrt()),
            max_depth: None,
            initial: None,
            stall_tol: T::of(1e-5).max(eps.sqrt() * T::of(30.0)),
            report_hessian: true,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn with_backend(backend: Backend) -> Self {
        Self { backend, ..Self::default() }
    }
}

/// Maximizes `M(·, p)` for `P = Σ p_k δ_{x_k}`.
pub fn solve_potentials<T: Real>(
    p: &DiscreteMeasure<T>,
    q: &ContinuousMeasure<T>,
    cost: &CostFunction<T>,
    config: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    let problem = SemidiscreteProblem::from_measures(p, q, cost)?;
    if config.backend == Backend::Exact1d {
        return solve_exact_1d(p, q, cost);
    }
    solve_problem(&problem, p.weights(), config)
}

/// [`solve_potentials`] on a prepared problem with arbitrary positive
/// weights.
pub fn solve_problem<T: Real>(problem: &SemidiscreteProblem<T>, weights: &[T], config: &SolverConfig<T>) -> Result<SolveReport<T>> {
    if config.backend == Backend::Exact1d {
        return solve_exact_1d_weights(&problem.atoms, weights, &problem.target, &problem.cost);
    }
    let pbar = check_weights(problem, weights)?;
    let m = problem.m();
    let integrator = Integrator::new(problem, config.backend, config.max_depth)?;

    let mut z = match &config.initial {
        Some(init) if init.len() == m => PotentialVector::sum_zero(init).values,
        Some(_) => return Err(invalid("warm start has the wrong length")),
        None => vec![T::zero(); m],
    };
    let mut eval = integrator.evaluate(&z)?;
    let value_of = |e: &Evaluation<T>, z: &[T]| dot(&pbar, z) + e.integral;
    let mut value = value_of(&eval, &z);

    let min_p = pbar.iter().copied().fold(T::infinity(), T::min);
    let floor = config.newton_floor.unwrap_or(min_p * T::of(0.5));
    let method = config.hessian_method.unwrap_or_else(|| default_hessian_method(problem));
    let armijo = T::of(1e-4);
    let mut ascent_step = T::one();
    let mut newton_steps = 0;
    let mut stalled = false;

    let tol_for = |e: &Evaluation<T>| -> T {
        match config.backend {
            Backend::Mc { samples, .. } => {
                let nf = T::of_usize(samples);
                let se2: T = e.masses.iter().map(|&w| w * (T::one() - w) / nf).sum();
                config.tol.max(T::of(3.0) * se2.sqrt())
            }
            _ => config.tol,
        }
    };

    let mut iterations = 0;
    let mut grad: Vec<T> = pbar.iter().zip(&eval.masses).map(|(&a, &b)| a - b).collect();
    loop {
        // A single atom has nothing to optimize.
        if m == 1 {
            break;
        }
        let gnorm = norm2(&grad);
        if gnorm < tol_for(&eval) {
            break;
        }
        if iterations >= config.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: gnorm.to_f64_lossy(),
                best_potentials: z.iter().map(|v| v.to_f64_lossy()).collect(),
                best_cost: value.to_f64_lossy(),
            });
        }
        iterations += 1;

        let all_above = eval.masses.iter().all(|&w| w > floor);
        let newton_dir = if config.newton && all_above {
            newton_direction(&integrator, &z, &grad, method, config.fd_step, floor)
        } else {
            None
        };

        let mut accepted = false;
        if let Some(dir) = newton_dir {
            let slope = dot(&grad, &dir);
            let mut t = T::one();
            for _ in 0..40 {
                let cand: Vec<T> = z.iter().zip(&dir).map(|(&a, &d)| a + t * d).collect();
                let e = integrator.evaluate(&cand)?;
                let v = value_of(&e, &cand);
                let keeps_cells = e.masses.iter().all(|&w| w > floor);
                if keeps_cells && v >= value + armijo * t * slope {
                    z = cand;
                    eval = e;
                    value = v;
                    accepted = true;
                    newton_steps += 1;
                    break;
                }
                t = t * T::of(0.5);
            }
        }
        if !accepted {
            let slope = dot(&grad, &grad);
            let mut t = ascent_step;
            for _ in 0..60 {
                let cand: Vec<T> = z.iter().zip(&grad).map(|(&a, &g)| a + t * g).collect();
                let e = integrator.evaluate(&cand)?;
                let v = value_of(&e, &cand);
                if v >= value + armijo * t * slope && v > value {
                    z = cand;
                    eval = e;
                    value = v;
                    accepted = true;
                    ascent_step = t * T::of(2.0);
                    break;
                }
                t = t * T::of(0.5);
            }
        }
        z = PotentialVector::sum_zero(&z).values;
        grad = pbar.iter().zip(&eval.masses).map(|(&a, &b)| a - b).collect();
        if !accepted {
            let gnorm = norm2(&grad);
            if gnorm <= config.stall_tol.max(tol_for(&eval)) {
                stalled = true;
                break;
            }
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: gnorm.to_f64_lossy(),
                best_potentials: z.iter().map(|v| v.to_f64_lossy()).collect(),
                best_cost: value.to_f64_lossy(),
            });
        }
    }

    // Re-evaluate at the gauged point so cost and masses match it exactly.
    let eval_final = integrator.evaluate(&z)?;
    let cost_value = value_of(&eval_final, &z);
    let grad: Vec<T> = pbar.iter().zip(&eval_final.masses).map(|(&a, &b)| a - b).collect();
    let hessian = if config.report_hessian && m > 1 {
        hessian_with(&integrator, &z, method, config.fd_step, T::zero()).ok()
    } else if m == 1 {
        Some(DenseMatrix::zeros(1, 1))
    } else {
        None
    };
    Ok(SolveReport {
        potentials: PotentialVector { values: z, gauge: Gauge::SumZero },
        cost: cost_value,
        cell_probs: eval_final.masses,
        grad_norm: norm2(&grad),
        hessian,
        iterations,
        newton_steps,
        backend: config.backend.kind(),
        integration_noise: eval_final.integral_se,
        stalled,
    })
}

fn default_hessian_method<T: Real>(problem: &SemidiscreteProblem<T>) -> HessianMethod {
    let d = problem.target.dim();
    if problem.cost.has_grad_y() && (d == 1 || (d == 2 && problem.cost.is_quadratic())) {
        HessianMethod::InterfaceQuadrature
    } else {
        HessianMethod::FdGradient
    }
}

fn newton_direction<T: Real>(
    integrator: &Integrator<'_, T>,
    z: &[T],
    grad: &[T],
    method: HessianMethod,
    h: T,
    floor: T,
) -> Option<Vec<T>> {
    let m = z.len();
    let hess = hessian_with(integrator, z, method, h, floor).ok()?;
    // (H − 11ᵀ/m) d = −g has the ⟨1⟩^⊥ Newton step as its solution.
    let inv_m = T::one() / T::of_usize(m);
    let shifted = DenseMatrix::from_fn(m, m, |i, j| hess[(i, j)] - inv_m);
    let rhs: Vec<T> = grad.iter().map(|&g| -g).collect();
    let dir = solve(&shifted, &rhs)?;
    if dir.iter().all(|d| d.is_finite()) && dot(grad, &dir) > T::zero() {
        Some(dir)
    } else {
        None
    }
}

/// Exact solver in one dimension for strictly convex power costs.
///
/// Cells are consecutive intervals with boundaries `b_k = F_Q⁻¹(p_1 + … + p_k)`;
/// potentials follow from indifference at every boundary,
/// `c(b_k, x_k) − z_k = c(b_k, x_{k+1}) − z_{k+1}`.
pub fn solve_exact_1d<T: Real>(p: &DiscreteMeasure<T>, q: &ContinuousMeasure<T>, cost: &CostFunction<T>) -> Result<SolveReport<T>> {
    solve_exact_1d_weights(p.points(), p.weights(), q, cost)
}

/// [`solve_exact_1d`] with bare weights; zero weights (empty cells) are
/// allowed so that empirical frequencies can be used directly.
pub fn solve_exact_1d_weights<T: Real>(
    atoms: &[Vec<T>],
    weights: &[T],
    q: &ContinuousMeasure<T>,
    cost: &CostFunction<T>,
) -> Result<SolveReport<T>> {
    if q.dim() != 1 || atoms.iter().any(|x| x.len() != 1) {
        return Err(invalid("exact solver is one-dimensional"));
    }
    if atoms.len() != weights.len() || atoms.is_empty() {
        return Err(invalid("atoms and weights disagree"));
    }
    if atoms.windows(2).any(|w| !(w[0][0] < w[1][0])) {
        return Err(invalid("exact solver needs atoms sorted in strictly increasing order"));
    }
    match cost.exponent() {
        Some(e) if e > T::one() => {}
        _ => return Err(invalid("exact solver needs a power cost with exponent > 1")),
    }
    if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) {
        return Err(invalid("weights must be nonnegative"));
    }
    let total: T = weights.iter().copied().sum();
    let m = atoms.len();
    let mut levels = Vec::with_capacity(m + 1);
    levels.push(T::zero());
    let mut run = T::zero();
    for (k, &w) in weights.iter().enumerate() {
        run = run + w / total;
        levels.push(if k + 1 == m { T::one() } else { run.min(T::one()) });
    }
    let bounds: Vec<T> = levels.iter().map(|&u| q.quantile(u)).collect::<Result<_>>()?;

    let mut z = vec![T::zero(); m];
    for k in 0..m.saturating_sub(1) {
        let b = [bounds[k + 1]];
        z[k + 1] = z[k] + cost.eval(&atoms[k + 1], &b) - cost.eval(&atoms[k], &b);
    }
    let z = PotentialVector::sum_zero(&z).values;

    let (lo, hi) = q.base_box();
    let (lo, hi) = (lo[0], hi[0]);
    let rule = gauss_legendre::<T>(12);
    let mut terms = Vec::new();
    let half = T::of(0.5);
    for k in 0..m {
        let (ua, ub) = (levels[k], levels[k + 1]);
        if !(ub > ua) {
            continue;
        }
        // Split at the atom so the integrand is smooth on each piece.
        let mut cuts = vec![ua];
        let ux = q.cdf(atoms[k][0])?;
        if ux > ua && ux < ub {
            cuts.push(ux);
        }
        cuts.push(ub);
        for seg in cuts.windows(2) {
            let pieces = 16;
            let width = (seg[1] - seg[0]) / T::of_usize(pieces);
            for s in 0..pieces {
                let mid = seg[0] + width * (T::of_usize(s) + half);
                for (&x, &w) in rule.0.iter().zip(&rule.1) {
                    let u = mid + x * width * half;
                    let t = lo + u * (hi - lo);
                    let y = q.transform(&[t]);
                    terms.push(w * width * half * cost.eval(&atoms[k], &y));
                }
            }
        }
    }
    let cost_value = pairwise_sum(&terms);

    let hessian = if weights.iter().all(|&w| w > T::zero()) {
        let mut hm = DenseMatrix::zeros(m, m);
        for k in 0..m.saturating_sub(1) {
            let b = [bounds[k + 1]];
            let (Some(gk), Some(gn)) = (cost.grad_y(&atoms[k], &b), cost.grad_y(&atoms[k + 1], &b)) else {
                continue;
            };
            let v = q.density(&b).unwrap_or_else(T::zero) / (gk[0] - gn[0]).abs();
            hm[(k, k + 1)] = v;
            hm[(k + 1, k)] = v;
            hm[(k, k)] = hm[(k, k)] - v;
            hm[(k + 1, k + 1)] = hm[(k + 1, k + 1)] - v;
        }
        Some(hm)
    } else {
        None
    };

    Ok(SolveReport {
        potentials: PotentialVector { values: z, gauge: Gauge::SumZero },
        cost: cost_value,
        cell_probs: weights.iter().map(|&w| w / total).collect(),
        grad_norm: T::zero(),
        hessian,
        iterations: 0,
        newton_steps: 0,
        backend: BackendKind::Exact1d,
        integration_noise: T::zero(),
        stalled: false,
    })
}
