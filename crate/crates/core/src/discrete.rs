//! Discrete–discrete transport as a linear program, and its dual face.
//!
//! [`solve_discrete`] runs the transportation simplex (northwest-corner
//! start, u–v pricing, Bland-style lowest-index pivoting). The dual optimal
//! set is never enumerated: [`DualOptimalFace`] keeps the constraint system
//! and [`sup_over_opt`] solves one small LP per query.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lp::{maximize_free, Constraint, LpOutcome, Sense};
use crate::scalar::Field;

/// Optimal plan with a complementary dual pair in the gauge `Σ u_i = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlanLP<F> {
    pub row_marginal: Vec<F>,
    pub col_marginal: Vec<F>,
    pub cost_matrix: Vec<Vec<F>>,
    pub plan: Vec<Vec<F>>,
    pub primal_value: F,
    pub dual_u: Vec<F>,
    pub dual_v: Vec<F>,
    /// Basic cells of the final tree (includes zero-flow cells).
    pub basis: Vec<(usize, usize)>,
}

impl<F: Field> TransportPlanLP<F> {
    pub fn dual_value(&self) -> F {
        dot(&self.row_marginal, &self.dual_u) + dot(&self.col_marginal, &self.dual_v)
    }

    /// Cells carrying positive mass.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut s = Vec::new();
        for (i, row) in self.plan.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                if x.is_pos() {
                    s.push((i, j));
                }
            }
        }
        s
    }
}

fn dot<F: Field>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

fn sum<F: Field>(a: &[F]) -> F {
    a.iter().fold(F::zero(), |acc, x| acc + x.clone())
}

fn check_simplex<F: Field>(w: &[F], name: &str) -> Result<()> {
    if w.is_empty() {
        return Err(invalid(format!("{name} is empty")));
    }
    if w.iter().any(|x| !x.is_pos()) {
        return Err(invalid(format!("{name} must be strictly positive")));
    }
    let gap = (sum(w) - F::one()).abs();
    let ok = if F::is_exact() { gap.is_zero() } else { gap.as_f64() <= 1e-9 };
    if !ok {
        return Err(invalid(format!("{name} does not sum to 1")));
    }
    Ok(())
}

/// Solves `min Σ c_ij γ_ij` over couplings of `p` and `q`.
pub fn solve_discrete<F: Field>(p: &[F], q: &[F], cost: &[Vec<F>]) -> Result<TransportPlanLP<F>> {
    check_simplex(p, "row marginal")?;
    check_simplex(q, "column marginal")?;
    let m = p.len();
    let l = q.len();
    if cost.len() != m || cost.iter().any(|r| r.len() != l) {
        return Err(invalid(format!("cost matrix must be {m}×{l}")));
    }

    // Northwest corner; when a row and a column run out together the walk
    // moves down, leaving a zero-flow basic cell.
    let mut plan = vec![vec![F::zero(); l]; m];
    let mut is_basic = vec![vec![false; l]; m];
    let mut rem_r = p.to_vec();
    let mut rem_c = q.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let t = if rem_r[i] < rem_c[j] { rem_r[i].clone() } else { rem_c[j].clone() };
        plan[i][j] = t.clone();
        is_basic[i][j] = true;
        rem_r[i] = rem_r[i].clone() - t.clone();
        rem_c[j] = rem_c[j].clone() - t;
        if i + 1 == m && j + 1 == l {
            break;
        }
        if i + 1 == m {
            j += 1;
        } else if j + 1 == l || rem_r[i] <= rem_c[j] {
            i += 1;
        } else {
            j += 1;
        }
    }

    let cap = 100 * (m * l).pow(2) + 1000;
    let mut iterations = 0;
    loop {
        let (u, v) = tree_duals(cost, &is_basic);
        let entering = (0..m)
            .flat_map(|i| (0..l).map(move |j| (i, j)))
            .find(|&(i, j)| !is_basic[i][j] && (cost[i][j].clone() - u[i].clone() - v[j].clone()).is_neg());
        let Some((ei, ej)) = entering else {
            let mut u = u;
            let mut v = v;
            let shift = sum(&u) / F::from_usize(m).expect("count");
            for x in &mut u {
                *x = x.clone() - shift.clone();
            }
            for x in &mut v {
                *x = x.clone() + shift.clone();
            }
            let mut primal = F::zero();
            let mut basis = Vec::new();
            for i in 0..m {
                for j in 0..l {
                    if plan[i][j].is_negligible() {
                        plan[i][j] = F::zero();
                    }
                    primal = primal + cost[i][j].clone() * plan[i][j].clone();
                    if is_basic[i][j] {
                        basis.push((i, j));
                    }
                }
            }
            return Ok(TransportPlanLP {
                row_marginal: p.to_vec(),
                col_marginal: q.to_vec(),
                cost_matrix: cost.to_vec(),
                plan,
                primal_value: primal,
                dual_u: u,
                dual_v: v,
                basis,
            });
        };
        iterations += 1;
        if iterations > cap {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: f64::NAN,
                best_potentials: u.iter().map(Field::as_f64).collect(),
                best_cost: f64::NAN,
            });
        }
        let path = tree_path(&is_basic, ei, ej);
        // Odd positions on the path lose mass.
        let minus: Vec<(usize, usize)> = path.iter().copied().step_by(2).collect();
        let plus: Vec<(usize, usize)> = path.iter().copied().skip(1).step_by(2).collect();
        let theta = minus
            .iter()
            .map(|&(a, b)| plan[a][b].clone())
            .fold(None::<F>, |acc, x| match acc {
                Some(y) if y <= x => Some(y),
                _ => Some(x),
            })
            .expect("cycle has a minus cell");
        let leaving = minus
            .iter()
            .copied()
            .filter(|&(a, b)| (plan[a][b].clone() - theta.clone()).is_negligible())
            .min()
            .expect("minimizer exists");
        plan[ei][ej] = theta.clone();
        for &(a, b) in &minus {
            plan[a][b] = plan[a][b].clone() - theta.clone();
        }
        for &(a, b) in &plus {
            plan[a][b] = plan[a][b].clone() + theta.clone();
        }
        plan[leaving.0][leaving.1] = F::zero();
        is_basic[ei][ej] = true;
        is_basic[leaving.0][leaving.1] = false;
    }
}

/// Potentials on the spanning tree with `u_0 = 0`.
fn tree_duals<F: Field>(cost: &[Vec<F>], is_basic: &[Vec<bool>]) -> (Vec<F>, Vec<F>) {
    let m = is_basic.len();
    let l = is_basic[0].len();
    let mut u: Vec<Option<F>> = vec![None; m];
    let mut v: Vec<Option<F>> = vec![None; l];
    u[0] = Some(F::zero());
    let mut queue = VecDeque::from([(true, 0usize)]);
    while let Some((is_row, k)) = queue.pop_front() {
        if is_row {
            let uk = u[k].clone().expect("visited");
            for j in 0..l {
                if is_basic[k][j] && v[j].is_none() {
                    v[j] = Some(cost[k][j].clone() - uk.clone());
                    queue.push_back((false, j));
                }
            }
        } else {
            let vk = v[k].clone().expect("visited");
            for i in 0..m {
                if is_basic[i][k] && u[i].is_none() {
                    u[i] = Some(cost[i][k].clone() - vk.clone());
                    queue.push_back((true, i));
                }
            }
        }
    }
    (
        u.into_iter().map(|x| x.expect("basis spans rows")).collect(),
        v.into_iter().map(|x| x.expect("basis spans columns")).collect(),
    )
}

/// Tree path from row `i` to column `j`, as the list of basic cells.
fn tree_path(is_basic: &[Vec<bool>], i: usize, j: usize) -> Vec<(usize, usize)> {
    let m = is_basic.len();
    let l = is_basic[0].len();
    // Nodes: rows 0..m, columns m..m+l.
    let mut parent: Vec<Option<usize>> = vec![None; m + l];
    let mut seen = vec![false; m + l];
    seen[i] = true;
    let mut queue = VecDeque::from([i]);
    while let Some(node) = queue.pop_front() {
        if node == m + j {
            break;
        }
        let next: Vec<usize> = if node < m {
            (0..l).filter(|&b| is_basic[node][b]).map(|b| m + b).collect()
        } else {
            (0..m).filter(|&a| is_basic[a][node - m]).collect()
        };
        for n in next {
            if !seen[n] {
                seen[n] = true;
                parent[n] = Some(node);
                queue.push_back(n);
            }
        }
    }
    let mut cells = Vec::new();
    let mut node = m + j;
    while node != i {
        let prev = parent[node].expect("tree connects row and column");
        let cell = if node >= m { (prev, node - m) } else { (node, prev - m) };
        cells.push(cell);
        node = prev;
    }
    cells.reverse();
    cells
}

/// Dual optimal face `{u : ∃ v, u_i + v_j ≤ c_ij, equality on the plan
/// support, Σ u_i = 0}`, projected onto the `u` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualOptimalFace<F> {
    pub row_marginal: Vec<F>,
    pub col_marginal: Vec<F>,
    pub cost_matrix: Vec<Vec<F>>,
    pub base_plan_support: Vec<(usize, usize)>,
    pub primal_value: F,
    /// A known member of the face (the simplex duals).
    pub anchor: Vec<F>,
    pub shape: FaceShape<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaceShape<F> {
    Singleton { point: Vec<F> },
    Polyhedral,
}

impl<F: Field> DualOptimalFace<F> {
    pub fn m(&self) -> usize {
        self.row_marginal.len()
    }

    pub fn l(&self) -> usize {
        self.col_marginal.len()
    }

    /// The constraint system over `(u, v) ∈ ℝ^{m+l}`.
    pub fn constraints(&self) -> Vec<Constraint<F>> {
        let (m, l) = (self.m(), self.l());
        let mut out = Vec::with_capacity(m * l + 1);
        for i in 0..m {
            for j in 0..l {
                let mut coeffs = vec![F::zero(); m + l];
                coeffs[i] = F::one();
                coeffs[m + j] = F::one();
                let sense = if self.base_plan_support.contains(&(i, j)) { Sense::Eq } else { Sense::Le };
                out.push(Constraint { coeffs, sense, rhs: self.cost_matrix[i][j].clone() });
            }
        }
        let mut gauge = vec![F::zero(); m + l];
        for c in gauge.iter_mut().take(m) {
            *c = F::one();
        }
        out.push(Constraint { coeffs: gauge, sense: Sense::Eq, rhs: F::zero() });
        out
    }

    /// `Σ p_i u_i + Σ q_j min_i (c_ij − u_i)`.
    pub fn c_transform_value(&self, u: &[F]) -> F {
        let mut total = dot(&self.row_marginal, u);
        for (j, qj) in self.col_marginal.iter().enumerate() {
            let best = (0..self.m())
                .map(|i| self.cost_matrix[i][j].clone() - u[i].clone())
                .fold(None::<F>, |acc, x| match acc {
                    Some(y) if y <= x => Some(y),
                    _ => Some(x),
                })
                .expect("nonempty");
            total = total + qj.clone() * best;
        }
        total
    }

    /// Membership through the re-evaluation criterion.
    pub fn contains(&self, u: &[F]) -> bool {
        u.len() == self.m()
            && sum(u).is_negligible()
            && (self.c_transform_value(u) - self.primal_value.clone()).is_negligible()
    }

    pub fn is_singleton(&self) -> bool {
        matches!(self.shape, FaceShape::Singleton { .. })
    }
}

/// Builds the face from one optimal plan's support.
pub fn extract_dual_face<F: Field>(sol: &TransportPlanLP<F>) -> Result<DualOptimalFace<F>> {
    let mut face = DualOptimalFace {
        row_marginal: sol.row_marginal.clone(),
        col_marginal: sol.col_marginal.clone(),
        cost_matrix: sol.cost_matrix.clone(),
        base_plan_support: sol.support(),
        primal_value: sol.primal_value.clone(),
        anchor: sol.dual_u.clone(),
        shape: FaceShape::Polyhedral,
    };
    // The face is a point iff every coordinate has equal max and min.
    let m = face.m();
    let mut point = Vec::with_capacity(m);
    for i in 0..m {
        let mut e = vec![F::zero(); m];
        e[i] = F::one();
        let hi = sup_polyhedral(&face, &e)?;
        e[i] = -F::one();
        let lo = -sup_polyhedral(&face, &e)?;
        if !(hi.clone() - lo).is_negligible() {
            return Ok(face);
        }
        point.push(hi);
    }
    face.shape = FaceShape::Singleton { point };
    Ok(face)
}

/// `sup_{u ∈ face} x · u`.
pub fn sup_over_opt<F: Field>(face: &DualOptimalFace<F>, x: &[F]) -> Result<F> {
    if x.len() != face.m() {
        return Err(invalid(format!("direction has {} entries, face lives in ℝ^{}", x.len(), face.m())));
    }
    match &face.shape {
        FaceShape::Singleton { point } => Ok(dot(point, x)),
        FaceShape::Polyhedral => sup_polyhedral(face, x),
    }
}

fn sup_polyhedral<F: Field>(face: &DualOptimalFace<F>, x: &[F]) -> Result<F> {
    let mut objective = x.to_vec();
    objective.extend((0..face.l()).map(|_| F::zero()));
    match maximize_free(&objective, &face.constraints()) {
        LpOutcome::Optimal { value, .. } => Ok(value),
        LpOutcome::Unbounded => Err(Error::FaceExtractionBug("dual face is unbounded in the gauge".into())),
        LpOutcome::Infeasible => Err(Error::FaceExtractionBug("dual face is empty".into())),
    }
}

/// Reads a headerless numeric CSV into rows.
pub fn read_cost_matrix_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| invalid(format!("bad cost entry {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(invalid("cost matrix must be a nonempty rectangle"));
    }
    if rows.iter().flatten().any(|c| !c.is_finite()) {
        return Err(invalid("cost matrix has non-finite entries"));
    }
    Ok(rows)
}
