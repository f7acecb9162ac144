//! Dense two-phase simplex over any [`Field`].
//!
//! Small problems only. Bland's rule is used for both the entering and the
//! leaving variable so degenerate problems cannot cycle, which matters for
//! the exact rational instantiation.

use crate::scalar::Field;

/// Constraint sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
}

/// One linear constraint `a · x (≤ | =) b`.
#[derive(Debug, Clone)]
pub struct Constraint<F> {
    pub coeffs: Vec<F>,
    pub sense: Sense,
    pub rhs: F,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<F> {
    Optimal { value: F, x: Vec<F> },
    Infeasible,
    Unbounded,
}

/// Maximizes `objective · x` over free variables `x ∈ ℝⁿ` subject to the
/// constraints.
pub fn maximize_free<F: Field>(objective: &[F], constraints: &[Constraint<F>]) -> LpOutcome<F> {
    // x = x⁺ − x⁻ with both parts nonnegative.
    let n = objective.len();
    let split_obj: Vec<F> = objective.iter().cloned().chain(objective.iter().map(|c| -c.clone())).collect();
    let split: Vec<Constraint<F>> = constraints
        .iter()
        .map(|c| Constraint {
            coeffs: c.coeffs.iter().cloned().chain(c.coeffs.iter().map(|a| -a.clone())).collect(),
            sense: c.sense,
            rhs: c.rhs.clone(),
        })
        .collect();
    match maximize_nonneg(&split_obj, &split) {
        LpOutcome::Optimal { value, x } => {
            let free = (0..n).map(|i| x[i].clone() - x[n + i].clone()).collect();
            LpOutcome::Optimal { value, x: free }
        }
        other => other,
    }
}

/// Maximizes `objective · x` subject to the constraints and `x ≥ 0`.
pub fn maximize_nonneg<F: Field>(objective: &[F], constraints: &[Constraint<F>]) -> LpOutcome<F> {
    let n = objective.len();
    let rows = constraints.len();
    let n_slack = constraints.iter().filter(|c| c.sense == Sense::Le).count();
    // Columns: originals, slacks, artificials, then rhs.
    let mut slack_col = n;
    let art_start = n + n_slack;
    let mut n_art = 0;
    let mut tab: Vec<Vec<F>> = Vec::with_capacity(rows);
    let mut basis = Vec::with_capacity(rows);
    for c in constraints {
        assert_eq!(c.coeffs.len(), n, "constraint width");
        let mut row = vec![F::zero(); art_start + rows + 1];
        let flip = c.rhs < F::zero();
        let sign = |v: &F| if flip { -v.clone() } else { v.clone() };
        for (j, a) in c.coeffs.iter().enumerate() {
            row[j] = sign(a);
        }
        row[art_start + rows] = sign(&c.rhs);
        let mut basic = None;
        if c.sense == Sense::Le {
            row[slack_col] = if flip { -F::one() } else { F::one() };
            if !flip {
                basic = Some(slack_col);
            }
            slack_col += 1;
        }
        if basic.is_none() {
            let col = art_start + n_art;
            row[col] = F::one();
            n_art += 1;
            basic = Some(col);
        }
        basis.push(basic.unwrap());
        tab.push(row);
    }
    let width = art_start + n_art;
    for row in &mut tab {
        let rhs = row[art_start + rows].clone();
        row.truncate(width);
        row.push(rhs);
    }
    let mut t = Tableau { tab, basis, width };

    if n_art > 0 {
        let mut phase1 = vec![F::zero(); width];
        for c in phase1.iter_mut().skip(art_start) {
            *c = -F::one();
        }
        match t.run(&phase1, width) {
            Some(()) => {}
            None => return LpOutcome::Infeasible,
        }
        if t.objective_value(&phase1).is_neg() {
            return LpOutcome::Infeasible;
        }
        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < t.tab.len() {
            if t.basis[r] >= art_start {
                match (0..art_start).find(|&j| !t.tab[r][j].is_negligible()) {
                    Some(j) => {
                        t.pivot(r, j);
                        r += 1;
                    }
                    None => {
                        t.tab.remove(r);
                        t.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    let mut phase2 = vec![F::zero(); width];
    phase2[..n].clone_from_slice(objective);
    if t.run(&phase2, art_start).is_none() {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![F::zero(); n];
    for (r, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs(r).clone();
        }
    }
    let value = objective.iter().zip(&x).fold(F::zero(), |acc, (c, v)| acc + c.clone() * v.clone());
    LpOutcome::Optimal { value, x }
}

struct Tableau<F> {
    tab: Vec<Vec<F>>,
    basis: Vec<usize>,
    width: usize,
}

impl<F: Field> Tableau<F> {
    fn rhs(&self, r: usize) -> &F {
        &self.tab[r][self.width]
    }

    fn objective_value(&self, costs: &[F]) -> F {
        self.basis
            .iter()
            .enumerate()
            .fold(F::zero(), |acc, (r, &b)| acc + costs[b].clone() * self.rhs(r).clone())
    }

    fn reduced(&self, costs: &[F], j: usize) -> F {
        self.basis
            .iter()
            .enumerate()
            .fold(costs[j].clone(), |acc, (r, &b)| acc - costs[b].clone() * self.tab[r][j].clone())
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.tab[r][c].clone();
        for v in self.tab[r].iter_mut() {
            *v = v.clone() / p.clone();
        }
        let pivot_row = self.tab[r].clone();
        for (i, row) in self.tab.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c].clone();
            if f.is_zero() {
                continue;
            }
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v = v.clone() - f.clone() * pv.clone();
            }
            row[c] = F::zero();
        }
        self.basis[r] = c;
    }

    /// Runs primal simplex with entering columns restricted to `0..allowed`.
    /// Returns `None` when unbounded.
    fn run(&mut self, costs: &[F], allowed: usize) -> Option<()> {
        let cap = 50_000;
        for _ in 0..cap {
            let entering = (0..allowed).find(|&j| !self.basis.contains(&j) && self.reduced(costs, j).is_pos());
            let Some(c) = entering else {
                return Some(());
            };
            let mut best: Option<(usize, F)> = None;
            for r in 0..self.tab.len() {
                let a = &self.tab[r][c];
                if !a.is_pos() {
                    continue;
                }
                let ratio = self.rhs(r).clone() / a.clone();
                let better = match &best {
                    None => true,
                    Some((br, bv)) => {
                        let d = ratio.clone() - bv.clone();
                        d.is_neg() || (d.is_negligible() && self.basis[r] < self.basis[*br])
                    }
                };
                if better {
                    best = Some((r, ratio));
                }
            }
            let (r, _) = best?;
            self.pivot(r, c);
        }
        panic!("simplex exceeded {cap} pivots under Bland's rule");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rational;
    use num_rational::BigRational;

    fn le<F: Field>(coeffs: Vec<F>, rhs: F) -> Constraint<F> {
        Constraint { coeffs, sense: Sense::Le, rhs }
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → 36 at (2, 6)
        let cons = vec![le(vec![1.0, 0.0], 4.0), le(vec![0.0, 2.0], 12.0), le(vec![3.0, 2.0], 18.0)];
        match maximize_nonneg::<f64>(&[3.0, 5.0], &cons) {
            LpOutcome::Optimal { value, x } => {
                assert!((value - 36.0).abs() < 1e-12);
                assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn free_variables_equality_and_rationals() {
        // max u1 − u2 s.t. u1 + u2 = 0, u1 − u2 ≤ 1, u2 − u1 ≤ 1
        let r = |a, b| rational(a, b);
        let cons = vec![
            Constraint { coeffs: vec![r(1, 1), r(1, 1)], sense: Sense::Eq, rhs: r(0, 1) },
            le(vec![r(1, 1), r(-1, 1)], r(1, 1)),
            le(vec![r(-1, 1), r(1, 1)], r(1, 1)),
        ];
        match maximize_free::<BigRational>(&[r(1, 1), r(-1, 1)], &cons) {
            LpOutcome::Optimal { value, x } => {
                assert_eq!(value, r(1, 1));
                assert_eq!(x, vec![r(1, 2), r(-1, 2)]);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let cons = vec![le(vec![1.0], -1.0)];
        assert_eq!(maximize_nonneg(&[1.0], &cons), LpOutcome::Infeasible);
        let cons = vec![le(vec![-1.0], 1.0)];
        assert_eq!(maximize_nonneg(&[1.0], &cons), LpOutcome::Unbounded);
        assert_eq!(maximize_free(&[1.0], &[]), LpOutcome::Unbounded);
    }

    #[test]
    fn negative_rhs_lower_bound() {
        // max −x s.t. −x ≤ −2 (x ≥ 2) → −2
        let cons = vec![le(vec![-1.0], -2.0)];
        match maximize_nonneg::<f64>(&[-1.0], &cons) {
            LpOutcome::Optimal { value, .. } => assert!((value + 2.0).abs() < 1e-12),
            o => panic!("{o:?}"),
        }
    }
}
