//! Composite Gauss–Legendre rules on axis-aligned boxes.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are found by Newton iteration on the Legendre polynomial in `f64`
/// and then converted, so the rule is accurate to `f64` precision for every
/// scalar type.
pub fn gauss_legendre<T: Real>(k: usize) -> (Vec<T>, Vec<T>) {
    assert!(k >= 1, "gauss-legendre needs at least one node");
    let mut nodes = vec![0.0f64; k];
    let mut weights = vec![0.0f64; k];
    let kf = k as f64;
    for i in 0..k.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Three-term recurrence for P_k and its derivative.
            let (mut p0, mut p1) = (1.0f64, x);
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 1 { x } else { p1 };
            let pkm1 = if k == 1 { 1.0 } else { p0 };
            dp = kf * (x * pk - pkm1) / (x * x - 1.0);
            let dx = pk / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }
    (nodes.into_iter().map(T::of).collect(), weights.into_iter().map(T::of).collect())
}

/// Composite tensor-product Gauss–Legendre scheme on the base box of a
/// measure. Exact for polynomials of degree `2 * nodes_per_cell - 1` in each
/// coordinate on every cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureScheme {
    pub cells_per_dim: usize,
    pub nodes_per_cell: usize,
}

impl QuadratureScheme {
    pub fn default_for_dim(d: usize) -> Self {
        match d {
            1 => Self { cells_per_dim: 64, nodes_per_cell: 8 },
            2 => Self { cells_per_dim: 24, nodes_per_cell: 4 },
            _ => Self { cells_per_dim: 6, nodes_per_cell: 3 },
        }
    }

    pub fn degree(&self) -> usize {
        2 * self.nodes_per_cell - 1
    }

    /// Splits `[lo, hi]` into the scheme's grid of cells.
    pub fn cells<T: Real>(&self, lo: &[T], hi: &[T]) -> Vec<BoxCell<T>> {
        let d = lo.len();
        let n = self.cells_per_dim;
        let total = n.pow(d as u32);
        let nf = T::of_usize(n);
        (0..total)
            .map(|mut idx| {
                let mut clo = Vec::with_capacity(d);
                let mut chi = Vec::with_capacity(d);
                for a in 0..d {
                    let i = idx % n;
                    idx /= n;
                    let w = (hi[a] - lo[a]) / nf;
                    clo.push(lo[a] + w * T::of_usize(i));
                    chi.push(if i + 1 == n { hi[a] } else { lo[a] + w * T::of_usize(i + 1) });
                }
                BoxCell { lo: clo, hi: chi }
            })
            .collect()
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxCell<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> BoxCell<T> {
    pub fn volume(&self) -> T {
        self.lo.iter().zip(&self.hi).fold(T::one(), |acc, (&l, &h)| acc * (h - l))
    }

    /// Tensor Gauss nodes mapped into the box, with weights summing to the
    /// box volume.
    pub fn nodes(&self, rule: &(Vec<T>, Vec<T>)) -> Vec<(Vec<T>, T)> {
        let d = self.lo.len();
        let k = rule.0.len();
        let half = T::of(0.5);
        let total = k.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let mut pt = Vec::with_capacity(d);
                let mut w = T::one();
                for a in 0..d {
                    let i = idx % k;
                    idx /= k;
                    let mid = (self.lo[a] + self.hi[a]) * half;
                    let rad = (self.hi[a] - self.lo[a]) * half;
                    pt.push(mid + rad * rule.0[i]);
                    w = w * rule.1[i] * rad;
                }
                (pt, w)
            })
            .collect()
    }

    pub fn corners(&self) -> Vec<Vec<T>> {
        let d = self.lo.len();
        (0..(1usize << d))
            .map(|mask| {
                (0..d).map(|a| if mask >> a & 1 == 1 { self.hi[a] } else { self.lo[a] }).collect()
            })
            .collect()
    }

    /// The 2^d children obtained by halving every side.
    pub fn split(&self) -> Vec<BoxCell<T>> {
        let d = self.lo.len();
        let half = T::of(0.5);
        (0..(1usize << d))
            .map(|mask| {
                let mut lo = Vec::with_capacity(d);
                let mut hi = Vec::with_capacity(d);
                for a in 0..d {
                    let mid = (self.lo[a] + self.hi[a]) * half;
                    if mask >> a & 1 == 1 {
                        lo.push(mid);
                        hi.push(self.hi[a]);
                    } else {
                        lo.push(self.lo[a]);
                        hi.push(mid);
                    }
                }
                BoxCell { lo, hi }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_legendre_integrates_monomials_exactly() {
        for k in 1..=10 {
            let rule = gauss_legendre::<f64>(k);
            for deg in 0..(2 * k) {
                let approx: f64 =
                    rule.0.iter().zip(&rule.1).map(|(&x, &w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert_abs_diff_eq!(approx, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn cells_tile_the_box() {
        let s = QuadratureScheme { cells_per_dim: 3, nodes_per_cell: 2 };
        let cells = s.cells(&[0.0, -1.0], &[1.0, 1.0]);
        assert_eq!(cells.len(), 9);
        let vol: f64 = cells.iter().map(BoxCell::volume).sum();
        assert_abs_diff_eq!(vol, 2.0, epsilon = 1e-14);
        let kids = cells[0].split();
        assert_eq!(kids.len(), 4);
        assert_abs_diff_eq!(kids.iter().map(BoxCell::volume).sum::<f64>(), cells[0].volume(), epsilon = 1e-15);
        assert_eq!(cells[0].corners().len(), 4);
    }
}
