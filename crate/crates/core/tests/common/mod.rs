//! Oracles shared by the integration tests. Nothing here calls into the
//! crate's solvers; they are independent reference computations.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use sdot::discrete::DualOptimalFace;
use sdot::lp::Sense;

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `N(0, var)` draws from a generator unrelated to the crate's seeding.
pub fn normal_draws(var: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed ^ 0xdead_beef);
    let d = Normal::new(0.0, var.sqrt()).unwrap();
    (0..n).map(|_| d.sample(&mut r)).collect()
}

pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Exact Gaussian elimination; `None` unless the square system has a
/// unique solution.
pub fn rational_solve(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = &a[r][col] / &a[col][col];
                for k in col..n {
                    let t = &f * &a[col][k];
                    a[r][k] -= t;
                }
                let t = &f * &b[col];
                b[r] -= t;
            }
        }
    }
    Some((0..n).map(|i| &b[i] / &a[i][i]).collect())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// All vertices of the face in `(u, v)` space by exhaustive choice of
/// active constraint sets.
pub fn face_vertices(face: &DualOptimalFace<BigRational>) -> Vec<Vec<BigRational>> {
    let cons = face.constraints();
    let dim = face.m() + face.l();
    let mut verts: Vec<Vec<BigRational>> = Vec::new();
    for subset in combinations(cons.len(), dim) {
        let a: Vec<Vec<BigRational>> = subset.iter().map(|&i| cons[i].coeffs.clone()).collect();
        let b: Vec<BigRational> = subset.iter().map(|&i| cons[i].rhs.clone()).collect();
        let Some(x) = rational_solve(a, b) else { continue };
        let feasible = cons.iter().all(|c| {
            let lhs = c.coeffs.iter().zip(&x).fold(BigRational::zero(), |acc, (p, q)| acc + p * q);
            match c.sense {
                Sense::Eq => lhs == c.rhs,
                Sense::Le => lhs <= c.rhs,
            }
        });
        if feasible && !verts.contains(&x) {
            verts.push(x);
        }
    }
    verts
}

pub fn brute_force_sup(face: &DualOptimalFace<BigRational>, x: &[BigRational]) -> BigRational {
    face_vertices(face)
        .iter()
        .map(|v| v.iter().zip(x).fold(BigRational::zero(), |acc, (a, b)| acc + a * b))
        .max()
        .expect("face has a vertex")
}

/// Random positive rational probability vector with small denominators.
pub fn random_simplex(r: &mut ChaCha8Rng, k: usize) -> Vec<BigRational> {
    let ints: Vec<i64> = (0..k).map(|_| r.random_range(1..=5)).collect();
    let total: i64 = ints.iter().sum();
    ints.iter().map(|&i| rat(i, total)).collect()
}

pub fn random_rational_instance(
    r: &mut ChaCha8Rng,
    m: usize,
    l: usize,
) -> (Vec<BigRational>, Vec<BigRational>, Vec<Vec<BigRational>>) {
    let p = random_simplex(r, m);
    let q = random_simplex(r, l);
    let c = (0..m).map(|_| (0..l).map(|_| rat(r.random_range(0..=4), 1)).collect()).collect();
    (p, q, c)
}

pub fn to_f64(v: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    v.to_f64().unwrap()
}

pub fn abs_rat(v: &BigRational) -> BigRational {
    v.abs()
}

pub fn one() -> BigRational {
    BigRational::one()
}
