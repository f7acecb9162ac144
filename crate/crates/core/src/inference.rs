//! Limit laws for the empirical transport cost, its Wasserstein root and
//! the optimal potentials.
//!
//! With `X ~ 𝒩(0, Σ(p))`, `Σ(p) = diag(p) − ppᵀ`:
//!
//! * cost, unique potentials: `√n (T̂ − T) ⇒ 𝒩(0, zᵀΣ(p)z)`;
//! * cost, non-unique potentials: `√n (T̂ − T) ⇒ sup_{u ∈ Opt} u·X`;
//! * `W_p = T^{1/p}`: the above times `1 / (p T^{(p−1)/p})`;
//! * potentials: `√n (ẑ − z) ⇒ 𝒩(0, H⁺ A H⁺)` with `H` the Hessian of the
//!   dual functional and `A = Σ_k p_k (e_k − p)(e_k − p)ᵀ`;
//! * sup-norm of the potentials: `max_i |N_i|` for `N` as above.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostFunction;
use crate::discrete::{sup_over_opt, DualOptimalFace};
use crate::error::{invalid, Error, Result};
use crate::linalg::{restricted_eigen, symmetric_eigen, DenseMatrix};
use crate::measures::ContinuousMeasure;
use crate::scalar::Real;
use crate::seeds::{derive_seed, rng_from_seed, STREAM_LAW_DRAW};

/// Restricted Hessian eigenvalues above this are treated as singular.
pub const SINGULAR_EIGENVALUE: f64 = -1e-8;

/// `Σ(p) = diag(p) − ppᵀ`, the covariance of a centered multinomial draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct MultinomialCovariance<T> {
    pub p: Vec<T>,
    pub matrix: DenseMatrix<T>,
}

impl<T: Real> MultinomialCovariance<T> {
    /// One draw of `𝒩(0, Σ(p))` as `W − p·(1ᵀW)` with `W ~ 𝒩(0, diag(p))`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let w: Vec<T> = self
            .p
            .iter()
            .map(|&pi| T::of(rng.sample::<f64, _>(StandardNormal)) * pi.sqrt())
            .collect();
        let total: T = w.iter().copied().sum();
        w.iter().zip(&self.p).map(|(&wi, &pi)| wi - pi * total).collect()
    }
}

pub fn sigma_p<T: Real>(p: &[T]) -> Result<MultinomialCovariance<T>> {
    if p.is_empty() || p.iter().any(|&w| w < T::zero() || !w.is_finite()) {
        return Err(invalid("weights must be nonnegative and finite"));
    }
    let matrix = DenseMatrix::from_fn(p.len(), p.len(), |i, j| {
        if i == j {
            p[i] * (T::one() - p[i])
        } else {
            -p[i] * p[j]
        }
    });
    Ok(MultinomialCovariance { p: p.to_vec(), matrix })
}

/// `σ²(P, z) = zᵀ Σ(p) z`; invariant under `z ↦ z + λ1`.
pub fn asymptotic_variance_cost<T: Real>(z: &[T], p: &[T]) -> Result<T> {
    if z.len() != p.len() {
        return Err(invalid("potential and weight lengths differ"));
    }
    // Var(Σ z_i X_i) = Σ p_i (z_i − z̄)², z̄ = Σ p_j z_j, which is exactly
    // shift-invariant.
    let total: T = p.iter().copied().sum();
    let zbar: T = z.iter().zip(p).map(|(&a, &b)| a * b).sum::<T>() / total;
    Ok(z.iter().zip(p).map(|(&a, &b)| b * (a - zbar) * (a - zbar)).sum::<T>() / total)
}

/// The optimal dual set: a single potential vector or a polyhedral face.
#[derive(Debug, Clone, Copy)]
pub enum OptSet<'a, T> {
    Point(&'a [T]),
    Face(&'a DualOptimalFace<T>),
}

/// Directional derivative of `p ↦ T(P_p, Q)` at `p` along `q`:
/// `sup_{u ∈ Opt} Σ_i (u_i − Σ_j u_j p_j) q_i`.
pub fn hadamard_derivative<T: Real>(opt: OptSet<'_, T>, p: &[T], q: &[T]) -> Result<T> {
    if q.len() != p.len() {
        return Err(invalid("direction and weight lengths differ"));
    }
    let mass: T = q.iter().copied().sum();
    // Σ_i (u_i − ū) q_i = Σ_i u_i (q_i − p_i Σ_j q_j)
    let centered: Vec<T> = q.iter().zip(p).map(|(&qi, &pi)| qi - pi * mass).collect();
    match opt {
        OptSet::Point(z) => {
            if z.len() != p.len() {
                return Err(invalid("potential and weight lengths differ"));
            }
            Ok(z.iter().zip(&centered).map(|(&a, &b)| a * b).sum())
        }
        OptSet::Face(face) => sup_over_opt(face, &centered),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub enum LimitKind<T> {
    Gaussian { variance: T },
    SupOfGaussian { face: DualOptimalFace<T>, cov: MultinomialCovariance<T> },
    SupAbsGaussian { cov: DenseMatrix<T> },
}

/// A limit law `scale_factor · L` with `L` described by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct LimitLaw<T> {
    pub kind: LimitKind<T>,
    pub scale_factor: T,
    /// Built from estimated quantities rather than the truth.
    pub plug_in: bool,
}

impl<T: Real> LimitLaw<T> {
    pub fn gaussian(variance: T) -> Self {
        Self { kind: LimitKind::Gaussian { variance }, scale_factor: T::one(), plug_in: false }
    }

    pub fn with_plug_in(mut self, plug_in: bool) -> Self {
        self.plug_in = plug_in;
        self
    }

    /// Variance of the scaled law when it is Gaussian.
    pub fn variance(&self) -> Option<T> {
        match &self.kind {
            LimitKind::Gaussian { variance } => Some(*variance * self.scale_factor * self.scale_factor),
            _ => None,
        }
    }
}

/// Which limit theorem to apply to the cost.
#[derive(Debug, Clone, Copy)]
pub enum CostLawMode<'a, T: Real> {
    /// Unique potentials up to constants; requires the cost regularity flags
    /// and a target with a density on a connected support.
    Unique { potentials: &'a [T], cost: &'a CostFunction<T>, target: &'a ContinuousMeasure<T> },
    /// Supremum over the dual optimal face.
    Face(&'a DualOptimalFace<T>),
}

pub fn cost_limit_law<T: Real>(p: &[T], mode: CostLawMode<'_, T>) -> Result<LimitLaw<T>> {
    match mode {
        CostLawMode::Unique { potentials, cost, target } => {
            let flags = cost.flags();
            if !flags.unique_potentials() {
                return Err(Error::AssumptionViolation(format!(
                    "cost '{}' does not satisfy strict convexity, the cone condition and superlinear growth",
                    cost.name()
                )));
            }
            if !target.has_density() || !target.has_connected_support() {
                return Err(Error::AssumptionViolation(
                    "target measure needs a density on a connected support".into(),
                ));
            }
            if potentials.len() == 1 {
                return Ok(LimitLaw::gaussian(T::zero()));
            }
            Ok(LimitLaw::gaussian(asymptotic_variance_cost(potentials, p)?))
        }
        CostLawMode::Face(face) => {
            if face.m() != p.len() {
                return Err(invalid("face and weight lengths differ"));
            }
            Ok(LimitLaw {
                kind: LimitKind::SupOfGaussian { face: face.clone(), cov: sigma_p(p)? },
                scale_factor: T::one(),
                plug_in: false,
            })
        }
    }
}

/// Delta method for `W_p = T^{1/p}`.
pub fn wp_limit_law<T: Real>(cost_law: &LimitLaw<T>, p_exponent: T, t_value: T) -> Result<LimitLaw<T>> {
    if !(p_exponent >= T::one()) {
        return Err(invalid("exponent must be at least 1"));
    }
    if !(t_value > T::zero()) {
        return Err(Error::DeltaMethodInapplicable);
    }
    let factor = T::one() / (p_exponent * t_value.powf((p_exponent - T::one()) / p_exponent));
    Ok(LimitLaw { scale_factor: cost_law.scale_factor * factor, ..cost_law.clone() })
}

/// `Σ(z̃) = H⁺ A H⁺` on ⟨1⟩^⊥, together with `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct PotentialsCovariance<T> {
    pub matrix: DenseMatrix<T>,
    pub a_matrix: DenseMatrix<T>,
}

/// `A = Σ_k p_k ∇g_k ∇g_kᵀ` where `∇g_k = e_k − p` is the z-gradient of
/// `g(x_k, z)` at the optimum.
pub fn gradient_outer_products<T: Real>(p: &[T]) -> DenseMatrix<T> {
    let m = p.len();
    let mut a = DenseMatrix::zeros(m, m);
    for (k, &pk) in p.iter().enumerate() {
        let g: Vec<T> = (0..m).map(|j| if j == k { T::one() - p[j] } else { -p[j] }).collect();
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] = a[(i, j)] + pk * g[i] * g[j];
            }
        }
    }
    a
}

pub fn potentials_covariance<T: Real>(hessian: &DenseMatrix<T>, p: &[T]) -> Result<PotentialsCovariance<T>> {
    let m = p.len();
    if hessian.nrows() != m || hessian.ncols() != m {
        return Err(invalid("hessian shape does not match the weights"));
    }
    let a = gradient_outer_products(p);
    if m == 1 {
        return Ok(PotentialsCovariance { matrix: DenseMatrix::zeros(1, 1), a_matrix: a });
    }
    let (vals, vecs) = restricted_eigen(hessian);
    if let Some(&top) = vals.iter().max_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues")) {
        if top > T::of(SINGULAR_EIGENVALUE) {
            return Err(Error::SingularHessian { eigenvalue: top.to_f64_lossy() });
        }
    }
    let pinv = DenseMatrix::from_fn(m, m, |i, j| {
        vals.iter().zip(&vecs).map(|(&l, v)| v[i] * v[j] / l).sum()
    });
    let mut matrix = pinv.matmul(&a).matmul(&pinv);
    matrix.symmetrize();
    Ok(PotentialsCovariance { matrix, a_matrix: a })
}

pub fn sup_norm_potential_law<T: Real>(cov: &PotentialsCovariance<T>) -> LimitLaw<T> {
    LimitLaw { kind: LimitKind::SupAbsGaussian { cov: cov.matrix.clone() }, scale_factor: T::one(), plug_in: false }
}

/// Symmetric square root factor `L` with `LLᵀ = Σ` for PSD `Σ`
/// (negative rounding eigenvalues are clipped).
fn psd_factor<T: Real>(cov: &DenseMatrix<T>) -> DenseMatrix<T> {
    let (vals, vecs) = symmetric_eigen(cov);
    let m = cov.nrows();
    DenseMatrix::from_fn(m, m, |i, k| vecs[(i, k)] * vals[k].max(T::zero()).sqrt())
}

/// `draws` i.i.d. samples of the law. Draw `i` uses its own generator
/// seeded by `derive_seed(seed, STREAM_LAW_DRAW, i)`, so the output does
/// not depend on thread scheduling.
pub fn simulate_limit<T: Real>(law: &LimitLaw<T>, draws: usize, seed: u64) -> Result<Vec<T>> {
    if draws == 0 {
        return Err(invalid("draws must be at least 1"));
    }
    let scale = law.scale_factor;
    match &law.kind {
        LimitKind::Gaussian { variance } => {
            let sd = variance.max(T::zero()).sqrt();
            Ok((0..draws)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_from_seed(derive_seed(seed, STREAM_LAW_DRAW, i as u64));
                    scale * sd * T::of(rng.sample::<f64, _>(StandardNormal))
                })
                .collect())
        }
        LimitKind::SupOfGaussian { face, cov } => (0..draws)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(seed, STREAM_LAW_DRAW, i as u64));
                let x = cov.sample(&mut rng);
                Ok(scale * sup_over_opt(face, &x)?)
            })
            .collect(),
        LimitKind::SupAbsGaussian { cov } => {
            let l = psd_factor(cov);
            let m = cov.nrows();
            Ok((0..draws)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_from_seed(derive_seed(seed, STREAM_LAW_DRAW, i as u64));
                    let xi: Vec<T> = (0..m).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
                    let n = l.matvec(&xi);
                    scale * n.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
                })
                .collect())
        }
    }
}
