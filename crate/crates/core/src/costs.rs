//! Ground costs `c(x, y)` and the structural assumptions they satisfy.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{mc_integrate, ContinuousMeasure, DiscreteMeasure, McEstimate};
use crate::scalar::Real;

/// How a flag value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagBasis {
    /// Holds by construction of the cost family.
    Declared,
    /// Not established; the value is `false`.
    Unchecked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub holds: bool,
    pub basis: FlagBasis,
}

impl Flag {
    pub const fn declared(holds: bool) -> Self {
        Self { holds, basis: FlagBasis::Declared }
    }

    pub const fn unchecked() -> Self {
        Self { holds: false, basis: FlagBasis::Unchecked }
    }
}

/// Structural assumptions on a translation-invariant cost `c(x,y) = h(x−y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    /// `h` strictly convex.
    pub strictly_convex: Flag,
    /// Cone condition on the level sets of `h`.
    pub cone_condition: Flag,
    /// Superlinear growth of `h`.
    pub superlinear: Flag,
    /// `c(x_i, ·)` is C^{1,1}.
    pub regular: Flag,
    /// `∇_y c(x_i, ·)` injective.
    pub twist: Flag,
    /// Pairwise cost differences quasi-convex in the identity chart.
    pub quasi_convex: Flag,
}

impl AssumptionFlags {
    pub fn none() -> Self {
        Self {
            strictly_convex: Flag::unchecked(),
            cone_condition: Flag::unchecked(),
            superlinear: Flag::unchecked(),
            regular: Flag::unchecked(),
            twist: Flag::unchecked(),
            quasi_convex: Flag::unchecked(),
        }
    }

    /// Uniqueness of the dual optimizer up to constants.
    pub fn unique_potentials(&self) -> bool {
        self.strictly_convex.holds && self.cone_condition.holds && self.superlinear.holds
    }

    /// Second-order regularity of the dual functional.
    pub fn second_order(&self) -> bool {
        self.regular.holds && self.twist.holds && self.quasi_convex.holds
    }
}

type EvalFn<T> = dyn Fn(&[T], &[T]) -> T + Send + Sync;
type GradFn<T> = dyn Fn(&[T], &[T]) -> Option<Vec<T>> + Send + Sync;

#[derive(Clone)]
enum CostKind<T> {
    Power { exponent: T },
    Custom { name: String, eval: Arc<EvalFn<T>>, grad_y: Option<Arc<GradFn<T>>> },
}

/// A cost function with optional `y`-gradient and assumption flags.
#[derive(Clone)]
pub struct CostFunction<T> {
    kind: CostKind<T>,
    flags: AssumptionFlags,
}

impl<T: Real> fmt::Debug for CostFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            CostKind::Power { exponent } => write!(f, "CostFunction(|x-y|^{exponent})"),
            CostKind::Custom { name, .. } => write!(f, "CostFunction({name})"),
        }
    }
}

/// `|x − y|^p` with the Euclidean norm.
pub fn power_cost<T: Real>(p: T) -> Result<CostFunction<T>> {
    if !(p > T::zero()) || !p.is_finite() {
        return Err(invalid(format!("power cost exponent must be positive, got {p}")));
    }
    let strict = p > T::one();
    let quadratic = p == T::of(2.0);
    let flags = AssumptionFlags {
        strictly_convex: Flag::declared(strict),
        cone_condition: Flag::declared(true),
        superlinear: Flag::declared(strict),
        regular: if quadratic { Flag::declared(true) } else { Flag::unchecked() },
        twist: if quadratic { Flag::declared(true) } else { Flag::unchecked() },
        quasi_convex: if quadratic { Flag::declared(true) } else { Flag::unchecked() },
    };
    Ok(CostFunction { kind: CostKind::Power { exponent: p }, flags })
}

impl<T: Real> CostFunction<T> {
    pub fn quadratic() -> Self {
        power_cost(T::of(2.0)).expect("valid exponent")
    }

    /// A user supplied cost. Flags default to unchecked.
    pub fn custom<E>(name: impl Into<String>, eval: E) -> Self
    where
        E: Fn(&[T], &[T]) -> T + Send + Sync + 'static,
    {
        Self {
            kind: CostKind::Custom { name: name.into(), eval: Arc::new(eval), grad_y: None },
            flags: AssumptionFlags::none(),
        }
    }

    pub fn with_grad_y<G>(mut self, grad: G) -> Self
    where
        G: Fn(&[T], &[T]) -> Option<Vec<T>> + Send + Sync + 'static,
    {
        if let CostKind::Custom { grad_y, .. } = &mut self.kind {
            *grad_y = Some(Arc::new(grad));
        }
        self
    }

    pub fn with_flags(mut self, flags: AssumptionFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn flags(&self) -> &AssumptionFlags {
        &self.flags
    }

    pub fn name(&self) -> String {
        match &self.kind {
            CostKind::Power { exponent } => format!("power({exponent})"),
            CostKind::Custom { name, .. } => name.clone(),
        }
    }

    /// Exponent for power costs.
    pub fn exponent(&self) -> Option<T> {
        match &self.kind {
            CostKind::Power { exponent } => Some(*exponent),
            CostKind::Custom { .. } => None,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        self.exponent() == Some(T::of(2.0))
    }

    #[inline]
    pub fn eval(&self, x: &[T], y: &[T]) -> T {
        match &self.kind {
            CostKind::Power { exponent } => {
                let sq = sq_dist(x, y);
                if *exponent == T::of(2.0) {
                    sq
                } else {
                    sq.powf(*exponent * T::of(0.5))
                }
            }
            CostKind::Custom { eval, .. } => eval(x, y),
        }
    }

    /// `∇_y c(x, y)`. For power costs: `p |y−x|^{p−2} (y−x)`, which at
    /// `y = x` is zero for `p > 1` and undefined otherwise.
    pub fn grad_y(&self, x: &[T], y: &[T]) -> Option<Vec<T>> {
        match &self.kind {
            CostKind::Power { exponent } => {
                let p = *exponent;
                let r2 = sq_dist(x, y);
                if r2 == T::zero() {
                    return if p > T::one() { Some(vec![T::zero(); y.len()]) } else { None };
                }
                let scale = p * r2.powf((p - T::of(2.0)) * T::of(0.5));
                Some(y.iter().zip(x).map(|(&yi, &xi)| scale * (yi - xi)).collect())
            }
            CostKind::Custom { grad_y, .. } => grad_y.as_ref().and_then(|g| g(x, y)),
        }
    }

    pub fn has_grad_y(&self) -> bool {
        match &self.kind {
            CostKind::Power { exponent } => *exponent >= T::one(),
            CostKind::Custom { grad_y, .. } => grad_y.is_some(),
        }
    }

    pub fn to_spec(&self) -> Option<CostSpec> {
        self.exponent().map(|e| CostSpec::Power { exponent: e.to_f64_lossy() })
    }
}

#[inline]
fn sq_dist<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
}

/// JSON description of a cost: `{"cost":"power","exponent":2.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cost", rename_all = "snake_case")]
pub enum CostSpec {
    Power { exponent: f64 },
}

impl CostSpec {
    pub fn build<T: Real>(&self) -> Result<CostFunction<T>> {
        match self {
            CostSpec::Power { exponent } => power_cost(T::of(*exponent)),
        }
    }
}

/// Monte Carlo estimates of `∫ c(y, x_i) dQ(y)` for every atom.
pub fn check_integrability<T: Real>(
    cost: &CostFunction<T>,
    p: &DiscreteMeasure<T>,
    q: &ContinuousMeasure<T>,
    samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate<T>>> {
    p.points()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let est = mc_integrate(q, |y| cost.eval(x, y), samples, seed).map_err(|e| match e {
                Error::IntegrationFailure { .. } => Error::IntegrabilityViolation { atom: i },
                other => other,
            })?;
            if !est.value.is_finite() || !est.std_error.is_finite() {
                return Err(Error::IntegrabilityViolation { atom: i });
            }
            Ok(est)
        })
        .collect()
}
