//! Marginal measures: the finitely supported source `P` and the general
//! target `Q`, plus sampling and integration against `Q`.

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss_legendre, BoxCell, QuadratureScheme};
use crate::scalar::{pairwise_sum, Real};
use crate::seeds::rng_from_seed;

/// Finitely supported probability `P = Σ p_k δ_{x_k}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Real"))]
pub struct DiscreteMeasure<T> {
    points: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Real> DiscreteMeasure<T> {
    /// Validates: m ≥ 1, a common dimension, distinct points, strictly
    /// positive weights summing to one within `1e-12`.
    pub fn new(points: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("discrete measure needs at least one atom"));
        }
        if points.len() != weights.len() {
            return Err(invalid(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|x| x.len() != d) {
            return Err(invalid("atoms must share a positive dimension"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("atoms must be finite"));
        }
        if weights.iter().any(|&w| !(w > T::zero()) || !w.is_finite()) {
            return Err(invalid("weights must be strictly positive"));
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::of(1e-12).max(T::epsilon() * T::of_usize(4 * weights.len()));
        if (total - T::one()).abs() > tol {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(invalid(format!("atoms {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { points, weights })
    }

    /// Convenience constructor for one-dimensional atoms.
    pub fn on_line(xs: &[T], weights: Vec<T>) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect(), weights)
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Same atoms, new weights (validated).
    pub fn with_weights(&self, weights: Vec<T>) -> Result<Self> {
        Self::new(self.points.clone(), weights)
    }

    pub fn is_sorted_1d(&self) -> bool {
        self.dim() == 1 && self.points.windows(2).all(|w| w[0][0] < w[1][0])
    }
}

/// Increasing coordinatewise transformations used to build pushforward
/// measures from a uniform box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedMap {
    Identity,
    /// `t ↦ t²`, requires a nonnegative domain.
    Square,
    /// `t ↦ √t`, requires a nonnegative domain.
    Sqrt,
    /// `t ↦ t³`.
    Cube,
    /// `t ↦ eᵗ`.
    Exp,
}

impl NamedMap {
    pub fn id(&self) -> &'static str {
        match self {
            NamedMap::Identity => "identity",
            NamedMap::Square => "square",
            NamedMap::Sqrt => "sqrt",
            NamedMap::Cube => "cube",
            NamedMap::Exp => "exp",
        }
    }

    fn accepts(&self, lo: f64) -> bool {
        match self {
            NamedMap::Square | NamedMap::Sqrt => lo >= 0.0,
            _ => true,
        }
    }

    pub fn forward<T: Real>(&self, t: T) -> T {
        match self {
            NamedMap::Identity => t,
            NamedMap::Square => t * t,
            NamedMap::Sqrt => t.sqrt(),
            NamedMap::Cube => t * t * t,
            NamedMap::Exp => t.exp(),
        }
    }

    pub fn inverse<T: Real>(&self, s: T) -> T {
        match self {
            NamedMap::Identity => s,
            NamedMap::Square => s.max(T::zero()).sqrt(),
            NamedMap::Sqrt => s * s,
            NamedMap::Cube => s.cbrt(),
            NamedMap::Exp => s.ln(),
        }
    }

    pub fn derivative<T: Real>(&self, t: T) -> T {
        match self {
            NamedMap::Identity => T::one(),
            NamedMap::Square => T::of(2.0) * t,
            NamedMap::Sqrt => T::of(0.5) / t.sqrt(),
            NamedMap::Cube => T::of(3.0) * t * t,
            NamedMap::Exp => t.exp(),
        }
    }
}

/// Absolutely continuous target measure.
///
/// `Q` is the law of `T_k ∘ … ∘ T_1(U)` where `U` is uniform on the box
/// `[lo, hi]` and every `T_i` is an increasing [`NamedMap`] applied to each
/// coordinate. This family is closed under the operations the toolkit
/// needs: seeded sampling, an explicit density, a product quadrature in the
/// base coordinates, and in one dimension an exact cdf and quantile.
/// Supports are boxes, hence connected with negligible boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousMeasure<T> {
    lo: Vec<T>,
    hi: Vec<T>,
    maps: Vec<NamedMap>,
    quadrature: Option<QuadratureScheme>,
}

impl<T: Real> ContinuousMeasure<T> {
    pub fn uniform_box(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(invalid("uniform box bounds must have equal positive length"));
        }
        if lo.iter().zip(&hi).any(|(&l, &h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(invalid("uniform box needs finite lo < hi in every coordinate"));
        }
        let quadrature = Some(QuadratureScheme::default_for_dim(lo.len()));
        Ok(Self { lo, hi, maps: Vec::new(), quadrature })
    }

    /// Uniform on `[0, 1]^d`.
    pub fn unit_cube(d: usize) -> Self {
        Self::uniform_box(vec![T::zero(); d], vec![T::one(); d]).expect("valid unit cube")
    }

    /// Pushes the measure forward through `map` applied to every coordinate.
    pub fn pushforward(mut self, map: NamedMap) -> Result<Self> {
        let (slo, _) = self.support_box();
        if slo.iter().any(|&l| !map.accepts(l.to_f64_lossy())) {
            return Err(invalid(format!("map `{}` is not defined on the support", map.id())));
        }
        self.maps.push(map);
        Ok(self)
    }

    pub fn with_quadrature(mut self, scheme: QuadratureScheme) -> Result<Self> {
        if scheme.cells_per_dim == 0 || scheme.nodes_per_cell == 0 {
            return Err(invalid("quadrature needs at least one cell and one node"));
        }
        self.quadrature = Some(scheme);
        Ok(self)
    }

    pub fn without_quadrature(mut self) -> Self {
        self.quadrature = None;
        self
    }

    pub fn quadrature(&self) -> Option<QuadratureScheme> {
        self.quadrature
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn base_box(&self) -> (&[T], &[T]) {
        (&self.lo, &self.hi)
    }

    pub fn maps(&self) -> &[NamedMap] {
        &self.maps
    }

    pub fn is_uniform(&self) -> bool {
        self.maps.iter().all(|m| *m == NamedMap::Identity)
    }

    /// Presence of a density encodes absolute continuity.
    pub fn has_density(&self) -> bool {
        true
    }

    pub fn has_connected_support(&self) -> bool {
        true
    }

    fn base_volume(&self) -> T {
        self.lo.iter().zip(&self.hi).fold(T::one(), |acc, (&l, &h)| acc * (h - l))
    }

    /// Maps a base-box point to the target space.
    pub fn transform(&self, u: &[T]) -> Vec<T> {
        u.iter().map(|&t| self.transform_coord(t)).collect()
    }

    fn transform_coord(&self, mut t: T) -> T {
        for m in &self.maps {
            t = m.forward(t);
        }
        t
    }

    fn inverse_coord(&self, mut s: T) -> T {
        for m in self.maps.iter().rev() {
            s = m.inverse(s);
        }
        s
    }

    fn jacobian_coord(&self, mut t: T) -> T {
        let mut jac = T::one();
        for m in &self.maps {
            jac = jac * m.derivative(t);
            t = m.forward(t);
        }
        jac
    }

    /// Support of `Q` as a box.
    pub fn support_box(&self) -> (Vec<T>, Vec<T>) {
        (
            self.lo.iter().map(|&t| self.transform_coord(t)).collect(),
            self.hi.iter().map(|&t| self.transform_coord(t)).collect(),
        )
    }

    pub fn contains(&self, y: &[T]) -> bool {
        let (lo, hi) = self.support_box();
        y.len() == lo.len() && y.iter().zip(lo.iter().zip(&hi)).all(|(&v, (&l, &h))| l <= v && v <= h)
    }

    /// Lebesgue density of `Q`; zero outside the support.
    pub fn density(&self, y: &[T]) -> Option<T> {
        if !self.contains(y) {
            return Some(T::zero());
        }
        let mut q = T::one() / self.base_volume();
        for &s in y {
            let u = self.inverse_coord(s);
            q = q / self.jacobian_coord(u).abs();
        }
        Some(q)
    }

    /// Distribution function; one-dimensional measures only.
    pub fn cdf(&self, t: T) -> Result<T> {
        self.require_1d()?;
        let (lo, hi) = self.support_box();
        if t <= lo[0] {
            return Ok(T::zero());
        }
        if t >= hi[0] {
            return Ok(T::one());
        }
        let u = self.inverse_coord(t);
        Ok(((u - self.lo[0]) / (self.hi[0] - self.lo[0])).max(T::zero()).min(T::one()))
    }

    /// Quantile function on `[0, 1]`; one-dimensional measures only.
    pub fn quantile(&self, u: T) -> Result<T> {
        self.require_1d()?;
        if !(u >= T::zero() && u <= T::one()) {
            return Err(invalid(format!("quantile level {u} outside [0, 1]")));
        }
        let t = if u == T::one() { self.hi[0] } else { self.lo[0] + u * (self.hi[0] - self.lo[0]) };
        Ok(self.transform_coord(t))
    }

    fn require_1d(&self) -> Result<()> {
        if self.dim() != 1 {
            return Err(invalid("cdf/quantile exist only for one-dimensional measures"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let u: Vec<T> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| l + T::of(rng.random::<f64>()) * (h - l))
            .collect();
        self.transform(&u)
    }

    pub fn sample_n(&self, n: usize, seed: u64) -> Vec<Vec<T>> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    /// Quadrature nodes in target space with probability weights.
    pub fn weighted_nodes(&self) -> Result<Vec<(Vec<T>, T)>> {
        let scheme = self.scheme()?;
        let rule = gauss_legendre::<T>(scheme.nodes_per_cell);
        let inv_vol = T::one() / self.base_volume();
        Ok(scheme
            .cells(&self.lo, &self.hi)
            .iter()
            .flat_map(|c| c.nodes(&rule))
            .map(|(u, w)| (self.transform(&u), w * inv_vol))
            .collect())
    }

    /// The scheme's grid cells in base coordinates.
    pub fn base_cells(&self) -> Result<Vec<BoxCell<T>>> {
        Ok(self.scheme()?.cells(&self.lo, &self.hi))
    }

    pub(crate) fn base_probability(&self, cell_volume: T) -> T {
        cell_volume / self.base_volume()
    }

    fn scheme(&self) -> Result<QuadratureScheme> {
        self.quadrature
            .ok_or_else(|| Error::UnsupportedBackend("measure has no quadrature scheme".into()))
    }
}

/// Multinomial counts of an empirical measure `P_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalWeights {
    pub counts: Vec<u64>,
    pub n: u64,
}

impl EmpiricalWeights {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(invalid("empirical weights need a positive total"));
        }
        Ok(Self { counts, n })
    }

    pub fn frequencies<T: Real>(&self) -> Vec<T> {
        let n = T::of(self.n as f64);
        self.counts.iter().map(|&c| T::of(c as f64) / n).collect()
    }

    /// Frequencies as exact rationals; they sum to exactly one.
    pub fn frequencies_exact(&self) -> Vec<BigRational> {
        self.counts
            .iter()
            .map(|&c| BigRational::new(BigInt::from(c), BigInt::from(self.n)))
            .collect()
    }
}

/// Draws `n` i.i.d. atoms from `P` and returns the multinomial counts.
///
/// Counts are produced by sequential conditional binomials, so they are a
/// deterministic function of `(P, n, seed)`.
pub fn sample_discrete<T: Real>(p: &DiscreteMeasure<T>, n: u64, seed: u64) -> Result<EmpiricalWeights> {
    sample_counts(p.weights(), n, seed)
}

/// [`sample_discrete`] on a bare probability vector.
pub fn sample_counts<T: Real>(weights: &[T], n: u64, seed: u64) -> Result<EmpiricalWeights> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let m = weights.len();
    let mut counts = vec![0u64; m];
    let mut remaining = n;
    let mut mass_left = 1.0f64;
    for k in 0..m {
        if remaining == 0 {
            break;
        }
        if k + 1 == m {
            counts[k] = remaining;
            break;
        }
        let pk = weights[k].to_f64_lossy();
        let prob = if mass_left > 0.0 { (pk / mass_left).clamp(0.0, 1.0) } else { 1.0 };
        let draw = Binomial::new(remaining, prob)
            .map_err(|e| invalid(format!("binomial parameters: {e}")))?
            .sample(&mut rng);
        counts[k] = draw;
        remaining -= draw;
        mass_left -= pk;
    }
    Ok(EmpiricalWeights { counts, n })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct McEstimate<T> {
    pub value: T,
    pub std_error: T,
}

/// Monte Carlo integral of `f` against `Q` with `samples` seeded draws.
///
/// The mean and variance are reduced with [`pairwise_sum`], so the result
/// is bit-stable for a given seed.
pub fn mc_integrate<T: Real, F>(q: &ContinuousMeasure<T>, f: F, samples: usize, seed: u64) -> Result<McEstimate<T>>
where
    F: Fn(&[T]) -> T,
{
    if samples < 2 {
        return Err(invalid("Monte Carlo integration needs at least 2 samples"));
    }
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let y = q.sample(&mut rng);
        let v = f(&y);
        if !v.is_finite() {
            return Err(Error::IntegrationFailure { point: y.iter().map(|t| t.to_f64_lossy()).collect() });
        }
        values.push(v);
    }
    Ok(mean_and_std_error(&values))
}

pub(crate) fn mean_and_std_error<T: Real>(values: &[T]) -> McEstimate<T> {
    let n = T::of_usize(values.len());
    let mean = pairwise_sum(values) / n;
    let sq: Vec<T> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - T::one());
    McEstimate { value: mean, std_error: (var / n).sqrt() }
}

/// Deterministic integral `Σ w_i f(y_i)` over the measure's quadrature
/// nodes.
pub fn quad_integrate<T: Real, F>(q: &ContinuousMeasure<T>, f: F) -> Result<T>
where
    F: Fn(&[T]) -> T,
{
    let nodes = q.weighted_nodes()?;
    let mut terms = Vec::with_capacity(nodes.len());
    for (y, w) in &nodes {
        let v = f(y);
        if !v.is_finite() {
            return Err(Error::IntegrationFailure { point: y.iter().map(|t| t.to_f64_lossy()).collect() });
        }
        terms.push(*w * v);
    }
    Ok(pairwise_sum(&terms))
}

/// JSON description of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeasureSpec {
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quadrature: Option<QuadratureScheme>,
    },
    Discrete {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    Pushforward {
        base: Box<MeasureSpec>,
        map: NamedMap,
    },
}

/// A built measure of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure<T> {
    Discrete(DiscreteMeasure<T>),
    Continuous(ContinuousMeasure<T>),
}

impl MeasureSpec {
    pub fn build<T: Real>(&self) -> Result<Measure<T>> {
        match self {
            MeasureSpec::UniformBox { lo, hi, quadrature } => {
                let mut q = ContinuousMeasure::uniform_box(
                    lo.iter().map(|&v| T::of(v)).collect(),
                    hi.iter().map(|&v| T::of(v)).collect(),
                )?;
                if let Some(s) = quadrature {
                    q = q.with_quadrature(*s)?;
                }
                Ok(Measure::Continuous(q))
            }
            MeasureSpec::Discrete { points, weights } => Ok(Measure::Discrete(DiscreteMeasure::new(
                points.iter().map(|x| x.iter().map(|&v| T::of(v)).collect()).collect(),
                weights.iter().map(|&w| T::of(w)).collect(),
            )?)),
            MeasureSpec::Pushforward { base, map } => match base.build::<T>()? {
                Measure::Continuous(q) => Ok(Measure::Continuous(q.pushforward(*map)?)),
                Measure::Discrete(_) => Err(invalid("pushforward of a discrete measure is not supported")),
            },
        }
    }

    pub fn build_discrete<T: Real>(&self) -> Result<DiscreteMeasure<T>> {
        match self.build()? {
            Measure::Discrete(p) => Ok(p),
            Measure::Continuous(_) => Err(invalid("expected a discrete measure")),
        }
    }

    pub fn build_continuous<T: Real>(&self) -> Result<ContinuousMeasure<T>> {
        match self.build()? {
            Measure::Continuous(q) => Ok(q),
            Measure::Discrete(_) => Err(invalid("expected a continuous measure")),
        }
    }
}
