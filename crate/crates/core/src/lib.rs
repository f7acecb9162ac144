//! Semidiscrete optimal transport with asymptotic inference.
//!
//! The crate solves the transport problem between a finitely supported
//! measure `P = Σ p_k δ_{x_k}` and a general measure `Q` by maximizing the
//! concave dual functional
//!
//! ```text
//! M(z, p) = Σ_k p_k z_k / ‖p‖₁ + ∫ min_i { c(y, x_i) − z_i } dQ(y)
//! ```
//!
//! over the potential vector `z`, and builds the limit laws of the
//! √n-scaled fluctuations of the empirical transport cost, the
//! Wasserstein distance and the potentials.
//!
//! Numerical code is generic over the scalar: [`scalar::Real`] for the
//! floating-point core (`f32`, `f64`) and [`scalar::Field`] for the exact
//! transportation LP (adds [`num_rational::BigRational`]). The aliases below
//! fix the common instantiations.

pub mod costs;
pub mod discrete;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod linalg;
pub mod lp;
pub mod measures;
pub mod quadrature;
pub mod scalar;
pub mod seeds;
pub mod solver;

pub use error::{Error, Result};

pub type DiscreteMeasureF64 = measures::DiscreteMeasure<f64>;
pub type DiscreteMeasureF32 = measures::DiscreteMeasure<f32>;
pub type ContinuousMeasureF64 = measures::ContinuousMeasure<f64>;
pub type ContinuousMeasureF32 = measures::ContinuousMeasure<f32>;
pub type CostFunctionF64 = costs::CostFunction<f64>;
pub type CostFunctionF32 = costs::CostFunction<f32>;
pub type MatrixF64 = linalg::DenseMatrix<f64>;
pub type SolveReportF64 = solver::SolveReport<f64>;
pub type TransportPlanF64 = discrete::TransportPlanLP<f64>;
pub type TransportPlanExact = discrete::TransportPlanLP<num_rational::BigRational>;
pub type LimitLawF64 = inference::LimitLaw<f64>;
