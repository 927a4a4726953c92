//! Travel-cost reachability meets discounted dynamic programming on the
//! double-integrator benchmark.
//!
//! The crate provides, in layers:
//!
//! * [`dynamics`] / [`costs`] — the benchmark ODE with bang-bang controls and
//!   the sign-calibrated travel cost with its discount bookkeeping;
//! * [`grid`] — uniform 2-D fields with clamped bilinear interpolation;
//! * [`bellman`] — the contractive one-step backup operator (shared kernel),
//!   residual probes, and the step-refinement consistency study;
//! * [`hjb`] — semi-Lagrangian solvers: stationary discounted fixed point,
//!   finite-horizon travel solve, minimum-over-time reach baseline;
//! * [`siren`] — a sinusoidal value network trained on discounted TD targets;
//! * [`reachability`] — strict tube extraction from value sublevel sets and a
//!   brute-force bang-bang trajectory oracle to cross-validate it.
//!
//! All numerics are generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`); the aliases below pin the default precision used by the
//! command-line harness.

pub mod bellman;
pub mod costs;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod reachability;
pub mod scalar;
pub mod siren;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default precision for the experiment harness.
pub type Real = f64;

pub type Grid = grid::Grid2<Real>;
pub type Field = grid::ScalarField<Real>;
pub type BenchmarkDynamics = dynamics::DoubleIntegrator<Real>;
pub type Controls = dynamics::ControlSet<Real>;
pub type Cost = costs::TravelCost<Real>;
pub type Discount = costs::DiscountConfig<Real>;
