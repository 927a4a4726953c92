//! Semi-Lagrangian solvers on top of the shared backup kernel:
//!
//! * the stationary discounted fixed point (synchronous value iteration to a
//!   sup-norm tolerance) used as Stage II ground truth,
//! * the finite-horizon travel-cost solve marched forward in time-to-go from
//!   zero initial data (discounted or undiscounted),
//! * the classical minimum-over-time reach-cost recursion used as the
//!   Stage I comparison baseline.

use rayon::prelude::*;

use crate::bellman::backup_sweep;
use crate::costs::{DiscountConfig, Horizon, TravelCost};
use crate::dynamics::{ControlSet, Dynamics, State};
use crate::error::{Error, Result};
use crate::grid::{sup_diff, Grid2, ScalarField};
use crate::scalar::Scalar;

/// Stopping rule for the stationary solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig<F: Scalar> {
    pub disc: DiscountConfig<F>,
    pub tol: F,
    pub max_iters: usize,
}

impl<F: Scalar> SweepConfig<F> {
    pub fn new(disc: DiscountConfig<F>, tol: F, max_iters: usize) -> Result<Self> {
        if !(tol > F::zero()) || !tol.is_finite() {
            return Err(Error::contract("tolerance must be positive and finite"));
        }
        if max_iters == 0 {
            return Err(Error::contract("max_iters must be positive"));
        }
        Ok(SweepConfig {
            disc,
            tol,
            max_iters,
        })
    }
}

/// A converged (or capped) stationary solve with its convergence history.
#[derive(Debug, Clone)]
pub struct ValueSolution<F: Scalar> {
    pub field: ScalarField<F>,
    pub iterations: usize,
    pub final_delta: F,
    pub converged: bool,
    /// Sup-norm change per iteration, `deltas[k] = ||V^{k+1} - V^k||_inf`.
    pub deltas: Vec<F>,
}

/// Slices of a time-dependent solve indexed by time-to-go `tau_k = k dt`.
#[derive(Debug, Clone)]
pub struct TimeDependentSolution<F: Scalar> {
    pub slices: Vec<ScalarField<F>>,
    pub horizon: Horizon<F>,
}

impl<F: Scalar> TimeDependentSolution<F> {
    pub fn final_slice(&self) -> &ScalarField<F> {
        self.slices.last().expect("at least the initial slice")
    }
}

/// One synchronous semi-Lagrangian backup of `v` (all reads from the input
/// field). Identical to the one-step MDP backup on every node by
/// construction: both delegate to the same kernel.
pub fn sl_backup<F, D>(
    v: &ScalarField<F>,
    cfg: &SweepConfig<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
    cost: &TravelCost<F>,
) -> ScalarField<F>
where
    F: Scalar,
    D: Dynamics<F>,
{
    backup_sweep(v, dynamics, controls, cost, &cfg.disc)
}

/// Fixed point of the discounted backup from the zero seed.
pub fn solve_stationary<F, D>(
    cfg: &SweepConfig<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
    cost: &TravelCost<F>,
    grid: Grid2<F>,
) -> Result<ValueSolution<F>>
where
    F: Scalar,
    D: Dynamics<F>,
{
    solve_stationary_from(ScalarField::zeros(grid), cfg, dynamics, controls, cost)
}

/// Fixed point of the discounted backup from a caller-supplied seed.
///
/// Requires a strictly positive discount rate: at rate zero the operator is
/// only nonexpansive and the stationary problem is ill-posed.
pub fn solve_stationary_from<F, D>(
    seed: ScalarField<F>,
    cfg: &SweepConfig<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
    cost: &TravelCost<F>,
) -> Result<ValueSolution<F>>
where
    F: Scalar,
    D: Dynamics<F>,
{
    if !(cfg.disc.rate() > F::zero()) {
        return Err(Error::contract(
            "stationary solve requires a positive discount rate",
        ));
    }
    let mut current = seed;
    let mut deltas = Vec::new();
    for iteration in 1..=cfg.max_iters {
        let next = sl_backup(&current, cfg, dynamics, controls, cost);
        let delta = sup_diff(&next, &current)?.max_abs;
        deltas.push(delta);
        current = next;
        if delta <= cfg.tol {
            return Ok(ValueSolution {
                field: current,
                iterations: iteration,
                final_delta: delta,
                converged: true,
                deltas,
            });
        }
    }
    let final_delta = *deltas.last().unwrap();
    Ok(ValueSolution {
        field: current,
        iterations: cfg.max_iters,
        final_delta,
        converged: false,
        deltas,
    })
}

/// Finite-horizon travel-cost solve: `slices[0] = 0` and
/// `slices[k+1] = sl_backup(slices[k])`, marching forward in time-to-go.
/// Supports rate 0 (weight `dt`) for the undiscounted Stage I travel cost.
pub fn solve_travel_finite_horizon<F, D>(
    disc: &DiscountConfig<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
    cost: &TravelCost<F>,
    grid: Grid2<F>,
    horizon: Horizon<F>,
) -> Result<TimeDependentSolution<F>>
where
    F: Scalar,
    D: Dynamics<F>,
{
    let steps = horizon.num_steps(disc.dt())?;
    let mut slices = Vec::with_capacity(steps + 1);
    slices.push(ScalarField::zeros(grid));
    for _ in 0..steps {
        let next = backup_sweep(slices.last().unwrap(), dynamics, controls, cost, disc);
        slices.push(next);
    }
    Ok(TimeDependentSolution { slices, horizon })
}

/// Classical minimum-over-time reach-cost recursion
/// `U_{k+1}(x) = min(l(x), min_u U_k(x + dt f(x, u)))` from `U_0 = l`,
/// where `l` is a signed-distance-style map, negative inside the target.
/// The zero sublevel of the final slice approximates the strict tube.
pub fn solve_reach_min_over_time<F, D>(
    dynamics: &D,
    controls: &ControlSet<F>,
    grid: Grid2<F>,
    horizon: Horizon<F>,
    dt: F,
    l: impl Fn(State<F>) -> F,
) -> Result<TimeDependentSolution<F>>
where
    F: Scalar,
    D: Dynamics<F>,
{
    if !(dt > F::zero()) || !dt.is_finite() {
        return Err(Error::contract("step size dt must be positive and finite"));
    }
    let steps = horizon.num_steps(dt)?;
    let initial = ScalarField::from_fn(grid, &l)?;
    let mut slices = Vec::with_capacity(steps + 1);
    slices.push(initial);
    let nx = grid.nx();
    for _ in 0..steps {
        let prev = slices.last().unwrap();
        let seed = &slices[0];
        let mut out = vec![F::zero(); grid.n_nodes()];
        out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
            for (i, slot) in row.iter_mut().enumerate() {
                let x = grid.point(i, j);
                let mut best = F::infinity();
                for &u in controls.actions() {
                    let d = dynamics.vector_field(x, u);
                    let succ = [x[0] + dt * d[0], x[1] + dt * d[1]];
                    let v = prev.interpolate(succ);
                    if v < best {
                        best = v;
                    }
                }
                let lx = seed.get(i, j);
                *slot = if lx < best { lx } else { best };
            }
        });
        let next = ScalarField::new(grid, out).expect("reach sweep preserves finiteness");
        slices.push(next);
    }
    Ok(TimeDependentSolution { slices, horizon })
}
