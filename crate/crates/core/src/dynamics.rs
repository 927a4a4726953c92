//! Controlled dynamics: the benchmark ODE, its bang-bang control set, and the
//! one-step flow maps every backup operator is built from.
//!
//! The benchmark system is the double integrator
//! `d/ds (x1, x2) = (x2, u)` with `u` restricted to `{-a_max, +a_max}`.
//! Controls are held constant within a step (piecewise-constant policies);
//! all operations here are pure functions of their inputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A planar state; `(position, velocity)` for the double integrator.
pub type State<F> = [F; 2];

/// Finite, ordered set of admissible control values.
///
/// Ordering matters: ties in `min`-over-controls are broken in favor of the
/// earliest action, so the recorded policies are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet<F: Scalar> {
    actions: Vec<F>,
}

impl<F: Scalar> ControlSet<F> {
    pub fn new(actions: Vec<F>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::contract("control set must be non-empty"));
        }
        if actions.iter().any(|u| !u.is_finite()) {
            return Err(Error::contract("control values must be finite"));
        }
        Ok(ControlSet { actions })
    }

    /// The benchmark bang-bang set `{-a_max, +a_max}`.
    pub fn bang_bang(a_max: F) -> Result<Self> {
        if !(a_max > F::zero()) || !a_max.is_finite() {
            return Err(Error::contract("a_max must be positive and finite"));
        }
        ControlSet::new(vec![-a_max, a_max])
    }

    pub fn actions(&self) -> &[F] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn contains(&self, u: F) -> bool {
        self.actions.iter().any(|&a| a == u)
    }
}

/// A controlled vector field `f(x, u)` with its regularity constants.
///
/// Implementations must be deterministic: identical inputs give identical
/// outputs, bit for bit.
pub trait Dynamics<F: Scalar>: Sync {
    fn state_dim(&self) -> usize {
        2
    }

    /// The state derivative `f(x, u)`. Callers guarantee `u` is admissible;
    /// use [`eval_field`] for the membership-checked variant.
    fn vector_field(&self, x: State<F>, u: F) -> State<F>;

    /// Lipschitz constant of `x -> f(x, u)`, uniform over controls.
    fn lipschitz_const(&self) -> F;

    /// Speed bound `max ||f(x, u)||` over a rectangle of states.
    ///
    /// A global bound does not exist for the double integrator on the whole
    /// plane, so the bound is taken over the region of interest only.
    fn speed_bound(&self, x_range: (F, F), y_range: (F, F)) -> F;
}

/// The double integrator `f((x1, x2), u) = (x2, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleIntegrator<F: Scalar> {
    a_max: F,
}

impl<F: Scalar> DoubleIntegrator<F> {
    pub fn new(a_max: F) -> Result<Self> {
        if !(a_max > F::zero()) || !a_max.is_finite() {
            return Err(Error::contract("a_max must be positive and finite"));
        }
        Ok(DoubleIntegrator { a_max })
    }

    pub fn a_max(&self) -> F {
        self.a_max
    }

    pub fn control_set(&self) -> ControlSet<F> {
        ControlSet::bang_bang(self.a_max).expect("a_max validated at construction")
    }
}

impl<F: Scalar> Dynamics<F> for DoubleIntegrator<F> {
    fn vector_field(&self, x: State<F>, u: F) -> State<F> {
        [x[1], u]
    }

    fn lipschitz_const(&self) -> F {
        F::one()
    }

    fn speed_bound(&self, _x_range: (F, F), y_range: (F, F)) -> F {
        let vmax = y_range.0.abs().max(y_range.1.abs());
        (vmax * vmax + self.a_max * self.a_max).sqrt()
    }
}

/// Time-stepping scheme for one step along a characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `x + dt * f(x, u)`.
    ExplicitEuler,
    /// `x + (dt/2) * f(x, u)`: the half-step point used for cost quadrature.
    Midpoint,
}

/// A validated (scheme, step size) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStep<F: Scalar> {
    pub scheme: Scheme,
    dt: F,
}

impl<F: Scalar> FlowStep<F> {
    pub fn new(scheme: Scheme, dt: F) -> Result<Self> {
        if !(dt > F::zero()) || !dt.is_finite() {
            return Err(Error::contract("step size dt must be positive and finite"));
        }
        Ok(FlowStep { scheme, dt })
    }

    pub fn dt(&self) -> F {
        self.dt
    }
}

/// Membership-checked evaluation of the vector field.
pub fn eval_field<F: Scalar, D: Dynamics<F>>(
    dynamics: &D,
    controls: &ControlSet<F>,
    x: State<F>,
    u: F,
) -> Result<State<F>> {
    if !controls.contains(u) {
        return Err(Error::contract(format!(
            "control {u} is not a member of the control set"
        )));
    }
    Ok(dynamics.vector_field(x, u))
}

/// Advance one step of the configured scheme.
pub fn flow_step<F: Scalar, D: Dynamics<F>>(
    dynamics: &D,
    step: FlowStep<F>,
    x: State<F>,
    u: F,
) -> State<F> {
    let d = dynamics.vector_field(x, u);
    let h = match step.scheme {
        Scheme::ExplicitEuler => step.dt,
        Scheme::Midpoint => step.dt * crate::scalar::cast::<F>(0.5),
    };
    [x[0] + h * d[0], x[1] + h * d[1]]
}

/// Realize a trajectory under a sequence of per-step controls.
///
/// Returns `len(controls) + 1` states starting at `x0`.
pub fn rollout<F: Scalar, D: Dynamics<F>>(
    dynamics: &D,
    step: FlowStep<F>,
    x0: State<F>,
    controls: &[F],
) -> Result<Vec<State<F>>> {
    if controls.is_empty() {
        return Err(Error::contract("rollout requires a non-empty control sequence"));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0);
    let mut x = x0;
    for &u in controls {
        x = flow_step(dynamics, step, x, u);
        states.push(x);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn di() -> DoubleIntegrator<f64> {
        DoubleIntegrator::new(1.0).unwrap()
    }

    #[test]
    fn eval_field_substitutes_directly() {
        let dyn_ = di();
        let cs = dyn_.control_set();
        assert_eq!(eval_field(&dyn_, &cs, [0.0, 0.0], 1.0).unwrap(), [0.0, 1.0]);
        assert_eq!(eval_field(&dyn_, &cs, [3.0, -2.0], -1.0).unwrap(), [-2.0, -1.0]);
    }

    #[test]
    fn eval_field_rejects_non_member_control() {
        let dyn_ = di();
        let cs = dyn_.control_set();
        assert!(eval_field(&dyn_, &cs, [0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn euler_step_matches_formula() {
        let dyn_ = DoubleIntegrator::new(2.0).unwrap();
        let step = FlowStep::new(Scheme::ExplicitEuler, 0.05).unwrap();
        assert_eq!(flow_step(&dyn_, step, [0.0, 0.0], 2.0), [0.0, 0.1]);
        let dyn1 = di();
        let step = FlowStep::new(Scheme::ExplicitEuler, 0.05).unwrap();
        assert_eq!(flow_step(&dyn1, step, [0.0, 1.0], 1.0), [0.05, 1.05]);
    }

    #[test]
    fn midpoint_is_the_half_step_point() {
        let dyn_ = di();
        let step = FlowStep::new(Scheme::Midpoint, 0.05).unwrap();
        assert_eq!(flow_step(&dyn_, step, [0.0, 0.0], 1.0), [0.0, 0.025]);
    }

    #[test]
    fn nonpositive_dt_is_rejected() {
        assert!(FlowStep::<f64>::new(Scheme::ExplicitEuler, 0.0).is_err());
        assert!(FlowStep::<f64>::new(Scheme::ExplicitEuler, -0.05).is_err());
    }

    #[test]
    fn rollout_two_euler_steps_by_hand() {
        let dyn_ = di();
        let step = FlowStep::new(Scheme::ExplicitEuler, 0.05).unwrap();
        let states = rollout(&dyn_, step, [0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(states[0], [0.0, 0.0]);
        assert_eq!(states[1], [0.0, 0.05]);
        assert!((states[2][0] - 0.0025).abs() < 1e-17);
        assert_eq!(states[2][1], 0.1);

        let states = rollout(&dyn_, step, [0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert!((states[2][0] - 0.0025).abs() < 1e-17);
        assert_eq!(states[2][1], 0.0);
    }

    #[test]
    fn rollout_rejects_empty_controls() {
        let dyn_ = di();
        let step = FlowStep::new(Scheme::ExplicitEuler, 0.05).unwrap();
        assert!(rollout(&dyn_, step, [1.0, 0.0], &[]).is_err());
    }

    #[test]
    fn two_half_steps_differ_from_one_step_by_quadratic_term() {
        // dt chosen dyadic so the closed-form local error (dt^2/4)*u is exact.
        let dyn_ = di();
        let dt = 0.0625;
        let u = 1.0;
        let x0 = [0.5, 0.25];
        let full = FlowStep::new(Scheme::ExplicitEuler, dt).unwrap();
        let half = FlowStep::new(Scheme::ExplicitEuler, dt / 2.0).unwrap();

        let one = flow_step(&dyn_, full, x0, u);
        let two = flow_step(&dyn_, half, flow_step(&dyn_, half, x0, u), u);

        assert_eq!(two[1], one[1]);
        assert_eq!(two[0] - one[0], dt * dt / 4.0 * u);
    }

    #[test]
    fn control_set_shape() {
        let cs = ControlSet::bang_bang(1.5f64).unwrap();
        assert_eq!(cs.actions(), &[-1.5, 1.5]);
        assert!(cs.contains(1.5) && cs.contains(-1.5) && !cs.contains(0.0));
        assert!(ControlSet::<f64>::new(vec![]).is_err());
        assert!(ControlSet::bang_bang(0.0f64).is_err());
    }

    #[test]
    fn speed_bound_is_roi_restricted() {
        let dyn_ = di();
        let m = dyn_.speed_bound((-10.0, 10.0), (-10.0, 10.0));
        assert_eq!(m, (100.0f64 + 1.0).sqrt());
        assert_eq!(dyn_.lipschitz_const(), 1.0);
    }
}
