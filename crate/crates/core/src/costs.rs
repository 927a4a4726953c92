//! The calibrated travel cost and the discount bookkeeping shared by the PDE
//! solver and the learner.
//!
//! The running cost is `h(x) = -alpha * (r - ||x||)` on the open disk
//! `||x|| < r` and exactly zero elsewhere. The sign calibration (zero off
//! target, strictly negative on it) is what makes the value's negative
//! sublevel set recover the strict backward-reachable tube.

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Travel cost over an open disk target.
///
/// Independent of control and time for the benchmark; the solvers still
/// thread a time argument where the theory allows `h(s, x, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TravelCost<F: Scalar> {
    radius: F,
    scale: F,
}

impl<F: Scalar> TravelCost<F> {
    /// `radius` is the target radius `r > 0`, `scale` the slope `alpha >= 0`.
    ///
    /// `scale == 0` is accepted so the degenerate `h == 0` cost can be built;
    /// [`check_calibration`] flags it as an S1 violation.
    pub fn new(radius: F, scale: F) -> Result<Self> {
        if !(radius > F::zero()) || !radius.is_finite() {
            return Err(Error::contract("target radius must be positive and finite"));
        }
        if !(scale >= F::zero()) || !scale.is_finite() {
            return Err(Error::contract("cost scale must be nonnegative and finite"));
        }
        Ok(TravelCost { radius, scale })
    }

    pub fn radius(&self) -> F {
        self.radius
    }

    pub fn scale(&self) -> F {
        self.scale
    }

    /// Uniform bound `M_h = alpha * r` on `|h|`.
    pub fn bound(&self) -> F {
        self.scale * self.radius
    }

    /// Lipschitz constant in the state, `L_h = alpha`.
    pub fn lipschitz_const(&self) -> F {
        self.scale
    }

    /// Whether `x` lies in the open target disk.
    pub fn contains_target(&self, x: State<F>) -> bool {
        norm(x) < self.radius
    }

    /// Evaluate the travel cost. Exactly zero on and outside the circle
    /// `||x|| = r` (the target is open).
    pub fn eval(&self, x: State<F>) -> F {
        let n = norm(x);
        if n < self.radius {
            -self.scale * (self.radius - n)
        } else {
            F::zero()
        }
    }
}

fn norm<F: Scalar>(x: State<F>) -> F {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

/// Which side of the sign calibration a sample violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationKind {
    /// Off-target sample with nonzero cost.
    S0,
    /// On-target sample with nonnegative cost.
    S1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationViolation<F: Scalar> {
    pub state: State<F>,
    pub kind: CalibrationKind,
    pub value: F,
}

/// Result of checking S0/S1 on a sample set; empty iff calibration holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationReport<F: Scalar> {
    pub violations: Vec<CalibrationViolation<F>>,
}

impl<F: Scalar> CalibrationReport<F> {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check the sign calibration on a set of sample states: S0 requires
/// `h = 0` off target, S1 requires `h < 0` on the (open) target.
pub fn check_calibration<F: Scalar>(
    cost: &TravelCost<F>,
    samples: &[State<F>],
) -> CalibrationReport<F> {
    let mut violations = Vec::new();
    for &x in samples {
        let value = cost.eval(x);
        if cost.contains_target(x) {
            if !(value < F::zero()) {
                violations.push(CalibrationViolation {
                    state: x,
                    kind: CalibrationKind::S1,
                    value,
                });
            }
        } else if value != F::zero() {
            violations.push(CalibrationViolation {
                state: x,
                kind: CalibrationKind::S0,
                value,
            });
        }
    }
    CalibrationReport { violations }
}

/// Discount bookkeeping for a step of length `dt`:
/// `gamma = exp(-rate * dt)` and `weight = (1 - gamma) / rate`, with the
/// analytic limit `weight = dt` at `rate = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountConfig<F: Scalar> {
    rate: F,
    dt: F,
    gamma: F,
    weight: F,
}

impl<F: Scalar> DiscountConfig<F> {
    pub fn new(rate: F, dt: F) -> Result<Self> {
        if !(rate >= F::zero()) || !rate.is_finite() {
            return Err(Error::contract("discount rate must be nonnegative and finite"));
        }
        if !(dt > F::zero()) || !dt.is_finite() {
            return Err(Error::contract("step size dt must be positive and finite"));
        }
        let gamma = (-rate * dt).exp();
        let weight = if rate > F::zero() {
            (F::one() - gamma) / rate
        } else {
            dt
        };
        Ok(DiscountConfig {
            rate,
            dt,
            gamma,
            weight,
        })
    }

    pub fn rate(&self) -> F {
        self.rate
    }

    pub fn dt(&self) -> F {
        self.dt
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    pub fn weight(&self) -> F {
        self.weight
    }
}

/// Solve horizon. `forward` records that the solve is parameterized by
/// time-to-go `tau = T - t`, which is how every solver here marches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon<F: Scalar> {
    duration: F,
    pub forward: bool,
}

impl<F: Scalar> Horizon<F> {
    pub fn new(duration: F) -> Result<Self> {
        if !(duration > F::zero()) || !duration.is_finite() {
            return Err(Error::contract("horizon must be positive and finite"));
        }
        Ok(Horizon {
            duration,
            forward: true,
        })
    }

    pub fn duration(&self) -> F {
        self.duration
    }

    /// Number of steps `K` with `K * dt == duration`, rejecting non-integer
    /// multiples (up to a tiny rounding slack).
    pub fn num_steps(&self, dt: F) -> Result<usize> {
        let ratio = self.duration / dt;
        let k = ratio.round();
        let slack = crate::scalar::cast::<F>(1e-9);
        if (ratio - k).abs() > slack * ratio.abs().max(F::one()) {
            return Err(Error::contract(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.duration, dt
            )));
        }
        Ok(k.to_usize()
            .ok_or_else(|| Error::contract("horizon step count does not fit in usize"))?)
    }
}

/// Theoretical range `[h_min / rate, 0]` of the stationary discounted value.
pub fn value_range<F: Scalar>(cost: &TravelCost<F>, disc: &DiscountConfig<F>) -> Result<(F, F)> {
    if !(disc.rate() > F::zero()) {
        return Err(Error::contract(
            "value range requires a positive discount rate (stationary clamp undefined at rate 0)",
        ));
    }
    Ok((-cost.bound() / disc.rate(), F::zero()))
}
