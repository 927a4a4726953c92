//! The one-step deterministic discounted MDP view of the travel-cost
//! problem: a single backup kernel shared by every operator in the crate,
//! contraction/monotonicity probes, Bellman and HJB residuals at smooth test
//! functions, and the step-refinement consistency study.
//!
//! One step of length `sigma` costs `w * h(x + (sigma/2) f(x,u))` (midpoint
//! quadrature of the discounted running-cost integral) and continues with
//! weight `gamma = exp(-lambda * sigma)`:
//!
//! ```text
//! (T psi)(x) = min_u { w h(x + sigma/2 f(x,u)) + gamma psi(x + sigma f(x,u)) }
//! ```
//!
//! The same kernel evaluates against a grid field (semi-Lagrangian sweep), an
//! analytic test function (residuals), or a network (TD targets), so those
//! paths agree bitwise on shared inputs.

use rayon::prelude::*;

use crate::costs::{DiscountConfig, Horizon, TravelCost};
use crate::dynamics::{ControlSet, Dynamics, State};
use crate::error::{Error, Result};
use crate::grid::{sup_diff, ScalarField};
use crate::scalar::{cast, Scalar};

/// One backup at a single state against an arbitrary continuation.
///
/// Returns the minimizing value and the index of the minimizing control;
/// ties go to the earliest control in the set.
pub fn backup_point<F, D, C>(
    x: State<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
    cost: &TravelCost<F>,
    disc: &DiscountConfig<F>,
    continuation: C,
) -> (F, usize)
where
    F: Scalar,
    D: Dynamics<F>,
    C: Fn(State<F>) -> F,
{
    let dt = disc.dt();
    let half = dt * cast::<F>(0.5);
    let mut best = F::infinity();
    let mut best_idx = 0usize;
    for (k, &u) in controls.actions().iter().enumerate() {
        let d = dynamics.vector_field(x, u);
        let mid = [x[0] + half * d[0], x[1] + half * d[1]];
        let succ = [x[0] + dt * d[0], x[1] + dt * d[1]];
        let value = disc.weight() * cost.eval(mid) + disc.gamma() * continuation(succ);
        if value < best {
            best = value;
            best_idx = k;
        }
    }
    (best, best_idx)
}

/// Synchronous application of the backup over every grid node, reading only
/// the input field. Rows are computed in parallel; each node's value depends
/// only on its own inputs, so the schedule cannot change the result.
pub fn backup_sweep<F, D>(
    v: &ScalarField<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
    cost: &TravelCost<F>,
    disc: &DiscountConfig<F>,
) -> ScalarField<F>
where
    F: Scalar,
    D: Dynamics<F>,
{
    let grid = *v.grid();
    let nx = grid.nx();
    let mut out = vec![F::zero(); grid.n_nodes()];
    out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        for (i, slot) in row.iter_mut().enumerate() {
            let x = grid.point(i, j);
            let (value, _) =
                backup_point(x, dynamics, controls, cost, disc, |y| v.interpolate(y));
            *slot = value;
        }
    });
    ScalarField::new(grid, out).expect("backup of a finite field is finite")
}

/// The exact one-step MDP induced by slicing time into windows of length
/// `disc.dt()`, with actions restricted to constant controls.
#[derive(Debug, Clone)]
pub struct OneStepMdp<F: Scalar, D: Dynamics<F>> {
    pub dynamics: D,
    pub controls: ControlSet<F>,
    pub cost: TravelCost<F>,
    pub disc: DiscountConfig<F>,
    pub horizon: Horizon<F>,
}

impl<F: Scalar, D: Dynamics<F>> OneStepMdp<F, D> {
    /// One backup at `(tau, x)` against the grid continuation `psi`.
    ///
    /// For `tau` below one step the zero boundary data stands in for the
    /// continuation. Returns the value and the minimizing control.
    pub fn backup(&self, psi: &ScalarField<F>, tau: F, x: State<F>) -> (F, F) {
        let (value, idx) = if tau < self.disc.dt() {
            backup_point(x, &self.dynamics, &self.controls, &self.cost, &self.disc, |_| {
                F::zero()
            })
        } else {
            backup_point(x, &self.dynamics, &self.controls, &self.cost, &self.disc, |y| {
                psi.interpolate(y)
            })
        };
        (value, self.controls.actions()[idx])
    }

    /// Sup-norm of the backup difference over all nodes together with the
    /// contraction bound `gamma * ||psi1 - psi2||_inf`.
    ///
    /// The caller asserts `lhs <= bound` (plus a few ulps of slack).
    pub fn contraction_probe(
        &self,
        psi1: &ScalarField<F>,
        psi2: &ScalarField<F>,
    ) -> Result<(F, F)> {
        if psi1.grid() != psi2.grid() {
            return Err(Error::GridMismatch(
                "contraction probe requires a shared grid".into(),
            ));
        }
        let b1 = backup_sweep(psi1, &self.dynamics, &self.controls, &self.cost, &self.disc);
        let b2 = backup_sweep(psi2, &self.dynamics, &self.controls, &self.cost, &self.disc);
        let lhs = sup_diff(&b1, &b2)?.max_abs;
        let bound = self.disc.gamma() * sup_diff(psi1, psi2)?.max_abs;
        Ok((lhs, bound))
    }

    /// Value iteration from `seed`, recording every iterate and the sup-norm
    /// deltas between consecutive iterates.
    pub fn value_iterate(
        &self,
        seed: ScalarField<F>,
        iters: usize,
    ) -> Result<(Vec<ScalarField<F>>, Vec<F>)> {
        if !(self.disc.rate() > F::zero()) {
            return Err(Error::contract(
                "value iteration requires a positive discount rate",
            ));
        }
        let mut history = Vec::with_capacity(iters + 1);
        let mut deltas = Vec::with_capacity(iters);
        history.push(seed);
        for _ in 0..iters {
            let prev = history.last().unwrap();
            let next = backup_sweep(prev, &self.dynamics, &self.controls, &self.cost, &self.disc);
            deltas.push(sup_diff(&next, prev)?.max_abs);
            history.push(next);
        }
        Ok((history, deltas))
    }
}

/// A `C^1` test function with caller-supplied derivatives.
///
/// The derivatives are self-certifying: `verify_derivatives` checks them
/// against central finite differences before the function is trusted in a
/// residual study.
pub struct SmoothTestFn<F: Scalar> {
    eval: Box<dyn Fn(F, State<F>) -> F + Send + Sync>,
    grad_x: Box<dyn Fn(F, State<F>) -> State<F> + Send + Sync>,
    dtau: Box<dyn Fn(F, State<F>) -> F + Send + Sync>,
}

impl<F: Scalar> SmoothTestFn<F> {
    pub fn new(
        eval: impl Fn(F, State<F>) -> F + Send + Sync + 'static,
        grad_x: impl Fn(F, State<F>) -> State<F> + Send + Sync + 'static,
        dtau: impl Fn(F, State<F>) -> F + Send + Sync + 'static,
    ) -> Self {
        SmoothTestFn {
            eval: Box::new(eval),
            grad_x: Box::new(grad_x),
            dtau: Box::new(dtau),
        }
    }

    /// `phi(tau, x) = c0 + ct tau + cx x1 + cy x2`.
    pub fn affine(c0: F, ct: F, cx: F, cy: F) -> Self {
        SmoothTestFn::new(
            move |tau, x| c0 + ct * tau + cx * x[0] + cy * x[1],
            move |_, _| [cx, cy],
            move |_, _| ct,
        )
    }

    pub fn constant(c: F) -> Self {
        SmoothTestFn::affine(c, F::zero(), F::zero(), F::zero())
    }

    pub fn eval(&self, tau: F, x: State<F>) -> F {
        (self.eval)(tau, x)
    }

    pub fn grad_x(&self, tau: F, x: State<F>) -> State<F> {
        (self.grad_x)(tau, x)
    }

    pub fn dtau(&self, tau: F, x: State<F>) -> F {
        (self.dtau)(tau, x)
    }

    /// Compare the supplied derivatives against central finite differences
    /// at the given probes; errors if any component misses `rel_tol` in the
    /// mixed absolute/relative sense.
    pub fn verify_derivatives(&self, probes: &[(F, State<F>)], rel_tol: F) -> Result<()> {
        let h = cast::<F>(1e-5);
        let two_h = h + h;
        for &(tau, x) in probes {
            let fd_t = (self.eval(tau + h, x) - self.eval(tau - h, x)) / two_h;
            let fd_x = (self.eval(tau, [x[0] + h, x[1]]) - self.eval(tau, [x[0] - h, x[1]])) / two_h;
            let fd_y = (self.eval(tau, [x[0], x[1] + h]) - self.eval(tau, [x[0], x[1] - h])) / two_h;
            let an_t = self.dtau(tau, x);
            let an = self.grad_x(tau, x);
            for (fd, an) in [(fd_t, an_t), (fd_x, an[0]), (fd_y, an[1])] {
                if (fd - an).abs() > rel_tol * F::one().max(fd.abs()).max(an.abs()) {
                    return Err(Error::contract(format!(
                        "supplied derivative {an} disagrees with finite difference {fd} at tau={tau}, x=({}, {})",
                        x[0], x[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Numerical Bellman residual `(phi - T phi) / sigma` with the operator
/// applied to the analytic test function directly (no grid, no
/// interpolation), isolating time-discretization error.
pub fn bellman_residual<F, D>(mdp: &OneStepMdp<F, D>, phi: &SmoothTestFn<F>, tau: F, x: State<F>) -> F
where
    F: Scalar,
    D: Dynamics<F>,
{
    let sigma = mdp.disc.dt();
    let (t_phi, _) = backup_point(
        x,
        &mdp.dynamics,
        &mdp.controls,
        &mdp.cost,
        &mdp.disc,
        |y| phi.eval(tau - sigma, y),
    );
    (phi.eval(tau, x) - t_phi) / sigma
}

/// HJB residual `phi_tau - min_u [h(x,u) + grad phi . f(x,u)] + lambda phi`
/// at a smooth test function.
pub fn hjb_residual<F, D>(
    phi: &SmoothTestFn<F>,
    cost: &TravelCost<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
    lambda: F,
    tau: F,
    x: State<F>,
) -> F
where
    F: Scalar,
    D: Dynamics<F>,
{
    let grad = phi.grad_x(tau, x);
    let mut ham = F::infinity();
    for &u in controls.actions() {
        let f = dynamics.vector_field(x, u);
        let v = cost.eval(x) + grad[0] * f[0] + grad[1] * f[1];
        if v < ham {
            ham = v;
        }
    }
    phi.dtau(tau, x) - ham + lambda * phi.eval(tau, x)
}

/// One row of the step-refinement study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport<F: Scalar> {
    pub sigma: F,
    pub tau: F,
    pub x: State<F>,
    pub bellman_residual: F,
    pub hjb_residual: F,
    /// `|bellman_residual - hjb_residual|`.
    pub gap: F,
}

/// Evaluate Bellman vs HJB residuals for each step size in `sigmas`
/// (strictly decreasing) at each probe; reports are ordered by sigma, outer,
/// then probe order.
pub fn consistency_study<F, D>(
    mdp: &OneStepMdp<F, D>,
    phi: &SmoothTestFn<F>,
    probes: &[(F, State<F>)],
    sigmas: &[F],
) -> Result<Vec<ResidualReport<F>>>
where
    F: Scalar,
    D: Dynamics<F> + Clone,
{
    if sigmas.is_empty() {
        return Err(Error::contract("consistency study needs at least one sigma"));
    }
    for w in sigmas.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::contract("sigmas must be strictly decreasing"));
        }
    }
    let lambda = mdp.disc.rate();
    let mut reports = Vec::with_capacity(sigmas.len() * probes.len());
    for &sigma in sigmas {
        let disc = DiscountConfig::new(lambda, sigma)?;
        let scaled = OneStepMdp {
            dynamics: mdp.dynamics.clone(),
            controls: mdp.controls.clone(),
            cost: mdp.cost,
            disc,
            horizon: mdp.horizon,
        };
        for &(tau, x) in probes {
            let b = bellman_residual(&scaled, phi, tau, x);
            let h = hjb_residual(phi, &mdp.cost, &mdp.dynamics, &mdp.controls, lambda, tau, x);
            reports.push(ResidualReport {
                sigma,
                tau,
                x,
                bellman_residual: b,
                hjb_residual: h,
                gap: (b - h).abs(),
            });
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DoubleIntegrator;
    use crate::grid::Grid2;

    fn benchmark() -> OneStepMdp<f64, DoubleIntegrator<f64>> {
        OneStepMdp {
            dynamics: DoubleIntegrator::new(1.0).unwrap(),
            controls: ControlSet::bang_bang(1.0).unwrap(),
            cost: TravelCost::new(1.0, 1.0).unwrap(),
            disc: DiscountConfig::new(1.0, 0.05).unwrap(),
            horizon: Horizon::new(1.0).unwrap(),
        }
    }

    /// Independent scalar evaluation of the benchmark backup at the origin
    /// against a zero continuation: midpoint for u = +-1 is (0, +-0.025),
    /// h(mid) = -(1 - 0.025), and the continuation contributes nothing.
    fn origin_backup_by_hand() -> f64 {
        let gamma = (-1.0f64 * 0.05).exp();
        let w = (1.0 - gamma) / 1.0;
        let h_mid = -(1.0 - 0.025);
        w * h_mid
    }

    #[test]
    fn backup_on_zero_field_off_target_is_zero() {
        let mdp = benchmark();
        let grid: Grid2<f64> = Grid2::centered_square(10.0, 41).unwrap();
        let zeros = ScalarField::zeros(grid);
        let (v, u) = mdp.backup(&zeros, 1.0, [2.0, 0.0]);
        assert_eq!(v, 0.0);
        assert_eq!(u, -1.0); // all-zero branch keeps the first control
    }

    #[test]
    fn backup_at_origin_matches_hand_value() {
        let mdp = benchmark();
        let grid: Grid2<f64> = Grid2::centered_square(10.0, 41).unwrap();
        let zeros = ScalarField::zeros(grid);
        let (v, _) = mdp.backup(&zeros, 1.0, [0.0, 0.0]);
        let expected = origin_backup_by_hand();
        assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        // sanity on the magnitude: -(1 - e^-0.05) * 0.975
        assert!((v - (-0.047551311111803841)).abs() < 1e-15);
    }

    #[test]
    fn backup_of_constant_field_returns_discounted_constant() {
        let mdp = benchmark();
        let grid: Grid2<f64> = Grid2::centered_square(10.0, 41).unwrap();
        let c = -0.25;
        let field = ScalarField::constant(grid, c).unwrap();
        // off-target node with interior successors
        let (v, _) = mdp.backup(&field, 1.0, [4.0, 0.5]);
        assert_eq!(v, mdp.disc.gamma() * c);
    }

    #[test]
    fn constant_shift_moves_value_by_gamma_c_and_keeps_argmin() {
        let mdp = benchmark();
        let grid: Grid2<f64> = Grid2::centered_square(10.0, 41).unwrap();
        let psi1 = ScalarField::from_fn(grid, |p| -0.4 * ((p[0] * 0.7).sin().abs())
            - 0.1 * (p[1] * 1.3).cos().abs())
        .unwrap();
        let c = 0.375;
        let psi2 = ScalarField::new(
            grid,
            psi1.values().iter().map(|&v| v + c).collect(),
        )
        .unwrap();
        for &x in &[[0.0f64, 0.0], [1.5, -2.0], [3.0, 4.0], [-6.0, 0.25]] {
            let (v1, u1) = mdp.backup(&psi1, 1.0, x);
            let (v2, u2) = mdp.backup(&psi2, 1.0, x);
            assert!((v2 - (v1 + mdp.disc.gamma() * c)).abs() < 1e-13);
            assert_eq!(u1, u2);
        }
    }

    #[test]
    fn contraction_is_tight_on_constant_fields() {
        let mdp = benchmark();
        let grid: Grid2<f64> = Grid2::centered_square(2.5, 21).unwrap();
        let zeros = ScalarField::zeros(grid);
        let ones = ScalarField::constant(grid, 1.0).unwrap();
        let (lhs, bound) = mdp.contraction_probe(&zeros, &ones).unwrap();
        assert_eq!(lhs, mdp.disc.gamma());
        assert_eq!(bound, mdp.disc.gamma());

        let (lhs, bound) = mdp.contraction_probe(&zeros, &zeros).unwrap();
        assert_eq!((lhs, bound), (0.0, 0.0));
    }

    #[test]
    fn contraction_probe_rejects_grid_mismatch() {
        let mdp = benchmark();
        let a = ScalarField::zeros(Grid2::centered_square(2.5, 21).unwrap());
        let b = ScalarField::zeros(Grid2::centered_square(2.5, 31).unwrap());
        assert!(mdp.contraction_probe(&a, &b).is_err());
    }

    #[test]
    fn residuals_at_zero_test_function() {
        let mdp = benchmark();
        let phi = SmoothTestFn::constant(0.0);
        // off target both residuals vanish
        assert_eq!(bellman_residual(&mdp, &phi, 1.0, [3.0, 0.0]), 0.0);
        assert_eq!(
            hjb_residual(&phi, &mdp.cost, &mdp.dynamics, &mdp.controls, 1.0, 1.0, [3.0, 0.0]),
            0.0
        );
        // at the origin the HJB residual is -min_u h = alpha r = 1
        assert_eq!(
            hjb_residual(&phi, &mdp.cost, &mdp.dynamics, &mdp.controls, 1.0, 1.0, [0.0, 0.0]),
            1.0
        );
        // the Bellman residual approaches it from within O(sigma)
        let b = bellman_residual(&mdp, &phi, 1.0, [0.0, 0.0]);
        assert!((b - 1.0).abs() < 0.1, "residual {b}");
        // probe exactly on the circle: h = 0 by openness of the target
        assert_eq!(bellman_residual(&mdp, &phi, 1.0, [1.0, 0.0]), 0.0);
    }

    #[test]
    fn constant_test_function_residual_approaches_lambda_c() {
        let c = 0.7;
        let phi = SmoothTestFn::constant(c);
        let mut prev_err = f64::INFINITY;
        for sigma in [0.1, 0.05, 0.025, 0.0125] {
            let mdp = OneStepMdp {
                disc: DiscountConfig::new(1.0, sigma).unwrap(),
                ..benchmark()
            };
            let r = bellman_residual(&mdp, &phi, 1.0, [3.0, 0.0]);
            let err = (r - 1.0 * c).abs();
            assert!(err < prev_err);
            prev_err = err;
        }
    }

    #[test]
    fn affine_hamiltonian_by_hand() {
        let mdp = benchmark();
        // phi = x1: residual = -min_u [0 + x2] + lambda x1 = -x2 + lambda x1
        let phi = SmoothTestFn::affine(0.0, 0.0, 1.0, 0.0);
        let x = [2.0, -1.5];
        let r = hjb_residual(&phi, &mdp.cost, &mdp.dynamics, &mdp.controls, 1.0, 0.8, x);
        assert_eq!(r, -x[1] + 1.0 * x[0]);
    }

    #[test]
    fn derivative_self_certification() {
        let phi = SmoothTestFn::affine(0.3, -0.2, 1.1, 0.7);
        let probes: Vec<(f64, [f64; 2])> =
            (0..20).map(|k| (0.5 + 0.01 * k as f64, [k as f64 * 0.3 - 3.0, 1.0])).collect();
        phi.verify_derivatives(&probes, 1e-6).unwrap();

        let broken = SmoothTestFn::new(
            |_, x| x[0] * x[0],
            |_, _| [0.0, 0.0], // wrong gradient
            |_, _| 0.0,
        );
        assert!(broken.verify_derivatives(&[(0.5, [1.0, 0.0])], 1e-6).is_err());
    }

    #[test]
    fn consistency_gap_halves_with_sigma_for_affine_phi() {
        let mdp = benchmark();
        let phi = SmoothTestFn::affine(0.4, -0.3, 0.8, 0.6);
        let probes = vec![(1.0, [4.0, 1.0]), (0.9, [-5.0, -2.0]), (0.7, [3.0, -1.0])];
        let sigmas = [0.1, 0.05, 0.025, 0.0125];
        let reports = consistency_study(&mdp, &phi, &probes, &sigmas).unwrap();
        assert_eq!(reports.len(), sigmas.len() * probes.len());
        for p in 0..probes.len() {
            for s in 0..sigmas.len() - 1 {
                let g0 = reports[s * probes.len() + p].gap;
                let g1 = reports[(s + 1) * probes.len() + p].gap;
                let ratio = g1 / g0;
                assert!(
                    (0.35..=0.65).contains(&ratio),
                    "probe {p}, sigma {} -> {}: ratio {ratio}",
                    sigmas[s],
                    sigmas[s + 1]
                );
            }
        }
    }

    #[test]
    fn consistency_study_rejects_unordered_sigmas() {
        let mdp = benchmark();
        let phi = SmoothTestFn::constant(0.0);
        assert!(consistency_study(&mdp, &phi, &[(1.0, [3.0, 0.0])], &[0.05, 0.1]).is_err());
    }

    #[test]
    fn stability_bound_on_backups() {
        // |backup| <= w M_h + gamma B for ||psi||_inf <= B
        let mdp = benchmark();
        let grid: Grid2<f64> = Grid2::centered_square(2.5, 31).unwrap();
        let b = 0.8;
        let psi = ScalarField::from_fn(grid, |p| b * (p[0] * 3.7).sin() * (p[1] * 1.9).cos())
            .unwrap();
        let bound = mdp.disc.weight() * mdp.cost.bound() + mdp.disc.gamma() * b;
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (v, _) = mdp.backup(&psi, 1.0, grid.point(i, j));
                assert!(v.abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn value_iteration_requires_positive_rate() {
        let mut mdp = benchmark();
        mdp.disc = DiscountConfig::new(0.0, 0.05).unwrap();
        let seed = ScalarField::zeros(Grid2::centered_square(2.5, 11).unwrap());
        assert!(mdp.value_iterate(seed, 3).is_err());
    }

    #[test]
    fn seed_gap_contracts_geometrically() {
        let mdp = benchmark();
        let grid: Grid2<f64> = Grid2::centered_square(2.5, 41).unwrap();
        let k = 6;
        let (h0, _) = mdp.value_iterate(ScalarField::zeros(grid), k).unwrap();
        let (h1, _) = mdp
            .value_iterate(ScalarField::constant(grid, -0.5).unwrap(), k)
            .unwrap();
        let gap = sup_diff(h0.last().unwrap(), h1.last().unwrap()).unwrap().max_abs;
        assert!(gap <= mdp.disc.gamma().powi(k as i32) * 0.5 + 1e-12);
    }
}
