//! Strict backward-reachable-tube extraction from value sublevel sets and an
//! exhaustive bang-bang trajectory oracle to cross-validate it.
//!
//! The strict tube is `{x : V < 0}` in the continuum; a discrete solve needs
//! a small negative margin, so masks are cut at a caller-supplied threshold
//! strictly below zero. The oracle enumerates every piecewise-bang-bang
//! control with switch times on the step grid and a bounded switch budget,
//! using the same explicit Euler integrator as the solvers, so mask
//! disagreements isolate value-iteration error rather than integrator
//! mismatch.

use rayon::prelude::*;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::costs::TravelCost;
use crate::dynamics::{ControlSet, Dynamics, State};
use crate::error::{Error, Result};
use crate::grid::{Grid2, ScalarField};
use crate::scalar::Scalar;

/// Node membership in the strict backward-reachable tube.
#[derive(Debug, Clone, PartialEq)]
pub struct BrtMask<F: Scalar> {
    grid: Grid2<F>,
    inside: Vec<bool>,
}

impl<F: Scalar> BrtMask<F> {
    pub fn new(grid: Grid2<F>, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != grid.n_nodes() {
            return Err(Error::contract("mask length must match the grid"));
        }
        Ok(BrtMask { grid, inside })
    }

    pub fn grid(&self) -> &Grid2<F> {
        &self.grid
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.inside[self.grid.index(i, j)]
    }

    pub fn count_inside(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

/// Cut the strict-tube mask `{V < threshold}` out of a value field.
///
/// The threshold must be strictly negative: it is the numerical margin
/// standing in for the exact `{V < 0}`.
pub fn extract_brt<F: Scalar>(value: &ScalarField<F>, threshold: F) -> Result<BrtMask<F>> {
    if !(threshold < F::zero()) {
        return Err(Error::contract("mask threshold must be strictly negative"));
    }
    let inside = value.values().iter().map(|&v| v < threshold).collect();
    BrtMask::new(*value.grid(), inside)
}

/// Budget for the brute-force trajectory search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig<F: Scalar> {
    pub n_steps: usize,
    pub dt: F,
    pub max_switches: usize,
}

impl<F: Scalar> OracleConfig<F> {
    /// Double-integrator time-optimal trajectories to a disk need at most
    /// one switch; the budget is capped at 3 to keep enumeration tractable.
    pub fn new(n_steps: usize, dt: F, max_switches: usize) -> Result<Self> {
        if n_steps == 0 || !(dt > F::zero()) || !dt.is_finite() {
            return Err(Error::contract("oracle needs n_steps > 0 and dt > 0"));
        }
        if max_switches > 3 {
            return Err(Error::contract("oracle switch budget is capped at 3"));
        }
        Ok(OracleConfig {
            n_steps,
            dt,
            max_switches,
        })
    }
}

/// Whether some piecewise-bang-bang control with at most `max_switches`
/// action changes (switch times on the `dt` grid) drives the Euler rollout
/// into the open target disk at a step index in `[0, n_steps)`.
///
/// Capture exactly at the final instant does not count (strict tube).
pub fn oracle_reachable<F, D>(
    x0: State<F>,
    target: &TravelCost<F>,
    cfg: &OracleConfig<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
) -> bool
where
    F: Scalar,
    D: Dynamics<F>,
{
    if target.contains_target(x0) {
        return true;
    }
    for start in 0..controls.len() {
        if search(x0, 0, start, cfg.max_switches, target, cfg, dynamics, controls) {
            return true;
        }
    }
    false
}

/// Depth-first enumeration over constant-control segments. `x` is the state
/// at step `step` (already checked), `action` the control applied on
/// `[step, step+1]`.
#[allow(clippy::too_many_arguments)]
fn search<F, D>(
    x: State<F>,
    step: usize,
    action: usize,
    switches_left: usize,
    target: &TravelCost<F>,
    cfg: &OracleConfig<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
) -> bool
where
    F: Scalar,
    D: Dynamics<F>,
{
    let u = controls.actions()[action];
    let d = dynamics.vector_field(x, u);
    let next = [x[0] + cfg.dt * d[0], x[1] + cfg.dt * d[1]];
    let next_step = step + 1;
    if next_step >= cfg.n_steps {
        // index n_steps is time T; strict capture excludes it
        return false;
    }
    if target.contains_target(next) {
        return true;
    }
    if search(next, next_step, action, switches_left, target, cfg, dynamics, controls) {
        return true;
    }
    if switches_left > 0 {
        for other in 0..controls.len() {
            if other == action {
                continue;
            }
            if search(next, next_step, other, switches_left - 1, target, cfg, dynamics, controls)
            {
                return true;
            }
        }
    }
    false
}

/// Run the oracle on every grid node. Rollouts are independent per node.
pub fn oracle_mask<F, D>(
    grid: Grid2<F>,
    target: &TravelCost<F>,
    cfg: &OracleConfig<F>,
    dynamics: &D,
    controls: &ControlSet<F>,
) -> BrtMask<F>
where
    F: Scalar,
    D: Dynamics<F>,
{
    let nx = grid.nx();
    let mut inside = vec![false; grid.n_nodes()];
    inside.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        for (i, slot) in row.iter_mut().enumerate() {
            *slot = oracle_reachable(grid.point(i, j), target, cfg, dynamics, controls);
        }
    });
    BrtMask::new(grid, inside).expect("mask sized to the grid")
}

/// Mask agreement counts. A node is "in band" when the Chebyshev ball of
/// radius `band_cells` around it meets both sides of the reference mask `a`,
/// i.e. it sits within `band_cells` of the frontier of `a`. Out-of-band
/// disagreements are the acceptance quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskComparison {
    pub agreements: usize,
    pub disagreements: usize,
    pub out_of_band_disagreements: usize,
    /// Grid coordinates of every disagreeing node.
    pub disagreement_nodes: Vec<(usize, usize)>,
}

/// Compare masks on a shared grid, banding around the frontier of `a`.
pub fn compare_masks<F: Scalar>(
    a: &BrtMask<F>,
    b: &BrtMask<F>,
    band_cells: usize,
) -> Result<MaskComparison> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch(
            "mask comparison requires a shared grid".into(),
        ));
    }
    let g = &a.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let mut agreements = 0usize;
    let mut disagreements = 0usize;
    let mut out_of_band = 0usize;
    let mut nodes = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if a.get(i, j) == b.get(i, j) {
                agreements += 1;
                continue;
            }
            disagreements += 1;
            nodes.push((i, j));
            if !in_band(a, i, j, band_cells) {
                out_of_band += 1;
            }
        }
    }
    Ok(MaskComparison {
        agreements,
        disagreements,
        out_of_band_disagreements: out_of_band,
        disagreement_nodes: nodes,
    })
}

/// Whether the Chebyshev ball of radius `band` around `(i, j)` contains both
/// inside and outside nodes of `a`.
fn in_band<F: Scalar>(a: &BrtMask<F>, i: usize, j: usize, band: usize) -> bool {
    let g = &a.grid;
    let i_lo = i.saturating_sub(band);
    let i_hi = (i + band).min(g.nx() - 1);
    let j_lo = j.saturating_sub(band);
    let j_hi = (j + band).min(g.ny() - 1);
    let mut any_in = false;
    let mut any_out = false;
    for jj in j_lo..=j_hi {
        for ii in i_lo..=i_hi {
            if a.get(ii, jj) {
                any_in = true;
            } else {
                any_out = true;
            }
            if any_in && any_out {
                return true;
            }
        }
    }
    false
}

/// Export a mask as a portable bitmap (P1); inside nodes are 1. Rows are
/// written top-down (first image row is the `y_max` grid row).
pub fn write_mask_pbm<F: Scalar>(mask: &BrtMask<F>, path: impl AsRef<Path>) -> Result<()> {
    let g = mask.grid();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P1")?;
    writeln!(w, "{} {}", g.nx(), g.ny())?;
    for j in (0..g.ny()).rev() {
        let mut row = String::with_capacity(2 * g.nx());
        for i in 0..g.nx() {
            if i > 0 {
                row.push(' ');
            }
            row.push(if mask.get(i, j) { '1' } else { '0' });
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}
