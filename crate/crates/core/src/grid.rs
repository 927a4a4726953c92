//! Uniform 2-D Cartesian grid storage, bilinear interpolation with boundary
//! clamping, and sup-norm field arithmetic.
//!
//! Grids are vertex-centered: node 0 sits at the lower bound and node `n-1`
//! at the upper bound, so a "201 x 201 grid over [-2.5, 2.5]^2" has nodes on
//! the ROI corners. Fields are stored row-major with index `j * nx + i`
//! (`i` along x, `j` along y).
//!
//! Queries outside the ROI are clamped componentwise back to the boundary
//! before interpolating (a state-constraint/Neumann-like treatment), so
//! interpolation is total. Interpolation is evaluated in nested-lerp form,
//! which keeps it a convex combination of the four stencil values: exact at
//! nodes, exact on constant fields, monotone, and free of overshoot.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// A uniform vertex-centered grid over a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2<F: Scalar> {
    x_min: F,
    x_max: F,
    y_min: F,
    y_max: F,
    nx: usize,
    ny: usize,
    dx: F,
    dy: F,
}

impl<F: Scalar> Grid2<F> {
    pub fn new(x_min: F, x_max: F, y_min: F, y_max: F, nx: usize, ny: usize) -> Result<Self> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::contract("grid bounds must satisfy min < max"));
        }
        if !x_min.is_finite() || !x_max.is_finite() || !y_min.is_finite() || !y_max.is_finite() {
            return Err(Error::contract("grid bounds must be finite"));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::contract("grid needs at least 2 nodes per axis"));
        }
        let dx = (x_max - x_min) / F::from_usize(nx - 1).unwrap();
        let dy = (y_max - y_min) / F::from_usize(ny - 1).unwrap();
        Ok(Grid2 {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
            dx,
            dy,
        })
    }

    /// Square grid over `[-half, half]^2` with `n` nodes per axis.
    pub fn centered_square(half: F, n: usize) -> Result<Self> {
        Grid2::new(-half, half, -half, half, n, n)
    }

    pub fn x_min(&self) -> F {
        self.x_min
    }
    pub fn x_max(&self) -> F {
        self.x_max
    }
    pub fn y_min(&self) -> F {
        self.y_min
    }
    pub fn y_max(&self) -> F {
        self.y_max
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn dx(&self) -> F {
        self.dx
    }
    pub fn dy(&self) -> F {
        self.dy
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn node_x(&self, i: usize) -> F {
        axis_node(self.x_min, self.x_max, self.dx, self.nx, i)
    }

    pub fn node_y(&self, j: usize) -> F {
        axis_node(self.y_min, self.y_max, self.dy, self.ny, j)
    }

    pub fn point(&self, i: usize, j: usize) -> State<F> {
        [self.node_x(i), self.node_y(j)]
    }

    /// Componentwise clamp of a query point onto the grid rectangle.
    pub fn clamp_point(&self, p: State<F>) -> State<F> {
        [
            clamp_scalar(p[0], self.x_min, self.x_max),
            clamp_scalar(p[1], self.y_min, self.y_max),
        ]
    }
}

fn clamp_scalar<F: Scalar>(v: F, lo: F, hi: F) -> F {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Node coordinate along one axis; the endpoints are the stored bounds
/// exactly, so corner queries are bitwise-reproducible.
fn axis_node<F: Scalar>(lo: F, hi: F, step: F, n: usize, k: usize) -> F {
    debug_assert!(k < n);
    if k == n - 1 {
        hi
    } else {
        lo + F::from_usize(k).unwrap() * step
    }
}

/// Locate the stencil base index and fractional offset along one axis.
///
/// The fast paths return an exact 0/1 offset when the (clamped) coordinate
/// lands bitwise on a node, which makes node queries reproduce stored values
/// exactly even when the spacing is not representable.
fn axis_locate<F: Scalar>(c: F, lo: F, hi: F, step: F, n: usize) -> (usize, F) {
    let c = clamp_scalar(c, lo, hi);
    let s = (c - lo) / step;
    let mut i = s.floor().to_usize().unwrap_or(0);
    if i > n - 2 {
        i = n - 2;
    }
    let node_i = axis_node(lo, hi, step, n, i);
    if c == node_i {
        return (i, F::zero());
    }
    let node_i1 = axis_node(lo, hi, step, n, i + 1);
    if c == node_i1 {
        return if i + 1 <= n - 2 {
            (i + 1, F::zero())
        } else {
            (i, F::one())
        };
    }
    let t = (c - node_i) / step;
    (i, clamp_scalar(t, F::zero(), F::one()))
}

/// `a + t (b - a)`, with the `t == 1` endpoint returned exactly.
fn lerp<F: Scalar>(a: F, b: F, t: F) -> F {
    if t == F::one() {
        b
    } else {
        a + t * (b - a)
    }
}

/// Grid samples of a scalar function. Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<F: Scalar> {
    grid: Grid2<F>,
    values: Vec<F>,
}

impl<F: Scalar> ScalarField<F> {
    pub fn new(grid: Grid2<F>, values: Vec<F>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::contract(format!(
                "field length {} does not match grid with {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("field values must be finite"));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid2<F>) -> Self {
        ScalarField {
            grid,
            values: vec![F::zero(); grid.n_nodes()],
        }
    }

    pub fn constant(grid: Grid2<F>, c: F) -> Result<Self> {
        ScalarField::new(grid, vec![c; grid.n_nodes()])
    }

    /// Sample `f` at every node (row-major order).
    pub fn from_fn(grid: Grid2<F>, f: impl Fn(State<F>) -> F) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.n_nodes());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                values.push(f(grid.point(i, j)));
            }
        }
        ScalarField::new(grid, values)
    }

    pub fn grid(&self) -> &Grid2<F> {
        &self.grid
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.values[self.grid.index(i, j)]
    }

    /// Bilinear interpolation with the query clamped onto the ROI first.
    pub fn interpolate(&self, p: State<F>) -> F {
        let g = &self.grid;
        let (i, tx) = axis_locate(p[0], g.x_min, g.x_max, g.dx, g.nx);
        let (j, ty) = axis_locate(p[1], g.y_min, g.y_max, g.dy, g.ny);
        let base = j * g.nx + i;
        let v00 = self.values[base];
        let v10 = self.values[base + 1];
        let v01 = self.values[base + g.nx];
        let v11 = self.values[base + g.nx + 1];
        lerp(lerp(v00, v10, tx), lerp(v01, v11, tx), ty)
    }

    pub fn min_value(&self) -> F {
        self.values.iter().copied().fold(F::infinity(), F::min)
    }

    pub fn max_value(&self) -> F {
        self.values.iter().copied().fold(F::neg_infinity(), F::max)
    }
}

/// Sup-norm statistics of `|a - b|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldStats<F: Scalar> {
    pub max_abs: F,
    pub mean_abs: F,
    /// Row-major node index where `|a - b|` attains its maximum.
    pub argmax: usize,
}

/// Nodewise `max` and `mean` of `|a - b|`; the grids must be identical.
pub fn sup_diff<F: Scalar>(a: &ScalarField<F>, b: &ScalarField<F>) -> Result<FieldStats<F>> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch(
            "sup_diff requires identical grids".into(),
        ));
    }
    let mut max_abs = F::zero();
    let mut argmax = 0usize;
    let mut sum = F::zero();
    for (k, (&av, &bv)) in a.values.iter().zip(&b.values).enumerate() {
        let d = (av - bv).abs();
        sum += d;
        if d > max_abs {
            max_abs = d;
            argmax = k;
        }
    }
    let mean_abs = sum / F::from_usize(a.values.len()).unwrap();
    Ok(FieldStats {
        max_abs,
        mean_abs,
        argmax,
    })
}

/// Saturate every entry into `[lo, hi]`; interior entries are untouched.
pub fn clamp_field<F: Scalar>(field: &ScalarField<F>, lo: F, hi: F) -> Result<ScalarField<F>> {
    if !(lo <= hi) {
        return Err(Error::contract("clamp range must satisfy lo <= hi"));
    }
    let values = field
        .values
        .iter()
        .map(|&v| clamp_scalar(v, lo, hi))
        .collect();
    ScalarField::new(field.grid, values)
}

const FIELD_MAGIC: &str = "FIELD v1";

/// Write a field as `FIELD v1` text: header, grid line, then one value per
/// line in row-major order at full round-trip precision.
pub fn write_field<F: Scalar>(field: &ScalarField<F>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field_to(field, &mut w)
}

pub fn write_field_to<F: Scalar>(field: &ScalarField<F>, w: &mut impl Write) -> Result<()> {
    let g = field.grid();
    writeln!(w, "{FIELD_MAGIC}")?;
    writeln!(
        w,
        "{} {} {} {} {} {}",
        g.nx(),
        g.ny(),
        g.x_min(),
        g.x_max(),
        g.y_min(),
        g.y_max()
    )?;
    for v in field.values() {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

pub fn read_field<F: Scalar>(path: impl AsRef<Path>) -> Result<ScalarField<F>> {
    let f = File::open(path)?;
    read_field_from(BufReader::new(f))
}

pub fn read_field_from<F: Scalar>(r: impl Read) -> Result<ScalarField<F>> {
    let mut lines = BufReader::new(r).lines();
    let magic = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty field file"))??;
    if magic.trim() != FIELD_MAGIC {
        return Err(Error::parse(1, format!("expected `{FIELD_MAGIC}` header")));
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(2, "missing grid line"))??;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 6 {
        return Err(Error::parse(2, "grid line needs `nx ny x_min x_max y_min y_max`"));
    }
    let nx: usize = tokens[0]
        .parse()
        .map_err(|_| Error::parse(2, "invalid nx"))?;
    let ny: usize = tokens[1]
        .parse()
        .map_err(|_| Error::parse(2, "invalid ny"))?;
    let mut bounds = [F::zero(); 4];
    for (k, b) in bounds.iter_mut().enumerate() {
        *b = parse_scalar(tokens[k + 2], 2)?;
    }
    let grid = Grid2::new(bounds[0], bounds[1], bounds[2], bounds[3], nx, ny)
        .map_err(|e| Error::parse(2, e.to_string()))?;

    let mut values = Vec::with_capacity(grid.n_nodes());
    let mut line_no = 2usize;
    for line in lines {
        line_no += 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: F = parse_scalar(t, line_no)?;
        if !v.is_finite() {
            return Err(Error::parse(line_no, "non-finite field value"));
        }
        values.push(v);
        if values.len() > grid.n_nodes() {
            return Err(Error::parse(line_no, "more values than grid nodes"));
        }
    }
    if values.len() != grid.n_nodes() {
        return Err(Error::parse(
            line_no,
            format!(
                "expected {} values, found {}",
                grid.n_nodes(),
                values.len()
            ),
        ));
    }
    ScalarField::new(grid, values).map_err(|e| Error::parse(line_no, e.to_string()))
}

fn parse_scalar<F: Scalar>(token: &str, line: usize) -> Result<F> {
    token
        .parse::<F>()
        .map_err(|_| Error::parse(line, format!("invalid number `{token}`")))
}

/// Export an 8-bit P2 graymap with values affinely mapped from `[lo, hi]`
/// onto `[0, 255]`; entries are saturated into the range first. Rows are
/// written top-down (first image row is the `y_max` grid row).
pub fn write_heatmap_pgm<F: Scalar>(
    field: &ScalarField<F>,
    lo: F,
    hi: F,
    path: impl AsRef<Path>,
) -> Result<()> {
    if !(lo < hi) {
        return Err(Error::contract("heatmap range must satisfy lo < hi"));
    }
    let g = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", g.nx(), g.ny())?;
    writeln!(w, "255")?;
    let span = hi - lo;
    let top = cast::<F>(255.0);
    for j in (0..g.ny()).rev() {
        let mut row = String::with_capacity(g.nx() * 4);
        for i in 0..g.nx() {
            let v = clamp_scalar(field.get(i, j), lo, hi);
            let level = ((v - lo) / span * top).round();
            let level = level.to_u32().unwrap_or(0).min(255);
            if i > 0 {
                row.push(' ');
            }
            row.push_str(&level.to_string());
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> Grid2<f64> {
        Grid2::new(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap()
    }

    #[test]
    fn grid_spacing_and_nodes() {
        let g: Grid2<f64> = Grid2::new(-2.5, 2.5, -2.5, 2.5, 201, 201).unwrap();
        assert_eq!(g.dx(), 5.0 / 200.0);
        assert_eq!(g.node_x(0), -2.5);
        assert_eq!(g.node_x(200), 2.5);
        assert!(Grid2::<f64>::new(0.0, 1.0, 0.0, 1.0, 1, 5).is_err());
        assert!(Grid2::<f64>::new(1.0, 0.0, 0.0, 1.0, 5, 5).is_err());
    }

    #[test]
    fn cell_center_averages_the_corners() {
        let g = small_grid();
        // corners (0,0)=0, (1,0)=1, (0,1)=1, (1,1)=2
        let f = ScalarField::new(g, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(f.interpolate([0.5, 0.5]), 1.0);
    }

    #[test]
    fn node_queries_are_exact_even_on_awkward_spacings() {
        // dx = 20/500 = 0.04 is not representable in binary.
        let g: Grid2<f64> = Grid2::new(-10.0, 10.0, -10.0, 10.0, 501, 501).unwrap();
        let f = ScalarField::from_fn(g, |p| (3.1 * p[0]).sin() + (2.7 * p[1]).cos()).unwrap();
        for &(i, j) in &[(0, 0), (17, 403), (250, 250), (500, 500), (1, 499)] {
            assert_eq!(f.interpolate(g.point(i, j)), f.get(i, j));
        }
    }

    #[test]
    fn queries_beyond_the_boundary_are_clamped() {
        let g: Grid2<f64> = Grid2::new(-1.0, 1.0, -1.0, 1.0, 11, 11).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0] + 2.0 * p[1]).unwrap();
        assert_eq!(f.interpolate([6.0, 0.3]), f.interpolate([1.0, 0.3]));
        assert_eq!(f.interpolate([0.3, -9.0]), f.interpolate([0.3, -1.0]));
    }

    #[test]
    fn interpolation_of_constant_field_is_exact() {
        let g: Grid2<f64> = Grid2::new(-2.0, 2.0, -1.0, 3.0, 7, 9).unwrap();
        let f = ScalarField::constant(g, -0.3125).unwrap();
        for &p in &[[0.1, 0.2], [-1.99, 2.99], [10.0, -10.0], [0.0, 0.0]] {
            assert_eq!(f.interpolate(p), -0.3125);
        }
    }

    #[test]
    fn sup_diff_examples() {
        let g: Grid2<f64> = Grid2::new(-2.5, 2.5, -2.5, 2.5, 201, 201).unwrap();
        let a = ScalarField::zeros(g);
        let stats = sup_diff(&a, &a).unwrap();
        assert_eq!(stats.max_abs, 0.0);
        assert_eq!(stats.mean_abs, 0.0);

        let mut values = vec![0.0; g.n_nodes()];
        values[12345] = 0.5;
        let b = ScalarField::new(g, values).unwrap();
        let stats = sup_diff(&a, &b).unwrap();
        assert_eq!(stats.max_abs, 0.5);
        assert_eq!(stats.argmax, 12345);
        assert!((stats.mean_abs - 0.5 / 40401.0).abs() < 1e-18);

        let other = ScalarField::zeros(small_grid());
        assert!(sup_diff(&a, &other).is_err());
    }

    #[test]
    fn clamp_field_saturates() {
        let g = small_grid();
        let f = ScalarField::constant(g, -5.0).unwrap();
        let c = clamp_field(&f, -1.0, 0.0).unwrap();
        assert!(c.values().iter().all(|&v| v == -1.0));

        let f = ScalarField::constant(g, -0.3).unwrap();
        let c = clamp_field(&f, -1.0, 0.0).unwrap();
        assert_eq!(c, f);

        let f = ScalarField::new(g, vec![-0.5, 0.2, -0.1, 0.0]).unwrap();
        let c = clamp_field(&f, -1.0, 0.0).unwrap();
        assert_eq!(c.values(), &[-0.5, 0.0, -0.1, 0.0]);

        assert!(clamp_field(&f, 1.0, 0.0).is_err());
    }

    #[test]
    fn field_file_round_trip_is_bitwise() {
        let g: Grid2<f64> = Grid2::new(-1.25, 2.5, 0.0, 0.7, 5, 5).unwrap();
        let f = ScalarField::from_fn(g, |p| (p[0] * 12.9898 + p[1] * 78.233).sin() * 0.43758)
            .unwrap();
        let mut buf = Vec::new();
        write_field_to(&f, &mut buf).unwrap();
        let back: ScalarField<f64> = read_field_from(buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn field_file_rejects_bad_input() {
        let bad_count = "FIELD v1\n2 2 0 1 0 1\n0.0\n0.0\n0.0\n";
        assert!(read_field_from::<f64>(bad_count.as_bytes()).is_err());

        let nan = "FIELD v1\n2 2 0 1 0 1\n0.0\nNaN\n0.0\n0.0\n";
        let err = read_field_from::<f64>(nan.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other}"),
        }

        let bad_magic = "FIELD v2\n2 2 0 1 0 1\n";
        assert!(read_field_from::<f64>(bad_magic.as_bytes()).is_err());
    }

    #[test]
    fn rejects_nonfinite_field_values() {
        let g = small_grid();
        assert!(ScalarField::new(g, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(ScalarField::new(g, vec![0.0; 3]).is_err());
    }

    #[test]
    fn interpolation_stays_within_stencil_bounds() {
        let g: Grid2<f64> = Grid2::new(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let f = ScalarField::from_fn(g, |p| (p[0] * 7.3).sin() - p[1]).unwrap();
        let (lo, hi) = (f.min_value(), f.max_value());
        for k in 0..200 {
            let p = [
                (k as f64 * 0.617) % 1.0,
                (k as f64 * 0.313) % 1.0,
            ];
            let v = f.interpolate(p);
            assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
    }
}
