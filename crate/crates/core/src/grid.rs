//! Uniform rectangular grids and node-indexed fields.
//!
//! Node `(j, k)` sits at `(x_min + j*dx, y_min + k*dy)`; `j` indexes x and `k`
//! indexes y. Storage is row-major with `j` fastest, i.e. linear index
//! `k*n + j`. The same order is used for CSV output and for Gauss–Seidel
//! sweeps, so results are reproducible bit-for-bit.

use std::io::{self, Write};

use nalgebra::SVector;

use crate::error::{Error, Result};
use crate::problem::Rect;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Nodes per axis, boundary nodes included.
    pub n: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, n: usize) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidBounds {
                x_min,
                x_max,
                y_min,
                y_max,
            });
        }
        if n < 3 {
            return Err(Error::TooFewNodes(n));
        }
        let steps = (n - 1) as f64;
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            n,
            dx: (x_max - x_min) / steps,
            dy: (y_max - y_min) / steps,
        })
    }

    pub fn over(rect: Rect, n: usize) -> Result<Self> {
        Self::new(rect.x_min, rect.x_max, rect.y_min, rect.y_max, n)
    }

    pub fn rect(&self) -> Rect {
        Rect {
            x_min: self.x_min,
            x_max: self.x_max,
            y_min: self.y_min,
            y_max: self.y_max,
        }
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, k: usize) -> f64 {
        self.y_min + k as f64 * self.dy
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        k * self.n + j
    }

    pub fn node_count(&self) -> usize {
        self.n * self.n
    }

    /// Interior nodes per axis.
    pub fn m(&self) -> usize {
        self.n - 2
    }

    pub fn interior_count(&self) -> usize {
        self.m() * self.m()
    }

    /// Row-major index among interior nodes, `1 <= j, k <= n-2`.
    #[inline]
    pub fn interior_index(&self, j: usize, k: usize) -> usize {
        (k - 1) * self.m() + (j - 1)
    }

    pub fn is_boundary(&self, j: usize, k: usize) -> bool {
        j == 0 || k == 0 || j == self.n - 1 || k == self.n - 1
    }

    /// Interior `(j, k)` pairs in sweep order.
    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.n - 1).flat_map(move |k| (1..self.n - 1).map(move |j| (j, k)))
    }
}

/// Real values at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.node_count()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for k in 0..grid.n {
            for j in 0..grid.n {
                values.push(f(grid.x(j), grid.y(k)));
            }
        }
        Self { grid, values }
    }

    /// Wraps row-major values; rejects wrong lengths and non-finite entries.
    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::LengthMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                j: i % grid.n,
                k: i / grid.n,
            });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_values_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(j, k)]
    }

    pub fn set(&mut self, j: usize, k: usize, value: f64) {
        let i = self.grid.index(j, k);
        self.values[i] = value;
    }

    /// Central difference quotients `((f_E - f_W)/2dx, (f_N - f_S)/2dy)` at an
    /// interior node.
    #[inline]
    pub fn central_diff(&self, j: usize, k: usize) -> (f64, f64) {
        let g = &self.grid;
        let fx = (self.get(j + 1, k) - self.get(j - 1, k)) / (2.0 * g.dx);
        let fy = (self.get(j, k + 1) - self.get(j, k - 1)) / (2.0 * g.dy);
        (fx, fy)
    }

    /// Centered second differences `(f_xx, f_yy)` at an interior node.
    #[inline]
    pub fn second_diff(&self, j: usize, k: usize) -> (f64, f64) {
        let g = &self.grid;
        let c = self.get(j, k);
        let fxx = (self.get(j + 1, k) - 2.0 * c + self.get(j - 1, k)) / (g.dx * g.dx);
        let fyy = (self.get(j, k + 1) - 2.0 * c + self.get(j, k - 1)) / (g.dy * g.dy);
        (fxx, fyy)
    }

    /// `self - other`, node by node.
    pub fn difference(&self, other: &ScalarField) -> Result<ScalarField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ScalarField::from_values_unchecked(self.grid, values))
    }

    pub fn scaled(&self, factor: f64) -> ScalarField {
        let values = self.values.iter().map(|v| v * factor).collect();
        ScalarField::from_values_unchecked(self.grid, values)
    }

    /// Bilinear interpolation over the full grid; states outside the
    /// rectangle take the value at the nearest edge.
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let last = g.n - 1;
        let locate = |u: f64, lo: f64, h: f64| {
            let s = ((u - lo) / h).clamp(0.0, last as f64);
            let i = (s.floor() as usize).min(last - 1);
            (i, s - i as f64)
        };
        let (j, tx) = locate(x, g.x_min, g.dx);
        let (k, ty) = locate(y, g.y_min, g.dy);
        self.get(j, k) * ((1.0 - tx) * (1.0 - ty))
            + self.get(j + 1, k) * (tx * (1.0 - ty))
            + self.get(j, k + 1) * ((1.0 - tx) * ty)
            + self.get(j + 1, k + 1) * (tx * ty)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with header `x,y,value`, one row per node in storage order, nine
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,value")?;
        for k in 0..self.grid.n {
            for j in 0..self.grid.n {
                writeln!(
                    out,
                    "{},{},{}",
                    sig9(self.grid.x(j)),
                    sig9(self.grid.y(k)),
                    sig9(self.get(j, k))
                )?;
            }
        }
        Ok(())
    }
}

/// Nine significant digits in scientific notation.
pub fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Central-difference gradient on interior nodes. Boundary entries of both
/// returned fields are zero.
pub fn central_gradient(f: &ScalarField) -> (ScalarField, ScalarField) {
    let grid = *f.grid();
    let mut fx = ScalarField::zeros(grid);
    let mut fy = ScalarField::zeros(grid);
    for (j, k) in grid.interior_nodes() {
        let (gx, gy) = f.central_diff(j, k);
        fx.set(j, k, gx);
        fy.set(j, k, gy);
    }
    (fx, fy)
}

/// `max |a - b|` over all nodes.
pub fn sup_norm_diff(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

/// A `D`-dimensional action at every interior node. Boundary nodes carry no
/// action: under Dirichlet data the stencil never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField<const D: usize> {
    grid: Grid2D,
    actions: Vec<SVector<f64, D>>,
}

impl<const D: usize> PolicyField<D> {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, SVector::zeros())
    }

    pub fn constant(grid: Grid2D, action: SVector<f64, D>) -> Self {
        Self {
            grid,
            actions: vec![action; grid.interior_count()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> SVector<f64, D>) -> Self {
        let actions = grid
            .interior_nodes()
            .map(|(j, k)| f(grid.x(j), grid.y(k)))
            .collect();
        Self { grid, actions }
    }

    /// Wraps interior actions in row-major order.
    pub fn from_actions(grid: Grid2D, actions: Vec<SVector<f64, D>>) -> Result<Self> {
        if actions.len() != grid.interior_count() {
            return Err(Error::LengthMismatch {
                expected: grid.interior_count(),
                got: actions.len(),
            });
        }
        Ok(Self { grid, actions })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn actions(&self) -> &[SVector<f64, D>] {
        &self.actions
    }

    /// Action at interior node `(j, k)`.
    #[inline]
    pub fn at(&self, j: usize, k: usize) -> &SVector<f64, D> {
        &self.actions[self.grid.interior_index(j, k)]
    }

    /// `max |a - b|` over interior nodes and action components.
    pub fn sup_norm_diff(&self, other: &PolicyField<D>) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .actions
            .iter()
            .zip(&other.actions)
            .fold(0.0, |m, (a, b)| m.max((a - b).amax())))
    }

    /// Bilinear interpolation between interior nodes; states beyond the
    /// outermost interior nodes take the value on that edge.
    pub fn interpolate(&self, x: f64, y: f64) -> SVector<f64, D> {
        let g = &self.grid;
        let m = g.m();
        if m == 1 {
            return self.actions[0];
        }
        let locate = |u: f64, lo: f64, h: f64| {
            // position in interior-index units, clamped to [0, m-1]
            let s = ((u - lo) / h - 1.0).clamp(0.0, (m - 1) as f64);
            let i = (s.floor() as usize).min(m - 2);
            (i, s - i as f64)
        };
        let (i, tx) = locate(x, g.x_min, g.dx);
        let (l, ty) = locate(y, g.y_min, g.dy);
        let a = |ii: usize, ll: usize| &self.actions[ll * m + ii];
        a(i, l) * ((1.0 - tx) * (1.0 - ty))
            + a(i + 1, l) * (tx * (1.0 - ty))
            + a(i, l + 1) * ((1.0 - tx) * ty)
            + a(i + 1, l + 1) * (tx * ty)
    }

    /// CSV with header `x,y,action` (or `action_0,...` when `D > 1`), one row
    /// per interior node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        if D == 1 {
            writeln!(out, "x,y,action")?;
        } else {
            let cols: Vec<String> = (0..D).map(|c| format!("action_{c}")).collect();
            writeln!(out, "x,y,{}", cols.join(","))?;
        }
        for ((j, k), a) in self.grid.interior_nodes().zip(&self.actions) {
            let comps: Vec<String> = a.iter().map(|v| sig9(*v)).collect();
            writeln!(
                out,
                "{},{},{}",
                sig9(self.grid.x(j)),
                sig9(self.grid.y(k)),
                comps.join(",")
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector1;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> Grid2D {
        Grid2D::new(0.5, 2.0, 0.5, 2.0, n).unwrap()
    }

    #[test]
    fn scalar_interpolation_is_exact_on_bilinear_functions() {
        let g = Grid2D::new(0.5, 2.0, 0.5, 2.0, 7).unwrap();
        let f = ScalarField::from_fn(g, |x, y| 1.0 + 2.0 * x - y + 0.5 * x * y);
        for &(x, y) in &[(0.5, 0.5), (1.25, 1.25), (1.9, 0.61), (2.0, 2.0), (0.73, 1.99)] {
            let exact = 1.0 + 2.0 * x - y + 0.5 * x * y;
            assert!((f.interpolate(x, y) - exact).abs() < 1e-12);
        }
        assert_eq!(f.interpolate(0.5, 0.5), f.get(0, 0));
        assert_eq!(f.interpolate(2.0, 2.0), f.get(6, 6));
    }

    #[test]
    fn four_node_grid() {
        let g = unit_grid(4);
        assert_eq!(g.dx, 0.5);
        assert_eq!(g.dy, 0.5);
        let xs: Vec<f64> = (0..4).map(|j| g.x(j)).collect();
        assert_eq!(xs, vec![0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn hundred_node_spacing() {
        let g = unit_grid(100);
        assert_abs_diff_eq!(g.dx, 1.5 / 99.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.dx, 0.01515152, epsilon = 1e-8);
        assert_abs_diff_eq!(g.x(99), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_small_or_inverted_grids() {
        assert_eq!(Grid2D::new(0.5, 2.0, 0.5, 2.0, 2), Err(Error::TooFewNodes(2)));
        assert!(matches!(
            Grid2D::new(2.0, 0.5, 0.5, 2.0, 10),
            Err(Error::InvalidBounds { .. })
        ));
        assert!(matches!(
            Grid2D::new(0.5, 2.0, 1.0, 1.0, 10),
            Err(Error::InvalidBounds { .. })
        ));
    }

    #[test]
    fn interior_order_is_row_major() {
        let g = unit_grid(5);
        let nodes: Vec<_> = g.interior_nodes().collect();
        assert_eq!(nodes[0], (1, 1));
        assert_eq!(nodes[1], (2, 1));
        assert_eq!(nodes[3], (1, 2));
        for (i, &(j, k)) in nodes.iter().enumerate() {
            assert_eq!(g.interior_index(j, k), i);
        }
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let f = ScalarField::constant(unit_grid(6), 7.0);
        let (fx, fy) = central_gradient(&f);
        assert_eq!(fx.sup_norm(), 0.0);
        assert_eq!(fy.sup_norm(), 0.0);
    }

    #[test]
    fn gradient_exact_on_linear() {
        let g = unit_grid(7);
        let f = ScalarField::from_fn(g, |x, _| x);
        let (fx, fy) = central_gradient(&f);
        for (j, k) in g.interior_nodes() {
            assert_abs_diff_eq!(fx.get(j, k), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(fy.get(j, k), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_of_square_at_one() {
        let g = unit_grid(4);
        let f = ScalarField::from_fn(g, |x, _| x * x);
        let (fx, _) = central_gradient(&f);
        // node j = 1 sits at x = 1
        assert_abs_diff_eq!(fx.get(1, 1), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn sup_norm_diff_examples() {
        let g = unit_grid(5);
        let a = ScalarField::from_fn(g, |x, y| x * y);
        assert_eq!(sup_norm_diff(&a, &a).unwrap(), 0.0);
        let one = ScalarField::constant(g, 1.0);
        assert_eq!(sup_norm_diff(&one, &ScalarField::zeros(g)).unwrap(), 1.0);
        let mut b = a.clone();
        b.set(2, 3, a.get(2, 3) - 0.5);
        assert_eq!(sup_norm_diff(&a, &b).unwrap(), 0.5);
        let other = ScalarField::zeros(unit_grid(6));
        assert_eq!(sup_norm_diff(&a, &other), Err(Error::GridMismatch));
    }

    #[test]
    fn from_values_validates() {
        let g = unit_grid(3);
        assert!(matches!(
            ScalarField::from_values(g, vec![0.0; 8]),
            Err(Error::LengthMismatch { .. })
        ));
        let mut v = vec![0.0; 9];
        v[5] = f64::NAN;
        assert_eq!(
            ScalarField::from_values(g, v),
            Err(Error::NonFinite { j: 2, k: 1 })
        );
    }

    #[test]
    fn csv_layout() {
        let g = unit_grid(3);
        let f = ScalarField::from_fn(g, |x, y| x + 10.0 * y);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[0], "x,y,value");
        assert_eq!(lines[1], "5.00000000e-1,5.00000000e-1,5.50000000e0");
        // second row is j = 1, k = 0
        assert!(lines[2].starts_with("1.25000000e0,5.00000000e-1,"));
    }

    #[test]
    fn policy_interpolation_hits_nodes_and_clamps() {
        let g = unit_grid(6);
        let p = PolicyField::from_fn(g, |x, y| Vector1::new(2.0 * x - y));
        for (j, k) in g.interior_nodes() {
            let v = p.interpolate(g.x(j), g.y(k));
            assert_abs_diff_eq!(v[0], p.at(j, k)[0], epsilon = 1e-12);
        }
        // affine data is reproduced inside the interior hull
        let v = p.interpolate(1.1, 1.3);
        assert_abs_diff_eq!(v[0], 2.0 * 1.1 - 1.3, epsilon = 1e-12);
        // between boundary and first interior node: edge value
        let v = p.interpolate(0.55, g.y(2));
        assert_abs_diff_eq!(v[0], p.at(1, 2)[0], epsilon = 1e-12);
    }

    fn field_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n * n)
    }

    proptest! {
        #[test]
        fn gradient_is_linear(a in field_strategy(6), b in field_strategy(6),
                              s in -3.0f64..3.0, t in -3.0f64..3.0) {
            let g = unit_grid(6);
            let fa = ScalarField::from_values(g, a).unwrap();
            let fb = ScalarField::from_values(g, b).unwrap();
            let combo: Vec<f64> = fa.values().iter().zip(fb.values())
                .map(|(u, v)| s * u + t * v).collect();
            let fc = ScalarField::from_values(g, combo).unwrap();
            let (ax, ay) = central_gradient(&fa);
            let (bx, by) = central_gradient(&fb);
            let (cx, cy) = central_gradient(&fc);
            for (j, k) in g.interior_nodes() {
                let ex = s * ax.get(j, k) + t * bx.get(j, k);
                let ey = s * ay.get(j, k) + t * by.get(j, k);
                prop_assert!((cx.get(j, k) - ex).abs() <= 1e-9 * (1.0 + ex.abs()));
                prop_assert!((cy.get(j, k) - ey).abs() <= 1e-9 * (1.0 + ey.abs()));
            }
        }

        #[test]
        fn gradient_exact_on_quadratics(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0,
                                        c2 in -5.0f64..5.0, n in 3usize..12) {
            let g = unit_grid(n);
            let f = ScalarField::from_fn(g, |x, _| c0 + c1 * x + c2 * x * x);
            let (fx, _) = central_gradient(&f);
            for (j, k) in g.interior_nodes() {
                let exact = c1 + 2.0 * c2 * g.x(j);
                prop_assert!((fx.get(j, k) - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
            }
        }

        #[test]
        fn sup_norm_diff_is_metric(a in field_strategy(4), b in field_strategy(4),
                                   c in field_strategy(4)) {
            let g = unit_grid(4);
            let fa = ScalarField::from_values(g, a).unwrap();
            let fb = ScalarField::from_values(g, b).unwrap();
            let fc = ScalarField::from_values(g, c).unwrap();
            let ab = sup_norm_diff(&fa, &fb).unwrap();
            prop_assert_eq!(ab, sup_norm_diff(&fb, &fa).unwrap());
            prop_assert_eq!(sup_norm_diff(&fa, &fa).unwrap(), 0.0);
            prop_assert_eq!(ab == 0.0, fa == fb);
            let ac = sup_norm_diff(&fa, &fc).unwrap();
            let cb = sup_norm_diff(&fc, &fb).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }
}
