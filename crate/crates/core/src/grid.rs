//! Uniform periodic discretization of the unit torus.
//!
//! Fields live on the nodes `x_i = i/n`, `i = 0..n`, with index arithmetic
//! taken mod `n`. Derivatives are second-order central differences; the
//! discrete `Hᵏ` norm sums the squared `L²` norms of iterated derivatives,
//! where even orders are powers of the three-point Laplacian and odd orders
//! add one central first difference on top.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Default tolerance for "sphere-valued" checks.
pub const SPHERE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::invalid(format!("grid needs at least 4 points, got {n}")));
        }
        Ok(Grid { n })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.node(i))
    }

    #[inline]
    pub fn next(&self, i: usize) -> usize {
        if i + 1 == self.n {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn prev(&self, i: usize) -> usize {
        if i == 0 {
            self.n - 1
        } else {
            i - 1
        }
    }
}

/// Order of a discrete derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    First,
    Second,
}

/// Function spaces for [`GridField::norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    /// Discrete `Lᵖ`, `p ∈ [1, ∞)`.
    L(f64),
    LInf,
    /// Discrete Sobolev `Hᵏ`.
    H(usize),
}

/// Periodic central difference of a scalar sequence.
pub fn periodic_diff(values: &[f64], h: f64, order: Derivative) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let ip = if i + 1 == n { 0 } else { i + 1 };
            let im = if i == 0 { n - 1 } else { i - 1 };
            match order {
                Derivative::First => (values[ip] - values[im]) / (2.0 * h),
                Derivative::Second => (values[ip] - 2.0 * values[i] + values[im]) / (h * h),
            }
        })
        .collect()
}

/// Applies the `j`-th discrete derivative: `Second^(j/2)`, then `First` if `j` is odd.
pub fn iterated_diff(values: &[f64], h: f64, j: usize) -> Vec<f64> {
    let mut out = values.to_vec();
    for _ in 0..j / 2 {
        out = periodic_diff(&out, h, Derivative::Second);
    }
    if j % 2 == 1 {
        out = periodic_diff(&out, h, Derivative::First);
    }
    out
}

/// Returns the derivatives `D⁰f, …, Dᵏf` of a scalar sequence.
pub fn derivative_ladder(values: &[f64], h: f64, k: usize) -> Vec<Vec<f64>> {
    let mut ladder = Vec::with_capacity(k + 1);
    ladder.push(values.to_vec());
    for j in 1..=k {
        // even orders build on j-2, odd orders add one first difference to j-1
        let next = if j % 2 == 0 {
            periodic_diff(&ladder[j - 2], h, Derivative::Second)
        } else {
            periodic_diff(&ladder[j - 1], h, Derivative::First)
        };
        ladder.push(next);
    }
    ladder
}

/// Discrete `Hᵏ` inner product of two scalar sequences.
pub fn sobolev_inner(a: &[f64], b: &[f64], h: f64, k: usize) -> f64 {
    let la = derivative_ladder(a, h, k);
    let lb = derivative_ladder(b, h, k);
    la.iter()
        .zip(&lb)
        .map(|(x, y)| h * x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

/// Squared discrete `Hᵏ` norm of a scalar sequence.
pub fn sobolev_norm_sq(values: &[f64], h: f64, k: usize) -> f64 {
    derivative_ladder(values, h, k)
        .iter()
        .map(|d| h * d.iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// An ℝ³-valued function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Grid,
    values: Vec<Vec3>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<Vec3>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "field has {} values on a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("non-finite value at grid point {i}")));
        }
        Ok(GridField { grid, values })
    }

    /// Builds a field without the finiteness scan. Callers guarantee the length.
    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<Vec3>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridField { grid, values }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> Vec3) -> Self {
        let values = grid.nodes().map(f).collect();
        GridField { grid, values }
    }

    pub fn constant(grid: Grid, v: Vec3) -> Self {
        GridField { grid, values: vec![v; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, Vec3::zeros())
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [Vec3] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Vec3> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// One component as a scalar sequence.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[c]).collect()
    }

    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> GridField {
        GridField { grid: self.grid, values: self.values.iter().map(f).collect() }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(&Vec3, &Vec3) -> Vec3) -> GridField {
        debug_assert_eq!(self.grid, other.grid);
        GridField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &GridField) -> GridField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> GridField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> GridField {
        self.map(|a| a * s)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &GridField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b * s;
        }
    }

    pub fn diff(&self, order: Derivative) -> GridField {
        let n = self.grid.len();
        let h = self.grid.spacing();
        let v = &self.values;
        let values = (0..n)
            .map(|i| {
                let ip = self.grid.next(i);
                let im = self.grid.prev(i);
                match order {
                    Derivative::First => (v[ip] - v[im]) / (2.0 * h),
                    Derivative::Second => (v[ip] - v[i] * 2.0 + v[im]) / (h * h),
                }
            })
            .collect();
        GridField { grid: self.grid, values }
    }

    /// The `j`-th derivative in the convention of [`iterated_diff`].
    pub fn iterated_diff(&self, j: usize) -> GridField {
        let mut out = self.clone();
        for _ in 0..j / 2 {
            out = out.diff(Derivative::Second);
        }
        if j % 2 == 1 {
            out = out.diff(Derivative::First);
        }
        out
    }

    /// Discrete `L²` inner product `h Σ f_i·g_i`.
    pub fn inner(&self, other: &GridField) -> f64 {
        self.grid.spacing() * self.values.iter().zip(&other.values).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    pub fn norm(&self, space: Norm) -> f64 {
        let h = self.grid.spacing();
        match space {
            Norm::LInf => self.values.iter().map(|v| v.norm()).fold(0.0, f64::max),
            Norm::L(p) => {
                if p == 2.0 {
                    (h * self.values.iter().map(|v| v.norm_squared()).sum::<f64>()).sqrt()
                } else {
                    (h * self.values.iter().map(|v| v.norm().powf(p)).sum::<f64>()).powf(1.0 / p)
                }
            }
            Norm::H(k) => (0..3)
                .map(|c| sobolev_norm_sq(&self.component(c), h, k))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// `max_i | |f_i| − 1 |`
    pub fn sphere_deviation(&self) -> f64 {
        self.values.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn is_sphere_valued(&self, tol: f64) -> bool {
        self.sphere_deviation() <= tol
    }
}

/// Exact solver for `(I − dt·D²) v = rhs` with the periodic three-point `D²`.
///
/// The cyclic tridiagonal system is reduced to a tridiagonal one by the
/// Sherman–Morrison formula; the factorization is computed once per `(n, dt)`.
#[derive(Debug, Clone)]
pub struct HeatSolver {
    grid: Grid,
    dt: f64,
    off: f64,
    // modified diagonal after forward elimination
    denom: Vec<f64>,
    // super-diagonal multipliers
    upper: Vec<f64>,
    correction: Vec<f64>,
    gamma: f64,
    corr_scale: f64,
}

impl HeatSolver {
    pub fn new(grid: Grid, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let n = grid.len();
        let h = grid.spacing();
        let r = dt / (h * h);
        let diag = 1.0 + 2.0 * r;
        let off = -r;
        let gamma = -diag;

        let mut b = vec![diag; n];
        b[0] = diag - gamma;
        b[n - 1] = diag - off * off / gamma;

        let mut denom = vec![0.0; n];
        let mut upper = vec![0.0; n];
        denom[0] = b[0];
        upper[0] = off / denom[0];
        for i in 1..n {
            denom[i] = b[i] - off * upper[i - 1];
            upper[i] = off / denom[i];
        }

        let mut solver = HeatSolver {
            grid,
            dt,
            off,
            denom,
            upper,
            correction: Vec::new(),
            gamma,
            corr_scale: 0.0,
        };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = off;
        let z = solver.tridiag(&u);
        solver.corr_scale = 1.0 + z[0] + off / gamma * z[n - 1];
        solver.correction = z;
        Ok(solver)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn tridiag(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut y = vec![0.0; n];
        y[0] = rhs[0] / self.denom[0];
        for i in 1..n {
            y[i] = (rhs[i] - self.off * y[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            y[i] -= self.upper[i] * y[i + 1];
        }
        y
    }

    pub fn solve_scalar(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let y = self.tridiag(rhs);
        let vy = y[0] + self.off / self.gamma * y[n - 1];
        let f = vy / self.corr_scale;
        y.iter().zip(&self.correction).map(|(a, z)| a - f * z).collect()
    }

    pub fn solve(&self, rhs: &GridField) -> Result<GridField> {
        if rhs.grid() != self.grid {
            return Err(Error::GridMismatch("heat solver built for a different grid".into()));
        }
        let comps: Vec<Vec<f64>> = (0..3).map(|c| self.solve_scalar(&rhs.component(c))).collect();
        let values = (0..self.grid.len())
            .map(|i| Vec3::new(comps[0][i], comps[1][i], comps[2][i]))
            .collect();
        Ok(GridField::from_vec_unchecked(self.grid, values))
    }
}

/// Solves `(I − dt·D²) v = rhs` componentwise.
pub fn imex_solve(rhs: &GridField, dt: f64) -> Result<GridField> {
    HeatSolver::new(rhs.grid(), dt)?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(n: usize) -> GridField {
        let g = Grid::new(n).unwrap();
        GridField::from_fn(g, |x| Vec3::new((2.0 * PI * x).sin(), 0.0, 0.0))
    }

    #[test]
    fn grid_rejects_tiny() {
        assert!(Grid::new(3).is_err());
        let g = Grid::new(4).unwrap();
        assert_eq!(g.spacing() * g.len() as f64, 1.0);
        assert_eq!(g.next(3), 0);
        assert_eq!(g.prev(0), 3);
    }

    #[test]
    fn field_rejects_nan_and_wrong_length() {
        let g = Grid::new(4).unwrap();
        assert!(GridField::new(g, vec![Vec3::zeros(); 3]).is_err());
        let mut v = vec![Vec3::zeros(); 4];
        v[2].x = f64::NAN;
        assert!(GridField::new(g, v).is_err());
    }

    #[test]
    fn constants_are_annihilated() {
        let g = Grid::new(16).unwrap();
        let c = GridField::constant(g, Vec3::new(0.3, -1.0, 2.5));
        for order in [Derivative::First, Derivative::Second] {
            assert!(c.diff(order).values().iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn sine_derivatives_second_order() {
        let f = sine(128);
        let d1 = f.diff(Derivative::First);
        let d2 = f.diff(Derivative::Second);
        let mut e1: f64 = 0.0;
        let mut e2: f64 = 0.0;
        for (i, x) in f.grid().nodes().enumerate() {
            e1 = e1.max((d1.values()[i].x - 2.0 * PI * (2.0 * PI * x).cos()).abs());
            e2 = e2.max((d2.values()[i].x + 4.0 * PI * PI * (2.0 * PI * x).sin()).abs());
        }
        // C·h² with C = (2π)³/6
        assert!(e1 <= (2.0 * PI).powi(3) / 6.0 / (128.0f64).powi(2) * 1.01, "first derivative error {e1}");
        // C·h² with C = (2π)⁴/12
        assert!(e2 <= (2.0 * PI).powi(4) / 12.0 / (128.0f64).powi(2) * 1.01, "second derivative error {e2}");
    }

    #[test]
    fn second_difference_eigenvalue() {
        let n = 64;
        let g = Grid::new(n).unwrap();
        let h = g.spacing();
        for k in 1..5 {
            let f = GridField::from_fn(g, |x| Vec3::new(0.0, (2.0 * PI * k as f64 * x).sin(), 0.0));
            let lam = (2.0 - 2.0 * (2.0 * PI * k as f64 * h).cos()) / (h * h);
            let d2 = f.diff(Derivative::Second);
            for (a, b) in d2.values().iter().zip(f.values()) {
                assert!((a.y + lam * b.y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = Grid::new(32).unwrap();
        let c = GridField::constant(g, Vec3::new(1.0, 0.0, 0.0));
        assert!((c.norm(Norm::L(2.0)) - 1.0).abs() < 1e-15);
        assert_eq!(c.norm(Norm::LInf), 1.0);
        assert!((c.norm(Norm::L(1.0)) - 1.0).abs() < 1e-15);

        let f = sine(128);
        let l2 = f.norm(Norm::L(2.0)).powi(2);
        assert!((l2 - 0.5).abs() < 1e-6);
        let h1 = f.norm(Norm::H(1)).powi(2);
        let exact = 0.5 + 2.0 * PI * PI;
        assert!((h1 - exact).abs() / exact < 5e-3, "H1² = {h1}");
    }

    #[test]
    fn sobolev_norm_monotone_in_k() {
        let f = sine(64).add(&GridField::from_fn(Grid::new(64).unwrap(), |x| {
            Vec3::new(0.0, (6.0 * PI * x).cos(), 0.2)
        }));
        let mut prev = 0.0;
        for k in 0..5 {
            let v = f.norm(Norm::H(k));
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ladder_matches_iterated_diff() {
        let f = sine(32);
        let x = f.component(0);
        let h = f.grid().spacing();
        let ladder = derivative_ladder(&x, h, 4);
        for (j, rung) in ladder.iter().enumerate() {
            assert_eq!(rung, &iterated_diff(&x, h, j));
            assert_eq!(rung, &f.iterated_diff(j).component(0));
        }
    }

    #[test]
    fn summation_by_parts() {
        let g = Grid::new(37).unwrap();
        let f = GridField::from_fn(g, |x| Vec3::new(x.sin(), (3.0 * x).cos(), x * x));
        let q = GridField::from_fn(g, |x| Vec3::new((7.0 * x).cos(), x, (2.0 * x).sin()));
        let lhs = f.diff(Derivative::First).inner(&q);
        let rhs = -f.inner(&q.diff(Derivative::First));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn heat_solve_constant_and_mode() {
        let g = Grid::new(128).unwrap();
        let c = GridField::constant(g, Vec3::new(1.0, -2.0, 0.5));
        let v = imex_solve(&c, 0.3).unwrap();
        assert!(v.sub(&c).norm(Norm::LInf) < 1e-13);

        let dt = 0.01;
        let h = g.spacing();
        let lam = (2.0 - 2.0 * (2.0 * PI * h).cos()) / (h * h);
        let f = sine(128);
        let v = imex_solve(&f, dt).unwrap();
        for (a, b) in v.values().iter().zip(f.values()) {
            assert!((a.x - b.x / (1.0 + dt * lam)).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_solve_residual() {
        let g = Grid::new(50).unwrap();
        // deterministic pseudo-random rhs
        let mut s: u64 = 0x9e3779b97f4a7c15;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let rhs = GridField::new(g, (0..50).map(|_| Vec3::new(next(), next(), next())).collect()).unwrap();
        for dt in [1e-5, 1e-3, 0.1] {
            let v = imex_solve(&rhs, dt).unwrap();
            let resid = v.sub(&v.diff(Derivative::Second).scale(dt)).sub(&rhs);
            assert!(resid.norm(Norm::LInf) <= 1e-12, "dt={dt}");
        }
        assert!(imex_solve(&rhs, 0.0).is_err());
    }

    #[test]
    fn heat_solve_tends_to_identity() {
        let f = sine(64).add(&GridField::from_fn(Grid::new(64).unwrap(), |x| {
            Vec3::new(0.0, (4.0 * PI * x).cos(), 0.0)
        }));
        let e1 = imex_solve(&f, 1e-4).unwrap().sub(&f).norm(Norm::LInf);
        let e2 = imex_solve(&f, 5e-5).unwrap().sub(&f).norm(Norm::LInf);
        let ratio = e1 / e2;
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }
}
