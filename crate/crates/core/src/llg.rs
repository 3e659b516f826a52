//! Steppers for the rough LLG equation
//! `du = [∂²u + u|∂u|² + u×∂²u] dt + (G + 𝔾) u` on the torus.
//!
//! The discrete energy density is `|∂u|²_i = (|u_{i+1}−u_i|² + |u_i−u_{i−1}|²) / (2h²)`,
//! which equals `−u·D²u` for sphere-valued fields, so the discrete tension
//! `D²u + u|∂u|²` is exactly tangent and vanishes on the equator map.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::driver::{DriverIncrement, SpaceRoughDriver};
use crate::error::{Error, Result};
use crate::grid::{Derivative, Grid, GridField, HeatSolver};
use crate::rough::TimeGrid;
use crate::{Mat3, Vec3};

/// Vectors shorter than this cannot be projected to the sphere.
pub const EPS_PROJ: f64 = 1e-6;

const TRAJ_MAGIC: &[u8; 4] = b"RLGT";
const TRAJ_VERSION: u32 = 1;

/// Pointwise `|∂u|²` from the two one-sided differences.
pub fn energy_density(u: &GridField) -> Vec<f64> {
    let g = u.grid();
    let n = g.len();
    let h2 = g.spacing() * g.spacing();
    let v = u.values();
    (0..n)
        .map(|i| ((v[g.next(i)] - v[i]).norm_squared() + (v[i] - v[g.prev(i)]).norm_squared()) / (2.0 * h2))
        .collect()
}

/// `𝓉_u = D²u + u|∂u|²`.
pub fn tension(u: &GridField) -> GridField {
    let d2 = u.diff(Derivative::Second);
    let e = energy_density(u);
    let values = d2.values().iter().zip(u.values()).zip(&e).map(|((d, v), e)| d + v * *e).collect();
    GridField::from_vec_unchecked(u.grid(), values)
}

/// `𝓉_u + u × D²u`.
pub fn drift(u: &GridField) -> GridField {
    let d2 = u.diff(Derivative::Second);
    let e = energy_density(u);
    let values = d2
        .values()
        .iter()
        .zip(u.values())
        .zip(&e)
        .map(|((d, v), e)| d + v * *e + v.cross(d))
        .collect();
    GridField::from_vec_unchecked(u.grid(), values)
}

/// `f(x)/|f(x)|` pointwise; fails on vectors shorter than [`EPS_PROJ`].
pub fn project_sphere(f: &GridField) -> Result<GridField> {
    let mut values = f.values().to_vec();
    for (index, v) in values.iter_mut().enumerate() {
        let norm = v.norm();
        if !(norm >= EPS_PROJ) {
            return Err(Error::NearZero { index, norm });
        }
        *v /= norm;
    }
    Ok(GridField::from_vec_unchecked(f.grid(), values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    RoughEulerImex,
    RoughEulerExplicit,
    SmoothImex,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::RoughEulerImex => "rough_euler_imex",
            Scheme::RoughEulerExplicit => "rough_euler_explicit",
            Scheme::SmoothImex => "smooth_imex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub scheme: Scheme,
    pub project: bool,
    pub drift_enabled: bool,
    pub substeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { scheme: Scheme::RoughEulerImex, project: true, drift_enabled: true, substeps: 1 }
    }
}

impl SolverOptions {
    pub fn validate(&self, grid: Grid, dt: f64) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be at least 1"));
        }
        let h = grid.spacing();
        let sub = dt / self.substeps as f64;
        if self.scheme == Scheme::RoughEulerExplicit && self.drift_enabled && sub > 0.5 * h * h {
            return Err(Error::invalid(format!(
                "explicit scheme needs dt ≤ h²/2 = {:e}, got {sub:e}",
                0.5 * h * h
            )));
        }
        Ok(())
    }
}

/// First-level input `ξ_{t_i,t_{i+1}}(x)` for the equation driven by a regular path.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothInput {
    grid: Grid,
    timegrid: TimeGrid,
    increments: Vec<Vec<Mat3>>,
}

impl SmoothInput {
    pub fn new(grid: Grid, timegrid: TimeGrid, increments: Vec<Vec<Mat3>>) -> Result<Self> {
        if increments.len() != timegrid.steps() || increments.iter().any(|v| v.len() != grid.len()) {
            return Err(Error::GridMismatch("smooth input does not match its grids".into()));
        }
        Ok(SmoothInput { grid, timegrid, increments })
    }

    /// The first level of a driver.
    pub fn from_driver(d: &SpaceRoughDriver) -> Self {
        SmoothInput {
            grid: d.grid(),
            timegrid: d.timegrid(),
            increments: d.intervals().iter().map(|i| i.g.clone()).collect(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn increment(&self, i: usize) -> &[Mat3] {
        &self.increments[i]
    }
}

/// What drives a solve.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Deterministic(TimeGrid),
    Rough(&'a SpaceRoughDriver),
    Smooth(&'a SmoothInput),
}

impl Input<'_> {
    pub fn timegrid(&self) -> TimeGrid {
        match self {
            Input::Deterministic(tg) => *tg,
            Input::Rough(d) => d.timegrid(),
            Input::Smooth(s) => s.timegrid(),
        }
    }

    fn grid(&self) -> Option<Grid> {
        match self {
            Input::Deterministic(_) => None,
            Input::Rough(d) => Some(d.grid()),
            Input::Smooth(s) => Some(s.grid()),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Input::Deterministic(_) => "none",
            Input::Rough(d) if d.source().is_some() => "rough (mode lift)",
            Input::Rough(_) => "rough (raw increments)",
            Input::Smooth(_) => "smooth",
        }
    }
}

/// The two levels used for one step; `None` means no noise.
enum Levels<'a> {
    None,
    Rough(&'a DriverIncrement),
    Smooth(&'a [Mat3]),
}

/// Splits `(G, 𝔾)` into `s` equal Chen factors `(G/s, ½(G/s)² + 𝕃/s)` with `𝕃 = 𝔾 − ½G²`.
pub fn split_increment(g: &Mat3, gg: &Mat3, s: usize) -> (Mat3, Mat3) {
    let a = g / s as f64;
    let levy = gg - 0.5 * g * g;
    (a, 0.5 * a * a + levy / s as f64)
}

/// One time step with a cached heat solver.
struct Stepper {
    opts: SolverOptions,
    sub_dt: f64,
    heat: Option<HeatSolver>,
}

impl Stepper {
    fn new(grid: Grid, dt: f64, opts: SolverOptions) -> Result<Self> {
        opts.validate(grid, dt)?;
        let sub_dt = dt / opts.substeps as f64;
        let implicit = opts.drift_enabled && matches!(opts.scheme, Scheme::RoughEulerImex | Scheme::SmoothImex);
        let heat = if implicit { Some(HeatSolver::new(grid, sub_dt)?) } else { None };
        Ok(Stepper { opts, sub_dt, heat })
    }

    fn step(&self, u: &GridField, levels: &Levels<'_>) -> Result<GridField> {
        let s = self.opts.substeps;
        let n = u.grid().len();
        let use_second = self.opts.scheme != Scheme::SmoothImex;
        let noise: Vec<Mat3> = match levels {
            Levels::None => Vec::new(),
            Levels::Rough(inc) => (0..n)
                .map(|x| {
                    let (a, aa) = split_increment(&inc.g[x], &inc.gg[x], s);
                    if use_second {
                        a + aa
                    } else {
                        a
                    }
                })
                .collect(),
            Levels::Smooth(xi) => xi
                .iter()
                .map(|m| {
                    let a = m / s as f64;
                    if use_second {
                        a + 0.5 * a * a
                    } else {
                        a
                    }
                })
                .collect(),
        };
        let mut cur = u.clone();
        for _ in 0..s {
            cur = self.substep(&cur, &noise)?;
        }
        Ok(cur)
    }

    fn substep(&self, u: &GridField, noise: &[Mat3]) -> Result<GridField> {
        let grid = u.grid();
        let dt = self.sub_dt;
        let mut rhs: Vec<Vec3> = u.values().to_vec();
        if !noise.is_empty() {
            for (r, (m, v)) in rhs.iter_mut().zip(noise.iter().zip(u.values())) {
                *r += m * v;
            }
        }
        if self.opts.drift_enabled {
            let d2 = u.diff(Derivative::Second);
            let explicit = self.opts.scheme == Scheme::RoughEulerExplicit;
            for (i, r) in rhs.iter_mut().enumerate() {
                let v = u.values()[i];
                let lap = d2.values()[i];
                // `−u·D²u/|u|²`, which is `energy_density` on unit fields
                let e = -v.dot(&lap) / v.norm_squared();
                let mut f = v * e + v.cross(&lap);
                if explicit {
                    f += lap;
                }
                *r += f * dt;
            }
        }
        let rhs = GridField::new(grid, rhs)?;
        let v = match &self.heat {
            Some(h) => h.solve(&rhs)?,
            None => rhs,
        };
        if let Some((index, norm)) =
            v.values().iter().map(|x| x.norm()).enumerate().find(|(_, norm)| !(*norm >= EPS_PROJ))
        {
            return Err(Error::NearZero { index, norm });
        }
        if self.opts.project {
            project_sphere(&v)
        } else {
            Ok(v)
        }
    }
}

/// One rough-Euler step over interval `i` of the driver.
pub fn step_rough(u: &GridField, d: &SpaceRoughDriver, i: usize, opts: SolverOptions) -> Result<GridField> {
    if u.grid() != d.grid() {
        return Err(Error::GridMismatch("state and driver grids differ".into()));
    }
    if i >= d.timegrid().steps() {
        return Err(Error::BadInterval { s: i, t: i + 1 });
    }
    let opts = SolverOptions { scheme: rough_scheme(opts.scheme), ..opts };
    Stepper::new(u.grid(), d.timegrid().dt(), opts)?.step(u, &Levels::Rough(d.interval(i)))
}

fn rough_scheme(s: Scheme) -> Scheme {
    if s == Scheme::SmoothImex {
        Scheme::RoughEulerImex
    } else {
        s
    }
}

/// One IMEX step driven by the first-level increment `ξ` only.
pub fn step_smooth(u: &GridField, xi: &[Mat3], dt: f64, opts: SolverOptions) -> Result<GridField> {
    if xi.len() != u.grid().len() {
        return Err(Error::GridMismatch("input increment does not match the grid".into()));
    }
    let opts = SolverOptions { scheme: Scheme::SmoothImex, ..opts };
    Stepper::new(u.grid(), dt, opts)?.step(u, &Levels::Smooth(xi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub scheme: Scheme,
    pub dt: f64,
    pub project: bool,
    pub drift_enabled: bool,
    pub substeps: usize,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    timegrid: TimeGrid,
    states: Vec<GridField>,
    meta: TrajectoryMeta,
}

/// Iterates the stepper over the whole time grid of the input.
pub fn solve(u0: &GridField, input: Input<'_>, opts: SolverOptions) -> Result<Trajectory> {
    let grid = u0.grid();
    if let Some(g) = input.grid() {
        if g != grid {
            return Err(Error::GridMismatch(format!("initial state on n = {}, input on n = {}", grid.len(), g.len())));
        }
    }
    let dev = u0.sphere_deviation();
    if dev > crate::grid::SPHERE_TOL {
        return Err(Error::invalid(format!("initial state is not sphere valued (deviation {dev:e})")));
    }
    let tg = input.timegrid();
    let stepper = Stepper::new(grid, tg.dt(), opts)?;
    let mut states = Vec::with_capacity(tg.nodes());
    states.push(u0.clone());
    for i in 0..tg.steps() {
        let levels = match input {
            Input::Deterministic(_) => Levels::None,
            Input::Rough(d) => Levels::Rough(d.interval(i)),
            Input::Smooth(s) => Levels::Smooth(s.increment(i)),
        };
        let next = stepper
            .step(&states[i], &levels)
            .map_err(|e| Error::Step { node: i + 1, source: Box::new(e) })?;
        states.push(next);
    }
    let meta = TrajectoryMeta {
        scheme: opts.scheme,
        dt: tg.dt(),
        project: opts.project,
        drift_enabled: opts.drift_enabled,
        substeps: opts.substeps,
        input: input.label().to_string(),
    };
    Ok(Trajectory { timegrid: tg, states, meta })
}

impl Trajectory {
    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn grid(&self) -> Grid {
        self.states[0].grid()
    }

    pub fn states(&self) -> &[GridField] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &GridField {
        &self.states[i]
    }

    pub fn last(&self) -> &GridField {
        self.states.last().expect("a trajectory has at least one state")
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    /// `max_{t,x} ||u_t(x)| − 1|`.
    pub fn sphere_deviation(&self) -> f64 {
        self.states.iter().map(GridField::sphere_deviation).fold(0.0, f64::max)
    }

    /// Keeps every `stride`-th state; the time grid is coarsened accordingly.
    pub fn subsample(&self, stride: usize) -> Result<Trajectory> {
        let steps = self.timegrid.steps();
        if stride == 0 || steps % stride != 0 {
            return Err(Error::invalid(format!("stride {stride} does not divide {steps} steps")));
        }
        Ok(Trajectory {
            timegrid: TimeGrid::new(self.timegrid.horizon(), steps / stride)?,
            states: self.states.iter().step_by(stride).cloned().collect(),
            meta: TrajectoryMeta { dt: self.meta.dt * stride as f64, ..self.meta.clone() },
        })
    }

    /// CSV with columns `t,x,u1,u2,u3`, one row per node and grid point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,u1,u2,u3")?;
        for (i, s) in self.states.iter().enumerate() {
            let t = self.timegrid.node(i);
            for (x, v) in s.grid().nodes().zip(s.values()) {
                writeln!(w, "{t:e},{x:e},{:e},{:e},{:e}", v.x, v.y, v.z)?;
            }
        }
        Ok(())
    }

    /// Binary layout, little endian: a 16-byte header `b"RLGT"`, `u32` version,
    /// `u32` n, `u32` N, then the `f64` horizon and `(N + 1)·n·3` `f64` values,
    /// node major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRAJ_MAGIC)?;
        w.write_all(&TRAJ_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid().len() as u32).to_le_bytes())?;
        w.write_all(&(self.timegrid.steps() as u32).to_le_bytes())?;
        w.write_all(&self.timegrid.horizon().to_le_bytes())?;
        for s in &self.states {
            for v in s.values() {
                for c in v.iter() {
                    w.write_all(&c.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Reads the binary layout; metadata other than the grids is not stored there.
    pub fn read_binary<R: Read>(mut r: R, meta: TrajectoryMeta) -> Result<Self> {
        let mut head = [0u8; 24];
        r.read_exact(&mut head)?;
        if &head[..4] != TRAJ_MAGIC {
            return Err(Error::Format("not a trajectory file".into()));
        }
        let word = |k: usize| u32::from_le_bytes(head[k..k + 4].try_into().expect("4 bytes"));
        if word(4) != TRAJ_VERSION {
            return Err(Error::Format(format!("unsupported trajectory version {}", word(4))));
        }
        let grid = Grid::new(word(8) as usize)?;
        let tg = TimeGrid::new(f64::from_le_bytes(head[16..24].try_into().expect("8 bytes")), word(12) as usize)?;
        let mut buf = vec![0u8; grid.len() * 24];
        let mut states = Vec::with_capacity(tg.nodes());
        for _ in 0..tg.nodes() {
            r.read_exact(&mut buf)?;
            let vals: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            states.push(GridField::new(grid, vals.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())?);
        }
        Ok(Trajectory { timegrid: tg, states, meta })
    }
}

/// `u^♮_{s,t}` for many windows of one trajectory, sharing the drift quadrature.
pub struct Remainders<'a> {
    traj: &'a Trajectory,
    driver: &'a SpaceRoughDriver,
    // trapezoid prefix sums ∫_0^{t_i} drift(u_r) dr
    drift_integral: Vec<Vec<Vec3>>,
}

impl<'a> Remainders<'a> {
    pub fn new(traj: &'a Trajectory, driver: &'a SpaceRoughDriver) -> Result<Self> {
        if traj.grid() != driver.grid() || traj.timegrid() != driver.timegrid() {
            return Err(Error::GridMismatch("trajectory and driver grids differ".into()));
        }
        let dt = traj.timegrid().dt();
        let drifts: Vec<GridField> = if traj.meta.drift_enabled {
            traj.states.iter().map(drift).collect()
        } else {
            vec![GridField::zeros(traj.grid()); traj.states.len()]
        };
        let mut acc = vec![vec![Vec3::zeros(); traj.grid().len()]];
        for i in 0..drifts.len() - 1 {
            let last = acc.last().expect("nonempty");
            let next = last
                .iter()
                .zip(drifts[i].values().iter().zip(drifts[i + 1].values()))
                .map(|(a, (l, r))| a + (l + r) * (0.5 * dt))
                .collect();
            acc.push(next);
        }
        Ok(Remainders { traj, driver, drift_integral: acc })
    }

    /// `δu_{s,t} − ∫_s^t drift(u_r)dr − G_{s,t}u_s − 𝔾_{s,t}u_s` with the trapezoid rule.
    pub fn at(&self, s: usize, t: usize) -> Result<GridField> {
        let inc = self.driver.increment(s, t)?;
        Ok(self.with_increment(s, t, &inc))
    }

    /// Same as [`Remainders::at`] with a precomputed driver increment over `[s, t]`.
    pub fn with_increment(&self, s: usize, t: usize, inc: &DriverIncrement) -> GridField {
        let (us, ut) = (self.traj.state(s).values(), self.traj.state(t).values());
        let values = (0..us.len())
            .map(|x| {
                let quad = self.drift_integral[t][x] - self.drift_integral[s][x];
                ut[x] - us[x] - quad - (inc.g[x] + inc.gg[x]) * us[x]
            })
            .collect();
        GridField::from_vec_unchecked(self.traj.grid(), values)
    }
}

/// `u^♮_{s,t}` for a single window.
pub fn extract_remainder(traj: &Trajectory, d: &SpaceRoughDriver, s: usize, t: usize) -> Result<GridField> {
    Remainders::new(traj, d)?.at(s, t)
}

/// `(cos 2πx, sin 2πx, 0)`.
pub fn equator(grid: Grid) -> GridField {
    use std::f64::consts::TAU;
    GridField::from_fn(grid, |x| Vec3::new((TAU * x).cos(), (TAU * x).sin(), 0.0))
}

/// `normalize(cos 2πx, sin 2πx, a·sin 4πx)`.
pub fn tilted_equator(grid: Grid, a: f64) -> GridField {
    use std::f64::consts::TAU;
    GridField::from_fn(grid, |x| Vec3::new((TAU * x).cos(), (TAU * x).sin(), a * (2.0 * TAU * x).sin()).normalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Norm;
    use crate::noise::{CameronMartinPath, ModeRoughPath};
    use std::f64::consts::{PI, TAU};

    fn rotation_driver(steps: usize, n: usize) -> SpaceRoughDriver {
        let tg = TimeGrid::new(1.0, steps).unwrap();
        let h = CameronMartinPath::constant_velocity(tg, &[1.0, 0.0, 0.0]).unwrap();
        SpaceRoughDriver::lift_simple(Grid::new(n).unwrap(), &vec![1.0; n], &h.lift()).unwrap()
    }

    #[test]
    fn tension_of_constant_and_equator() {
        let g = Grid::new(128).unwrap();
        let c = GridField::constant(g, Vec3::z());
        assert_eq!(tension(&c).norm(Norm::LInf), 0.0);
        assert_eq!(drift(&c).norm(Norm::LInf), 0.0);
        let e = equator(g);
        assert!(tension(&e).norm(Norm::LInf) < 1e-9);
        assert!(drift(&e).norm(Norm::LInf) < 1e-9);
    }

    fn bent_field(n: usize, eps: f64) -> (GridField, Vec<Vec3>) {
        // u = e₃cosθ + c sinθ with θ = π/2 + ε sin 2πx; analytic tension alongside
        let g = Grid::new(n).unwrap();
        let mut exact = Vec::new();
        let u = GridField::from_fn(g, |x| {
            let th = PI / 2.0 + eps * (TAU * x).sin();
            let c = Vec3::new((TAU * x).cos(), (TAU * x).sin(), 0.0);
            Vec3::z() * th.cos() + c * th.sin()
        });
        for x in g.nodes() {
            let th = PI / 2.0 + eps * (TAU * x).sin();
            let th1 = eps * TAU * (TAU * x).cos();
            let th2 = -eps * TAU * TAU * (TAU * x).sin();
            let c = Vec3::new((TAU * x).cos(), (TAU * x).sin(), 0.0);
            let c1 = Vec3::new(-(TAU * x).sin(), (TAU * x).cos(), 0.0) * TAU;
            let c2 = -c * TAU * TAU;
            let ez = Vec3::z();
            let v = ez * th.cos() + c * th.sin();
            let d1 = -ez * th.sin() * th1 + c1 * th.sin() + c * th.cos() * th1;
            let d2 = -ez * (th.cos() * th1 * th1 + th.sin() * th2)
                + c2 * th.sin()
                + c1 * (2.0 * th.cos() * th1)
                + c * (-th.sin() * th1 * th1 + th.cos() * th2);
            exact.push(d2 + v * d1.norm_squared());
        }
        (u, exact)
    }

    #[test]
    fn tension_matches_analytic_second_order() {
        let err = |n| {
            let (u, exact) = bent_field(n, 0.2);
            tension(&u).values().iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(128), err(256));
        assert!(e1 < 0.1, "{e1}");
        assert!((e1 / e2).log2() > 1.8, "order {}", (e1 / e2).log2());
    }

    #[test]
    fn drift_is_orthogonal() {
        let (u, _) = bent_field(64, 0.3);
        let d = drift(&u);
        for (a, b) in d.values().iter().zip(u.values()) {
            assert!(a.dot(b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection() {
        let g = Grid::new(8).unwrap();
        let f = GridField::constant(g, Vec3::x() * 2.0);
        assert_eq!(project_sphere(&f).unwrap(), GridField::constant(g, Vec3::x()));
        let e = equator(g);
        let p = project_sphere(&e).unwrap();
        for (a, b) in p.values().iter().zip(e.values()) {
            assert!((a - b).norm() <= 1e-15);
        }
        let mut z = f.clone();
        z.values_mut()[3] = Vec3::new(1e-7, 0.0, 0.0);
        assert!(matches!(project_sphere(&z), Err(Error::NearZero { index: 3, .. })));
    }

    #[test]
    fn stationary_equator_step() {
        let g = Grid::new(128).unwrap();
        let d = SpaceRoughDriver::zero(g, TimeGrid::new(1e-2, 100).unwrap());
        let e = equator(g);
        let next = step_rough(&e, &d, 0, SolverOptions::default()).unwrap();
        assert!(next.sub(&e).norm(Norm::LInf) <= 1e-6);
    }

    #[test]
    fn rotation_oracle() {
        let opts = SolverOptions { drift_enabled: false, ..SolverOptions::default() };
        let exact = Vec3::new(0.0, 1f64.cos(), -1f64.sin());
        let err = |steps| {
            let d = rotation_driver(steps, 4);
            let u0 = GridField::constant(d.grid(), Vec3::y());
            let traj = solve(&u0, Input::Rough(&d), opts).unwrap();
            (traj.last().values()[0] - exact).norm()
        };
        let (e1, e2) = (err(100), err(200));
        assert!(e1 < 1e-4);
        assert!(((e1 / e2).log2() - 2.0).abs() < 0.3);
    }

    #[test]
    fn projection_keeps_unit_norm() {
        let d = rotation_driver(50, 8);
        let traj = solve(&equator(d.grid()), Input::Rough(&d), SolverOptions::default()).unwrap();
        assert!(traj.sphere_deviation() <= 1e-15);
    }

    #[test]
    fn substeps_recompose_exactly() {
        let tg = TimeGrid::new(1.0, 3).unwrap();
        let path = ModeRoughPath::piecewise_linear(tg, 3, &[0.3, -0.1, 0.2, 0.1, 0.4, -0.2, -0.3, 0.2, 0.1]);
        let grid = Grid::new(4).unwrap();
        let d = SpaceRoughDriver::lift_simple(grid, &[1.0, 0.5, 2.0, 1.5], &path).unwrap();
        let inc = d.increment(0, 3).unwrap();
        for x in 0..4 {
            let (a, aa) = split_increment(&inc.g[x], &inc.gg[x], 5);
            let (mut g, mut gg) = (a, aa);
            for _ in 1..5 {
                gg += aa + a * g;
                g += a;
            }
            assert!(crate::driver::max_entry(&(g - inc.g[x])) < 1e-14);
            assert!(crate::driver::max_entry(&(gg - inc.gg[x])) < 1e-14);
        }
    }

    #[test]
    fn explicit_scheme_step_restriction() {
        let g = Grid::new(32).unwrap();
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let opts = SolverOptions { scheme: Scheme::RoughEulerExplicit, ..SolverOptions::default() };
        assert!(solve(&equator(g), Input::Deterministic(tg), opts).is_err());
        let tg = TimeGrid::new(1e-3, 10).unwrap();
        assert!(solve(&equator(g), Input::Deterministic(tg), opts).is_ok());
    }

    #[test]
    fn smooth_step_without_input_matches_deterministic() {
        let g = Grid::new(32).unwrap();
        let u = tilted_equator(g, 0.4);
        let a = step_smooth(&u, &vec![Mat3::zeros(); 32], 1e-3, SolverOptions::default()).unwrap();
        let d = SpaceRoughDriver::zero(g, TimeGrid::new(2e-3, 2).unwrap());
        let b = step_rough(&u, &d, 0, SolverOptions::default()).unwrap();
        assert!(a.sub(&b).norm(Norm::LInf) < 1e-15);
    }

    #[test]
    fn remainder_of_one_interval_is_local_defect() {
        // drift-free, projected: u^♮ on a single interval is the projection correction only
        let d = rotation_driver(20, 4);
        let opts = SolverOptions { drift_enabled: false, project: false, ..SolverOptions::default() };
        let traj = solve(&GridField::constant(d.grid(), Vec3::y()), Input::Rough(&d), opts).unwrap();
        let r = extract_remainder(&traj, &d, 3, 4).unwrap();
        assert!(r.norm(Norm::LInf) < 1e-15);
    }

    #[test]
    fn binary_and_csv_dump() {
        let g = Grid::new(8).unwrap();
        let traj = solve(&equator(g), Input::Deterministic(TimeGrid::new(0.01, 4).unwrap()), SolverOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        traj.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 5 * 8 * 24);
        let back = Trajectory::read_binary(buf.as_slice(), traj.meta().clone()).unwrap();
        assert_eq!(back, traj);
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 5 * 8);
        assert!(text.starts_with("t,x,u1,u2,u3\n"));
    }

    #[test]
    fn step_errors_carry_node() {
        let g = Grid::new(8).unwrap();
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let mut incs = vec![DriverIncrement::zeros(8); 4];
        // 𝔾 = −I on interval 2 sends u to zero
        incs[2].gg = vec![-Mat3::identity(); 8];
        let d = SpaceRoughDriver::from_increments(g, tg, incs).unwrap();
        let opts = SolverOptions { drift_enabled: false, ..SolverOptions::default() };
        let err = solve(&equator(g), Input::Rough(&d), opts).unwrap_err();
        assert!(matches!(err, Error::Step { node: 3, .. }), "{err}");
    }
}
