//! Reproducible studies shared by the command-line runner and the test suites.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{apriori_report, linf_l2_distance, solution_distance, wz_rate, AprioriReport, RateFit};
use crate::driver::{driver_distance, structure_check, DriverControl, SpaceRoughDriver, StructureOptions, StructureReport};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField, Norm};
use crate::llg::{equator, solve, tilted_equator, Input, Remainders, SolverOptions, Trajectory};
use crate::noise::{cm_rate, dyadic_approx, sample_bm, BmSample, CameronMartinPath, ModeRoughPath};
use crate::rough::{dyadic_windows, TimeGrid};
use crate::Vec3;

/// Scalar noise profile `g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `mean + Σ_m cos[m−1]·cos(2πmx) + sin[m−1]·sin(2πmx)`
    Trigonometric {
        mean: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    Samples { values: Vec<f64> },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Trigonometric { mean: 1.0, cos: vec![], sin: vec![0.5] }
    }
}

impl Profile {
    pub fn sample(&self, grid: Grid) -> Result<Vec<f64>> {
        use std::f64::consts::TAU;
        let values: Vec<f64> = match self {
            Profile::Constant { value } => vec![*value; grid.len()],
            Profile::Trigonometric { mean, cos, sin } => grid
                .nodes()
                .map(|x| {
                    let c: f64 = cos.iter().enumerate().map(|(m, a)| a * (TAU * (m + 1) as f64 * x).cos()).sum();
                    let s: f64 = sin.iter().enumerate().map(|(m, b)| b * (TAU * (m + 1) as f64 * x).sin()).sum();
                    mean + c + s
                })
                .collect(),
            Profile::Samples { values } => {
                if values.len() != grid.len() {
                    return Err(Error::GridMismatch(format!(
                        "profile has {} samples for {} grid points",
                        values.len(),
                        grid.len()
                    )));
                }
                values.clone()
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("noise profile has non-finite values"));
        }
        Ok(values)
    }
}

/// Initial condition `u⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Equator,
    /// `normalize(cos 2πx, sin 2πx, amplitude·sin 4πx)`
    Tilted { amplitude: f64 },
    Values { values: Vec<[f64; 3]> },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Tilted { amplitude: 0.3 }
    }
}

impl InitialCondition {
    pub fn build(&self, grid: Grid) -> Result<GridField> {
        match self {
            InitialCondition::Equator => Ok(equator(grid)),
            InitialCondition::Tilted { amplitude } => Ok(tilted_equator(grid, *amplitude)),
            InitialCondition::Values { values } => {
                GridField::new(grid, values.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect())
            }
        }
    }
}

/// Parameters common to all studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub n_space: usize,
    /// `log2` of the number of time steps
    pub level: u32,
    pub horizon: f64,
    pub q: usize,
    pub p: f64,
    pub k: usize,
    pub profile: Profile,
    pub u0: InitialCondition,
    pub solver: SolverOptions,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            n_space: 64,
            level: 10,
            horizon: 0.1,
            q: 3,
            p: 2.5,
            k: 2,
            profile: Profile::default(),
            u0: InitialCondition::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.timegrid()?;
        if self.q == 0 {
            return Err(Error::invalid("q must be at least 1"));
        }
        if !(self.p >= 2.0 && self.p < 3.0) {
            return Err(Error::invalid(format!("p must lie in [2, 3), got {}", self.p)));
        }
        self.profile.sample(grid)?;
        let u0 = self.u0.build(grid)?;
        if !u0.is_sphere_valued(crate::grid::SPHERE_TOL) {
            return Err(Error::invalid("u0 is not sphere valued"));
        }
        self.solver.validate(grid, self.timegrid()?.dt())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n_space)
    }

    pub fn timegrid(&self) -> Result<TimeGrid> {
        if self.level > 24 {
            return Err(Error::invalid(format!("level {} is too fine", self.level)));
        }
        TimeGrid::dyadic(self.horizon, self.level)
    }

    pub fn initial(&self) -> Result<GridField> {
        self.u0.build(self.grid()?)
    }

    pub fn sample(&self, seed: u64) -> Result<BmSample> {
        sample_bm(seed, self.timegrid()?, self.q)
    }

    /// Lifts a mode path with the configured profile; `q = 3` uses `g·𝓕(·)`,
    /// other `q` use profiles `g(x)e_{j mod 3}/(1 + ⌊j/3⌋)`.
    pub fn driver(&self, path: &ModeRoughPath) -> Result<SpaceRoughDriver> {
        let grid = self.grid()?;
        let g = self.profile.sample(grid)?;
        if path.q() == 3 {
            return SpaceRoughDriver::lift_simple(grid, &g, path);
        }
        let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
        let profiles = (0..path.q())
            .map(|j| {
                let e = basis[j % 3] / (1 + j / 3) as f64;
                GridField::new(grid, g.iter().map(|gx| e * *gx).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        SpaceRoughDriver::lift_multimode(profiles, path.clone())
    }

    pub fn solve_with(&self, d: &SpaceRoughDriver) -> Result<Trajectory> {
        solve(&self.initial()?, Input::Rough(d), self.solver)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriverCheckRow {
    pub seed: u64,
    pub report: StructureReport,
}

/// Structural invariants of lifted Brownian drivers, one per seed.
pub fn driver_check(setup: &Setup, seeds: &[u64]) -> Result<Vec<DriverCheckRow>> {
    seeds
        .iter()
        .map(|&seed| {
            let d = setup.driver(&setup.sample(seed)?.lift())?;
            let report = structure_check(&d, StructureOptions { seed, ..StructureOptions::default() })?;
            Ok(DriverCheckRow { seed, report })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WzRow {
    pub level: u32,
    pub driver_distance: f64,
    pub solution_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WzResult {
    pub rows: Vec<WzRow>,
    pub fit: RateFit,
}

/// Solutions driven by dyadic piecewise-linear approximations at `levels`
/// against the solution driven by the full sample at `setup.level`.
pub fn wong_zakai(setup: &Setup, seed: u64, levels: &[u32]) -> Result<WzResult> {
    let sample = setup.sample(seed)?;
    let reference = setup.driver(&sample.lift())?;
    let u_ref = setup.solve_with(&reference)?;
    let rows = levels
        .par_iter()
        .map(|&level| {
            let (_, lift) = dyadic_approx(&sample, level)?;
            let d = setup.driver(&lift)?;
            let u = setup.solve_with(&d)?;
            Ok(WzRow {
                level,
                driver_distance: driver_distance(&d, &reference, setup.p, setup.k)?,
                solution_distance: solution_distance(&u, &u_ref)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = wz_rate(&rows.iter().map(|r| (r.driver_distance, r.solution_distance)).collect::<Vec<_>>())?;
    Ok(WzResult { rows, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRow {
    pub s: usize,
    pub t: usize,
    pub omega: f64,
    pub remainder: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderResult {
    pub windows: Vec<WindowRow>,
    /// fit through the geometric means of `(ω, ‖u^♮‖)` per window length
    pub fit: RateFit,
    /// fit through every window
    pub scatter_fit: RateFit,
    pub target: f64,
}

/// `‖u^♮_{s,t}‖_{L²}` against `ω_{𝐆,H²}(s,t)` on the dyadic windows of lengths `min_len..=max_len`.
pub fn remainder_scaling(setup: &Setup, seed: u64, min_len: usize, max_len: usize) -> Result<RemainderResult> {
    let d = setup.driver(&setup.sample(seed)?.lift())?;
    let traj = setup.solve_with(&d)?;
    let rem = Remainders::new(&traj, &d)?;
    let control = DriverControl::new(&d, setup.p, 2)?;
    let windows = dyadic_windows(setup.timegrid()?.steps(), min_len, max_len);
    let mut starts: Vec<(usize, usize)> = Vec::new();
    for &(s, t) in &windows {
        match starts.iter_mut().find(|(a, _)| *a == s) {
            Some(e) => e.1 = e.1.max(t),
            None => starts.push((s, t)),
        }
    }
    let profiles = starts
        .par_iter()
        .map(|&(s, t)| control.omega_profile(s, t).map(|p| (s, p)))
        .collect::<Result<Vec<_>>>()?;
    let rows = windows
        .par_iter()
        .map(|&(s, t)| {
            let omega = profiles.iter().find(|(a, _)| *a == s).expect("start profiled").1[t - s];
            let inc = d.increments_from(s).swap_remove(t - s);
            WindowRow { s, t, omega, remainder: rem.with_increment(s, t, &inc).norm(Norm::L(2.0)) }
        })
        .collect::<Vec<_>>();
    let scatter_fit = RateFit::fit(rows.iter().map(|r| (r.omega, r.remainder)).collect())?;
    let mut lengths: Vec<usize> = rows.iter().map(|r| r.t - r.s).collect();
    lengths.dedup();
    let means = lengths
        .iter()
        .map(|&len| {
            let group: Vec<&WindowRow> = rows.iter().filter(|r| r.t - r.s == len).collect();
            let mean = |f: fn(&WindowRow) -> f64| (group.iter().map(|r| f(r).ln()).sum::<f64>() / group.len() as f64).exp();
            (mean(|r| r.omega), mean(|r| r.remainder))
        })
        .collect();
    let fit = RateFit::fit(means)?;
    Ok(RemainderResult { windows: rows, fit, scatter_fit, target: 3.0 / setup.p })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallNoiseRow {
    pub eps: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallNoiseResult {
    pub rows: Vec<SmallNoiseRow>,
    pub fit: RateFit,
    pub decreasing: bool,
}

/// `‖u^ε − u⁰‖_{L∞(L²)}` for the dilated drivers `Λ_{√ε}𝐆`.
pub fn small_noise(setup: &Setup, seed: u64, eps: &[f64]) -> Result<SmallNoiseResult> {
    if eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("noise intensities must be positive"));
    }
    let d = setup.driver(&setup.sample(seed)?.lift())?;
    let u0 = solve(&setup.initial()?, Input::Deterministic(d.timegrid()), setup.solver)?;
    let rows = eps
        .par_iter()
        .map(|&e| {
            let u = setup.solve_with(&d.dilate(e.sqrt())?)?;
            Ok(SmallNoiseRow { eps: e, distance: linf_l2_distance(&u, &u0)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let decreasing = sorted.windows(2).all(|w| w[1].distance < w[0].distance);
    let fit = RateFit::fit(rows.iter().map(|r| (r.eps, r.distance)).collect())?;
    Ok(SmallNoiseResult { rows, fit, decreasing })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriRow {
    pub seed: u64,
    pub coarse: AprioriReport,
    pub fine: AprioriReport,
    /// `|E_fine − E_coarse| / E_coarse` for `E = sup_H1 + diss`
    pub relative_change: f64,
}

/// Energy-estimate reports at `Δt` and `Δt/2` on the same Brownian path.
pub fn apriori_study(setup: &Setup, seeds: &[u64]) -> Result<Vec<AprioriRow>> {
    let fine_setup = Setup { level: setup.level + 1, ..setup.clone() };
    seeds
        .iter()
        .map(|&seed| {
            let fine_sample = fine_setup.sample(seed)?;
            let coarse_sample = fine_sample.coarsen(2)?;
            let (dc, df) = (setup.driver(&coarse_sample.lift())?, fine_setup.driver(&fine_sample.lift())?);
            let (tc, tf) = rayon::join(|| setup.solve_with(&dc), || fine_setup.solve_with(&df));
            let coarse = apriori_report(&tc?, Some(&dc), setup.k, setup.p)?;
            let fine = apriori_report(&tf?, Some(&df), setup.k, setup.p)?;
            let relative_change = (fine.energy_bound() - coarse.energy_bound()).abs() / coarse.energy_bound();
            Ok(AprioriRow { seed, coarse, fine, relative_change })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonResult {
    pub rate: f64,
    pub trajectory: Trajectory,
}

/// Solves along the lift of the Cameron–Martin path `h(t) = t·velocity` and evaluates `𝓘(h)`.
pub fn skeleton(setup: &Setup, velocity: &[f64]) -> Result<SkeletonResult> {
    let h = CameronMartinPath::constant_velocity(setup.timegrid()?, velocity)?;
    let d = setup.driver(&h.lift())?;
    Ok(SkeletonResult { rate: cm_rate(&h), trajectory: setup.solve_with(&d)? })
}
