use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rough_llg::experiments::{InitialCondition, Profile, Setup};
use rough_llg::llg::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    DriverCheck,
    Simulate,
    Wongzakai,
    Remainder,
    Smallnoise,
    Apriori,
    Skeleton,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::DriverCheck => "driver-check",
            Experiment::Simulate => "simulate",
            Experiment::Wongzakai => "wongzakai",
            Experiment::Remainder => "remainder",
            Experiment::Smallnoise => "smallnoise",
            Experiment::Apriori => "apriori",
            Experiment::Skeleton => "skeleton",
        }
    }
}

/// Initial condition as written in a config; `file` is resolved relative to the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialChoice {
    Equator,
    Tilted { amplitude: f64 },
    Values { values: Vec<[f64; 3]> },
    /// CSV with the last three columns holding `u1,u2,u3`; an optional header line is skipped.
    File { path: PathBuf },
}

impl Default for InitialChoice {
    fn default() -> Self {
        InitialChoice::Tilted { amplitude: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverCheckConfig {
    /// defaults to the run seed
    pub seeds: Option<Vec<u64>>,
    pub tolerance: f64,
}

impl Default for DriverCheckConfig {
    fn default() -> Self {
        DriverCheckConfig { seeds: None, tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub noise: bool,
    /// write every `stride`-th time node of the trajectory
    pub stride: usize,
    pub stationarity_tolerance: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { noise: true, stride: 1, stationarity_tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WongZakaiConfig {
    pub levels: Vec<u32>,
    pub slope_min: f64,
    pub slope_max: f64,
    pub min_r2: f64,
}

impl Default for WongZakaiConfig {
    fn default() -> Self {
        WongZakaiConfig { levels: vec![4, 5, 6, 7, 8], slope_min: 0.7, slope_max: 1.3, min_r2: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemainderConfig {
    pub min_len: usize,
    pub max_len: usize,
    /// pass if the fitted exponent is at least `3/p − slack`
    pub slack: f64,
}

impl Default for RemainderConfig {
    fn default() -> Self {
        RemainderConfig { min_len: 8, max_len: 128, slack: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmallNoiseConfig {
    pub eps: Vec<f64>,
    pub slope: f64,
    pub slope_tolerance: f64,
}

impl Default for SmallNoiseConfig {
    fn default() -> Self {
        SmallNoiseConfig { eps: vec![1.0, 0.25, 0.0625, 0.015625], slope: 0.5, slope_tolerance: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AprioriConfig {
    /// defaults to the run seed
    pub seeds: Option<Vec<u64>>,
    pub max_relative_change: f64,
}

impl Default for AprioriConfig {
    fn default() -> Self {
        AprioriConfig { seeds: None, max_relative_change: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkeletonConfig {
    pub velocity: Vec<f64>,
    pub stride: usize,
}

impl Default for SkeletonConfig {
    fn default() -> Self {
        SkeletonConfig { velocity: vec![1.0, 0.0, 0.0], stride: 1 }
    }
}

/// Contents of a TOML run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// checked against the command line when present
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub n_space: usize,
    /// `M`: the time grid has `2^M` steps
    pub level: u32,
    pub horizon: f64,
    pub q: usize,
    pub p: f64,
    pub k: usize,
    pub profile: Profile,
    pub u0: InitialChoice,
    pub solver: SolverOptions,
    pub driver_check: DriverCheckConfig,
    pub simulate: SimulateConfig,
    pub wongzakai: WongZakaiConfig,
    pub remainder: RemainderConfig,
    pub smallnoise: SmallNoiseConfig,
    pub apriori: AprioriConfig,
    pub skeleton: SkeletonConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = Setup::default();
        RunConfig {
            experiment: None,
            seed: 1,
            out: None,
            n_space: s.n_space,
            level: s.level,
            horizon: s.horizon,
            q: s.q,
            p: s.p,
            k: s.k,
            profile: s.profile,
            u0: InitialChoice::default(),
            solver: s.solver,
            driver_check: DriverCheckConfig::default(),
            simulate: SimulateConfig::default(),
            wongzakai: WongZakaiConfig::default(),
            remainder: RemainderConfig::default(),
            smallnoise: SmallNoiseConfig::default(),
            apriori: AprioriConfig::default(),
            skeleton: SkeletonConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let InitialChoice::File { path: p } = &mut cfg.u0 {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Core parameters with the initial condition resolved.
    pub fn setup(&self) -> Result<Setup> {
        let u0 = match &self.u0 {
            InitialChoice::Equator => InitialCondition::Equator,
            InitialChoice::Tilted { amplitude } => InitialCondition::Tilted { amplitude: *amplitude },
            InitialChoice::Values { values } => InitialCondition::Values { values: values.clone() },
            InitialChoice::File { path } => InitialCondition::Values { values: read_u0(path)? },
        };
        Ok(Setup {
            n_space: self.n_space,
            level: self.level,
            horizon: self.horizon,
            q: self.q,
            p: self.p,
            k: self.k,
            profile: self.profile.clone(),
            u0,
            solver: self.solver,
        })
    }

    /// Checks everything the chosen experiment will touch; nothing is computed before this passes.
    pub fn validate(&self, experiment: Experiment) -> Result<Setup> {
        if let Some(e) = self.experiment {
            if e != experiment {
                bail!("experiment: config names {} but {} was requested", e.name(), experiment.name());
            }
        }
        let setup = self.setup()?;
        setup.validate().context("invalid setup")?;
        match experiment {
            Experiment::DriverCheck => {
                positive("driver_check.tolerance", self.driver_check.tolerance)?;
                nonempty("driver_check.seeds", self.driver_check.seeds.as_deref())?;
            }
            Experiment::Simulate => {
                divides_steps("simulate.stride", self.simulate.stride, self.level)?;
                positive("simulate.stationarity_tolerance", self.simulate.stationarity_tolerance)?;
            }
            Experiment::Wongzakai => {
                let w = &self.wongzakai;
                if w.levels.len() < 3 {
                    bail!("wongzakai.levels: need at least 3 levels for a fit");
                }
                if let Some(l) = w.levels.iter().find(|&&l| l >= self.level) {
                    bail!("wongzakai.levels: level {l} is not coarser than the reference level {}", self.level);
                }
                if !(w.slope_min <= w.slope_max) {
                    bail!("wongzakai.slope_min: must not exceed slope_max");
                }
            }
            Experiment::Remainder => {
                let r = &self.remainder;
                at_least_one("remainder.min_len", r.min_len)?;
                if r.max_len < 4 * r.min_len {
                    bail!("remainder.max_len: need at least three dyadic window lengths");
                }
                if r.max_len > 1usize << self.level {
                    bail!("remainder.max_len: exceeds the {} time steps", 1usize << self.level);
                }
                if !r.min_len.is_power_of_two() || !r.max_len.is_power_of_two() {
                    bail!("remainder.min_len: window lengths must be powers of two");
                }
            }
            Experiment::Smallnoise => {
                let s = &self.smallnoise;
                if s.eps.len() < 3 {
                    bail!("smallnoise.eps: need at least 3 values");
                }
                if s.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                    bail!("smallnoise.eps: values must be positive");
                }
                positive("smallnoise.slope_tolerance", s.slope_tolerance)?;
            }
            Experiment::Apriori => {
                positive("apriori.max_relative_change", self.apriori.max_relative_change)?;
                nonempty("apriori.seeds", self.apriori.seeds.as_deref())?;
            }
            Experiment::Skeleton => {
                if self.skeleton.velocity.len() != self.q {
                    bail!("skeleton.velocity: has {} components but q = {}", self.skeleton.velocity.len(), self.q);
                }
                if self.skeleton.velocity.iter().any(|v| !v.is_finite()) {
                    bail!("skeleton.velocity: components must be finite");
                }
                divides_steps("skeleton.stride", self.skeleton.stride, self.level)?;
            }
        }
        Ok(setup)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name}: must be positive, got {v}");
    }
    Ok(())
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        bail!("{name}: must be at least 1");
    }
    Ok(())
}

fn divides_steps(name: &str, stride: usize, level: u32) -> Result<()> {
    at_least_one(name, stride)?;
    if (1usize << level) % stride != 0 {
        bail!("{name}: must divide the {} time steps", 1usize << level);
    }
    Ok(())
}

fn nonempty(name: &str, v: Option<&[u64]>) -> Result<()> {
    if v.is_some_and(|s| s.is_empty()) {
        bail!("{name}: must not be empty");
    }
    Ok(())
}

fn read_u0(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("u0.path: reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = cols.iter().map(|c| c.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() >= 3 => out.push([v[v.len() - 3], v[v.len() - 2], v[v.len() - 1]]),
            None if i == 0 => continue,
            _ => bail!("u0.path: line {} of {} is not a numeric row with at least 3 columns", i + 1, path.display()),
        }
    }
    Ok(out)
}
