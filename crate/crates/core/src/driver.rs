//! Spatially modulated anti-symmetric rough drivers `(G, 𝔾)` on the torus.
//!
//! A driver stores one [`DriverIncrement`] per time interval: the matrices
//! `G_{t_i,t_{i+1}}(x)` and `𝔾_{t_i,t_{i+1}}(x)` at every grid point.
//! Values on longer intervals come from Chen reconstruction,
//! `𝔾_{s,t} = 𝔾_{s,u} + 𝔾_{u,t} + G_{u,t} G_{s,u}`.
//!
//! Drivers lifted from mode paths keep their [`ModeSource`]. With
//! `A_j(x) = 𝓕(φ_j(x))` and `B_{jk}(x) = A_k(x) A_j(x)` every pair value is
//! `G = Σ δβʲ A_j`, `𝔾 = Σ ββʲᵏ B_{jk}`, which the structure checks and the
//! metric exploit.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{sobolev_inner, sobolev_norm_sq, Grid, GridField};
use crate::noise::{ModeIncrement, ModeRoughPath};
use crate::rough::{chen_reconstruct, p_variation_pow_profile, Control, IncrementNorms, TimeGrid, TwoLevel};
use crate::{Mat3, Vec3};

const MAGIC: &[u8; 4] = b"RLGD";
const FORMAT_VERSION: u32 = 1;

/// `𝓕(ξ)`, the matrix of `v ↦ v × ξ`.
pub fn cross_matrix(xi: &Vec3) -> Mat3 {
    Mat3::new(0.0, xi.z, -xi.y, -xi.z, 0.0, xi.x, xi.y, -xi.x, 0.0)
}

/// `(𝓕⊗𝓕)[ββ] = Σ_{k,l} ββᵏˡ 𝓕(e_l) 𝓕(e_k)`.
pub fn tensor_lift(bb: &Mat3) -> Mat3 {
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    let f = basis.map(|e| cross_matrix(&e));
    let mut out = Mat3::zeros();
    for k in 0..3 {
        for l in 0..3 {
            out += bb[(k, l)] * f[l] * f[k];
        }
    }
    out
}

/// Largest absolute entry.
pub fn max_entry(m: &Mat3) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn sym(m: &Mat3) -> Mat3 {
    0.5 * (m + m.transpose())
}

/// Both driver levels on one pair of nodes, at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverIncrement {
    pub g: Vec<Mat3>,
    pub gg: Vec<Mat3>,
}

impl DriverIncrement {
    pub fn zeros(n: usize) -> Self {
        DriverIncrement { g: vec![Mat3::zeros(); n], gg: vec![Mat3::zeros(); n] }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// `(G + 𝔾) u` pointwise.
    pub fn apply(&self, u: &[Vec3]) -> Vec<Vec3> {
        u.iter().enumerate().map(|(x, v)| (self.g[x] + self.gg[x]) * v).collect()
    }

    /// `𝕃 = 𝔾 − ½G²` at every point.
    pub fn levy_area(&self) -> Vec<Mat3> {
        self.g.iter().zip(&self.gg).map(|(g, gg)| gg - 0.5 * g * g).collect()
    }

    /// `max_x ‖Sym 𝔾 − ½G²‖_max`.
    pub fn levy_defect(&self) -> f64 {
        self.g
            .iter()
            .zip(&self.gg)
            .map(|(g, gg)| max_entry(&(sym(gg) - 0.5 * g * g)))
            .fold(0.0, f64::max)
    }

    /// `max_x ‖G + Gᵀ‖_max`.
    pub fn antisymmetry_defect(&self) -> f64 {
        self.g.iter().map(|g| max_entry(&(g + g.transpose()))).fold(0.0, f64::max)
    }

    fn scale(&self, a: f64, b: f64) -> Self {
        DriverIncrement {
            g: self.g.iter().map(|m| m * a).collect(),
            gg: self.gg.iter().map(|m| m * b).collect(),
        }
    }

    fn extend_by(&mut self, next: &DriverIncrement) {
        for x in 0..self.g.len() {
            self.gg[x] += next.gg[x] + next.g[x] * self.g[x];
            self.g[x] += next.g[x];
        }
    }
}

impl TwoLevel for DriverIncrement {
    fn zero_like(&self) -> Self {
        DriverIncrement::zeros(self.g.len())
    }

    fn concat(&self, next: &Self) -> Self {
        let mut out = self.clone();
        out.extend_by(next);
        out
    }
}

/// Mode profiles `φ_j` and the mode rough path a driver was lifted from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSource {
    pub profiles: Vec<GridField>,
    pub path: ModeRoughPath,
}

impl ModeSource {
    /// `A_j(x) = 𝓕(φ_j(x))`, indexed `[j][x]`.
    pub fn first_basis(&self) -> Vec<Vec<Mat3>> {
        first_basis(&self.profiles)
    }

    /// `B_{jk}(x) = A_k(x) A_j(x)`, indexed `[j·q + k][x]`.
    pub fn second_basis(&self) -> Vec<Vec<Mat3>> {
        second_basis(&self.first_basis())
    }
}

fn first_basis(profiles: &[GridField]) -> Vec<Vec<Mat3>> {
    profiles.iter().map(|p| p.values().iter().map(cross_matrix).collect()).collect()
}

fn second_basis(a: &[Vec<Mat3>]) -> Vec<Vec<Mat3>> {
    let q = a.len();
    let n = a.first().map_or(0, Vec::len);
    (0..q * q)
        .map(|jk| {
            let (j, k) = (jk / q, jk % q);
            (0..n).map(|x| a[k][x] * a[j][x]).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceRoughDriver {
    grid: Grid,
    timegrid: TimeGrid,
    intervals: Vec<DriverIncrement>,
    source: Option<ModeSource>,
}

impl SpaceRoughDriver {
    /// `(g(x)𝓕(δβ), g(x)²(𝓕⊗𝓕)[ββ])` for a three-mode path.
    pub fn lift_simple(grid: Grid, g: &[f64], path: &ModeRoughPath) -> Result<Self> {
        if path.q() != 3 {
            return Err(Error::invalid(format!("simple lift needs q = 3, got {}", path.q())));
        }
        if g.len() != grid.len() {
            return Err(Error::GridMismatch(format!("profile has {} values for {} points", g.len(), grid.len())));
        }
        let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
        let profiles = basis
            .iter()
            .map(|e| GridField::new(grid, g.iter().map(|gx| e * *gx).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::lift_multimode(profiles, path.clone())
    }

    /// `G(x) = 𝓕(Σ φ_j(x) δβʲ)`, `𝔾(x) = Σ ββʲᵏ 𝓕(φ_k(x)) 𝓕(φ_j(x))`.
    pub fn lift_multimode(profiles: Vec<GridField>, path: ModeRoughPath) -> Result<Self> {
        let q = path.q();
        if profiles.len() != q {
            return Err(Error::invalid(format!("{} profiles for {q} modes", profiles.len())));
        }
        let grid = profiles[0].grid();
        if profiles.iter().any(|p| p.grid() != grid) {
            return Err(Error::GridMismatch("mode profiles live on different grids".into()));
        }
        let n = grid.len();
        let b = second_basis(&first_basis(&profiles));
        let intervals = path
            .intervals()
            .par_iter()
            .map(|m| {
                let mut inc = DriverIncrement::zeros(n);
                for x in 0..n {
                    let mut w = Vec3::zeros();
                    for (j, p) in profiles.iter().enumerate() {
                        w += p.values()[x] * m.first[j];
                    }
                    inc.g[x] = cross_matrix(&w);
                    let mut gg = Mat3::zeros();
                    for (jk, bjk) in b.iter().enumerate() {
                        gg += bjk[x] * m.second[jk];
                    }
                    inc.gg[x] = gg;
                }
                inc
            })
            .collect();
        Ok(SpaceRoughDriver { grid, timegrid: path.timegrid(), intervals, source: Some(ModeSource { profiles, path }) })
    }

    /// A driver given directly by its per-interval generators; it carries no mode source.
    pub fn from_increments(grid: Grid, timegrid: TimeGrid, intervals: Vec<DriverIncrement>) -> Result<Self> {
        if intervals.len() != timegrid.steps() {
            return Err(Error::invalid(format!(
                "{} generators for {} intervals",
                intervals.len(),
                timegrid.steps()
            )));
        }
        if intervals.iter().any(|i| i.g.len() != grid.len() || i.gg.len() != grid.len()) {
            return Err(Error::GridMismatch("generator size differs from grid size".into()));
        }
        if intervals.iter().any(|i| i.g.iter().chain(&i.gg).any(|m| m.iter().any(|v| !v.is_finite()))) {
            return Err(Error::invalid("driver has non-finite entries"));
        }
        Ok(SpaceRoughDriver { grid, timegrid, intervals, source: None })
    }

    pub fn zero(grid: Grid, timegrid: TimeGrid) -> Self {
        SpaceRoughDriver {
            grid,
            timegrid,
            intervals: vec![DriverIncrement::zeros(grid.len()); timegrid.steps()],
            source: None,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn intervals(&self) -> &[DriverIncrement] {
        &self.intervals
    }

    pub fn interval(&self, i: usize) -> &DriverIncrement {
        &self.intervals[i]
    }

    pub fn source(&self) -> Option<&ModeSource> {
        self.source.as_ref()
    }

    /// `(G_{s,t}, 𝔾_{s,t})` by Chen reconstruction.
    pub fn increment(&self, s: usize, t: usize) -> Result<DriverIncrement> {
        chen_reconstruct(&self.intervals, s, t)
    }

    /// Entry `t − s` holds `(G_{s,t}, 𝔾_{s,t})` for every `t ∈ [s, N]`.
    pub fn increments_from(&self, s: usize) -> Vec<DriverIncrement> {
        let n = self.grid.len();
        let mut out = Vec::with_capacity(self.intervals.len() + 1 - s);
        let mut acc = DriverIncrement::zeros(n);
        out.push(acc.clone());
        for i in s..self.intervals.len() {
            if i == s {
                acc = self.intervals[i].clone();
            } else {
                acc.extend_by(&self.intervals[i]);
            }
            out.push(acc.clone());
        }
        out
    }

    /// `Λ_λ(G, 𝔾) = (λG, λ²𝔾)`.
    pub fn dilate(&self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("dilation factor must be nonnegative, got {lambda}")));
        }
        let l2 = lambda * lambda;
        let source = match &self.source {
            Some(src) => Some(ModeSource { profiles: src.profiles.clone(), path: src.path.dilate(lambda)? }),
            None => None,
        };
        Ok(SpaceRoughDriver {
            grid: self.grid,
            timegrid: self.timegrid,
            intervals: self.intervals.iter().map(|i| i.scale(lambda, l2)).collect(),
            source,
        })
    }

    /// `𝕃_{s,t}(x) = 𝔾 − ½G²` and the symmetry defect `‖Sym 𝔾 − ½G²‖_max`.
    pub fn levy_decompose(&self, s: usize, t: usize, x: usize) -> Result<(Mat3, f64)> {
        if x >= self.grid.len() {
            return Err(Error::invalid(format!("grid index {x} out of range")));
        }
        let inc = self.increment(s, t)?;
        let (g, gg) = (inc.g[x], inc.gg[x]);
        Ok((gg - 0.5 * g * g, max_entry(&(sym(&gg) - 0.5 * g * g))))
    }

    /// `max ‖G(x) + G(x)ᵀ‖_max` over all intervals and grid points.
    pub fn antisymmetry_defect(&self) -> f64 {
        self.intervals.iter().map(DriverIncrement::antisymmetry_defect).fold(0.0, f64::max)
    }

    /// `max ‖G_{s,t}(x) + G_{s,t}(x)ᵀ‖_max` over all node pairs and grid points, via prefix sums.
    pub fn antisymmetry_defect_all_pairs(&self) -> f64 {
        let n = self.grid.len();
        let mut prefix = vec![vec![Mat3::zeros(); n]];
        for inc in &self.intervals {
            let last = prefix.last().expect("prefix is never empty");
            prefix.push(last.iter().zip(&inc.g).map(|(a, b)| a + b).collect());
        }
        let pairs = (0..prefix.len())
            .into_par_iter()
            .map(|s| {
                let mut worst: f64 = 0.0;
                for t in s + 1..prefix.len() {
                    for x in 0..n {
                        let g = prefix[t][x] - prefix[s][x];
                        worst = worst.max(max_entry(&(g + g.transpose())));
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max);
        self.antisymmetry_defect().max(pairs)
    }

    /// Binary layout, little endian: `b"RLGD"`, `u32` version, `u32` n, `u32` N,
    /// `f64` horizon, then for every interval and grid point the 9 entries of
    /// `G` followed by the 9 entries of `𝔾`, row major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.len() as u32).to_le_bytes())?;
        w.write_all(&(self.timegrid.steps() as u32).to_le_bytes())?;
        w.write_all(&self.timegrid.horizon().to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.grid.len() * 18 * 8);
        for inc in &self.intervals {
            buf.clear();
            for x in 0..self.grid.len() {
                for m in [&inc.g[x], &inc.gg[x]] {
                    for i in 0..3 {
                        for j in 0..3 {
                            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
                        }
                    }
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 24];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("not a driver file".into()));
        }
        let word = |k: usize| u32::from_le_bytes(head[k..k + 4].try_into().expect("4 bytes"));
        if word(4) != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported driver format version {}", word(4))));
        }
        let (n, steps) = (word(8) as usize, word(12) as usize);
        let horizon = f64::from_le_bytes(head[16..24].try_into().expect("8 bytes"));
        let grid = Grid::new(n)?;
        let timegrid = TimeGrid::new(horizon, steps)?;
        let mut buf = vec![0u8; n * 18 * 8];
        let mut intervals = Vec::with_capacity(steps);
        for _ in 0..steps {
            r.read_exact(&mut buf)?;
            let mut vals = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
            let mut inc = DriverIncrement::zeros(n);
            for x in 0..n {
                for m in [&mut inc.g[x], &mut inc.gg[x]] {
                    for i in 0..3 {
                        for j in 0..3 {
                            m[(i, j)] = vals.next().expect("buffer sized for one interval");
                        }
                    }
                }
            }
            intervals.push(inc);
        }
        Self::from_increments(grid, timegrid, intervals)
    }
}

/// Tuning for [`structure_check`].
#[derive(Debug, Clone, Copy)]
pub struct StructureOptions {
    /// Sourced drivers with at most this many intervals are also brute-forced
    /// pointwise over every node triple.
    pub brute_force_steps: usize,
    /// Number of `(s, u)` node pairs brute-forced pointwise (against all `t ≥ u`) otherwise.
    pub sampled_pairs: usize,
    pub seed: u64,
}

impl Default for StructureOptions {
    fn default() -> Self {
        StructureOptions { brute_force_steps: 48, sampled_pairs: 24, seed: 0 }
    }
}

/// Worst structural defects of a driver; all defects use the max-entry norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureReport {
    /// `max ‖δ𝔾_{s,u,t}(x) − G_{u,t}(x)G_{s,u}(x)‖` over all node triples and grid points.
    pub chen: f64,
    /// `max ‖Sym 𝔾_{s,t}(x) − ½G_{s,t}(x)²‖` over all node pairs and grid points.
    pub levy: f64,
    /// `max ‖G_{s,t}(x) + G_{s,t}(x)ᵀ‖` over all node pairs and grid points.
    pub antisymmetry: f64,
    /// Chen defect of the mode path itself, all triples.
    pub mode_chen: f64,
    /// Shuffle defect of the mode path itself, all pairs.
    pub mode_shuffle: f64,
    /// Largest pointwise defect seen by direct reconstruction.
    pub direct_chen: f64,
    pub direct_levy: f64,
    /// Triples covered by direct pointwise reconstruction.
    pub direct_triples: u64,
    pub exhaustive_direct: bool,
}

impl StructureReport {
    pub fn max_defect(&self) -> f64 {
        self.chen.max(self.levy).max(self.antisymmetry)
    }
}

/// Checks Chen, Lévy and anti-symmetry on every node triple, pair and grid point.
///
/// For lifted drivers the spatial dependence factors through the fixed
/// matrices `A_j`, `B_{jk}`, so the reported values are bounds built from
/// mode-level defects maximized over every triple or pair:
/// `Σ_{jk} max|Chen defect_{jk}| · max_x ‖B_{jk}‖` plus the factorization
/// defect `max ‖B_{jk} − A_k A_j‖`, the analogous shuffle bound with `Sym B_{jk}`,
/// and `Σ_j max|δβʲ| · max_x ‖A_j + A_jᵀ‖`. They are combined with direct
/// pointwise reconstruction on every triple when the driver is short and on
/// sampled `(s, u)` rows otherwise. Drivers without a source are always
/// checked directly on every triple.
pub fn structure_check(d: &SpaceRoughDriver, opts: StructureOptions) -> Result<StructureReport> {
    let steps = d.timegrid.steps();
    let Some(src) = &d.source else {
        let antisymmetry = d.antisymmetry_defect_all_pairs();
        let (chen, levy, _, triples) = direct_rows(d, (0..=steps).flat_map(|s| (s..=steps).map(move |u| (s, u))));
        return Ok(StructureReport {
            chen,
            levy,
            antisymmetry,
            mode_chen: 0.0,
            mode_shuffle: 0.0,
            direct_chen: chen,
            direct_levy: levy,
            direct_triples: triples,
            exhaustive_direct: true,
        });
    };

    let a = src.first_basis();
    let b = second_basis(&a);
    let q = a.len();
    let n = d.grid.len();
    let mut factor_defect: f64 = 0.0;
    for j in 0..q {
        for k in 0..q {
            for x in 0..n {
                factor_defect = factor_defect.max(max_entry(&(b[j * q + k][x] - a[k][x] * a[j][x])));
            }
        }
    }
    let b_max: Vec<f64> = b.iter().map(|bx| bx.iter().map(max_entry).fold(0.0, f64::max)).collect();
    let sym_max: Vec<f64> = b.iter().map(|bx| bx.iter().map(|m| max_entry(&sym(m))).fold(0.0, f64::max)).collect();
    let skew: Vec<f64> =
        a.iter().map(|ax| ax.iter().map(|m| max_entry(&(m + m.transpose()))).fold(0.0, f64::max)).collect();

    let table = ModeTable::build(&src.path);
    let chen_by_component = table.chen_scan();
    let mode_chen = chen_by_component.iter().copied().fold(0.0, f64::max);
    let chen_cert: f64 = chen_by_component.iter().zip(&b_max).map(|(d, w)| d * w).sum();
    let (mode_shuffle, levy_cert) = table.shuffle_scan(&sym_max);
    let first_max = table.first_abs_max();
    let factor_term: f64 = (0..q * q).map(|jk| first_max[jk / q] * first_max[jk % q]).sum::<f64>() * factor_defect;
    let skew_cert: f64 = first_max.iter().zip(&skew).map(|(b, a)| b * a).sum();

    let exhaustive = steps <= opts.brute_force_steps;
    let (direct_chen, direct_levy, direct_skew, direct_triples) = if exhaustive {
        direct_rows(d, (0..=steps).flat_map(|s| (s..=steps).map(move |u| (s, u))))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut pairs: Vec<(usize, usize)> = (0..opts.sampled_pairs)
            .map(|_| {
                let s = rng.random_range(0..=steps);
                let u = rng.random_range(s..=steps);
                (s, u)
            })
            .collect();
        pairs.push((0, steps / 2));
        direct_rows(d, pairs.into_iter())
    };

    Ok(StructureReport {
        chen: (chen_cert + factor_term).max(direct_chen),
        levy: levy_cert.max(direct_levy),
        antisymmetry: skew_cert.max(d.antisymmetry_defect()).max(direct_skew),
        mode_chen,
        mode_shuffle,
        direct_chen,
        direct_levy,
        direct_triples,
        exhaustive_direct: exhaustive,
    })
}

/// Pointwise Chen defects for `(s, u, t)` with every `t ≥ u`, and Lévy and
/// anti-symmetry defects on every `(s, t)` and `(u, t)` visited.
fn direct_rows(d: &SpaceRoughDriver, pairs: impl Iterator<Item = (usize, usize)>) -> (f64, f64, f64, u64) {
    let pairs: Vec<(usize, usize)> = pairs.collect();
    let mut by_s: Vec<(usize, Vec<usize>)> = Vec::new();
    for (s, u) in pairs {
        match by_s.iter_mut().find(|(k, _)| *k == s) {
            Some((_, us)) => us.push(u),
            None => by_s.push((s, vec![u])),
        }
    }
    by_s.par_iter()
        .map(|(s, us)| {
            let row_s = d.increments_from(*s);
            let mut levy: f64 = row_s.iter().map(DriverIncrement::levy_defect).fold(0.0, f64::max);
            let mut skew: f64 = row_s.iter().map(DriverIncrement::antisymmetry_defect).fold(0.0, f64::max);
            let mut chen: f64 = 0.0;
            let mut count = 0u64;
            for &u in us {
                let row_u = d.increments_from(u);
                levy = levy.max(row_u.iter().map(DriverIncrement::levy_defect).fold(0.0, f64::max));
                skew = skew.max(row_u.iter().map(DriverIncrement::antisymmetry_defect).fold(0.0, f64::max));
                let su = &row_s[u - s];
                for t in u..row_s.len() + s {
                    let st = &row_s[t - s];
                    let ut = &row_u[t - u];
                    for x in 0..st.len() {
                        let defect = st.gg[x] - su.gg[x] - ut.gg[x] - ut.g[x] * su.g[x];
                        chen = chen.max(max_entry(&defect));
                    }
                    count += 1;
                }
            }
            (chen, levy, skew, count)
        })
        .reduce(|| (0.0, 0.0, 0.0, 0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2), a.3 + b.3))
}

/// Every `(δβ_{s,t}, ββ_{s,t})` of a mode path, component-major, packed by rows `s`.
struct ModeTable {
    nodes: usize,
    q: usize,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl ModeTable {
    fn build(path: &ModeRoughPath) -> Self {
        let nodes = path.timegrid().nodes();
        let q = path.q();
        let size = nodes * (nodes + 1) / 2;
        let mut first = vec![vec![0.0; size]; q];
        let mut second = vec![vec![0.0; size]; q * q];
        for s in 0..nodes {
            let base = Self::row_start(nodes, s);
            let mut acc: Option<ModeIncrement> = None;
            for t in s + 1..nodes {
                let next = path.interval(t - 1);
                let cur = match acc {
                    None => next.clone(),
                    Some(a) => a.concat(next),
                };
                for i in 0..q {
                    first[i][base + t - s] = cur.first[i];
                }
                for c in 0..q * q {
                    second[c][base + t - s] = cur.second[c];
                }
                acc = Some(cur);
            }
        }
        ModeTable { nodes, q, first, second }
    }

    fn row_start(nodes: usize, s: usize) -> usize {
        s * nodes - s * s.saturating_sub(1) / 2
    }

    /// Per component `c = (i, j)`, the largest `|δββᶜ_{s,u,t} − δβⁱ_{s,u} δβʲ_{u,t}|` over all triples.
    ///
    /// Tiled over `(s, u, t)` blocks so the rows in use stay cache resident.
    fn chen_scan(&self) -> Vec<f64> {
        const S_BLOCK: usize = 16;
        const T_BLOCK: usize = 128;
        let (nodes, q) = (self.nodes, self.q);
        let s_blocks: Vec<usize> = (0..nodes).step_by(S_BLOCK).collect();
        s_blocks
            .into_par_iter()
            .map(|s0| {
                let s1 = (s0 + S_BLOCK).min(nodes);
                let mut worst = vec![0.0; q * q];
                for t0 in (s0..nodes).step_by(T_BLOCK) {
                    let t1 = (t0 + T_BLOCK).min(nodes);
                    for u0 in (s0..t1).step_by(S_BLOCK) {
                        for s in s0..s1 {
                            let rs = Self::row_start(nodes, s);
                            for u in u0.max(s)..(u0 + S_BLOCK).min(t1) {
                                let lo = u.max(t0);
                                let len = t1 - lo;
                                let ru = Self::row_start(nodes, u);
                                let (st_off, ut_off, su_idx) = (rs + lo - s, ru + lo - u, rs + u - s);
                                for i in 0..q {
                                    let b_su = self.first[i][su_idx];
                                    for j in 0..q {
                                        let c = i * q + j;
                                        let m = chen_row_max(
                                            &self.second[c][st_off..st_off + len],
                                            &self.second[c][ut_off..ut_off + len],
                                            &self.first[j][ut_off..ut_off + len],
                                            self.second[c][su_idx],
                                            b_su,
                                        );
                                        if m > worst[c] {
                                            worst[c] = m;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                worst
            })
            .reduce(|| vec![0.0; q * q], |a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect())
    }

    /// Returns the raw shuffle defect and the weighted bound, both maximized over pairs.
    fn shuffle_scan(&self, weights: &[f64]) -> (f64, f64) {
        let q = self.q;
        let size = self.first[0].len();
        let mut raw: f64 = 0.0;
        let mut cert: f64 = 0.0;
        for p in 0..size {
            let mut sum = 0.0;
            for i in 0..q {
                for j in 0..q {
                    let symm = 0.5 * (self.second[i * q + j][p] + self.second[j * q + i][p]);
                    let defect = (symm - 0.5 * self.first[i][p] * self.first[j][p]).abs();
                    raw = raw.max(defect);
                    sum += weights[i * q + j] * defect;
                }
            }
            cert = cert.max(sum);
        }
        (raw, cert)
    }

    fn first_abs_max(&self) -> Vec<f64> {
        self.first.iter().map(|c| c.iter().fold(0.0f64, |a, v| a.max(v.abs()))).collect()
    }
}

/// `max_k |st_k − su − ut_k − b_su·b_k|` with four independent accumulators.
#[inline]
fn chen_row_max(st: &[f64], ut: &[f64], b_ut: &[f64], su: f64, b_su: f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let (a, b, c) = (st.chunks_exact(4), ut.chunks_exact(4), b_ut.chunks_exact(4));
    let tail = a.remainder().iter().zip(b.remainder()).zip(c.remainder());
    for ((x, y), z) in a.zip(b).zip(c) {
        for l in 0..4 {
            let d = (x[l] - su - y[l] - b_su * z[l]).abs();
            acc[l] = if d > acc[l] { d } else { acc[l] };
        }
    }
    for ((x, y), z) in tail {
        let d = (x - su - y - b_su * z).abs();
        acc[0] = if d > acc[0] { d } else { acc[0] };
    }
    acc[0].max(acc[1]).max(acc[2].max(acc[3]))
}

/// Which level of a driver a norm or control refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    First,
    Second,
}

/// `‖X_{s,t} − Y_{s,t}‖_{Hᵏ}` for one level of two drivers (or of one driver
/// against zero), the spatial norm being the entrywise root sum of squares.
pub struct LevelNorms<'a> {
    route: Route<'a>,
    nodes: usize,
}

enum Route<'a> {
    Gram {
        paths: Vec<(&'a ModeRoughPath, f64)>,
        offsets: Vec<usize>,
        gram: Vec<f64>,
        level: Level,
    },
    Direct {
        a: &'a SpaceRoughDriver,
        b: Option<&'a SpaceRoughDriver>,
        level: Level,
        k: usize,
    },
}

fn matrix_field_gram(basis: &[Vec<Mat3>], h: f64, k: usize) -> Vec<f64> {
    let m = basis.len();
    let entries: Vec<Vec<Vec<f64>>> = basis
        .iter()
        .map(|f| (0..9).map(|e| f.iter().map(|mat| mat[(e / 3, e % 3)]).collect()).collect())
        .collect();
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let v: f64 = (0..9).map(|e| sobolev_inner(&entries[i][e], &entries[j][e], h, k)).sum();
            gram[i * m + j] = v;
            gram[j * m + i] = v;
        }
    }
    gram
}

/// Squared entrywise `Hᵏ` norm of a matrix field.
pub fn matrix_field_norm_sq(field: &[Mat3], h: f64, k: usize) -> f64 {
    (0..9)
        .map(|e| {
            let vals: Vec<f64> = field.iter().map(|m| m[(e / 3, e % 3)]).collect();
            sobolev_norm_sq(&vals, h, k)
        })
        .sum()
}

impl<'a> LevelNorms<'a> {
    /// Uses the mode factorization when both drivers carry a source, pointwise reconstruction otherwise.
    pub fn new(a: &'a SpaceRoughDriver, b: Option<&'a SpaceRoughDriver>, level: Level, k: usize) -> Result<Self> {
        if let Some(b) = b {
            check_compatible(a, b)?;
        }
        let sources: Option<Vec<&ModeSource>> = std::iter::once(Some(a)).chain(b.map(Some)).map(|d| d.and_then(|d| d.source())).collect();
        let nodes = a.timegrid.nodes();
        match sources {
            Some(srcs) => {
                let h = a.grid.spacing();
                let same = srcs.len() == 2 && srcs[0].profiles == srcs[1].profiles;
                let mut paths: Vec<(&ModeRoughPath, f64)> = Vec::new();
                let mut bases: Vec<Vec<Mat3>> = Vec::new();
                let mut offsets = Vec::new();
                for (i, src) in srcs.iter().enumerate() {
                    let sign = if i == 0 { 1.0 } else { -1.0 };
                    paths.push((&src.path, sign));
                    if i == 0 || !same {
                        offsets.push(bases.len());
                        let fb = src.first_basis();
                        match level {
                            Level::First => bases.extend(fb),
                            Level::Second => bases.extend(second_basis(&fb)),
                        }
                    } else {
                        offsets.push(0);
                    }
                }
                let gram = matrix_field_gram(&bases, h, k);
                Ok(LevelNorms { route: Route::Gram { paths, offsets, gram, level }, nodes })
            }
            None => Ok(LevelNorms::direct(a, b, level, k)),
        }
    }

    /// Always reconstructs pointwise; exposed as an independent route.
    pub fn direct(a: &'a SpaceRoughDriver, b: Option<&'a SpaceRoughDriver>, level: Level, k: usize) -> Self {
        LevelNorms { route: Route::Direct { a, b, level, k }, nodes: a.timegrid.nodes() }
    }
}

fn check_compatible(a: &SpaceRoughDriver, b: &SpaceRoughDriver) -> Result<()> {
    if a.grid != b.grid || a.timegrid != b.timegrid {
        return Err(Error::GridMismatch(format!(
            "drivers on (n = {}, N = {}) and (n = {}, N = {})",
            a.grid.len(),
            a.timegrid.steps(),
            b.grid.len(),
            b.timegrid.steps()
        )));
    }
    Ok(())
}

impl IncrementNorms for LevelNorms<'_> {
    fn nodes(&self) -> usize {
        self.nodes
    }

    fn norms_to(&self, start: usize, t: usize, out: &mut [f64]) {
        match &self.route {
            Route::Gram { paths, offsets, gram, level } => {
                let dim = (gram.len() as f64).sqrt().round() as usize;
                let mut acc: Vec<ModeIncrement> = paths.iter().map(|(p, _)| p.interval(t - 1).clone()).collect();
                let mut coef = vec![0.0; dim];
                for s in (start..t).rev() {
                    if s + 1 < t {
                        for (a, (p, _)) in acc.iter_mut().zip(paths) {
                            a.prepend(p.interval(s));
                        }
                    }
                    coef.fill(0.0);
                    for ((a, (_, sign)), off) in acc.iter().zip(paths).zip(offsets) {
                        let src = match level {
                            Level::First => &a.first,
                            Level::Second => &a.second,
                        };
                        for (c, v) in coef[*off..*off + src.len()].iter_mut().zip(src) {
                            *c += sign * v;
                        }
                    }
                    let mut quad = 0.0;
                    for i in 0..dim {
                        if coef[i] == 0.0 {
                            continue;
                        }
                        let row = &gram[i * dim..(i + 1) * dim];
                        let mut r = 0.0;
                        for j in 0..dim {
                            r += row[j] * coef[j];
                        }
                        quad += coef[i] * r;
                    }
                    out[s - start] = quad.max(0.0).sqrt();
                }
            }
            Route::Direct { a, b, level, k } => {
                let h = a.grid.spacing();
                let mut acc_a: Option<DriverIncrement> = None;
                let mut acc_b: Option<DriverIncrement> = None;
                for s in (start..t).rev() {
                    let prepend = |acc: &mut Option<DriverIncrement>, d: &SpaceRoughDriver| {
                        let earlier = d.interval(s);
                        *acc = Some(match acc.take() {
                            None => earlier.clone(),
                            Some(later) => earlier.concat(&later),
                        });
                    };
                    prepend(&mut acc_a, a);
                    if let Some(b) = b {
                        prepend(&mut acc_b, b);
                    }
                    let xa = acc_a.as_ref().expect("just set");
                    let pick = |inc: &DriverIncrement| match level {
                        Level::First => inc.g.clone(),
                        Level::Second => inc.gg.clone(),
                    };
                    let mut diff = pick(xa);
                    if let Some(xb) = &acc_b {
                        for (d, v) in diff.iter_mut().zip(pick(xb)) {
                            *d -= v;
                        }
                    }
                    out[s - start] = matrix_field_norm_sq(&diff, h, *k).sqrt();
                }
            }
        }
    }
}

/// `‖G¹ − G²‖_{𝒱ᵖ₂(Hᵏ)} + ‖𝔾¹ − 𝔾²‖_{𝒱^{p/2}₂(Hᵏ)}` over the whole time grid.
pub fn driver_distance(a: &SpaceRoughDriver, b: &SpaceRoughDriver, p: f64, k: usize) -> Result<f64> {
    distance_with(LevelNorms::new(a, Some(b), Level::First, k)?, LevelNorms::new(a, Some(b), Level::Second, k)?, p)
}

/// The same metric computed by pointwise reconstruction only.
pub fn driver_distance_direct(a: &SpaceRoughDriver, b: &SpaceRoughDriver, p: f64, k: usize) -> Result<f64> {
    check_compatible(a, b)?;
    distance_with(
        LevelNorms::direct(a, Some(b), Level::First, k),
        LevelNorms::direct(a, Some(b), Level::Second, k),
        p,
    )
}

fn distance_with(first: LevelNorms<'_>, second: LevelNorms<'_>, p: f64) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::invalid(format!("driver metric needs p ≥ 2, got {p}")));
    }
    let last = first.nodes - 1;
    let (v1, v2) = rayon::join(
        || p_variation_pow_profile(&first, p, 0, last),
        || p_variation_pow_profile(&second, p / 2.0, 0, last),
    );
    let v1 = *v1?.last().expect("nonempty");
    let v2 = *v2?.last().expect("nonempty");
    Ok(v1.powf(1.0 / p) + v2.powf(2.0 / p))
}

/// `ω_G = ‖G‖ᵖ_{p-var}`, `ω_𝔾 = ‖𝔾‖^{p/2}_{p/2-var}` and
/// `ω_𝐆 = ω_G + ω_𝔾 + ω_G²` of one driver in `Hᵏ`.
pub struct DriverControl<'a> {
    first: LevelNorms<'a>,
    second: LevelNorms<'a>,
    p: f64,
}

impl<'a> DriverControl<'a> {
    pub fn new(d: &'a SpaceRoughDriver, p: f64, k: usize) -> Result<Self> {
        if !(p >= 2.0) {
            return Err(Error::invalid(format!("driver control needs p ≥ 2, got {p}")));
        }
        Ok(DriverControl {
            first: LevelNorms::new(d, None, Level::First, k)?,
            second: LevelNorms::new(d, None, Level::Second, k)?,
            p,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn omega_first(&self, s: usize, t: usize) -> f64 {
        *p_variation_pow_profile(&self.first, self.p, s, t).expect("valid pair").last().expect("nonempty")
    }

    pub fn omega_second(&self, s: usize, t: usize) -> f64 {
        *p_variation_pow_profile(&self.second, self.p / 2.0, s, t).expect("valid pair").last().expect("nonempty")
    }

    /// `ω_𝐆(s, s + j)` for every `j ≤ t − s`, from one pass of each dynamic programme.
    pub fn omega_profile(&self, s: usize, t: usize) -> Result<Vec<f64>> {
        let (a, b) = rayon::join(
            || p_variation_pow_profile(&self.first, self.p, s, t),
            || p_variation_pow_profile(&self.second, self.p / 2.0, s, t),
        );
        Ok(a?.iter().zip(b?).map(|(wg, wgg)| wg + wgg + wg * wg).collect())
    }
}

impl Control for DriverControl<'_> {
    fn omega(&self, s: usize, t: usize) -> f64 {
        let wg = self.omega_first(s, t);
        wg + self.omega_second(s, t) + wg * wg
    }
}
