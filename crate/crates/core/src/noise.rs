//! Brownian samples, their canonical piecewise-linear lifts and dyadic
//! approximations, and Cameron–Martin paths.
//!
//! Sampling is counter based: the Gaussian increment of mode `j` on interval
//! `i` is drawn from a ChaCha stream selected by `(seed, j)` and positioned
//! at a block derived from `i`, so results do not depend on evaluation order.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rough::{chen_reconstruct, TimeGrid, TwoLevel};

/// Words reserved in a ChaCha stream for one interval.
const WORDS_PER_INTERVAL: u128 = 256;

/// Increments of a `q`-dimensional Brownian motion on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BmSample {
    timegrid: TimeGrid,
    q: usize,
    seed: u64,
    /// interval-major, `steps × q`
    increments: Vec<f64>,
}

fn gaussian(seed: u64, mode: usize, interval: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mode as u64);
    rng.set_word_pos(interval as u128 * WORDS_PER_INTERVAL);
    StandardNormal.sample(&mut rng)
}

pub fn sample_bm(seed: u64, timegrid: TimeGrid, q: usize) -> Result<BmSample> {
    if q == 0 {
        return Err(Error::invalid("mode count q must be at least 1"));
    }
    let sd = timegrid.dt().sqrt();
    let increments: Vec<f64> = (0..timegrid.steps() * q)
        .into_par_iter()
        .map(|k| sd * gaussian(seed, k % q, k / q))
        .collect();
    Ok(BmSample { timegrid, q, seed, increments })
}

impl BmSample {
    pub fn from_increments(timegrid: TimeGrid, q: usize, seed: u64, increments: Vec<f64>) -> Result<Self> {
        if q == 0 || increments.len() != timegrid.steps() * q {
            return Err(Error::invalid(format!(
                "expected {} increments for q = {q}, got {}",
                timegrid.steps() * q,
                increments.len()
            )));
        }
        Ok(BmSample { timegrid, q, seed, increments })
    }

    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.q..(i + 1) * self.q]
    }

    /// Node values `β_{t_i}`, `(steps + 1) × q`, with `β_0 = 0`.
    pub fn values(&self) -> Vec<f64> {
        cumulative(&self.increments, self.q)
    }

    pub fn lift(&self) -> ModeRoughPath {
        ModeRoughPath::piecewise_linear(self.timegrid, self.q, &self.increments)
    }

    /// The same path observed every `factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<BmSample> {
        let steps = self.timegrid.steps();
        if factor == 0 || steps % factor != 0 {
            return Err(Error::invalid(format!("factor {factor} does not divide {steps} steps")));
        }
        let q = self.q;
        let increments = self
            .increments
            .chunks_exact(factor * q)
            .flat_map(|block| (0..q).map(move |j| block.iter().skip(j).step_by(q).sum::<f64>()))
            .collect();
        Ok(BmSample {
            timegrid: TimeGrid::new(self.timegrid.horizon(), steps / factor)?,
            q,
            seed: self.seed,
            increments,
        })
    }

    /// CSV dump: a `# seed=…,steps=…,q=…,horizon=…` header, then one row per interval.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# seed={},steps={},q={},horizon={:e}",
            self.seed,
            self.timegrid.steps(),
            self.q,
            self.timegrid.horizon()
        )?;
        for i in 0..self.timegrid.steps() {
            let row: Vec<String> = self.increment(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty increment file".into()))??;
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Format("missing increment header".into()))?;
        let (mut seed, mut steps, mut q, mut horizon) = (None, None, None, None);
        for kv in header.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Format(format!("bad header field {kv}")))?;
            let bad = |_| Error::Format(format!("bad header value {kv}"));
            match k.trim() {
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| Error::Format(kv.into()))?),
                "steps" => steps = Some(v.parse::<usize>().map_err(|_| Error::Format(kv.into()))?),
                "q" => q = Some(v.parse::<usize>().map_err(|_| Error::Format(kv.into()))?),
                "horizon" => horizon = Some(v.parse::<f64>().map_err(bad)?),
                other => return Err(Error::Format(format!("unknown header key {other}"))),
            }
        }
        let missing = || Error::Format("incomplete increment header".into());
        let (seed, steps, q, horizon) =
            (seed.ok_or_else(missing)?, steps.ok_or_else(missing)?, q.ok_or_else(missing)?, horizon.ok_or_else(missing)?);
        let mut increments = Vec::with_capacity(steps * q);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for v in line.split(',') {
                increments.push(v.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number {v}")))?);
            }
        }
        Self::from_increments(TimeGrid::new(horizon, steps)?, q, seed, increments)
    }
}

fn cumulative(increments: &[f64], q: usize) -> Vec<f64> {
    let steps = increments.len() / q;
    let mut out = vec![0.0; (steps + 1) * q];
    for i in 0..steps {
        for j in 0..q {
            out[(i + 1) * q + j] = out[i * q + j] + increments[i * q + j];
        }
    }
    out
}

/// `(δβ_{s,t}, ββ_{s,t})` for one pair of nodes; `second` is row-major `q × q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeIncrement {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl ModeIncrement {
    pub fn q(&self) -> usize {
        self.first.len()
    }

    /// Canonical lift of a straight segment: `ββ = ½ δβ ⊗ δβ`.
    pub fn segment(first: &[f64]) -> Self {
        let q = first.len();
        let mut second = vec![0.0; q * q];
        for i in 0..q {
            for j in 0..q {
                second[i * q + j] = 0.5 * first[i] * first[j];
            }
        }
        ModeIncrement { first: first.to_vec(), second }
    }

    /// Prepends `earlier` in place: `self ← earlier ⊗_Chen self`.
    pub fn prepend(&mut self, earlier: &ModeIncrement) {
        let q = self.q();
        for i in 0..q {
            let a = earlier.first[i];
            for j in 0..q {
                self.second[i * q + j] += earlier.second[i * q + j] + a * self.first[j];
            }
        }
        for (x, a) in self.first.iter_mut().zip(&earlier.first) {
            *x += a;
        }
    }

    /// `max_{ij} |Sym(ββ) − ½ δβ⊗δβ|`
    pub fn shuffle_defect(&self) -> f64 {
        let q = self.q();
        let mut worst: f64 = 0.0;
        for i in 0..q {
            for j in 0..q {
                let sym = 0.5 * (self.second[i * q + j] + self.second[j * q + i]);
                worst = worst.max((sym - 0.5 * self.first[i] * self.first[j]).abs());
            }
        }
        worst
    }
}

impl TwoLevel for ModeIncrement {
    fn zero_like(&self) -> Self {
        ModeIncrement { first: vec![0.0; self.first.len()], second: vec![0.0; self.second.len()] }
    }

    fn concat(&self, next: &Self) -> Self {
        let q = self.q();
        let mut second = vec![0.0; q * q];
        for i in 0..q {
            for j in 0..q {
                second[i * q + j] =
                    self.second[i * q + j] + next.second[i * q + j] + self.first[i] * next.first[j];
            }
        }
        let first = self.first.iter().zip(&next.first).map(|(a, b)| a + b).collect();
        ModeIncrement { first, second }
    }
}

/// A `q`-mode rough path stored by its per-interval generators.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRoughPath {
    timegrid: TimeGrid,
    q: usize,
    intervals: Vec<ModeIncrement>,
}

impl ModeRoughPath {
    /// Canonical lift of the piecewise-linear interpolant of the given increments.
    pub fn piecewise_linear(timegrid: TimeGrid, q: usize, increments: &[f64]) -> Self {
        assert_eq!(increments.len(), timegrid.steps() * q, "increment count does not match grid");
        let intervals = increments.chunks(q).map(ModeIncrement::segment).collect();
        ModeRoughPath { timegrid, q, intervals }
    }

    pub fn from_intervals(timegrid: TimeGrid, intervals: Vec<ModeIncrement>) -> Result<Self> {
        if intervals.len() != timegrid.steps() {
            return Err(Error::invalid("one generator per interval is required"));
        }
        let q = intervals[0].q();
        if intervals.iter().any(|m| m.first.len() != q || m.second.len() != q * q) {
            return Err(Error::invalid("generators have inconsistent mode counts"));
        }
        Ok(ModeRoughPath { timegrid, q, intervals })
    }

    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn intervals(&self) -> &[ModeIncrement] {
        &self.intervals
    }

    pub fn interval(&self, i: usize) -> &ModeIncrement {
        &self.intervals[i]
    }

    pub fn increment(&self, s: usize, t: usize) -> Result<ModeIncrement> {
        chen_reconstruct(&self.intervals, s, t)
    }

    /// `Λ_λ`: scales the levels by `(λ, λ²)`.
    pub fn dilate(&self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("dilation factor must be nonnegative, got {lambda}")));
        }
        let l2 = lambda * lambda;
        let intervals = self
            .intervals
            .iter()
            .map(|m| ModeIncrement {
                first: m.first.iter().map(|v| v * lambda).collect(),
                second: m.second.iter().map(|v| v * l2).collect(),
            })
            .collect();
        Ok(ModeRoughPath { timegrid: self.timegrid, q: self.q, intervals })
    }

    /// Path values `β_{t_i}`, `(steps + 1) × q`.
    pub fn values(&self) -> Vec<f64> {
        let flat: Vec<f64> = self.intervals.iter().flat_map(|m| m.first.iter().copied()).collect();
        cumulative(&flat, self.q)
    }
}

/// A Cameron–Martin path known at grid nodes, linear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct CameronMartinPath {
    timegrid: TimeGrid,
    q: usize,
    values: Vec<f64>,
}

impl CameronMartinPath {
    pub fn new(timegrid: TimeGrid, q: usize, values: Vec<f64>) -> Result<Self> {
        if q == 0 || values.len() != timegrid.nodes() * q {
            return Err(Error::invalid("Cameron–Martin path needs (steps + 1) × q node values"));
        }
        if values[..q].iter().any(|v| *v != 0.0) {
            return Err(Error::invalid("Cameron–Martin paths start at zero"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Cameron–Martin path has non-finite values"));
        }
        Ok(CameronMartinPath { timegrid, q, values })
    }

    /// `h(t) = t·v`.
    pub fn constant_velocity(timegrid: TimeGrid, velocity: &[f64]) -> Result<Self> {
        let q = velocity.len();
        let values = (0..timegrid.nodes())
            .flat_map(|i| {
                let t = timegrid.node(i);
                velocity.iter().map(move |v| t * v)
            })
            .collect();
        Self::new(timegrid, q, values)
    }

    pub fn timegrid(&self) -> TimeGrid {
        self.timegrid
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn increments(&self) -> Vec<f64> {
        let q = self.q;
        (0..self.timegrid.steps())
            .flat_map(|i| (0..q).map(move |j| (i, j)))
            .map(|(i, j)| self.values[(i + 1) * q + j] - self.values[i * q + j])
            .collect()
    }

    pub fn scale(&self, lambda: f64) -> Self {
        CameronMartinPath {
            timegrid: self.timegrid,
            q: self.q,
            values: self.values.iter().map(|v| v * lambda).collect(),
        }
    }

    pub fn lift(&self) -> ModeRoughPath {
        ModeRoughPath::piecewise_linear(self.timegrid, self.q, &self.increments())
    }
}

/// `𝓘(h) = ∫₀ᵀ |ḣ|² dt`, exact for the piecewise-linear interpolant.
pub fn cm_rate(h: &CameronMartinPath) -> f64 {
    let dt = h.timegrid.dt();
    h.increments().iter().map(|d| d * d).sum::<f64>() / dt
}

/// Level-`n` dyadic piecewise-linear interpolant of a sample on `2^M` steps,
/// resampled on the full grid, together with its canonical lift.
pub fn dyadic_approx(sample: &BmSample, level: u32) -> Result<(BmSample, ModeRoughPath)> {
    let tg = sample.timegrid();
    let m = tg.dyadic_level().ok_or(Error::NotDyadic { steps: tg.steps() })?;
    if level > m {
        return Err(Error::invalid(format!("dyadic level {level} exceeds sample level {m}")));
    }
    let q = sample.q;
    let block = 1usize << (m - level);
    let values = sample.values();
    let mut increments = vec![0.0; sample.increments.len()];
    for c in 0..(1usize << level) {
        let (a, b) = (c * block, (c + 1) * block);
        for j in 0..q {
            let slope = (values[b * q + j] - values[a * q + j]) / block as f64;
            for i in a..b {
                increments[i * q + j] = slope;
            }
        }
    }
    if level == m {
        increments.copy_from_slice(&sample.increments);
    }
    let approx = BmSample { timegrid: tg, q, seed: sample.seed, increments };
    let lift = approx.lift();
    Ok((approx, lift))
}
