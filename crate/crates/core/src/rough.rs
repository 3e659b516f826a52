//! Two-index maps on a uniform time grid: increments and their defects,
//! Chen composition of two-level objects, p-variation by dynamic
//! programming, controls, and compensated Riemann sums.

use std::ops::Sub;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[0, T]` into `N` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::invalid(format!("time grid needs at least 2 steps, got {steps}")));
        }
        Ok(TimeGrid { horizon, steps })
    }

    /// Time grid with `2^level` steps.
    pub fn dyadic(horizon: f64, level: u32) -> Result<Self> {
        Self::new(horizon, 1usize << level)
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    /// `log2(N)` when `N` is a power of two.
    pub fn dyadic_level(&self) -> Option<u32> {
        self.steps.is_power_of_two().then(|| self.steps.trailing_zeros())
    }
}

/// Two-level objects that compose by Chen's rule.
///
/// `concat` glues `self` on `[s, u]` with `next` on `[u, t]`.
pub trait TwoLevel: Clone {
    /// Neutral element with the same shape as `self`.
    fn zero_like(&self) -> Self;
    fn concat(&self, next: &Self) -> Self;
}

/// Scalar two-level pair with `𝔾_{s,t} = 𝔾_{s,u} + 𝔾_{u,t} + G_{u,t}·G_{s,u}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarPair {
    pub first: f64,
    pub second: f64,
}

impl TwoLevel for ScalarPair {
    fn zero_like(&self) -> Self {
        ScalarPair { first: 0.0, second: 0.0 }
    }

    fn concat(&self, next: &Self) -> Self {
        ScalarPair {
            first: self.first + next.first,
            second: self.second + next.second + next.first * self.first,
        }
    }
}

/// Composes consecutive generators over nodes `s..t`, left to right.
pub fn chen_reconstruct<T: TwoLevel>(generators: &[T], s: usize, t: usize) -> Result<T> {
    if s > t || t > generators.len() {
        return Err(Error::BadInterval { s, t });
    }
    let first = generators
        .first()
        .ok_or_else(|| Error::invalid("no generators to reconstruct from"))?;
    if s == t {
        return Ok(first.zero_like());
    }
    let mut acc = generators[s].clone();
    for g in &generators[s + 1..t] {
        acc = acc.concat(g);
    }
    Ok(acc)
}

/// Densely stored two-index map `V_{s,t}` for nodes `s ≤ t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoIndexMap<V> {
    nodes: usize,
    entries: Vec<V>,
}

impl<V: Clone> TwoIndexMap<V> {
    pub fn from_fn(nodes: usize, mut f: impl FnMut(usize, usize) -> V) -> Self {
        let mut entries = Vec::with_capacity(nodes * (nodes + 1) / 2);
        for s in 0..nodes {
            for t in s..nodes {
                entries.push(f(s, t));
            }
        }
        TwoIndexMap { nodes, entries }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    #[inline]
    fn index(&self, s: usize, t: usize) -> usize {
        // row s starts after Σ_{r<s} (nodes − r) entries
        s * self.nodes - s * s.saturating_sub(1) / 2 + (t - s)
    }

    pub fn get(&self, s: usize, t: usize) -> &V {
        assert!(s <= t && t < self.nodes, "pair ({s}, {t}) out of range");
        &self.entries[self.index(s, t)]
    }
}

/// `δg_{s,t} = g_t − g_s`.
pub fn delta2<V>(path: &[V]) -> TwoIndexMap<V>
where
    V: Clone + Sub<Output = V>,
{
    TwoIndexMap::from_fn(path.len(), |s, t| path[t].clone() - path[s].clone())
}

/// `δG_{s,u,t} = G_{s,t} − G_{s,u} − G_{u,t}`.
pub fn delta3<V>(map: &TwoIndexMap<V>, s: usize, u: usize, t: usize) -> V
where
    V: Clone + Sub<Output = V>,
{
    assert!(s <= u && u <= t, "triple must be ordered");
    map.get(s, t).clone() - map.get(s, u).clone() - map.get(u, t).clone()
}

/// Source of increment norms `‖X_{s,t}‖` between grid nodes.
///
/// `norms_to(start, t, out)` must fill `out[s - start]` for every
/// `s ∈ [start, t)`. Implementations typically build `X_{s,t}` by
/// prepending intervals while walking `s` downwards.
pub trait IncrementNorms {
    fn nodes(&self) -> usize;
    fn norms_to(&self, start: usize, t: usize, out: &mut [f64]);
}

/// Adaptor turning a closure `(s, t) -> ‖X_{s,t}‖` into [`IncrementNorms`].
pub struct FnNorms<F> {
    nodes: usize,
    f: F,
}

impl<F: Fn(usize, usize) -> f64> FnNorms<F> {
    pub fn new(nodes: usize, f: F) -> Self {
        FnNorms { nodes, f }
    }
}

impl<F: Fn(usize, usize) -> f64> IncrementNorms for FnNorms<F> {
    fn nodes(&self) -> usize {
        self.nodes
    }

    fn norms_to(&self, start: usize, t: usize, out: &mut [f64]) {
        for s in start..t {
            out[s - start] = (self.f)(s, t);
        }
    }
}

/// Scalar path viewed through its increments `|x_t − x_s|`.
pub struct ScalarIncrements<'a>(pub &'a [f64]);

impl IncrementNorms for ScalarIncrements<'_> {
    fn nodes(&self) -> usize {
        self.0.len()
    }

    fn norms_to(&self, start: usize, t: usize, out: &mut [f64]) {
        let xt = self.0[t];
        for s in start..t {
            out[s - start] = (xt - self.0[s]).abs();
        }
    }
}

/// `sup_π Σ ‖X_{t_i,t_{i+1}}‖ᵖ` over partitions of `[s, t]` by grid nodes.
///
/// Dynamic programme `V[j] = max_{i<j} V[i] + ‖X_{t_i,t_j}‖ᵖ`, `O((t−s)²)`.
pub fn p_variation_pow<X: IncrementNorms + ?Sized>(x: &X, p: f64, s: usize, t: usize) -> Result<f64> {
    Ok(*p_variation_pow_profile(x, p, s, t)?.last().expect("profile is never empty"))
}

/// The whole dynamic programme: entry `j` is the `p`-th power variation over `[s, s + j]`.
pub fn p_variation_pow_profile<X: IncrementNorms + ?Sized>(x: &X, p: f64, s: usize, t: usize) -> Result<Vec<f64>> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("p-variation needs p ≥ 1, got {p}")));
    }
    if s > t || t >= x.nodes() {
        return Err(Error::BadInterval { s, t });
    }
    let len = t - s;
    let mut best = vec![0.0; len + 1];
    let mut norms = vec![0.0; len];
    for j in 1..=len {
        x.norms_to(s, s + j, &mut norms[..j]);
        let mut v = f64::NEG_INFINITY;
        for i in 0..j {
            let cand = best[i] + pow_p(norms[i], p);
            if cand > v {
                v = cand;
            }
        }
        best[j] = v;
    }
    Ok(best)
}

#[inline]
fn pow_p(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 1.0 {
        x
    } else if x == 0.0 {
        0.0
    } else {
        x.powf(p)
    }
}

/// `‖X‖_{p-var; [s,t]}` restricted to grid-node partitions.
pub fn p_variation<X: IncrementNorms + ?Sized>(x: &X, p: f64, s: usize, t: usize) -> Result<f64> {
    Ok(p_variation_pow(x, p, s, t)?.powf(1.0 / p))
}

/// A control `ω(s, t)` on grid nodes.
pub trait Control {
    fn omega(&self, s: usize, t: usize) -> f64;
}

impl<F: Fn(usize, usize) -> f64> Control for F {
    fn omega(&self, s: usize, t: usize) -> f64 {
        self(s, t)
    }
}

/// `ω(s,t) = ‖X‖ᵖ_{p-var; [s,t]}`, superadditive by construction.
pub struct PVarControl<'a, X: ?Sized> {
    source: &'a X,
    p: f64,
}

pub fn control_from_pvar<X: IncrementNorms + ?Sized>(source: &X, p: f64) -> Result<PVarControl<'_, X>> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("p-variation needs p ≥ 1, got {p}")));
    }
    Ok(PVarControl { source, p })
}

impl<X: IncrementNorms + ?Sized> Control for PVarControl<'_, X> {
    fn omega(&self, s: usize, t: usize) -> f64 {
        p_variation_pow(self.source, self.p, s, t).expect("control evaluated on a valid pair")
    }
}

/// Values a germ can take: a normed vector space.
pub trait Linear: Clone {
    fn zero_like(&self) -> Self;
    fn plus(&self, other: &Self) -> Self;
    fn minus(&self, other: &Self) -> Self;
    fn magnitude(&self) -> f64;
}

impl Linear for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn minus(&self, other: &Self) -> Self {
        self - other
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

/// A two-index germ `H_{s,t}` on grid nodes.
pub trait Germ {
    type Value: Linear;
    fn eval(&self, s: usize, t: usize) -> Self::Value;
}

impl<V: Linear, F: Fn(usize, usize) -> V> Germ for F {
    type Value = V;
    fn eval(&self, s: usize, t: usize) -> V {
        self(s, t)
    }
}

/// Result of sewing a germ: the grid-level compensated Riemann sum.
#[derive(Debug, Clone)]
pub struct Sewn<V> {
    path: Vec<V>,
}

/// `𝓘_{t_j} = Σ_{i<j} H_{t_i, t_{i+1}}` on `nodes` grid nodes.
pub fn sew<G: Germ>(germ: &G, nodes: usize) -> Result<Sewn<G::Value>> {
    if nodes < 2 {
        return Err(Error::invalid("sewing needs at least two nodes"));
    }
    let first = germ.eval(0, 1);
    let mut path = Vec::with_capacity(nodes);
    path.push(first.zero_like());
    path.push(first);
    for i in 1..nodes - 1 {
        let next = path[i].plus(&germ.eval(i, i + 1));
        path.push(next);
    }
    Ok(Sewn { path })
}

impl<V: Linear> Sewn<V> {
    pub fn path(&self) -> &[V] {
        &self.path
    }

    pub fn increment(&self, s: usize, t: usize) -> V {
        self.path[t].minus(&self.path[s])
    }

    /// `𝓘^♮_{s,t} = (𝓘_t − 𝓘_s) − H_{s,t}`.
    pub fn remainder<G: Germ<Value = V>>(&self, germ: &G, s: usize, t: usize) -> V {
        self.increment(s, t).minus(&germ.eval(s, t))
    }

    /// `max ‖𝓘^♮_{s,t}‖ / ω(s,t)^ζ` over the supplied windows (windows with `ω = 0` are skipped).
    pub fn remainder_ratio<G, C>(&self, germ: &G, windows: &[(usize, usize)], control: &C, zeta: f64) -> f64
    where
        G: Germ<Value = V>,
        C: Control + ?Sized,
    {
        windows
            .iter()
            .filter_map(|&(s, t)| {
                let w = control.omega(s, t);
                (w > 0.0).then(|| self.remainder(germ, s, t).magnitude() / w.powf(zeta))
            })
            .fold(0.0, f64::max)
    }
}

/// Aligned dyadic windows `[k·2^m, (k+1)·2^m]` covering `0..steps` for
/// every `m` with `min_len ≤ 2^m ≤ max_len`.
pub fn dyadic_windows(steps: usize, min_len: usize, max_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut len = min_len.max(1).next_power_of_two();
    while len <= max_len.min(steps) {
        let mut s = 0;
        while s + len <= steps {
            out.push((s, s + len));
            s += len;
        }
        len *= 2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_pvar(path: &[f64], p: f64) -> f64 {
        // enumerate all subsets of interior nodes
        let n = path.len();
        let interior = n.saturating_sub(2);
        let mut best: f64 = 0.0;
        for mask in 0u32..(1u32 << interior) {
            let mut last = 0;
            let mut sum = 0.0;
            for k in 0..interior {
                if mask & (1 << k) != 0 {
                    sum += (path[k + 1] - path[last]).abs().powf(p);
                    last = k + 1;
                }
            }
            sum += (path[n - 1] - path[last]).abs().powf(p);
            best = best.max(sum);
        }
        best.powf(1.0 / p)
    }

    #[test]
    fn timegrid_nodes() {
        let tg = TimeGrid::new(2.0, 8).unwrap();
        assert_eq!(tg.node(0), 0.0);
        assert_eq!(tg.node(8), 2.0);
        assert_eq!(tg.dt(), 0.25);
        assert_eq!(tg.dyadic_level(), Some(3));
        assert_eq!(TimeGrid::new(1.0, 6).unwrap().dyadic_level(), None);
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(-1.0, 4).is_err());
    }

    #[test]
    fn two_index_map_indexing() {
        let m = TwoIndexMap::from_fn(6, |s, t| (s * 10 + t) as f64);
        for s in 0..6 {
            for t in s..6 {
                assert_eq!(*m.get(s, t), (s * 10 + t) as f64);
            }
        }
    }

    #[test]
    fn delta2_of_linear_and_constant() {
        let lin = [0.0, 0.5, 1.0];
        let d = delta2(&lin);
        assert_eq!(*d.get(0, 2), 1.0);
        assert_eq!(*d.get(0, 1), 0.5);
        let c = delta2(&[3.0; 5]);
        for s in 0..5 {
            for t in s..5 {
                assert_eq!(*c.get(s, t), 0.0);
            }
        }
    }

    #[test]
    fn delta_of_increment_vanishes() {
        let path: [f64; 6] = [0.3, -1.2, 4.0, 2.2, 0.1, 7.5];
        let d = delta2(&path);
        for s in 0..6 {
            for u in s..6 {
                for t in u..6 {
                    assert!(delta3(&d, s, u, t).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn chen_two_intervals_matches_order() {
        let gens = [ScalarPair { first: 2.0, second: 0.5 }, ScalarPair { first: 3.0, second: -1.0 }];
        let r = chen_reconstruct(&gens, 0, 2).unwrap();
        assert_eq!(r.first, 5.0);
        assert_eq!(r.second, 0.5 - 1.0 + 3.0 * 2.0);
        assert_eq!(chen_reconstruct(&gens, 1, 2).unwrap(), gens[1]);
        assert_eq!(chen_reconstruct(&gens, 1, 1).unwrap().first, 0.0);
        assert!(chen_reconstruct(&gens, 2, 1).is_err());
        assert!(chen_reconstruct(&gens, 0, 3).is_err());
    }

    #[test]
    fn pvar_examples() {
        let p = |path: &[f64], p: f64| p_variation(&ScalarIncrements(path), p, 0, path.len() - 1).unwrap();
        assert_eq!(p(&[0.0, 1.0, 2.0], 1.0), 2.0);
        assert!((p(&[0.0, 1.0, 0.0], 2.0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((p(&[0.0, 1.0, 2.0], 2.0) - 2.0).abs() < 1e-15);
        assert!(p_variation(&ScalarIncrements(&[0.0, 1.0]), 0.5, 0, 1).is_err());
    }

    #[test]
    fn pvar_matches_brute_force_small() {
        let path = [0.0, 0.7, -0.2, 1.5, 1.1, -0.4, 0.9, 2.0];
        for p in [1.0, 1.5, 2.0, 2.5, 3.0] {
            let dp = p_variation(&ScalarIncrements(&path), p, 0, path.len() - 1).unwrap();
            let bf = brute_force_pvar(&path, p);
            assert!((dp - bf).abs() <= 1e-12 * bf.max(1.0), "p={p}: {dp} vs {bf}");
        }
    }

    #[test]
    fn control_is_superadditive() {
        let path = [0.0, 0.7, -0.2, 1.5, 1.1, -0.4, 0.9, 2.0, 1.0];
        let src = ScalarIncrements(&path);
        let w = control_from_pvar(&src, 2.5).unwrap();
        for s in 0..path.len() {
            assert_eq!(w.omega(s, s), 0.0);
            for u in s..path.len() {
                for t in u..path.len() {
                    assert!(w.omega(s, u) + w.omega(u, t) <= w.omega(s, t) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn sewing_exact_increment() {
        let g = [0.0, 1.5, 0.25, -3.0, 2.0];
        let germ = |s: usize, t: usize| g[t] - g[s];
        let sewn = sew(&germ, g.len()).unwrap();
        for (i, v) in sewn.path().iter().enumerate() {
            assert!((v - (g[i] - g[0])).abs() < 1e-15);
        }
        for s in 0..g.len() {
            for t in s..g.len() {
                assert!(sewn.remainder(&germ, s, t).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sewing_left_riemann_second_order_remainder() {
        // H_{s,t} = (t − s) f(s) with f = cos; 𝓘 approximates sin
        let steps = 1024;
        let tg = TimeGrid::new(1.0, steps).unwrap();
        let germ = |s: usize, t: usize| (tg.node(t) - tg.node(s)) * tg.node(s).cos();
        let sewn = sew(&germ, tg.nodes()).unwrap();
        let err = (sewn.path()[steps] - 1f64.sin()).abs();
        assert!(err < 1e-3 && err > 1e-5, "left Riemann error {err}");

        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for len in [16, 32, 64, 128] {
            let r = sewn.remainder(&germ, 256, 256 + len).abs();
            xs.push((len as f64).ln());
            ys.push(r.ln());
        }
        let slope = (ys[3] - ys[0]) / (xs[3] - xs[0]);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn sewing_is_additive() {
        let germ = |s: usize, t: usize| ((s * 7 + t * 3) % 5) as f64 - 2.0;
        let sewn = sew(&germ, 12).unwrap();
        for s in 0..12 {
            for th in s..12 {
                for t in th..12 {
                    let lhs = sewn.increment(s, th) + sewn.increment(th, t);
                    assert_eq!(lhs, sewn.increment(s, t));
                }
            }
        }
    }

    #[test]
    fn dyadic_windows_cover() {
        let w = dyadic_windows(8, 1, 8);
        assert_eq!(w.len(), 8 + 4 + 2 + 1);
        assert!(w.contains(&(4, 6)));
        assert!(dyadic_windows(8, 2, 4).iter().all(|(s, t)| t - s >= 2 && t - s <= 4));
    }
}
