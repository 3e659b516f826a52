//! Energies, inequality oracles, a priori reports, rate fits, the rough
//! Gronwall bound and the product-formula check.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{DriverControl, SpaceRoughDriver};
use crate::error::{Error, Result};
use crate::grid::{Derivative, Grid, GridField, Norm};
use crate::llg::{drift, energy_density, tension, Trajectory};
use crate::rough::Control;
use crate::{Mat3, Vec3};

pub const C_GNS: f64 = 4.0;
pub const C_INTERPOLATION: f64 = 2.0;

/// `𝓔(u) = h Σ |u_{i+1} − u_i|² / h²`.
pub fn energy(u: &GridField) -> f64 {
    u.grid().spacing() * energy_density(u).iter().sum::<f64>()
}

/// `‖𝓉_u‖²_{L²}`.
pub fn tension_sq(u: &GridField) -> f64 {
    let t = tension(u);
    t.inner(&t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissipation {
    pub energies: Vec<f64>,
    /// `|E_{i+1} − E_i + 2Δt‖𝓉_{u_i}‖²|`
    pub defects: Vec<f64>,
    pub max_defect: f64,
    /// `max_i (E_{i+1} − E_i)`, negative when the energy strictly decreases
    pub max_increase: f64,
}

impl Dissipation {
    /// No step raises the energy by more than rounding error.
    pub fn nonincreasing(&self) -> bool {
        let scale = self.energies.iter().copied().fold(0.0, f64::max);
        self.max_increase <= 64.0 * f64::EPSILON * scale
    }
}

/// Discrete form of `d𝓔/dt = −2‖𝓉_u‖²` along a noise-free trajectory.
pub fn dissipation_check(traj: &Trajectory) -> Result<Dissipation> {
    if traj.meta().input != "none" {
        return Err(Error::invalid("dissipation check needs a noise-free trajectory"));
    }
    let dt = traj.timegrid().dt();
    let energies: Vec<f64> = traj.states().iter().map(energy).collect();
    let defects: Vec<f64> = energies
        .windows(2)
        .zip(traj.states())
        .map(|(e, u)| (e[1] - e[0] + 2.0 * dt * tension_sq(u)).abs())
        .collect();
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    let max_increase = energies.windows(2).map(|e| e[1] - e[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(Dissipation { energies, defects, max_defect, max_increase })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub u0_h1: f64,
    pub omega: f64,
}

/// Quantities of the energy estimate for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    #[serde(rename = "sup_H1")]
    pub sup_h1: f64,
    pub diss: f64,
    /// `sup_t ‖∂ʲu_t‖²` for `j = 1..=k`
    #[serde(rename = "sup_Hk")]
    pub sup_hk: Vec<f64>,
    #[serde(rename = "L2_H2")]
    pub l2_h2: f64,
    pub bound_inputs: BoundInputs,
    /// `ln[(sup_H1 + diss) / (exp(ω) ‖u⁰‖²_{H¹})]`; the ratio itself underflows for large `ω`
    pub log_ratio: f64,
}

impl AprioriReport {
    pub fn energy_bound(&self) -> f64 {
        self.sup_h1 + self.diss
    }

    pub fn ratio(&self) -> f64 {
        self.log_ratio.exp()
    }

    /// `sup_H1 + diss ≤ K exp(ω) ‖u⁰‖²_{H¹}`.
    pub fn bounded(&self, constant: f64) -> bool {
        self.log_ratio <= constant.ln()
    }
}

/// Builds the report; `ω = ω_{𝐆,H²}(0,T)` at variation index `p`, zero without a driver.
pub fn apriori_report(traj: &Trajectory, d: Option<&SpaceRoughDriver>, k: usize, p: f64) -> Result<AprioriReport> {
    if k == 0 {
        return Err(Error::invalid("a priori report needs k ≥ 1"));
    }
    let dt = traj.timegrid().dt();
    let states = traj.states();
    let sup_h1 = states.iter().map(energy).fold(0.0, f64::max);
    let n_int = states.len() - 1;
    let diss = dt * states[..n_int].iter().map(tension_sq).sum::<f64>();
    let sup_hk = (1..=k)
        .map(|j| {
            states
                .iter()
                .map(|u| {
                    let d = u.iterated_diff(j);
                    d.inner(&d)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let l2_h2 = dt
        * states[..n_int]
            .iter()
            .map(|u| {
                let d = u.diff(Derivative::Second);
                d.inner(&d)
            })
            .sum::<f64>();
    let omega = match d {
        Some(d) => {
            if d.grid() != traj.grid() || d.timegrid() != traj.timegrid() {
                return Err(Error::GridMismatch("trajectory and driver grids differ".into()));
            }
            DriverControl::new(d, p, 2)?.omega(0, traj.timegrid().steps())
        }
        None => 0.0,
    };
    let u0 = &states[0];
    let u0_h1 = (u0.inner(u0) + energy(u0)).sqrt();
    let log_ratio = (sup_h1 + diss).ln() - omega - 2.0 * u0_h1.ln();
    Ok(AprioriReport { sup_h1, diss, sup_hk, l2_h2, bound_inputs: BoundInputs { u0_h1, omega }, log_ratio })
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl RateFit {
    pub fn fit(points: Vec<(f64, f64)>) -> Result<RateFit> {
        if points.len() < 3 {
            return Err(Error::invalid(format!("a rate fit needs at least 3 points, got {}", points.len())));
        }
        if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
            return Err(Error::Degenerate(format!("non-positive point ({x:e}, {y:e}) in a log-log fit")));
        }
        let n = points.len() as f64;
        let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
        let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        if sxx == 0.0 {
            return Err(Error::Degenerate("all abscissae coincide".into()));
        }
        let slope = sxy / sxx;
        let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
        Ok(RateFit { points, slope, intercept: my - slope * mx, r2 })
    }
}

/// Fit of `solution_distance` against `driver_distance`.
pub fn wz_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    RateFit::fit(pairs.to_vec())
}

fn check_same_grids(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.grid() != b.grid() || a.timegrid() != b.timegrid() {
        return Err(Error::GridMismatch("trajectories live on different grids".into()));
    }
    Ok(())
}

/// `max(sup_t ‖a_t − b_t‖_{H¹}, (Σ Δt ‖a_t − b_t‖²_{H²})^{1/2})`.
pub fn solution_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_same_grids(a, b)?;
    let dt = a.timegrid().dt();
    let diffs: Vec<GridField> = a.states().iter().zip(b.states()).map(|(x, y)| x.sub(y)).collect();
    let sup_h1 = diffs.iter().map(|e| e.norm(Norm::H(1))).fold(0.0, f64::max);
    let l2_h2 = (dt * diffs[..diffs.len() - 1].iter().map(|e| e.norm(Norm::H(2)).powi(2)).sum::<f64>()).sqrt();
    Ok(sup_h1.max(l2_h2))
}

/// `sup_t ‖a_t − b_t‖_{L²}`.
pub fn linf_l2_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_same_grids(a, b)?;
    Ok(a.states().iter().zip(b.states()).map(|(x, y)| x.sub(y).norm(Norm::L(2.0))).fold(0.0, f64::max))
}

/// `‖∂u‖⁴_{L⁴} / (‖∂u‖³_{L²}‖∂²u‖_{L²} + ‖∂u‖⁴_{L²})`.
pub fn gns_ratio(u: &GridField) -> Result<f64> {
    let d1 = u.diff(Derivative::First);
    let d2 = u.diff(Derivative::Second);
    let l2 = d1.norm(Norm::L(2.0));
    if l2 == 0.0 {
        return Err(Error::Degenerate("constant field has no GNS ratio".into()));
    }
    let h = u.grid().spacing();
    let l4 = h * d1.values().iter().map(|v| v.norm_squared().powi(2)).sum::<f64>();
    Ok(l4 / (l2.powi(3) * d2.norm(Norm::L(2.0)) + l2.powi(4)))
}

/// `‖a‖²_{L∞} / (‖a‖_{L²}‖a‖_{H¹})`.
pub fn interpolation_ratio(a: &GridField) -> Result<f64> {
    let den = a.norm(Norm::L(2.0)) * a.norm(Norm::H(1));
    if den == 0.0 {
        return Err(Error::Degenerate("zero field has no interpolation ratio".into()));
    }
    Ok(a.norm(Norm::LInf).powi(2) / den)
}

/// A random trigonometric polynomial of degree `modes` per component,
/// coefficients uniform in `[−1, 1]` and damped by `1/m`.
pub fn random_trig_field<R: Rng>(grid: Grid, modes: usize, rng: &mut R) -> GridField {
    use std::f64::consts::TAU;
    let coeffs: Vec<[Vec3; 2]> = (0..=modes)
        .map(|_| {
            let mut v = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            [v(), v()]
        })
        .collect();
    GridField::from_fn(grid, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(m, [a, b])| {
                let w = TAU * m as f64 * x;
                (a * w.cos() + b * w.sin()) / (m.max(1) as f64)
            })
            .sum()
    })
}

/// `exp(ω(0,T)/τ) [E₀ + sup_t |φ(0,t)|]`.
pub fn gronwall_bound(e0: f64, omega_total: f64, sup_phi: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("τ must be positive, got {tau}")));
    }
    Ok((omega_total / tau).exp() * (e0 + sup_phi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallCheck {
    /// `δE_{s,t} ≤ sup_{[s,t]}E · ω(s,t)^κ + φ(s,t)` on every checked pair
    pub hypothesis_holds: bool,
    /// `max (δE − sup E · ω^κ − φ)` over checked pairs
    pub worst_excess: f64,
    pub pairs_checked: usize,
    /// Smallest `τ` with `sup E ≤ exp(ω(0,T)/τ)[E₀ + sup φ(0,·)]`; zero when any `τ` works.
    pub tau_star: f64,
}

/// Verifies the Gronwall hypothesis on the pairs with `ω(s,t) ≤ ℓ` and finds `τ*`.
pub fn gronwall_check<C, F>(e: &[f64], omega: &C, kappa: f64, phi: F, ell: f64) -> Result<GronwallCheck>
where
    C: Control + ?Sized,
    F: Fn(usize, usize) -> f64,
{
    if !(kappa > 0.0) || e.len() < 2 {
        return Err(Error::invalid("Gronwall check needs κ > 0 and at least two nodes"));
    }
    let last = e.len() - 1;
    let mut worst = f64::NEG_INFINITY;
    let mut pairs = 0;
    for s in 0..last {
        let mut sup = e[s];
        for t in s + 1..=last {
            sup = sup.max(e[t]);
            let w = omega.omega(s, t);
            if w > ell {
                continue;
            }
            pairs += 1;
            worst = worst.max(e[t] - e[s] - sup * w.powf(kappa) - phi(s, t));
        }
    }
    let sup_e = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = e[0] + (1..=last).map(|t| phi(0, t).abs()).fold(0.0, f64::max);
    let w_total = omega.omega(0, last);
    let tau_star = if sup_e <= base {
        0.0
    } else if w_total > 0.0 && base > 0.0 {
        w_total / (sup_e / base).ln()
    } else {
        f64::INFINITY
    };
    Ok(GronwallCheck { hypothesis_holds: worst <= 1e-12 * sup_e.abs().max(1.0), worst_excess: worst, pairs_checked: pairs, tau_star })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductDefect {
    /// `∫ tr R_{s,t}(x) dx`
    pub trace: f64,
    /// `∫ ‖R_{s,t}(x)‖_F dx`
    pub full: f64,
}

/// Residual `R = δ(u⊗u) − 2∫u⊙f − 2u_s⊙[(G+𝔾)u_s] − (G u_s)⊗(G u_s)` of the product formula.
pub fn product_formula_check(traj: &Trajectory, d: &SpaceRoughDriver, s: usize, t: usize) -> Result<ProductDefect> {
    if traj.grid() != d.grid() || traj.timegrid() != d.timegrid() {
        return Err(Error::GridMismatch("trajectory and driver grids differ".into()));
    }
    let inc = d.increment(s, t)?;
    let dt = traj.timegrid().dt();
    let n = traj.grid().len();
    let sym = |a: &Vec3, b: &Vec3| -> Mat3 { 0.5 * (a * b.transpose() + b * a.transpose()) };
    let mut integral = vec![Mat3::zeros(); n];
    if traj.meta().drift_enabled && t > s {
        for i in s..=t {
            let w = if i == s || i == t { 0.5 * dt } else { dt };
            let u = traj.state(i);
            let f = drift(u);
            for (acc, (a, b)) in integral.iter_mut().zip(u.values().iter().zip(f.values())) {
                *acc += sym(a, b) * w;
            }
        }
    }
    let (us, ut) = (traj.state(s).values(), traj.state(t).values());
    let h = traj.grid().spacing();
    let (mut trace, mut full) = (0.0, 0.0);
    for x in 0..n {
        let a = us[x];
        let gu = inc.g[x] * a;
        let noise = 2.0 * sym(&a, &((inc.g[x] + inc.gg[x]) * a)) + gu * gu.transpose();
        let r = ut[x] * ut[x].transpose() - a * a.transpose() - 2.0 * integral[x] - noise;
        trace += h * r.trace();
        full += h * r.norm();
    }
    Ok(ProductDefect { trace, full })
}

/// `max_i ‖(ρ_{i+1} − ρ_i)/Δt − D²ρ_{i+1} − |∂u_i|²ρ_i‖_{L∞}` with `ρ = ½(|u|² − 1)`.
pub fn rho_residual(traj: &Trajectory) -> f64 {
    let dt = traj.timegrid().dt();
    let grid = traj.grid();
    let h2 = grid.spacing() * grid.spacing();
    let rho: Vec<Vec<f64>> =
        traj.states().iter().map(|u| u.values().iter().map(|v| 0.5 * (v.norm_squared() - 1.0)).collect()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..rho.len() - 1 {
        let e = energy_density(traj.state(i));
        let (r0, r1) = (&rho[i], &rho[i + 1]);
        for x in 0..grid.len() {
            let lap = (r1[grid.next(x)] - 2.0 * r1[x] + r1[grid.prev(x)]) / h2;
            worst = worst.max(((r1[x] - r0[x]) / dt - lap - e[x] * r0[x]).abs());
        }
    }
    worst
}
