use anyhow::Result;
use serde_json::json;

use rough_llg::analysis::{dissipation_check, energy};
use rough_llg::experiments::{
    apriori_study, driver_check, remainder_scaling, skeleton, small_noise, wong_zakai, InitialCondition, Setup,
};
use rough_llg::grid::Norm;
use rough_llg::llg::{solve, Input, Trajectory};

use crate::config::{Experiment, RunConfig};
use crate::output::{num, Artifacts, Check, Summary};

/// Runs one validated experiment, writing its tables into `out`.
pub fn run(experiment: Experiment, cfg: &RunConfig, setup: &Setup, out: &mut Artifacts) -> Result<Summary> {
    let seed = cfg.seed;
    let (checks, results) = match experiment {
        Experiment::DriverCheck => run_driver_check(cfg, setup, out)?,
        Experiment::Simulate => run_simulate(cfg, setup, out)?,
        Experiment::Wongzakai => run_wongzakai(cfg, setup, out)?,
        Experiment::Remainder => run_remainder(cfg, setup, out)?,
        Experiment::Smallnoise => run_smallnoise(cfg, setup, out)?,
        Experiment::Apriori => run_apriori(cfg, setup, out)?,
        Experiment::Skeleton => run_skeleton(cfg, setup, out)?,
    };
    let summary = Summary::new(experiment.name(), seed, checks, results);
    out.json("summary.json", &summary)?;
    Ok(summary)
}

type Outcome = (Vec<Check>, serde_json::Value);

fn run_driver_check(cfg: &RunConfig, setup: &Setup, out: &mut Artifacts) -> Result<Outcome> {
    let seeds = cfg.driver_check.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    let rows = driver_check(setup, &seeds)?;
    out.csv(
        "driver_check.csv",
        &["seed", "chen", "levy", "antisymmetry", "mode_chen", "mode_shuffle", "direct_chen", "direct_levy", "direct_triples"],
        rows.iter().map(|r| {
            let m = &r.report;
            vec![
                r.seed.to_string(),
                num(m.chen),
                num(m.levy),
                num(m.antisymmetry),
                num(m.mode_chen),
                num(m.mode_shuffle),
                num(m.direct_chen),
                num(m.direct_levy),
                m.direct_triples.to_string(),
            ]
        }),
    )?;
    let tol = cfg.driver_check.tolerance;
    let worst = |f: fn(&rough_llg::driver::StructureReport) -> f64| rows.iter().map(|r| f(&r.report)).fold(0.0, f64::max);
    let checks = vec![
        Check::at_most("chen", worst(|r| r.chen), tol),
        Check::at_most("levy", worst(|r| r.levy), tol),
        Check::at_most("antisymmetry", worst(|r| r.antisymmetry), tol),
    ];
    Ok((checks, json!({ "seeds": seeds })))
}

fn write_trajectory(out: &mut Artifacts, name: &str, traj: &Trajectory, stride: usize) -> Result<()> {
    let sub = traj.subsample(stride)?;
    out.write_with(name, |w| Ok(sub.write_csv(w)?))
}

fn write_diagnostics(out: &mut Artifacts, traj: &Trajectory) -> Result<()> {
    let tg = traj.timegrid();
    out.csv(
        "diagnostics.csv",
        &["t", "energy", "sphere_deviation"],
        traj.states().iter().enumerate().map(|(i, u)| vec![num(tg.node(i)), num(energy(u)), num(u.sphere_deviation())]),
    )
}

fn sphere_check(traj: &Trajectory) -> Check {
    let dev = traj.sphere_deviation();
    if traj.meta().project {
        Check::at_most("sphere_deviation", dev, 1e-12)
    } else {
        Check::at_most("sphere_deviation", dev, 5.0 * traj.meta().dt)
    }
}

fn run_simulate(cfg: &RunConfig, setup: &Setup, out: &mut Artifacts) -> Result<Outcome> {
    let u0 = setup.initial()?;
    let traj = if cfg.simulate.noise {
        let d = setup.driver(&setup.sample(cfg.seed)?.lift())?;
        setup.solve_with(&d)?
    } else {
        solve(&u0, Input::Deterministic(setup.timegrid()?), setup.solver)?
    };
    write_trajectory(out, "trajectory.csv", &traj, cfg.simulate.stride)?;
    write_diagnostics(out, &traj)?;
    let mut checks = vec![sphere_check(&traj)];
    let mut results = json!({ "input": traj.meta().input, "final_energy": energy(traj.last()) });
    if !cfg.simulate.noise {
        let diss = dissipation_check(&traj)?;
        checks.push(Check::new("energy_nonincreasing", diss.max_increase, "no increase beyond rounding", diss.nonincreasing()));
        results["max_dissipation_defect"] = json!(diss.max_defect);
        if setup.u0 == InitialCondition::Equator {
            let drift = traj.states().iter().map(|u| u.sub(&u0).norm(Norm::LInf)).fold(0.0, f64::max);
            checks.push(Check::at_most("stationarity", drift, cfg.simulate.stationarity_tolerance));
        }
    }
    Ok((checks, results))
}

fn run_wongzakai(cfg: &RunConfig, setup: &Setup, out: &mut Artifacts) -> Result<Outcome> {
    let w = &cfg.wongzakai;
    let r = wong_zakai(setup, cfg.seed, &w.levels)?;
    out.csv(
        "wongzakai.csv",
        &["level", "driver_distance", "solution_distance"],
        r.rows.iter().map(|row| vec![row.level.to_string(), num(row.driver_distance), num(row.solution_distance)]),
    )?;
    let checks = vec![
        Check::new(
            "rate",
            r.fit.slope,
            format!("in [{}, {}]", w.slope_min, w.slope_max),
            (w.slope_min..=w.slope_max).contains(&r.fit.slope),
        ),
        Check::new("fit_r2", r.fit.r2, format!(">= {}", w.min_r2), r.fit.r2 >= w.min_r2),
    ];
    Ok((checks, json!({ "reference_level": setup.level, "fit": r.fit })))
}

fn run_remainder(cfg: &RunConfig, setup: &Setup, out: &mut Artifacts) -> Result<Outcome> {
    let r = remainder_scaling(setup, cfg.seed, cfg.remainder.min_len, cfg.remainder.max_len)?;
    out.csv(
        "remainder.csv",
        &["s", "t", "omega", "remainder"],
        r.windows.iter().map(|w| vec![w.s.to_string(), w.t.to_string(), num(w.omega), num(w.remainder)]),
    )?;
    let target = r.target - cfg.remainder.slack;
    let checks = vec![Check::new("exponent", r.fit.slope, format!(">= {target}"), r.fit.slope >= target)];
    Ok((checks, json!({ "target": r.target, "fit": r.fit, "scatter_fit": r.scatter_fit })))
}

fn run_smallnoise(cfg: &RunConfig, setup: &Setup, out: &mut Artifacts) -> Result<Outcome> {
    let s = &cfg.smallnoise;
    let r = small_noise(setup, cfg.seed, &s.eps)?;
    out.csv("smallnoise.csv", &["eps", "distance"], r.rows.iter().map(|row| vec![num(row.eps), num(row.distance)]))?;
    let checks = vec![
        Check::new("decreasing", f64::from(u8::from(r.decreasing)), "distance decreases with eps", r.decreasing),
        Check::new(
            "rate",
            r.fit.slope,
            format!("{} +- {}", s.slope, s.slope_tolerance),
            (r.fit.slope - s.slope).abs() <= s.slope_tolerance,
        ),
    ];
    Ok((checks, json!({ "fit": r.fit })))
}

fn run_apriori(cfg: &RunConfig, setup: &Setup, out: &mut Artifacts) -> Result<Outcome> {
    let seeds = cfg.apriori.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    let rows = apriori_study(setup, &seeds)?;
    out.csv(
        "apriori.csv",
        &["seed", "coarse_bound", "fine_bound", "relative_change", "omega", "u0_h1", "coarse_log_ratio", "fine_log_ratio"],
        rows.iter().map(|r| {
            vec![
                r.seed.to_string(),
                num(r.coarse.energy_bound()),
                num(r.fine.energy_bound()),
                num(r.relative_change),
                num(r.coarse.bound_inputs.omega),
                num(r.coarse.bound_inputs.u0_h1),
                num(r.coarse.log_ratio),
                num(r.fine.log_ratio),
            ]
        }),
    )?;
    let finite = rows.iter().all(|r| r.coarse.energy_bound().is_finite() && r.fine.energy_bound().is_finite());
    let worst = rows.iter().map(|r| r.relative_change).fold(0.0, f64::max);
    let log_ratio = rows.iter().flat_map(|r| [r.coarse.log_ratio, r.fine.log_ratio]).fold(f64::NEG_INFINITY, f64::max);
    let checks = vec![
        Check::new("finite", f64::from(u8::from(finite)), "all energy bounds finite", finite),
        Check::at_most("refinement_change", worst, cfg.apriori.max_relative_change),
    ];
    Ok((checks, json!({ "seeds": seeds, "max_log_ratio": log_ratio, "reports": rows })))
}

fn run_skeleton(cfg: &RunConfig, setup: &Setup, out: &mut Artifacts) -> Result<Outcome> {
    let v = &cfg.skeleton.velocity;
    let r = skeleton(setup, v)?;
    write_trajectory(out, "trajectory.csv", &r.trajectory, cfg.skeleton.stride)?;
    let expected = v.iter().map(|c| c * c).sum::<f64>() * setup.horizon;
    let checks = vec![
        Check::new("rate", r.rate, format!("|v|^2 T = {}", num(expected)), (r.rate - expected).abs() <= 1e-12 * expected.max(1.0)),
        sphere_check(&r.trajectory),
    ];
    Ok((checks, json!({ "rate": r.rate, "velocity": v })))
}
