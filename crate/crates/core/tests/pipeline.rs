use rough_llg::analysis::{apriori_report, product_formula_check, solution_distance};
use rough_llg::driver::{structure_check, SpaceRoughDriver, StructureOptions};
use rough_llg::experiments::Setup;
use rough_llg::grid::Norm;
use rough_llg::llg::{extract_remainder, solve, Input, SolverOptions, Trajectory};
use rough_llg::noise::{dyadic_approx, BmSample};

fn setup() -> Setup {
    Setup { n_space: 24, level: 7, horizon: 0.05, ..Setup::default() }
}

#[test]
fn sample_drive_solve_analyze() {
    let s = setup();
    let bm = s.sample(11).unwrap();
    let d = s.driver(&bm.lift()).unwrap();
    assert!(structure_check(&d, StructureOptions::default()).unwrap().max_defect() <= 1e-12);

    let traj = s.solve_with(&d).unwrap();
    assert_eq!(traj.states().len(), 129);
    assert!(traj.sphere_deviation() <= 1e-12);

    let report = apriori_report(&traj, Some(&d), s.k, s.p).unwrap();
    assert!(report.energy_bound().is_finite() && report.bound_inputs.omega > 0.0);

    let pf = product_formula_check(&traj, &d, 0, 16).unwrap();
    assert!(pf.trace.abs() <= 1e-12);

    let short = extract_remainder(&traj, &d, 0, 2).unwrap().norm(Norm::L(2.0));
    let long = extract_remainder(&traj, &d, 0, 64).unwrap().norm(Norm::L(2.0));
    assert!(short.is_finite() && short < long);
}

#[test]
fn files_round_trip() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();

    let bm = s.sample(5).unwrap();
    let path = dir.path().join("bm.csv");
    bm.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let back = BmSample::read_csv(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back.increments(), bm.increments());

    let d = s.driver(&bm.lift()).unwrap();
    let mut buf = Vec::new();
    d.write_binary(&mut buf).unwrap();
    let d2 = SpaceRoughDriver::read_binary(buf.as_slice()).unwrap();
    assert_eq!(d2.intervals(), d.intervals());

    let traj = s.solve_with(&d).unwrap();
    let replay = s.solve_with(&d2).unwrap();
    assert_eq!(traj.states(), replay.states());

    let mut buf = Vec::new();
    traj.write_binary(&mut buf).unwrap();
    let back = Trajectory::read_binary(buf.as_slice(), traj.meta().clone()).unwrap();
    assert_eq!(back.states(), traj.states());
}

#[test]
fn coarser_dyadic_drivers_approach_the_fine_one() {
    let s = setup();
    let bm = s.sample(2).unwrap();
    let fine = s.solve_with(&s.driver(&bm.lift()).unwrap()).unwrap();
    let dist = |level: u32| {
        let (_, lift) = dyadic_approx(&bm, level).unwrap();
        solution_distance(&s.solve_with(&s.driver(&lift).unwrap()).unwrap(), &fine).unwrap()
    };
    assert_eq!(dist(s.level), 0.0);
    assert!(dist(5) < dist(2));
}

#[test]
fn zero_driver_matches_deterministic_solve() {
    let s = setup();
    let u0 = s.initial().unwrap();
    let tg = s.timegrid().unwrap();
    let det = solve(&u0, Input::Deterministic(tg), SolverOptions::default()).unwrap();
    let zero = SpaceRoughDriver::zero(s.grid().unwrap(), tg);
    let rough = solve(&u0, Input::Rough(&zero), SolverOptions::default()).unwrap();
    assert!(solution_distance(&det, &rough).unwrap() <= 1e-13);
}
