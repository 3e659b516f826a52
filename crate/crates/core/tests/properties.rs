use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rough_llg::analysis::{gns_ratio, gronwall_bound, interpolation_ratio, random_trig_field, RateFit};
use rough_llg::driver::{driver_distance, structure_check, SpaceRoughDriver, StructureOptions};
use rough_llg::grid::{periodic_diff, Derivative, Grid, GridField, Norm};
use rough_llg::llg::project_sphere;
use rough_llg::noise::{cm_rate, dyadic_approx, sample_bm, CameronMartinPath, ModeRoughPath};
use rough_llg::rough::{
    chen_reconstruct, control_from_pvar, delta2, delta3, p_variation, p_variation_pow, Control, ScalarIncrements,
    ScalarPair, TimeGrid,
};
use rough_llg::Vec3;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn field(n: usize) -> impl Strategy<Value = GridField> {
    prop::collection::vec(vec3(), n).prop_map(move |v| GridField::new(Grid::new(n).unwrap(), v).unwrap())
}

fn small_driver(seed: u64, n: usize, steps: usize, amp: f64) -> SpaceRoughDriver {
    let grid = Grid::new(n).unwrap();
    let tg = TimeGrid::new(1.0, steps).unwrap();
    let g: Vec<f64> = grid.nodes().map(|x| 1.0 + amp * (std::f64::consts::TAU * x).cos()).collect();
    SpaceRoughDriver::lift_simple(grid, &g, &sample_bm(seed, tg, 3).unwrap().lift()).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn summation_by_parts(a in prop::collection::vec(-1.0..1.0f64, 4..40), seed in any::<u64>()) {
        let n = a.len();
        let h = 1.0 / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let da = periodic_diff(&a, h, Derivative::First);
        let db = periodic_diff(&b, h, Derivative::First);
        let lhs: f64 = h * da.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
        let rhs: f64 = -h * a.iter().zip(&db).map(|(x, y)| x * y).sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn derivatives_kill_constants(c in vec3(), n in 4usize..64) {
        let u = GridField::constant(Grid::new(n).unwrap(), c);
        prop_assert!(u.diff(Derivative::First).values().iter().all(|v| *v == Vec3::zeros()));
        prop_assert!(u.diff(Derivative::Second).values().iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn sobolev_norms_increase_with_k(u in field(16)) {
        let norms: Vec<f64> = (0..4).map(|k| u.norm(Norm::H(k))).collect();
        prop_assert!(norms.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn projection_lands_on_sphere(u in field(12)) {
        prop_assume!(u.values().iter().all(|v| v.norm() > 1e-3));
        let p = project_sphere(&u).unwrap();
        prop_assert!(p.sphere_deviation() <= 1e-15);
        prop_assert!(project_sphere(&p).unwrap().sub(&p).norm(Norm::LInf) <= 1e-15);
    }

    #[test]
    fn increments_have_zero_delta3(path in prop::collection::vec(-5.0..5.0f64, 3..12)) {
        let m = delta2(&path);
        for s in 0..path.len() {
            prop_assert_eq!(*m.get(s, s), 0.0);
            for u in s..path.len() {
                for t in u..path.len() {
                    prop_assert!(delta3(&m, s, u, t).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn chen_reconstruction_satisfies_chen(gens in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 2..10)) {
        let gens: Vec<ScalarPair> = gens.into_iter().map(|(first, second)| ScalarPair { first, second }).collect();
        let n = gens.len();
        for s in 0..=n {
            for u in s..=n {
                for t in u..=n {
                    let st = chen_reconstruct(&gens, s, t).unwrap();
                    let su = chen_reconstruct(&gens, s, u).unwrap();
                    let ut = chen_reconstruct(&gens, u, t).unwrap();
                    prop_assert!((st.second - su.second - ut.second - ut.first * su.first).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn p_variation_decreases_in_p(path in prop::collection::vec(-3.0..3.0f64, 2..30)) {
        let x = ScalarIncrements(&path);
        let t = path.len() - 1;
        let vals: Vec<f64> = [1.0, 1.5, 2.0, 2.5, 3.0, 4.0].iter().map(|&p| p_variation(&x, p, 0, t).unwrap()).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn pvar_control_is_superadditive(path in prop::collection::vec(-3.0..3.0f64, 3..20), p in 1.0..4.0f64) {
        let x = ScalarIncrements(&path);
        let w = control_from_pvar(&x, p).unwrap();
        let n = path.len();
        for s in 0..n {
            prop_assert_eq!(w.omega(s, s), 0.0);
            for u in s..n {
                for t in u..n {
                    prop_assert!(w.omega(s, u) + w.omega(u, t) <= w.omega(s, t) * (1.0 + 1e-12));
                }
            }
        }
        prop_assert_eq!(w.omega(0, n - 1), p_variation_pow(&x, p, 0, n - 1).unwrap());
    }

    #[test]
    fn mode_lift_is_geometric(seed in any::<u64>(), steps in 2usize..24, q in 1usize..4) {
        let lift: ModeRoughPath = sample_bm(seed, TimeGrid::new(1.0, steps).unwrap(), q).unwrap().lift();
        for s in 0..=steps {
            for t in s..=steps {
                let inc = lift.increment(s, t).unwrap();
                prop_assert!(inc.shuffle_defect() <= 1e-12);
                for u in s..=t {
                    let (a, b) = (lift.increment(s, u).unwrap(), lift.increment(u, t).unwrap());
                    for i in 0..q {
                        for j in 0..q {
                            let d = inc.second[i * q + j] - a.second[i * q + j] - b.second[i * q + j] - a.first[i] * b.first[j];
                            prop_assert!(d.abs() <= 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dyadic_approx_is_a_projection(seed in any::<u64>(), level in 0u32..6) {
        let bm = sample_bm(seed, TimeGrid::dyadic(1.0, 6).unwrap(), 2).unwrap();
        let (once, _) = dyadic_approx(&bm, level).unwrap();
        let (twice, _) = dyadic_approx(&once, level).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn cm_rate_is_quadratic(v in prop::collection::vec(-3.0..3.0f64, 1..4), e in -3i32..4) {
        let h = CameronMartinPath::constant_velocity(TimeGrid::dyadic(1.0, 5).unwrap(), &v).unwrap();
        let lambda = 2f64.powi(e);
        prop_assert_eq!(cm_rate(&h.scale(lambda)), lambda * lambda * cm_rate(&h));
    }

    #[test]
    fn gns_ratio_is_scale_invariant(seed in any::<u64>(), e in -4i32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_trig_field(Grid::new(32).unwrap(), 3, &mut rng);
        let lambda = 2f64.powi(e);
        prop_assert_eq!(gns_ratio(&u.scale(lambda)).unwrap(), gns_ratio(&u).unwrap());
        prop_assert!(gns_ratio(&u).unwrap() <= 4.0);
        prop_assert!(interpolation_ratio(&u).unwrap() <= 2.0);
    }

    #[test]
    fn gronwall_bound_is_monotone(e0 in 0.0..10.0f64, w in 0.0..5.0f64, phi in 0.0..3.0f64, bump in 0.01..1.0f64) {
        let base = gronwall_bound(e0, w, phi, 0.5).unwrap();
        prop_assert!(gronwall_bound(e0 + bump, w, phi, 0.5).unwrap() >= base);
        prop_assert!(gronwall_bound(e0, w + bump, phi, 0.5).unwrap() >= base);
        prop_assert!(gronwall_bound(e0, w, phi + bump, 0.5).unwrap() >= base);
    }

    #[test]
    fn rate_fit_recovers_power_laws(slope in -3.0..3.0f64, c in 0.1..10.0f64) {
        let pts: Vec<(f64, f64)> = (1..6).map(|i| {
            let x = 2f64.powi(-i);
            (x, c * x.powf(slope))
        }).collect();
        let fit = RateFit::fit(pts).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn drivers_satisfy_structure(seed in any::<u64>(), amp in 0.0..0.9f64) {
        let d = small_driver(seed, 8, 16, amp);
        let r = structure_check(&d, StructureOptions::default()).unwrap();
        prop_assert!(r.max_defect() <= 1e-12);
        prop_assert!(r.direct_chen <= 1e-12 && r.direct_levy <= 1e-12);
    }

    #[test]
    fn dilation_composes(seed in any::<u64>(), a in 0.0..3.0f64, b in 0.0..3.0f64) {
        let d = small_driver(seed, 6, 8, 0.5);
        let twice = d.dilate(a).unwrap().dilate(b).unwrap();
        let once = d.dilate(a * b).unwrap();
        for (x, y) in twice.intervals().iter().zip(once.intervals()) {
            for (g, h) in x.g.iter().zip(&y.g) {
                prop_assert!((g - h).abs().max() <= 1e-12);
            }
            for (g, h) in x.gg.iter().zip(&y.gg) {
                prop_assert!((g - h).abs().max() <= 1e-12);
            }
        }
    }

    #[test]
    fn driver_distance_is_a_metric(seeds in (any::<u64>(), any::<u64>(), any::<u64>())) {
        let ds = [small_driver(seeds.0, 8, 12, 0.3), small_driver(seeds.1, 8, 12, 0.3), small_driver(seeds.2, 8, 12, 0.3)];
        let dist = |i: usize, j: usize| driver_distance(&ds[i], &ds[j], 2.5, 2).unwrap();
        prop_assert_eq!(dist(0, 0), 0.0);
        prop_assert!((dist(0, 1) - dist(1, 0)).abs() <= 1e-12 * dist(0, 1));
        prop_assert!(dist(0, 2) <= dist(0, 1) + dist(1, 2) + 1e-10);
    }
}
