//! Randomized properties of margin certificates and designs.

use msrobust::bisect::BisectOptions;
use msrobust::design::{self, DesignOptions};
use msrobust::instances::{self, random_loop_with_radius};
use msrobust::margins::{self, MarginMethod, MarginOptions, Nlmi};
use msrobust::matops::{self, SymMatrix};
use msrobust::model::UncertaintyStructure;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_in_box(rng: &mut ChaCha8Rng, margins: &[f64], bidirectional: bool) -> Vec<f64> {
    margins
        .iter()
        .map(|&m| {
            let u: f64 = rng.random_range(0.0..1.0);
            let x = if bidirectional { (2.0 * u - 1.0) * m } else { u * m };
            x * 0.999
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn certificates_are_sound(seed in any::<u64>(), n in 1usize..=4, p in 1usize..=3, target in 0.2f64..0.97) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = random_loop_with_radius(&mut rng, n, p, target);
        let structure = UncertaintyStructure::uniform(p).unwrap();
        let q = SymMatrix::identity(n);
        for method in MarginMethod::ALL {
            if method == MarginMethod::ScalarExact && (n != 1 || p != 1) {
                continue;
            }
            let cert = margins::compute_margins(&cl, &q, &structure, method, &MarginOptions::default()).unwrap();
            prop_assert!(cert.all().iter().all(|m| *m >= 0.0));
            for _ in 0..1000 {
                let mu = uniform_in_box(&mut rng, &cert.all(), cert.margins.bidirectional);
                let rho = matops::spectral_radius(&cl.perturbed(&mu).unwrap()).unwrap();
                prop_assert!(rho < 1.0, "{:?}: rho {} at {:?}", method, rho, mu);
            }
        }
    }

    #[test]
    fn shared_certificate_holds_below_the_bisection_point(seed in any::<u64>(), n in 1usize..=4, p in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = random_loop_with_radius(&mut rng, n, p, 0.8);
        let structure = UncertaintyStructure::uniform(p).unwrap();
        let q = SymMatrix::identity(n);
        for bidirectional in [false, true] {
            let cert = margins::shared_lyapunov_margins(&cl, &q, &structure, bidirectional, &BisectOptions::default()).unwrap();
            let lyap = cert.p.as_ref().unwrap();
            let nlmi = Nlmi::new(&cl, &q.scaled(p as f64), lyap, bidirectional).unwrap();
            prop_assert!(nlmi.feasible(&cert.all()).unwrap());
            for k in 1..=10 {
                let y = cert.y_star * k as f64 / 11.0;
                let eta: Vec<f64> = structure.magnitudes().iter().map(|t| t * y).collect();
                prop_assert!(nlmi.feasible(&eta).unwrap());
            }
        }
    }

    #[test]
    fn auxiliary_certificate_covers_every_corner(seed in any::<u64>(), n in 1usize..=4, p in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = random_loop_with_radius(&mut rng, n, p, 0.7);
        let structure = UncertaintyStructure::uniform(p).unwrap();
        let cert = margins::aux_system_margins(&cl, &structure, &SymMatrix::identity(n), &MarginOptions::default()).unwrap();
        prop_assert!(cert.y_star > 0.0);
        let slack = margins::corner_lyapunov_slack(&cl, &cert).unwrap();
        let scale = cert.p.as_ref().unwrap().norm2().unwrap();
        prop_assert!(slack >= -1e-9 * scale, "corner slack {}", slack);
    }

    #[test]
    fn conservative_rules_bound_the_exact_zeta(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = random_loop_with_radius(&mut rng, n, 1, 0.85);
        let q = SymMatrix::identity(n);
        let (eta_exact, zeta_exact) = margins::corollary_single_margin(&cl, &q).unwrap();
        let lyap = msrobust::stability::solve_gle(&cl, &q).unwrap().p.unwrap();
        let lin = margins::conservative_margin_linearized(&cl.a, &cl.dirs[0], &lyap, &q).unwrap();
        let simple = margins::conservative_margin_simple(&cl.a, &cl.dirs[0], &lyap, &q).unwrap();
        prop_assert!(lin >= zeta_exact - 1e-8);
        prop_assert!(simple >= zeta_exact - 1e-8);
        prop_assert!(margins::zeta_condition(&cl.a, &cl.dirs[0], &lyap, &q, lin).unwrap());
        prop_assert!(margins::zeta_condition(&cl.a, &cl.dirs[0], &lyap, &q, simple).unwrap());
        let alpha = cl.dirs[0].variance;
        prop_assert!(margins::envelope(lin, alpha) <= eta_exact + 1e-9);
        prop_assert!(margins::envelope(simple, alpha) <= eta_exact + 1e-9);
        prop_assert!(eta_exact <= alpha.sqrt() * (1.0 + 1e-12));
    }
}

#[test]
fn pendulum_nlmi_boundary() {
    let p = instances::pendulum();
    let opts = DesignOptions {
        gare: p.gare,
        grid_points: 0,
        ..DesignOptions::default()
    };
    let res = design::design_algorithm_1(&p.sys, &p.noise, &p.structure, &p.costs, &opts).unwrap();
    let z = res.z_star.unwrap();
    let sol = design::algorithm_1_solution_at(&p.sys, &p.noise, &p.structure, &p.costs, z, &p.gare)
        .unwrap()
        .unwrap();
    let noise = design::algorithm_1_noise(&p.noise, &p.structure, z).unwrap();
    let cl = msrobust::model::closed_loop_substitution(&p.sys, &noise, &sol.k).unwrap();
    let k = sol.k.matrix();
    let lhs = SymMatrix::new(p.costs.q().as_matrix() + k.transpose() * p.costs.r().as_matrix() * k).unwrap();
    let nlmi = Nlmi::new(&cl, &lhs, &sol.p, false).unwrap();
    let published = 6.997;
    assert!(nlmi.feasible(&[published * (1.0 - 1e-3)]).unwrap());
    assert!(!nlmi.feasible(&[published * 1.05]).unwrap());
}

#[test]
fn algorithm_2_gain_grows_with_margin_scale() {
    let p = instances::pendulum();
    let opts = DesignOptions {
        gare: p.gare,
        grid_points: 0,
        ..DesignOptions::default()
    };
    let res = design::design_algorithm_2(&p.sys, &p.noise, &p.structure, &p.costs, &opts).unwrap();
    let mut feasible: Vec<f64> = res.diagnostics.trace.iter().filter(|(_, ok)| *ok).map(|(y, _)| *y).collect();
    feasible.sort_by(f64::total_cmp);
    let norms: Vec<f64> = feasible
        .iter()
        .map(|&y| {
            design::algorithm_2_solution_at(&p.sys, &p.noise, &p.structure, &p.costs, y, &p.gare)
                .unwrap()
                .unwrap()
                .k
                .matrix()
                .norm()
        })
        .collect();
    assert!(norms.len() >= 3);
    for w in norms.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0], "{norms:?}");
    }
}

#[test]
fn both_designs_stabilize_a_100_point_grid() {
    let p = instances::pendulum();
    let opts = DesignOptions {
        gare: p.gare,
        grid_points: 100,
        ..DesignOptions::default()
    };
    for res in [
        design::design_algorithm_1(&p.sys, &p.noise, &p.structure, &p.costs, &opts).unwrap(),
        design::design_algorithm_2(&p.sys, &p.noise, &p.structure, &p.costs, &opts).unwrap(),
    ] {
        let grid = res.diagnostics.grid.unwrap();
        assert_eq!(grid.samples, 100);
        assert!(grid.all_stable);
    }
}
