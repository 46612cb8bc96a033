use oco_core::convexsets::{HPolytope, Halfspaces, Zonotope};
use oco_core::denseqp::{solve_qp, QpProblem, QpStatus};
use oco_core::invariance::{certify_rpi, mrpi_outer, tail_set};
use oco_core::matlin::{Matrix, Vector};
use oco_core::oracle;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn set_ops_match_grid_oracle(seed in any::<u64>()) {
        let check = oracle::planar_grid_check(seed, 0.02);
        prop_assert_eq!(check.disagreements, 0);
        prop_assert!(check.support_error < 1e-12);
    }

    #[test]
    fn beta_ratio_equals_bisection(seed in any::<u64>()) {
        let (ratio, bisect) = oracle::beta_instance(seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&ratio));
        prop_assert!((ratio - bisect).abs() <= 1e-8, "{ratio} vs {bisect}");
    }

    #[test]
    fn ogd_step_contracts(seed in any::<u64>()) {
        let c = oracle::contraction_instance(seed).unwrap();
        prop_assert!(c.step_distance <= c.bound + 1e-8, "{c:?}");
    }

    #[test]
    fn qp_solution_satisfies_kkt(seed in any::<u64>()) {
        let mut r = oracle::rng(seed);
        let n = r.gen_range(2..=5);
        let h = oracle::random_spd(&mut r, n, 0.1, 1.0);
        let f: Vector<f64> = (0..n).map(|_| r.gen_range(-5.0..=5.0)).collect();
        let rows = r.gen_range(1..=8);
        let a = Matrix::from_fn(rows, n, |_, _| r.gen_range(-1.0..=1.0));
        let b: Vector<f64> = (0..rows).map(|_| r.gen_range(0.1..=1.0)).collect();
        let problem = QpProblem::inequality_only(h, f, a.clone(), b.clone()).unwrap();
        let sol = solve_qp(&problem, 1e-9, 500);
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let set = HPolytope::new(a, b).unwrap();
        prop_assert!(set.max_violation(&sol.x) <= 1e-9);
        prop_assert!(sol.ineq_multipliers.iter().all(|&l| l >= -1e-12));
        // no feasible point along random directions does better
        let best = problem.objective(&sol.x);
        for _ in 0..50 {
            let d: Vector<f64> = (0..n).map(|_| r.gen_range(-1.0..=1.0)).collect();
            for t in [1e-3, 1e-2, 0.1] {
                let y = sol.x.add(&d.scaled(t));
                if set.max_violation(&y) <= 0.0 {
                    prop_assert!(problem.objective(&y) >= best - 1e-9);
                }
            }
        }
    }
}

#[test]
fn scalar_mrpi_matches_geometric_series() {
    let a = Matrix::from_diag(&[0.5]);
    let w = Zonotope::symmetric_box(&[1.0]);
    let res = mrpi_outer(&a, &w, 0.01, 100).unwrap();
    let radius = res.p.radius();
    assert!((2.0..=2.01).contains(&radius), "{radius}");
    assert!(certify_rpi(&res.p, &a, &w, 1e-12));
    let tail = tail_set(&a, 2, &res).unwrap().radius();
    assert!((0.5..=0.51).contains(&tail), "{tail}");
}

#[test]
fn random_plants_have_consistent_tightening() {
    for seed in 0..30 {
        let p = oracle::random_plant(seed, 4).unwrap();
        // stage offsets only shrink
        for w in p.tables.state_stage.windows(2) {
            let (a, b) = (w[0].effective_offsets(), w[1].effective_offsets());
            assert!(a.iter().zip(b.iter()).all(|(x, y)| y <= x));
        }
        assert!(certify_rpi(&p.model.p_rpi.p, &p.model.a_k, &p.model.w_bar, 1e-9));
        let zero = vec![0.0; p.model.m() * p.model.mu];
        assert!(p.tables.residuals(&[0.0, 0.0], &zero).iter().all(|&v| v < 0.0));
    }
}
