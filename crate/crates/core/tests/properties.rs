use std::sync::Arc;

use otcert::cost::builtin_cost;
use otcert::jacobian::{estimate_map, local_jacobian};
use otcert::measure::{
    kantorovich_cost, marginals, support, DiscreteMeasure, SupportSample, TransportPlan,
};
use otcert::monotonicity::{check_cyclical, check_pairwise};
use otcert::nondegeneracy::classify_point;
use otcert::rectifier::{certify_lipschitz, lipschitz_bound, rotate_diagonal};
use otcert::solver::{brute_force, cost_matrix, dual_potentials, solve_exact};
use proptest::prelude::*;

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.5f64..4.5, dim)
}

fn cloud(dim: usize, lo: usize, hi: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(point(dim), lo..=hi)
}

fn weighted(dim: usize, lo: usize, hi: usize) -> impl Strategy<Value = DiscreteMeasure<f64>> {
    prop::collection::vec((point(dim), 0.05f64..1.0), lo..=hi).prop_map(|v| {
        let (p, w): (Vec<_>, Vec<_>) = v.into_iter().unzip();
        DiscreteMeasure::normalized(p, w).unwrap()
    })
}

fn pair_cloud(dim: usize, lo: usize, hi: usize) -> impl Strategy<Value = SupportSample<f64>> {
    prop::collection::vec((point(dim), point(dim)), lo..=hi)
        .prop_map(|p| SupportSample::new(p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_plan_is_feasible_sparse_and_dual_certified(
        src in weighted(2, 1, 9),
        tgt in weighted(2, 1, 9),
    ) {
        let model = builtin_cost::<f64>("quadratic", 2).unwrap();
        let (m, n) = (src.len(), tgt.len());
        let (src, tgt) = (Arc::new(src), Arc::new(tgt));
        let sol = solve_exact(&src, &tgt, &model).unwrap();
        prop_assert!(sol.plan.marginal_gap() <= 1e-12);
        prop_assert!(sol.plan.len() < m + n);
        let cost = cost_matrix(&src, &tgt, &model).unwrap();
        for i in 0..m {
            for j in 0..n {
                prop_assert!(sol.duals.phi[i] + sol.duals.psi[j] <= cost[i * n + j] + 1e-9);
            }
        }
        let dual = sol.duals.dual_objective(&src, &tgt);
        prop_assert!((dual - sol.objective).abs() <= 1e-9);
        // Weak duality against an arbitrary feasible plan.
        let product = TransportPlan::product(src.clone(), tgt.clone()).unwrap();
        prop_assert!(kantorovich_cost(&product, &model).unwrap() >= dual - 1e-9);
        let rebuilt = dual_potentials(&sol.plan, &model).unwrap();
        prop_assert!((rebuilt.dual_objective(&src, &tgt) - sol.objective).abs() <= 1e-9);
    }

    #[test]
    fn solver_matches_brute_force_on_uniform_bilinear(
        (xs, ys) in (2usize..=6).prop_flat_map(|n| (cloud(2, n, n), cloud(2, n, n)))
    ) {
        let model = builtin_cost::<f64>("bilinear", 2).unwrap();
        let src = Arc::new(DiscreteMeasure::uniform(xs).unwrap());
        let tgt = Arc::new(DiscreteMeasure::uniform(ys).unwrap());
        let sol = solve_exact(&src, &tgt, &model).unwrap();
        let oracle = kantorovich_cost(&brute_force(&src, &tgt, &model).unwrap(), &model).unwrap();
        prop_assert!((sol.objective - oracle).abs() <= 1e-9);
    }

    #[test]
    fn solver_support_is_cyclically_monotone(
        (xs, ys) in (2usize..=7).prop_flat_map(|n| (cloud(2, n, n), cloud(2, n, n)))
    ) {
        let model = builtin_cost::<f64>("quadratic", 2).unwrap();
        let src = Arc::new(DiscreteMeasure::uniform(xs).unwrap());
        let tgt = Arc::new(DiscreteMeasure::uniform(ys).unwrap());
        let sol = solve_exact(&src, &tgt, &model).unwrap();
        let pairs = support(&sol.plan, 1e-12).unwrap();
        if pairs.len() >= 2 {
            prop_assert!(check_cyclical(&pairs, &model, 4, 1e-9).unwrap().passed());
        }
    }

    #[test]
    fn marginals_conserve_mass_and_cost_is_linear(
        src in weighted(1, 1, 6),
        tgt in weighted(1, 1, 6),
        t in 0.0f64..=1.0,
    ) {
        let model = builtin_cost::<f64>("quadratic", 1).unwrap();
        let (src, tgt) = (Arc::new(src), Arc::new(tgt));
        let product = TransportPlan::product(src.clone(), tgt.clone()).unwrap();
        let (mu, nu) = marginals(&product);
        prop_assert!(mu.max_weight_gap(&src).unwrap() <= 1e-12);
        prop_assert!(nu.max_weight_gap(&tgt).unwrap() <= 1e-12);
        prop_assert!((mu.total_mass() - 1.0).abs() <= 1e-12);
        let opt = solve_exact(&src, &tgt, &model).unwrap().plan;
        let mix = opt.convex_combination(&product, t).unwrap();
        let lhs = kantorovich_cost(&mix, &model).unwrap();
        let rhs = t * kantorovich_cost(&opt, &model).unwrap()
            + (1.0 - t) * kantorovich_cost(&product, &model).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn cyclical_check_of_length_two_is_the_pairwise_check(pairs in pair_cloud(2, 2, 12)) {
        let model = builtin_cost::<f64>("bilinear", 2).unwrap();
        let pw = check_pairwise(&pairs, &model, 1e-9).unwrap();
        let k2 = check_cyclical(&pairs, &model, 2, 1e-9).unwrap();
        prop_assert_eq!(pw.checked, k2.checked);
        prop_assert_eq!(pw.violation_count, k2.violation_count);
        prop_assert_eq!(pw.verdict, k2.verdict);
        prop_assert!((pw.max_defect - k2.max_defect).abs() <= 1e-12);
    }

    #[test]
    fn pairwise_verdict_ignores_pair_order(pairs in pair_cloud(2, 2, 10)) {
        let model = builtin_cost::<f64>("quadratic", 2).unwrap();
        let forward = check_pairwise(&pairs, &model, 1e-9).unwrap();
        let mut rev = pairs.pairs.clone();
        rev.reverse();
        let backward = check_pairwise(&SupportSample::new(rev).unwrap(), &model, 1e-9).unwrap();
        prop_assert_eq!(forward.violation_count, backward.violation_count);
        prop_assert!((forward.max_defect - backward.max_defect).abs() <= 1e-9);
    }

    #[test]
    fn longer_cycles_only_add_violations(pairs in pair_cloud(1, 2, 7)) {
        let model = builtin_cost::<f64>("quadratic", 1).unwrap();
        let k2 = check_cyclical(&pairs, &model, 2, 1e-9).unwrap();
        let k4 = check_cyclical(&pairs, &model, 4, 1e-9).unwrap();
        prop_assert!(k4.checked >= k2.checked);
        prop_assert!(k4.violation_count >= k2.violation_count);
    }

    #[test]
    fn lipschitz_bound_is_monotone(a in 0.0f64..0.999, b in 0.0f64..0.999) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(lipschitz_bound(lo) <= lipschitz_bound(hi));
        prop_assert!(lipschitz_bound(lo) >= 1.0);
        prop_assert!(lipschitz_bound(1.0f64).is_infinite());
    }

    #[test]
    fn monotone_lines_certify_with_zero_epsilon(
        mut xs in prop::collection::vec(-4.0f64..4.0, 2..20),
        slope in 0.05f64..3.0,
    ) {
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        prop_assume!(xs.len() >= 2);
        let pairs = SupportSample::new(xs.iter().map(|&x| (vec![x], vec![slope * x])).collect()).unwrap();
        let cert = certify_lipschitz(&rotate_diagonal(&pairs), 0.0, 1e-9).unwrap();
        prop_assert!(cert.inequality_violations == 0);
        prop_assert!(cert.max_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn degeneracy_flag_survives_swapping_roles(x in point(2), y in point(2)) {
        for name in ["bilinear", "quadratic"] {
            let model = builtin_cost::<f64>(name, 2).unwrap();
            let direct = classify_point(&model, &x, &y, 1e-10).unwrap();
            let swapped = classify_point(&model.swapped(), &y, &x, 1e-10).unwrap();
            prop_assert_eq!(direct.degenerate, swapped.degenerate);
            prop_assert!((direct.determinant - swapped.determinant).abs() <= 1e-9);
        }
    }

    #[test]
    fn affine_maps_have_exact_local_jacobians(
        a in prop::array::uniform4(-2.0f64..2.0),
        shift in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let det = a[0] * a[3] - a[1] * a[2];
        prop_assume!(det.abs() > 0.1);
        let grid: Vec<Vec<f64>> = (0..5)
            .flat_map(|i| (0..5).map(move |j| vec![i as f64 * 0.25, j as f64 * 0.25]))
            .collect();
        let image: Vec<Vec<f64>> = grid
            .iter()
            .map(|p| vec![a[0] * p[0] + a[1] * p[1] + shift[0], a[2] * p[0] + a[3] * p[1] + shift[1]])
            .collect();
        let src = Arc::new(DiscreteMeasure::uniform(grid.clone()).unwrap());
        let tgt = Arc::new(DiscreteMeasure::uniform(image).unwrap());
        let w = 1.0 / 25.0;
        let plan = TransportPlan::new(src, tgt, (0..25).map(|i| (i, i, w)).collect::<Vec<_>>()).unwrap();
        let map = estimate_map(&plan, 0.1);
        prop_assert_eq!(map.flagged_fraction(), 0.0);
        let jac = local_jacobian(&map, &[0.5, 0.5], 6).unwrap();
        prop_assert!((jac.determinant() - det).abs() <= 1e-8);
    }
}
