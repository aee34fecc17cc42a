use std::sync::Arc;

use otcert::cost::builtin_cost;
use otcert::jacobian::estimate_map;
use otcert::measure::{support, DiscreteMeasure};
use otcert::monotonicity::{check_cyclical, check_pairwise};
use otcert::reproduce::{build_example31_plans, build_example32_surface};
use otcert::solver::{brute_force, dual_potentials, solve_exact};

fn line(points: &[f64]) -> Arc<DiscreteMeasure<f64>> {
    Arc::new(DiscreteMeasure::uniform(points.iter().map(|&p| vec![p]).collect()).unwrap())
}

#[test]
fn sorted_line_clouds_match_in_order() {
    let model = builtin_cost::<f64>("quadratic", 1).unwrap();
    let src = line(&[-2.0, -1.0, 0.0, 1.5, 3.0]);
    let tgt = line(&[4.0, -3.0, 0.5, 2.0, -0.5]);
    let sol = solve_exact(&src, &tgt, &model).unwrap();
    let oracle = brute_force(&src, &tgt, &model).unwrap();
    let pairs: Vec<_> = sol.plan.entries().iter().map(|e| (e.i, e.j)).collect();
    let expected: Vec<_> = oracle.entries().iter().map(|e| (e.i, e.j)).collect();
    assert_eq!(pairs, expected);
    // Targets sorted: -3 (1), -0.5 (4), 0.5 (2), 2 (3), 4 (0).
    assert_eq!(pairs, vec![(0, 1), (1, 4), (2, 2), (3, 3), (4, 0)]);
}

#[test]
fn quantile_map_from_plan_is_exact() {
    let model = builtin_cost::<f64>("quadratic", 1).unwrap();
    let src = line(&[0.1, 0.3, 0.5, 0.7, 0.9]);
    let tgt = line(&[1.9, 1.1, 1.5, 1.3, 1.7]);
    let sol = solve_exact(&src, &tgt, &model).unwrap();
    let map = estimate_map(&sol.plan, 0.1);
    for p in &map.points {
        assert!((p.tx[0] - (p.x[0] + 1.0)).abs() < 1e-15);
        assert!(!p.split_mass);
    }
}

#[test]
fn example31_plans_carry_certifying_potentials() {
    let model = builtin_cost::<f64>("example31", 2).unwrap();
    let plans = build_example31_plans::<f64>(8).unwrap();
    for plan in [&plans.gamma, &plans.gamma_bar] {
        let duals = dual_potentials(plan, &model).unwrap();
        let value = duals.dual_objective(plan.source(), plan.target());
        assert!(value.abs() <= 1e-9, "dual value {value}");
    }
}

#[test]
fn example31_solver_support_is_monotone() {
    let model = builtin_cost::<f64>("example31", 2).unwrap();
    let plans = build_example31_plans::<f64>(4).unwrap();
    let sol = solve_exact(plans.gamma.source(), plans.gamma.target(), &model).unwrap();
    assert!(sol.objective.abs() <= 1e-9);
    let pairs = support(&sol.plan, 1e-12).unwrap();
    assert!(check_cyclical(&pairs, &model, 3, 1e-9).unwrap().passed());
}

#[test]
fn example32_surface_is_monotone() {
    let model = builtin_cost::<f64>("example32", 2).unwrap();
    let surface = build_example32_surface::<f64>(60).unwrap();
    assert!(check_pairwise(&surface, &model, 1e-9).unwrap().passed());
}
