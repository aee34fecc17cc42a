//! The cylinder-type and polar-type example costs, end to end.
//!
//! The cylinder cost `c(x,y) = e^{x₁+y₁}cos(x₂−y₂) + e^{2x₁}/2 + e^{2y₁}/2`
//! satisfies `c ≥ (e^{x₁} − e^{y₁})²/2` with equality on the sheets
//! `Gₖ = {y₁ = x₁, y₂ = x₂ + (2k−1)π}`. Over the strip
//! `S = [0,1] × [0,4π]` any coupling concentrated on the sheets is optimal,
//! and two different ones share their marginals.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::cost::{builtin_cost, CostModel};
use crate::error::{Error, Result};
use crate::measure::{
    kantorovich_cost, marginals, support, DiscreteMeasure, SupportSample, TransportPlan,
};
use crate::monotonicity::check_pairwise;
use crate::nondegeneracy::{
    classify_point, grid_points, twist_scan, Direction, DEGENERACY_THRESHOLD,
};
use crate::rectifier::{rectify, RectifiabilityCertificate, RectifyOptions, RectifyOutcome};
use crate::scalar::Scalar;
use crate::solver::solve_exact;

/// The pair of optimal plans `(γ, γ̄)` on the discretized strip.
#[derive(Clone, Debug)]
pub struct Example31Plans<T> {
    pub grid_m: usize,
    /// Equal mass on each of the three sheets.
    pub gamma: TransportPlan<T>,
    /// First half of sheet 1, double mass on sheet 2, second half of sheet 3.
    pub gamma_bar: TransportPlan<T>,
}

/// Builds `γ` and `γ̄` on the `m × m` midpoint grid of `S`.
///
/// Source atoms are `x = ((i+½)/m, (k+½)·4π/m)` with weight `1/m²`, indexed
/// `i·m + k`. Target atoms are `y = ((i+½)/m, (t+½)·4π/m + π)` for
/// `t = 0..2m`, indexed `i·2m + t`, so sheet `g` sends `(i, k)` to
/// `(i, k + (g−1)·m/2)`. The first half of the strip is `k < m/2`, which puts
/// the row at `x₂ = 2π` (absent on a midpoint grid) on the left. `m` must be
/// even so that the three sheets land on common target atoms.
pub fn build_example31_plans<T: Scalar>(grid_m: usize) -> Result<Example31Plans<T>> {
    let m = grid_m;
    if m < 2 || !m.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "the example grid needs an even size of at least 2, got {m}"
        )));
    }
    let step = 4.0 * PI / m as f64;
    let x1 = |i: usize| (i as f64 + 0.5) / m as f64;
    let mut source_points = Vec::with_capacity(m * m);
    for i in 0..m {
        for k in 0..m {
            source_points.push(vec![T::lit(x1(i)), T::lit((k as f64 + 0.5) * step)]);
        }
    }
    let mut target_points = Vec::with_capacity(2 * m * m);
    for i in 0..m {
        for t in 0..2 * m {
            target_points.push(vec![T::lit(x1(i)), T::lit((t as f64 + 0.5) * step + PI)]);
        }
    }
    let a = T::one() / T::from_usize_exact(3 * m * m);
    let two_a = a + a;
    let cell = |i: usize, k: usize, sheet: usize| (i * m + k, i * 2 * m + k + (sheet - 1) * m / 2);
    let mut gamma = Vec::with_capacity(3 * m * m);
    let mut gamma_bar = Vec::with_capacity(2 * m * m);
    for i in 0..m {
        for k in 0..m {
            for sheet in 1..=3 {
                let (s, t) = cell(i, k, sheet);
                gamma.push((s, t, a));
            }
            let (s, t) = cell(i, k, 2);
            gamma_bar.push((s, t, two_a));
            let (s, t) = if k < m / 2 {
                cell(i, k, 1)
            } else {
                cell(i, k, 3)
            };
            gamma_bar.push((s, t, a));
        }
    }
    let mut target_weights = vec![T::zero(); target_points.len()];
    for &(_, t, w) in &gamma {
        target_weights[t] = target_weights[t] + w;
    }
    let source = Arc::new(DiscreteMeasure::uniform(source_points)?);
    let target = Arc::new(DiscreteMeasure::new(target_points, target_weights)?);
    Ok(Example31Plans {
        grid_m: m,
        gamma: TransportPlan::new(source.clone(), target.clone(), gamma)?,
        gamma_bar: TransportPlan::new(source, target, gamma_bar)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LowerBoundCheck<T> {
    /// `max c(x,y) − (e^{x₁} − e^{y₁})²/2` over the support; zero on the sheets.
    pub max_residual: T,
    /// The minimum; negative values beyond round-off would refute the bound.
    pub min_residual: T,
}

/// Gap between the cylinder cost and its lower bound on a plan's support.
pub fn verify_lower_bound<T: Scalar>(plan: &TransportPlan<T>) -> Result<LowerBoundCheck<T>> {
    let model = builtin_cost::<T>("example31", 2)?;
    let half = T::lit(0.5);
    let mut max = T::neg_infinity();
    let mut min = T::infinity();
    for e in plan.entries() {
        let x = plan.source().point(e.i);
        let y = plan.target().point(e.j);
        let bound = half * (x[0].exp() - y[0].exp()).powi(2);
        let r = model.eval(x, y)? - bound;
        max = max.max(r);
        min = min.min(r);
    }
    Ok(LowerBoundCheck {
        max_residual: max,
        min_residual: min,
    })
}

/// Pairs on the equality set of the polar cost, `x = e^{y₂}(cos y₁, sin y₁)`.
///
/// Sample `j` has `y₁ = 2πj/samples` and `y₂` from a golden-ratio sequence in
/// `[−1, 1]` starting at 0. Each sample is emitted twice, with `y` and with
/// `y + (2π, 0)`: one `x`, two `y`.
pub fn build_example32_surface<T: Scalar>(samples: usize) -> Result<SupportSample<T>> {
    if samples == 0 {
        return Err(Error::InvalidInput(
            "at least one sample is required".into(),
        ));
    }
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut pairs = Vec::with_capacity(2 * samples);
    for j in 0..samples {
        let y1 = 2.0 * PI * j as f64 / samples as f64;
        let f = 0.5 + j as f64 * golden;
        let y2 = 2.0 * (f - f.floor()) - 1.0;
        let r = y2.exp();
        let x = vec![T::lit(r * y1.cos()), T::lit(r * y1.sin())];
        pairs.push((x.clone(), vec![T::lit(y1), T::lit(y2)]));
        pairs.push((x, vec![T::lit(y1 + 2.0 * PI), T::lit(y2)]));
    }
    SupportSample::new(pairs)
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Example31Report<T> {
    pub grid_m: usize,
    pub gamma_entries: usize,
    pub gamma_bar_entries: usize,
    pub plans_differ: bool,
    /// Largest per-atom gap between the marginals of `γ` and `γ̄`.
    pub marginal_gap: T,
    pub cost_gamma: T,
    pub cost_gamma_bar: T,
    pub cost_mixture: T,
    pub mixture_marginal_gap: T,
    pub solver_cost: T,
    pub lower_bound_gamma: LowerBoundCheck<T>,
    pub lower_bound_gamma_bar: LowerBoundCheck<T>,
    pub monotone: bool,
    pub max_monotonicity_defect: T,
    /// Sheet (1, 2 or 3) of the certificate's base pair.
    pub base_sheet: Option<usize>,
    pub certificate: RectifiabilityCertificate<T>,
    /// Collisions of `y ↦ D_x c(x, y)` at `x = (0.5, 2π)` on a target grid
    /// whose `y₂` spacing divides `2π`.
    pub twist_collisions: usize,
    pub passed: bool,
}

/// Runs every check of the cylinder example on an `m × m` grid.
pub fn reproduce_example31<T: Scalar>(
    grid_m: usize,
    options: &RectifyOptions<T>,
) -> Result<Example31Report<T>> {
    let plans = build_example31_plans::<T>(grid_m)?;
    let model = builtin_cost::<T>("example31", 2)?;
    let (g, gb) = (&plans.gamma, &plans.gamma_bar);
    let tol = T::slack_tolerance();

    let (s1, t1) = marginals(g);
    let (s2, t2) = marginals(gb);
    let marginal_gap = s1
        .max_weight_gap(&s2)
        .unwrap_or_else(T::infinity)
        .max(t1.max_weight_gap(&t2).unwrap_or_else(T::infinity));
    let mixture = g.convex_combination(gb, T::lit(0.5))?;
    let cost_gamma = kantorovich_cost(g, &model)?;
    let cost_gamma_bar = kantorovich_cost(gb, &model)?;
    let cost_mixture = kantorovich_cost(&mixture, &model)?;
    let solved = solve_exact(g.source(), g.target(), &model)?;
    let solver_cost = solved.objective;

    let pairs = support(g, T::lit(crate::measure::DEFAULT_MASS_FLOOR))?;
    let mono = check_pairwise(&pairs, &model, tol)?;
    let certificate = match rectify(&pairs, &model, options)? {
        RectifyOutcome::Certificate(c) => c,
        RectifyOutcome::NotMonotone(_) => {
            return Err(Error::Consistency(
                "the sheet coupling failed the monotonicity check".into(),
            ))
        }
    };
    let base_sheet = certificate.base_point.as_ref().map(|(x, y)| {
        let offset = ((y[1] - x[1]).to_f64_lossy() / PI).round() as usize;
        offset.div_ceil(2)
    });

    let step = T::lit(4.0 * PI / 50.0);
    let y_grid = grid_points(
        &[T::zero(), T::zero()],
        &[T::one(), step * T::lit(50.0)],
        &[50, 50],
    )?;
    let twist = twist_scan(
        &model,
        Direction::XToY,
        &[T::lit(0.5), T::lit(2.0 * PI)],
        &y_grid,
        T::lit(1e-8),
        T::lit(1e-6),
    )?;

    let lb_g = verify_lower_bound(g)?;
    let lb_gb = verify_lower_bound(gb)?;
    let plans_differ = g.entries() != gb.entries();
    let zero_cost = |c: T| c.abs() <= tol;
    let passed = plans_differ
        && marginal_gap <= T::mass_tolerance()
        && mixture.marginal_gap() <= T::mass_tolerance()
        && zero_cost(cost_gamma)
        && zero_cost(cost_gamma_bar)
        && zero_cost(cost_mixture)
        && (solver_cost - cost_gamma).abs() <= tol
        && lb_g.max_residual <= tol
        && lb_g.min_residual >= -T::mass_tolerance()
        && mono.passed()
        && certificate.certified()
        && !twist.injective_on_sample;
    Ok(Example31Report {
        grid_m,
        gamma_entries: g.len(),
        gamma_bar_entries: gb.len(),
        plans_differ,
        marginal_gap,
        cost_gamma,
        cost_gamma_bar,
        cost_mixture,
        mixture_marginal_gap: mixture.marginal_gap(),
        solver_cost,
        lower_bound_gamma: lb_g,
        lower_bound_gamma_bar: lb_gb,
        monotone: mono.passed(),
        max_monotonicity_defect: mono.max_defect,
        base_sheet,
        certificate,
        twist_collisions: twist.collisions.len(),
        passed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Example32Report<T> {
    pub pairs: usize,
    /// Largest `|c(x, y)|` on the emitted pairs; zero on the equality set.
    pub max_abs_cost: T,
    pub monotone: bool,
    pub max_monotonicity_defect: T,
    /// Emitted pairs sharing `x` with a different `y`.
    pub shared_x_pairs: usize,
    /// Largest relative error of `det D²xy c` against `−e^{2y₂}` on the pairs.
    pub max_determinant_error: T,
    pub degenerate_points: usize,
    /// Collisions of `x ↦ D_y c(x, y)` at `y = (π/3, 0.2)` over a 50 × 50 grid of
    /// the source box.
    pub twist_collisions: usize,
    pub passed: bool,
}

pub fn reproduce_example32<T: Scalar>(samples: usize) -> Result<Example32Report<T>> {
    let model: CostModel<T> = builtin_cost("example32", 2)?;
    let surface = build_example32_surface::<T>(samples)?;
    let tol = T::slack_tolerance();
    let mut max_abs_cost = T::zero();
    let mut max_det_err = T::zero();
    let mut degenerate = 0;
    for (x, y) in &surface.pairs {
        max_abs_cost = max_abs_cost.max(model.eval(x, y)?.abs());
        let k = classify_point(&model, x, y, T::lit(DEGENERACY_THRESHOLD))?;
        let expected = -(T::lit(2.0) * y[1]).exp();
        max_det_err = max_det_err.max(((k.determinant - expected) / expected).abs());
        if k.degenerate {
            degenerate += 1;
        }
    }
    let mono = check_pairwise(&surface, &model, tol)?;
    let shared = surface
        .pairs
        .chunks(2)
        .filter(|c| c.len() == 2 && c[0].0 == c[1].0 && c[0].1 != c[1].1)
        .count();
    let dx = model.domain_x();
    let x_grid = grid_points(&dx.lower, &dx.upper, &[50, 50])?;
    let twist = twist_scan(
        &model,
        Direction::YToX,
        &[T::lit(PI / 3.0), T::lit(0.2)],
        &x_grid,
        T::lit(1e-8),
        T::lit(1e-6),
    )?;
    let passed = max_abs_cost <= tol
        && mono.passed()
        && shared == samples
        && max_det_err <= tol
        && degenerate == 0
        && twist.injective_on_sample;
    Ok(Example32Report {
        pairs: surface.len(),
        max_abs_cost,
        monotone: mono.passed(),
        max_monotonicity_defect: mono.max_defect,
        shared_x_pairs: shared,
        max_determinant_error: max_det_err,
        degenerate_points: degenerate,
        twist_collisions: twist.collisions.len(),
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_share_marginals() {
        let p = build_example31_plans::<f64>(4).unwrap();
        let (s1, t1) = marginals(&p.gamma);
        let (s2, t2) = marginals(&p.gamma_bar);
        assert!(s1.max_weight_gap(&s2).unwrap() <= 1e-15);
        assert!(t1.max_weight_gap(&t2).unwrap() <= 1e-15);
        assert_ne!(p.gamma.entries(), p.gamma_bar.entries());
        assert_eq!(p.gamma.len(), 48);
        assert_eq!(p.gamma_bar.len(), 32);
    }

    #[test]
    fn odd_grid_rejected() {
        assert!(build_example31_plans::<f64>(3).is_err());
        assert!(build_example31_plans::<f64>(0).is_err());
        assert!(build_example31_plans::<f64>(2).is_ok());
    }

    #[test]
    fn sheet_pairs_meet_the_bound() {
        let p = build_example31_plans::<f64>(6).unwrap();
        let lb = verify_lower_bound(&p.gamma).unwrap();
        assert!(
            lb.max_residual <= 1e-9 && lb.min_residual >= -1e-12,
            "{lb:?}"
        );
        let prod =
            TransportPlan::product(p.gamma.source().clone(), p.gamma.target().clone()).unwrap();
        let lb = verify_lower_bound(&prod).unwrap();
        assert!(lb.max_residual > 1.0 && lb.min_residual >= -1e-12);
    }

    #[test]
    fn single_middle_sheet_pair() {
        let src = Arc::new(DiscreteMeasure::uniform(vec![vec![0.3, 1.0]]).unwrap());
        let tgt = Arc::new(DiscreteMeasure::uniform(vec![vec![0.3, 1.0 + 3.0 * PI]]).unwrap());
        let plan = TransportPlan::new(src, tgt, vec![(0, 0, 1.0)]).unwrap();
        assert!(verify_lower_bound(&plan).unwrap().max_residual.abs() < 1e-12);
    }

    #[test]
    fn polar_surface() {
        let s = build_example32_surface::<f64>(8).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(s.pairs[0], (vec![1.0, 0.0], vec![0.0, 0.0]));
        assert_eq!(s.pairs[1].0, vec![1.0, 0.0]);
        assert_eq!(s.pairs[1].1, vec![2.0 * PI, 0.0]);
        let c = builtin_cost::<f64>("example32", 2).unwrap();
        for (x, y) in &s.pairs {
            assert!(c.eval(x, y).unwrap().abs() < 1e-12);
        }
        assert!(build_example32_surface::<f64>(0).is_err());
    }

    #[test]
    fn polar_report_passes() {
        let r = reproduce_example32::<f64>(40).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
