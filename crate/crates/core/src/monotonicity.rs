//! b-monotonicity and cyclical monotonicity of pair sets.
//!
//! With surplus `b = −c`, a set of pairs is b-monotone when no two pairs can
//! swap partners to increase total surplus. The defect of a pair of pairs is
//! `b(x₀,y₁) + b(x₁,y₀) − b(x₀,y₀) − b(x₁,y₁)`; positive defects are
//! violations. The cyclical check extends this to reassignment cycles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::measure::SupportSample;
use crate::scalar::Scalar;

/// Supports with more pairs than this are checked on a random subset of
/// pair-pairs when sampling is enabled.
pub const SAMPLING_THRESHOLD: usize = 10_000;

/// Largest cycle length accepted by [`check_cyclical`].
pub const MAX_CYCLE: usize = 6;

/// At most this many cycles are enumerated by [`check_cyclical`].
pub const CYCLE_BUDGET: u128 = 50_000_000;

/// Stored violations are capped; `violation_count` keeps the full tally.
pub const MAX_REPORTED_VIOLATIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation<T> {
    /// Support indices; for cycles, `indices[t]` is reassigned to the target
    /// of `indices[t + 1]` (cyclically).
    pub indices: Vec<usize>,
    pub defect: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport<T> {
    pub checked: u64,
    /// Violations by descending defect, at most [`MAX_REPORTED_VIOLATIONS`].
    pub violations: Vec<Violation<T>>,
    pub violation_count: u64,
    pub max_defect: T,
    pub tolerance: T,
    pub sampled: bool,
    pub verdict: Verdict,
}

impl<T: Scalar> MonotonicityReport<T> {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Partial result; merging is associative.
struct Tally<T> {
    checked: u64,
    max_defect: T,
    violations: Vec<Violation<T>>,
    count: u64,
}

impl<T: Scalar> Tally<T> {
    fn empty() -> Self {
        Self {
            checked: 0,
            max_defect: T::neg_infinity(),
            violations: Vec::new(),
            count: 0,
        }
    }

    fn record(&mut self, indices: impl FnOnce() -> Vec<usize>, defect: T, tol: T) {
        self.checked += 1;
        if defect > self.max_defect || defect.is_nan() {
            self.max_defect = defect;
        }
        if defect > tol || defect.is_nan() {
            self.count += 1;
            self.violations.push(Violation {
                indices: indices(),
                defect,
            });
            if self.violations.len() > 2 * MAX_REPORTED_VIOLATIONS {
                self.trim();
            }
        }
    }

    fn trim(&mut self) {
        sort_violations(&mut self.violations);
        self.violations.truncate(MAX_REPORTED_VIOLATIONS);
    }

    fn merge(mut self, mut other: Self) -> Self {
        self.checked += other.checked;
        self.count += other.count;
        if other.max_defect > self.max_defect || other.max_defect.is_nan() {
            self.max_defect = other.max_defect;
        }
        self.violations.append(&mut other.violations);
        if self.violations.len() > 2 * MAX_REPORTED_VIOLATIONS {
            self.trim();
        }
        self
    }

    fn into_report(mut self, tolerance: T, sampled: bool) -> MonotonicityReport<T> {
        self.trim();
        let verdict = if self.max_defect <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        MonotonicityReport {
            checked: self.checked,
            violations: self.violations,
            violation_count: self.count,
            max_defect: self.max_defect,
            tolerance,
            sampled,
            verdict,
        }
    }
}

fn sort_violations<T: Scalar>(v: &mut [Violation<T>]) {
    v.sort_by(|a, b| {
        b.defect
            .partial_cmp(&a.defect)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.indices.cmp(&b.indices))
    });
}

/// `cost[a][b] = c(x_a, y_b)` over support indices.
fn cross_costs<T: Scalar>(support: &SupportSample<T>, model: &CostModel<T>) -> Result<Vec<Vec<T>>> {
    support.check_domain(model)?;
    Ok(support
        .pairs
        .par_iter()
        .map(|(x, _)| {
            support
                .pairs
                .iter()
                .map(|(_, y)| model.eval_unchecked(x, y))
                .collect()
        })
        .collect())
}

fn pair_defect<T: Scalar>(cost: &[Vec<T>], a: usize, b: usize) -> T {
    // b = −c, so the surplus defect is the diagonal cost minus the swapped cost.
    cost[a][a] + cost[b][b] - cost[a][b] - cost[b][a]
}

/// How [`check_pairwise_with`] covers the pair-pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    /// Every unordered pair of support points.
    Exhaustive,
    /// Exhaustive up to [`SAMPLING_THRESHOLD`] pairs, otherwise `samples`
    /// uniformly random pair-pairs drawn with `seed`.
    Auto { samples: usize, seed: u64 },
}

/// Two-point b-monotonicity over every unordered pair of support points.
pub fn check_pairwise<T: Scalar>(
    support: &SupportSample<T>,
    model: &CostModel<T>,
    tolerance: T,
) -> Result<MonotonicityReport<T>> {
    check_pairwise_with(support, model, tolerance, Coverage::Exhaustive)
}

pub fn check_pairwise_with<T: Scalar>(
    support: &SupportSample<T>,
    model: &CostModel<T>,
    tolerance: T,
    coverage: Coverage,
) -> Result<MonotonicityReport<T>> {
    let m = support.len();
    if m < 2 {
        return Err(Error::DegenerateInput(
            "monotonicity needs at least two support pairs".into(),
        ));
    }
    if let Coverage::Auto { samples, seed } = coverage {
        if m > SAMPLING_THRESHOLD {
            support.check_domain(model)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<(usize, usize)> = (0..samples)
                .map(|_| {
                    let a = rng.gen_range(0..m);
                    let mut b = rng.gen_range(0..m - 1);
                    if b >= a {
                        b += 1;
                    }
                    (a.min(b), a.max(b))
                })
                .collect();
            let tally = draws
                .par_iter()
                .fold(Tally::empty, |mut t, &(a, b)| {
                    let (xa, ya) = &support.pairs[a];
                    let (xb, yb) = &support.pairs[b];
                    let d = model.eval_unchecked(xa, ya) + model.eval_unchecked(xb, yb)
                        - model.eval_unchecked(xa, yb)
                        - model.eval_unchecked(xb, ya);
                    t.record(|| vec![a, b], d, tolerance);
                    t
                })
                .reduce(Tally::empty, Tally::merge);
            return Ok(tally.into_report(tolerance, true));
        }
    }
    let cost = cross_costs(support, model)?;
    let tally = (0..m)
        .into_par_iter()
        .fold(Tally::empty, |mut t, a| {
            for b in a + 1..m {
                t.record(|| vec![a, b], pair_defect(&cost, a, b), tolerance);
            }
            t
        })
        .reduce(Tally::empty, Tally::merge);
    Ok(tally.into_report(tolerance, false))
}

/// Cyclical monotonicity over all cycles of length `2..=max_cycle`.
///
/// A cycle `(i₀, …, i_{k−1})` reassigns `x_{iₜ}` to `y_{iₜ₊₁}`; its defect is
/// `Σ c(x_{iₜ}, y_{iₜ}) − Σ c(x_{iₜ}, y_{iₜ₊₁})`. Each cycle is enumerated
/// once, starting from its smallest index. For `k = 2` this is exactly the
/// pairwise defect.
pub fn check_cyclical<T: Scalar>(
    support: &SupportSample<T>,
    model: &CostModel<T>,
    max_cycle: usize,
    tolerance: T,
) -> Result<MonotonicityReport<T>> {
    if !(2..=MAX_CYCLE).contains(&max_cycle) {
        return Err(Error::InvalidInput(format!(
            "cycle length must lie in 2..={MAX_CYCLE}, got {max_cycle}"
        )));
    }
    let m = support.len();
    if m < 2 {
        return Err(Error::DegenerateInput(
            "monotonicity needs at least two support pairs".into(),
        ));
    }
    let budget: u128 = (2..=max_cycle.min(m))
        .map(|k| (0..k as u128).map(|t| m as u128 - t).product::<u128>() / k as u128)
        .sum();
    if budget > CYCLE_BUDGET {
        return Err(Error::InvalidInput(format!(
            "{budget} cycles exceed the enumeration budget {CYCLE_BUDGET}; lower the cycle length"
        )));
    }
    let cost = cross_costs(support, model)?;
    let tally = (0..m)
        .into_par_iter()
        .fold(Tally::empty, |mut t, first| {
            let mut cycle = vec![first];
            let mut used = vec![false; m];
            used[first] = true;
            extend_cycles(&cost, &mut cycle, &mut used, max_cycle, tolerance, &mut t);
            t
        })
        .reduce(Tally::empty, Tally::merge);
    Ok(tally.into_report(tolerance, false))
}

fn extend_cycles<T: Scalar>(
    cost: &[Vec<T>],
    cycle: &mut Vec<usize>,
    used: &mut [bool],
    max_cycle: usize,
    tol: T,
    tally: &mut Tally<T>,
) {
    let first = cycle[0];
    for next in first + 1..cost.len() {
        if used[next] {
            continue;
        }
        cycle.push(next);
        used[next] = true;
        let k = cycle.len();
        let identity: T = cycle.iter().map(|&a| cost[a][a]).sum();
        let shifted: T = (0..k).map(|t| cost[cycle[t]][cycle[(t + 1) % k]]).sum();
        tally.record(|| cycle.clone(), identity - shifted, tol);
        if k < max_cycle {
            extend_cycles(cost, cycle, used, max_cycle, tol, tally);
        }
        cycle.pop();
        used[next] = false;
    }
}
