//! Discrete probability measures, transport plans and support samples.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default mass floor below which plan entries are not considered support.
pub const DEFAULT_MASS_FLOOR: f64 = 1e-12;

/// A weighted point cloud whose weights sum to one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteMeasure<T> {
    points: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> DiscreteMeasure<T> {
    /// Validates shapes, non-negativity and total mass.
    pub fn new(points: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        let m = Self::unchecked(points, weights)?;
        let total = m.total_mass();
        if (total - T::one()).abs() > T::mass_tolerance() {
            return Err(Error::InvalidInput(format!(
                "weights sum to {} instead of 1",
                total.to_f64_lossy()
            )));
        }
        Ok(m)
    }

    /// Equal weights `1/N`.
    pub fn uniform(points: Vec<Vec<T>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidInput("measure has no points".into()));
        }
        let w = T::one() / T::from_usize_exact(n);
        Self::new(points, vec![w; n])
    }

    /// Rescales arbitrary non-negative weights to unit mass.
    pub fn normalized(points: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        let m = Self::unchecked(points, weights)?;
        let total = m.total_mass();
        if !(total > T::zero()) {
            return Err(Error::InvalidInput("measure has zero total mass".into()));
        }
        let weights = m.weights.iter().map(|&w| w / total).collect();
        Ok(Self {
            points: m.points,
            weights,
        })
    }

    /// Shape and sign checks only; total mass is not enforced.
    pub(crate) fn unchecked(points: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("measure has no points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidInput(
                "points must share a positive dimension".into(),
            ));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        if let Some(w) = weights
            .iter()
            .find(|w| !(**w >= T::zero()) || !w.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "invalid weight {}",
                w.to_f64_lossy()
            )));
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn total_mass(&self) -> T {
        self.weights.iter().copied().sum()
    }

    /// Largest per-atom weight difference against another measure on the
    /// same points, or `None` when the point sets differ.
    pub fn max_weight_gap(&self, other: &Self) -> Option<T> {
        if self.points != other.points {
            return None;
        }
        Some(
            self.weights
                .iter()
                .zip(&other.weights)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }
}

/// One cell of a coupling: `mass` moved from source atom `i` to target atom `j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlanEntry<T> {
    pub i: usize,
    pub j: usize,
    pub mass: T,
}

/// A sparse coupling between two discrete measures.
///
/// Entries are kept sorted by `(i, j)` with duplicates merged and zero masses
/// dropped.
#[derive(Clone, Debug)]
pub struct TransportPlan<T> {
    source: Arc<DiscreteMeasure<T>>,
    target: Arc<DiscreteMeasure<T>>,
    entries: Vec<PlanEntry<T>>,
}

impl<T: Scalar> TransportPlan<T> {
    /// Builds a plan and checks that its marginals reproduce both measures
    /// within the mass tolerance.
    pub fn new(
        source: Arc<DiscreteMeasure<T>>,
        target: Arc<DiscreteMeasure<T>>,
        entries: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Result<Self> {
        let plan = Self::unchecked(source, target, entries)?;
        let gap = plan.marginal_gap();
        if gap > T::mass_tolerance() {
            return Err(Error::InvalidInput(format!(
                "plan marginals deviate from the measures by {:e}",
                gap.to_f64_lossy()
            )));
        }
        Ok(plan)
    }

    /// Builds a plan checking indices and signs but not marginals.
    pub fn unchecked(
        source: Arc<DiscreteMeasure<T>>,
        target: Arc<DiscreteMeasure<T>>,
        entries: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::InvalidInput(format!(
                "source dimension {} differs from target dimension {}",
                source.dim(),
                target.dim()
            )));
        }
        let mut merged: BTreeMap<(usize, usize), T> = BTreeMap::new();
        for (i, j, mass) in entries {
            if i >= source.len() || j >= target.len() {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) out of range for {}x{} plan",
                    source.len(),
                    target.len()
                )));
            }
            if !(mass >= T::zero()) || !mass.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) has invalid mass {}",
                    mass.to_f64_lossy()
                )));
            }
            let slot = merged.entry((i, j)).or_insert_with(T::zero);
            *slot = *slot + mass;
        }
        let entries = merged
            .into_iter()
            .filter(|(_, m)| *m > T::zero())
            .map(|((i, j), mass)| PlanEntry { i, j, mass })
            .collect();
        Ok(Self {
            source,
            target,
            entries,
        })
    }

    /// The independent coupling `wᵢ·w′ⱼ`.
    pub fn product(
        source: Arc<DiscreteMeasure<T>>,
        target: Arc<DiscreteMeasure<T>>,
    ) -> Result<Self> {
        let entries: Vec<_> = (0..source.len())
            .flat_map(|i| {
                let wi = source.weights()[i];
                let tw = target.weights().to_vec();
                (0..tw.len()).map(move |j| (i, j, wi * tw[j]))
            })
            .collect();
        Self::new(source, target, entries)
    }

    pub fn source(&self) -> &Arc<DiscreteMeasure<T>> {
        &self.source
    }

    pub fn target(&self) -> &Arc<DiscreteMeasure<T>> {
        &self.target
    }

    pub fn entries(&self) -> &[PlanEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row_sums(&self) -> Vec<T> {
        let mut rows = vec![T::zero(); self.source.len()];
        for e in &self.entries {
            rows[e.i] = rows[e.i] + e.mass;
        }
        rows
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut cols = vec![T::zero(); self.target.len()];
        for e in &self.entries {
            cols[e.j] = cols[e.j] + e.mass;
        }
        cols
    }

    /// Largest deviation of a row or column sum from the declared weights.
    pub fn marginal_gap(&self) -> T {
        let rows = self.row_sums();
        let cols = self.col_sums();
        let gap = |sums: &[T], w: &[T]| {
            sums.iter()
                .zip(w)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
        };
        gap(&rows, self.source.weights()).max(gap(&cols, self.target.weights()))
    }

    /// `t·self + (1−t)·other` for plans over the same two measures.
    pub fn convex_combination(&self, other: &Self, t: T) -> Result<Self> {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::InvalidInput(
                "mixing weight must lie in [0, 1]".into(),
            ));
        }
        if self.source.as_ref() != other.source.as_ref()
            || self.target.as_ref() != other.target.as_ref()
        {
            return Err(Error::InvalidInput(
                "convex combination needs plans over the same measures".into(),
            ));
        }
        let s = T::one() - t;
        let entries = self
            .entries
            .iter()
            .map(|e| (e.i, e.j, t * e.mass))
            .chain(other.entries.iter().map(|e| (e.i, e.j, s * e.mass)));
        Self::new(
            self.source.clone(),
            self.target.clone(),
            entries.collect::<Vec<_>>(),
        )
    }
}

/// A finite set of `(x, y)` pairs standing for the support of a coupling.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportSample<T> {
    pub pairs: Vec<(Vec<T>, Vec<T>)>,
    pub masses: Option<Vec<T>>,
}

impl<T: Scalar> SupportSample<T> {
    pub fn new(pairs: Vec<(Vec<T>, Vec<T>)>) -> Result<Self> {
        Self::validate(&pairs)?;
        Ok(Self {
            pairs,
            masses: None,
        })
    }

    pub fn with_masses(pairs: Vec<(Vec<T>, Vec<T>)>, masses: Vec<T>) -> Result<Self> {
        Self::validate(&pairs)?;
        if masses.len() != pairs.len() {
            return Err(Error::InvalidInput("one mass per pair required".into()));
        }
        Ok(Self {
            pairs,
            masses: Some(masses),
        })
    }

    fn validate(pairs: &[(Vec<T>, Vec<T>)]) -> Result<()> {
        let Some((x0, _)) = pairs.first() else {
            return Err(Error::InvalidInput("support sample is empty".into()));
        };
        let dim = x0.len();
        if dim == 0 || pairs.iter().any(|(x, y)| x.len() != dim || y.len() != dim) {
            return Err(Error::InvalidInput(
                "pairs must share a positive dimension".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].0.len()
    }

    /// Errors if any pair lies outside the model's working boxes.
    pub fn check_domain(&self, model: &CostModel<T>) -> Result<()> {
        if model.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "pairs have dimension {}, cost `{}` has dimension {}",
                self.dim(),
                model.label(),
                model.dim()
            )));
        }
        self.pairs
            .iter()
            .try_for_each(|(x, y)| model.check_domain(x, y))
    }
}

/// Computed marginals `(π⁺#γ, π⁻#γ)`, on the plan's own atoms.
pub fn marginals<T: Scalar>(plan: &TransportPlan<T>) -> (DiscreteMeasure<T>, DiscreteMeasure<T>) {
    let src = DiscreteMeasure::unchecked(plan.source.points().to_vec(), plan.row_sums())
        .expect("plan source is a valid measure");
    let tgt = DiscreteMeasure::unchecked(plan.target.points().to_vec(), plan.col_sums())
        .expect("plan target is a valid measure");
    (src, tgt)
}

/// Pairs `(xᵢ, yⱼ)` carrying mass strictly above `mass_floor`.
pub fn support<T: Scalar>(plan: &TransportPlan<T>, mass_floor: T) -> Result<SupportSample<T>> {
    if !(mass_floor >= T::zero()) {
        return Err(Error::InvalidInput(
            "mass floor must be non-negative".into(),
        ));
    }
    let (pairs, masses): (Vec<_>, Vec<_>) = plan
        .entries
        .iter()
        .filter(|e| e.mass > mass_floor)
        .map(|e| {
            (
                (
                    plan.source.point(e.i).to_vec(),
                    plan.target.point(e.j).to_vec(),
                ),
                e.mass,
            )
        })
        .unzip();
    if pairs.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "no plan entry exceeds the mass floor {:e}",
            mass_floor.to_f64_lossy()
        )));
    }
    SupportSample::with_masses(pairs, masses)
}

/// `Σ mass · c(xᵢ, yⱼ)` over the plan entries.
pub fn kantorovich_cost<T: Scalar>(plan: &TransportPlan<T>, model: &CostModel<T>) -> Result<T> {
    plan.entries.iter().try_fold(T::zero(), |acc, e| {
        let c = model.eval(plan.source.point(e.i), plan.target.point(e.j))?;
        Ok(acc + e.mass * c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::WorkBox;

    fn line(points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&p| vec![p]).collect()
    }

    fn sq_cost() -> CostModel<f64> {
        CostModel::new(
            "sq",
            WorkBox::cube(1, -10.0, 10.0),
            WorkBox::cube(1, -10.0, 10.0),
            |x: &[f64], y: &[f64]| (x[0] - y[0]).powi(2),
        )
        .unwrap()
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(line(&[0.0, 1.0]), vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(line(&[0.0, 1.0]), vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(line(&[0.0]), vec![1.0, 0.0]).is_err());
        assert!(DiscreteMeasure::<f64>::new(vec![], vec![]).is_err());
        let m = DiscreteMeasure::normalized(line(&[0.0, 1.0]), vec![1.0, 3.0]).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn diagonal_plan_marginals() {
        let mu = Arc::new(DiscreteMeasure::uniform(line(&[0.0, 1.0])).unwrap());
        let plan =
            TransportPlan::new(mu.clone(), mu.clone(), vec![(0, 0, 0.5), (1, 1, 0.5)]).unwrap();
        let (a, b) = marginals(&plan);
        assert_eq!(a.weights(), &[0.5, 0.5]);
        assert_eq!(b.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn product_plan_reproduces_marginals() {
        let a =
            Arc::new(DiscreteMeasure::new(line(&[0.0, 1.0, 2.0]), vec![0.2, 0.3, 0.5]).unwrap());
        let b = Arc::new(DiscreteMeasure::new(line(&[5.0, 6.0]), vec![0.9, 0.1]).unwrap());
        let plan = TransportPlan::product(a.clone(), b.clone()).unwrap();
        let (pa, pb) = marginals(&plan);
        assert!(pa.max_weight_gap(&a).unwrap() <= 1e-15);
        assert!(pb.max_weight_gap(&b).unwrap() <= 1e-15);
        assert_eq!(support(&plan, 0.0).unwrap().len(), 6);
    }

    #[test]
    fn infeasible_plan_rejected() {
        let mu = Arc::new(DiscreteMeasure::uniform(line(&[0.0, 1.0])).unwrap());
        assert!(TransportPlan::new(mu.clone(), mu.clone(), vec![(0, 0, 1.0)]).is_err());
        assert!(TransportPlan::new(mu.clone(), mu.clone(), vec![(0, 2, 1.0)]).is_err());
        assert!(TransportPlan::new(mu.clone(), mu, vec![(0, 0, -0.5)]).is_err());
    }

    #[test]
    fn zero_entries_dropped_and_duplicates_merged() {
        let mu = Arc::new(DiscreteMeasure::uniform(line(&[0.0, 1.0])).unwrap());
        let plan = TransportPlan::new(
            mu.clone(),
            mu,
            vec![(1, 1, 0.25), (0, 0, 0.5), (0, 1, 0.0), (1, 1, 0.25)],
        )
        .unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(
            plan.entries()[1],
            PlanEntry {
                i: 1,
                j: 1,
                mass: 0.5
            }
        );
    }

    #[test]
    fn support_thresholds_and_rejects_empty() {
        let mu = Arc::new(DiscreteMeasure::uniform(line(&[0.0, 1.0, 2.0])).unwrap());
        let third = 1.0 / 3.0;
        let plan = TransportPlan::new(mu.clone(), mu, (0..3).map(|i| (i, i, third))).unwrap();
        assert_eq!(support(&plan, 0.0).unwrap().len(), 3);
        assert!(support(&plan, 0.5).is_err());
        assert!(support(&plan, -1.0).is_err());
    }

    #[test]
    fn cost_of_identity_and_swap() {
        let mu = Arc::new(DiscreteMeasure::uniform(line(&[0.0, 1.0])).unwrap());
        let id =
            TransportPlan::new(mu.clone(), mu.clone(), vec![(0, 0, 0.5), (1, 1, 0.5)]).unwrap();
        let anti = TransportPlan::new(mu.clone(), mu, vec![(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        assert_eq!(kantorovich_cost(&id, &sq_cost()).unwrap(), 0.0);
        assert_eq!(kantorovich_cost(&anti, &sq_cost()).unwrap(), 1.0);
    }

    #[test]
    fn cost_is_linear_under_mixing() {
        let mu = Arc::new(DiscreteMeasure::uniform(line(&[0.0, 1.0])).unwrap());
        let nu = Arc::new(DiscreteMeasure::uniform(line(&[0.5, 3.0])).unwrap());
        let id =
            TransportPlan::new(mu.clone(), nu.clone(), vec![(0, 0, 0.5), (1, 1, 0.5)]).unwrap();
        let anti = TransportPlan::new(mu, nu, vec![(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        let c = sq_cost();
        for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let mix = id.convex_combination(&anti, t).unwrap();
            let lhs = kantorovich_cost(&mix, &c).unwrap();
            let rhs = t * kantorovich_cost(&id, &c).unwrap()
                + (1.0 - t) * kantorovich_cost(&anti, &c).unwrap();
            assert!((lhs - rhs).abs() < 1e-14);
            assert!(mix.marginal_gap() < 1e-15);
        }
    }
}
