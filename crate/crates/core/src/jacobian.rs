//! Change-of-variables check `f⁺(x) = |det DT(x)|·f⁻(T(x))` for maps read off
//! discrete plans.
//!
//! A plan is reduced to a map by barycentric projection; `DT` is estimated by
//! local affine least squares over nearest neighbours.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measure::{DiscreteMeasure, TransportPlan};
use crate::scalar::{dist, Scalar};

/// A probability density on `Rⁿ`.
pub trait Density<T>: Send + Sync {
    fn density(&self, p: &[T]) -> T;
}

impl<T, F> Density<T> for F
where
    F: Fn(&[T]) -> T + Send + Sync,
{
    fn density(&self, p: &[T]) -> T {
        self(p)
    }
}

/// Built-in densities.
#[derive(Clone, Debug, PartialEq)]
pub enum DensityModel<T> {
    /// Uniform on a box.
    Uniform { lower: Vec<T>, upper: Vec<T> },
    /// Isotropic normal with standard deviation `std` per axis.
    Gaussian { mean: Vec<T>, std: T },
    /// Piecewise constant on a regular cell grid; zero outside.
    Grid(GridDensity<T>),
}

impl<T: Scalar> DensityModel<T> {
    /// Parses `uniform:lo:hi` (the cube `[lo, hi]ⁿ`) or `gaussian:mean:std`
    /// (mean repeated on every axis).
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad number `{s}` in density `{spec}`")))
        };
        match parts.as_slice() {
            ["uniform", lo, hi] => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if !(lo < hi) {
                    return Err(Error::InvalidInput(format!("empty interval in `{spec}`")));
                }
                Ok(Self::Uniform {
                    lower: vec![T::lit(lo); dim],
                    upper: vec![T::lit(hi); dim],
                })
            }
            ["gaussian", mean, std] => {
                let std = num(std)?;
                if !(std > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "nonpositive deviation in `{spec}`"
                    )));
                }
                Ok(Self::Gaussian {
                    mean: vec![T::lit(num(mean)?); dim],
                    std: T::lit(std),
                })
            }
            _ => Err(Error::InvalidInput(format!(
                "unknown density `{spec}`; expected uniform:lo:hi, gaussian:mean:std or a CSV file"
            ))),
        }
    }
}

impl<T: Scalar> Density<T> for DensityModel<T> {
    fn density(&self, p: &[T]) -> T {
        match self {
            Self::Uniform { lower, upper } => {
                let inside = p
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(&v, (&lo, &hi))| v >= lo && v <= hi);
                if inside {
                    lower
                        .iter()
                        .zip(upper)
                        .fold(T::one(), |acc, (&lo, &hi)| acc / (hi - lo))
                } else {
                    T::zero()
                }
            }
            Self::Gaussian { mean, std } => {
                let n = T::from_usize_exact(mean.len());
                let two_pi = T::lit(2.0 * std::f64::consts::PI);
                let r2: T = p.iter().zip(mean).map(|(&a, &m)| (a - m) * (a - m)).sum();
                (-(r2 / (T::lit(2.0) * *std * *std))).exp()
                    / (two_pi * *std * *std).powf(n / T::lit(2.0))
            }
            Self::Grid(g) => g.density(p),
        }
    }
}

/// Cell-constant density on the grid `lower + k·(upper − lower)/counts`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity<T> {
    pub cells: CellPartition<T>,
    /// Row-major values, last axis fastest.
    pub values: Vec<T>,
}

impl<T: Scalar> GridDensity<T> {
    /// Reconstructs the grid from cell centres, which must form a complete
    /// regular lattice with at least two centres per axis.
    pub fn from_cell_centres(centres: &[Vec<T>], values: &[T]) -> Result<Self> {
        if centres.is_empty() || centres.len() != values.len() {
            return Err(Error::InvalidInput(
                "density grid needs one value per cell centre".into(),
            ));
        }
        if values.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::InvalidInput(
                "density values must be nonnegative".into(),
            ));
        }
        let n = centres[0].len();
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        let mut counts = Vec::with_capacity(n);
        for axis in 0..n {
            let mut coords: Vec<T> = centres.iter().map(|c| c[axis]).collect();
            coords.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            coords.dedup_by(|a, b| (*a - *b).abs() <= T::lit(1e-9) * (T::one() + b.abs()));
            if coords.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "density grid needs at least two cell centres along axis {axis}"
                )));
            }
            let step =
                (coords[coords.len() - 1] - coords[0]) / T::from_usize_exact(coords.len() - 1);
            let half = step / T::lit(2.0);
            lower.push(coords[0] - half);
            upper.push(coords[coords.len() - 1] + half);
            counts.push(coords.len());
        }
        let cells = CellPartition::new(lower, upper, counts)?;
        if cells.len() != centres.len() {
            return Err(Error::InvalidInput(
                "density grid is not a complete lattice".into(),
            ));
        }
        let mut grid = vec![T::nan(); cells.len()];
        for (c, &v) in centres.iter().zip(values) {
            let k = cells
                .cell_of(c)
                .ok_or_else(|| Error::InvalidInput("cell centre outside the grid".into()))?;
            grid[k] = v;
        }
        if grid.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput(
                "density grid has irregular spacing".into(),
            ));
        }
        Ok(Self {
            cells,
            values: grid,
        })
    }

    pub fn density(&self, p: &[T]) -> T {
        self.cells
            .cell_of(p)
            .map_or_else(T::zero, |k| self.values[k])
    }
}

/// Regular partition of a box into `counts[i]` cells along axis `i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellPartition<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub counts: Vec<usize>,
}

impl<T: Scalar> CellPartition<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>, counts: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != counts.len() {
            return Err(Error::InvalidInput(
                "partition needs matching bounds and counts".into(),
            ));
        }
        if counts.contains(&0) {
            return Err(Error::InvalidInput("partition is empty".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidInput(
                "partition bounds must satisfy lower < upper".into(),
            ));
        }
        Ok(Self {
            lower,
            upper,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of the half-open cell containing `p`; the upper face of the
    /// box belongs to the last cell.
    pub fn cell_of(&self, p: &[T]) -> Option<usize> {
        let mut flat = 0;
        for axis in 0..self.counts.len() {
            let (lo, hi) = (self.lower[axis], self.upper[axis]);
            let span = hi - lo;
            let slack = span * T::lit(1e-12);
            if p[axis] < lo - slack || p[axis] > hi + slack {
                return None;
            }
            let n = self.counts[axis];
            let t = ((p[axis] - lo) / span * T::from_usize_exact(n)).floor();
            let k = t.to_usize().unwrap_or(0).min(n - 1);
            flat = flat * n + k;
        }
        Some(flat)
    }
}

/// Barycentric image of one source atom.
#[derive(Clone, Debug, Serialize)]
pub struct MapPoint<T> {
    /// Source atom index.
    pub index: usize,
    pub x: Vec<T>,
    pub tx: Vec<T>,
    pub mass: T,
    /// Diameter of the set of matched targets.
    pub spread: T,
    /// The matched targets span more than the grid scale.
    pub split_mass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MapEstimate<T> {
    pub points: Vec<MapPoint<T>>,
    pub grid_scale: T,
}

impl<T: Scalar> MapEstimate<T> {
    pub fn flagged_fraction(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().filter(|p| p.split_mass).count() as f64 / self.points.len() as f64
    }
}

/// Reduces a plan to `x ↦ T(x)`, the mass-weighted mean of matched targets.
///
/// Source atoms whose targets span more than `grid_scale` are flagged as
/// split mass.
pub fn estimate_map<T: Scalar>(plan: &TransportPlan<T>, grid_scale: T) -> MapEstimate<T> {
    let source = plan.source();
    let target = plan.target();
    let mut points = Vec::new();
    let entries = plan.entries();
    let mut start = 0;
    while start < entries.len() {
        let i = entries[start].i;
        let end = start + entries[start..].iter().take_while(|e| e.i == i).count();
        let row = &entries[start..end];
        let mass: T = row.iter().map(|e| e.mass).sum();
        let n = source.dim();
        let tx = if let [e] = row {
            target.point(e.j).to_vec()
        } else {
            let mut tx = vec![T::zero(); n];
            for e in row {
                for (acc, &y) in tx.iter_mut().zip(target.point(e.j)) {
                    *acc = *acc + e.mass * y;
                }
            }
            tx.iter_mut().for_each(|v| *v = *v / mass);
            tx
        };
        let mut spread = T::zero();
        for a in 0..row.len() {
            for b in a + 1..row.len() {
                spread = spread.max(dist(target.point(row[a].j), target.point(row[b].j)));
            }
        }
        points.push(MapPoint {
            index: i,
            x: source.point(i).to_vec(),
            tx,
            mass,
            spread,
            split_mass: spread > grid_scale,
        });
        start = end;
    }
    MapEstimate { points, grid_scale }
}

/// Brute-force k-nearest-neighbour search over the unflagged map points.
struct NeighborIndex<'a, T> {
    points: Vec<&'a MapPoint<T>>,
}

impl<'a, T: Scalar> NeighborIndex<'a, T> {
    fn new(map: &'a [MapPoint<T>]) -> Self {
        Self {
            points: map.iter().filter(|p| !p.split_mass).collect(),
        }
    }

    fn nearest(&self, x: &[T], k: usize) -> Vec<&'a MapPoint<T>> {
        let mut d: Vec<(T, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| (dist(&p.x, x), k))
            .collect();
        let by = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        let k = k.min(d.len());
        if k == 0 {
            return Vec::new();
        }
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, by);
            d.truncate(k);
        }
        d.sort_by(by);
        d.into_iter().map(|(_, i)| self.points[i]).collect()
    }

    /// Affine least-squares fit over the `k` nearest points; `None` when fewer
    /// than `n + 1` are available or they are affinely dependent.
    fn fit(&self, x: &[T], k: usize) -> Option<(Matrix<T>, usize)> {
        let n = x.len();
        let near = self.nearest(x, k);
        if near.len() < n + 1 {
            return None;
        }
        let design = Matrix::from_fn(near.len(), n + 1, |r, c| {
            if c < n {
                near[r].x[c] - x[c]
            } else {
                T::one()
            }
        });
        let rhs = Matrix::from_fn(near.len(), n, |r, c| near[r].tx[c]);
        let sol = design.least_squares(&rhs, T::lit(1e-10))?;
        Some((Matrix::from_fn(n, n, |j, i| sol[(i, j)]), near.len()))
    }
}

/// `DT(x)` from an affine fit `T(p) ≈ A·(p − x) + b` over the `k` nearest
/// unflagged map points. `None` signals a skipped sample.
pub fn local_jacobian<T: Scalar>(
    map: &MapEstimate<T>,
    x: &[T],
    k_neighbors: usize,
) -> Option<Matrix<T>> {
    NeighborIndex::new(&map.points)
        .fit(x, k_neighbors)
        .map(|(a, _)| a)
}

/// Default neighbour count `2n + 2`.
pub fn default_neighbors(dim: usize) -> usize {
    2 * dim + 2
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct MapSample<T> {
    pub x: Vec<T>,
    pub tx: Vec<T>,
    pub mass: T,
    pub split_mass: bool,
    pub local_jacobian: Option<Matrix<T>>,
    pub det_estimate: Option<T>,
    pub neighbors_used: usize,
    /// `|f⁺(x) − |det DT(x)|·f⁻(T(x))|`; absent for flagged or skipped samples.
    pub residual: Option<T>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct JacobianReport<T> {
    pub samples: Vec<MapSample<T>>,
    pub grid_scale: T,
    pub k_neighbors: usize,
    pub evaluated: usize,
    pub flagged: usize,
    pub skipped: usize,
    /// Mass-weighted mean residual over evaluated samples.
    pub mean_residual: T,
    pub max_residual: T,
}

/// Evaluates the change-of-variables residual at every unflagged map point.
pub fn jacobian_residual<T: Scalar>(
    map: &MapEstimate<T>,
    f_plus: &dyn Density<T>,
    f_minus: &dyn Density<T>,
    k_neighbors: usize,
) -> Result<JacobianReport<T>> {
    let index = NeighborIndex::new(&map.points);
    let samples: Vec<MapSample<T>> = map
        .points
        .par_iter()
        .map(|p| {
            let mut s = MapSample {
                x: p.x.clone(),
                tx: p.tx.clone(),
                mass: p.mass,
                split_mass: p.split_mass,
                local_jacobian: None,
                det_estimate: None,
                neighbors_used: 0,
                residual: None,
            };
            if p.split_mass {
                return Ok(s);
            }
            let Some((a, used)) = index.fit(&p.x, k_neighbors) else {
                return Ok(s);
            };
            let fp = f_plus.density(&p.x);
            let fm = f_minus.density(&p.tx);
            if fp < T::zero() || fm < T::zero() || fp.is_nan() || fm.is_nan() {
                return Err(Error::InvalidInput(format!(
                    "density is negative or undefined near {:?}",
                    crate::scalar::to_f64_vec(&p.x)
                )));
            }
            let det = a.determinant();
            s.residual = Some((fp - det.abs() * fm).abs());
            s.det_estimate = Some(det);
            s.local_jacobian = Some(a);
            s.neighbors_used = used;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let flagged = samples.iter().filter(|s| s.split_mass).count();
    let evaluated = samples.iter().filter(|s| s.residual.is_some()).count();
    let (mut num, mut den, mut max) = (T::zero(), T::zero(), T::zero());
    for s in &samples {
        if let Some(r) = s.residual {
            num = num + s.mass * r;
            den = den + s.mass;
            max = max.max(r);
        }
    }
    Ok(JacobianReport {
        grid_scale: map.grid_scale,
        k_neighbors,
        evaluated,
        flagged,
        skipped: samples.len() - evaluated - flagged,
        mean_residual: if den > T::zero() {
            num / den
        } else {
            T::zero()
        },
        max_residual: max,
        samples,
    })
}

/// Largest per-cell gap between the mass pushed forward by the map and the
/// target mass.
pub fn pushforward_check<T: Scalar>(
    map: &MapEstimate<T>,
    source: &DiscreteMeasure<T>,
    target: &DiscreteMeasure<T>,
    cells: &CellPartition<T>,
) -> Result<T> {
    if cells.is_empty() {
        return Err(Error::InvalidInput("partition is empty".into()));
    }
    let mut pushed = vec![T::zero(); cells.len()];
    for p in &map.points {
        let k = cells.cell_of(&p.tx).ok_or_else(|| {
            Error::InvalidInput(format!(
                "mapped point {:?} lies outside the partition",
                crate::scalar::to_f64_vec(&p.tx)
            ))
        })?;
        let w = source.weights().get(p.index).copied().ok_or_else(|| {
            Error::InvalidInput("map point index outside the source measure".into())
        })?;
        pushed[k] = pushed[k] + w;
    }
    let mut actual = vec![T::zero(); cells.len()];
    for (y, &w) in target.points().iter().zip(target.weights()) {
        let k = cells.cell_of(y).ok_or_else(|| {
            Error::InvalidInput(format!(
                "target point {:?} lies outside the partition",
                crate::scalar::to_f64_vec(y)
            ))
        })?;
        actual[k] = actual[k] + w;
    }
    Ok(pushed
        .iter()
        .zip(&actual)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn line(points: &[f64]) -> Arc<DiscreteMeasure<f64>> {
        Arc::new(DiscreteMeasure::uniform(points.iter().map(|&p| vec![p]).collect()).unwrap())
    }

    fn map_of(xs: &[f64], f: impl Fn(f64) -> f64) -> MapEstimate<f64> {
        let src = line(xs);
        let tgt = line(&xs.iter().map(|&x| f(x)).collect::<Vec<_>>());
        let w = 1.0 / xs.len() as f64;
        let plan = TransportPlan::new(
            src,
            tgt,
            (0..xs.len()).map(|k| (k, k, w)).collect::<Vec<_>>(),
        )
        .unwrap();
        estimate_map(&plan, 1e-9)
    }

    #[test]
    fn permutation_plan_map() {
        let plan = TransportPlan::new(
            line(&[0.0, 1.0, 2.0]),
            line(&[5.0, 6.0, 7.0]),
            vec![(0, 2, 1.0 / 3.0), (1, 0, 1.0 / 3.0), (2, 1, 1.0 / 3.0)],
        )
        .unwrap();
        let m = estimate_map(&plan, 0.5);
        assert_eq!(
            m.points.iter().map(|p| p.tx[0]).collect::<Vec<_>>(),
            vec![7.0, 5.0, 6.0]
        );
        assert!(m.points.iter().all(|p| !p.split_mass));
    }

    #[test]
    fn product_plan_is_split() {
        let plan = TransportPlan::product(line(&[0.0, 1.0, 2.0]), line(&[0.0, 1.0])).unwrap();
        let m = estimate_map(&plan, 0.5);
        assert!(m
            .points
            .iter()
            .all(|p| p.split_mass && (p.tx[0] - 0.5).abs() < 1e-15));
        assert_eq!(m.flagged_fraction(), 1.0);
    }

    #[test]
    fn affine_fits_exact() {
        let xs: Vec<f64> = (0..20).map(|k| k as f64 * 0.05).collect();
        let m = map_of(&xs, |x| x + 3.0);
        let a = local_jacobian(&m, &[0.5], 4).unwrap();
        assert!((a[(0, 0)] - 1.0).abs() < 1e-12);
        let m = map_of(&xs, |x| 2.0 * x);
        let a = local_jacobian(&m, &[0.5], 4).unwrap();
        assert!((a[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_slope_converges() {
        let err = |h: f64| {
            let xs: Vec<f64> = (-5..=5).map(|k| 1.0 + k as f64 * h).collect();
            let m = map_of(&xs, |x| x * x);
            (local_jacobian(&m, &[1.0], 4).unwrap()[(0, 0)] - 2.0).abs()
        };
        let (e1, e2, e3) = (err(0.1), err(0.05), err(0.025));
        assert!(e1 > 0.0 && (e2 / e1 - 0.5).abs() < 0.05 && (e3 / e2 - 0.5).abs() < 0.05);
    }

    #[test]
    fn too_few_neighbours_skip() {
        let m = map_of(&[0.0], |x| x);
        assert!(local_jacobian(&m, &[0.0], 4).is_none());
    }

    #[test]
    fn uniform_doubling_residual() {
        let xs: Vec<f64> = (0..10).map(|k| (k as f64 + 0.5) / 10.0).collect();
        let m = map_of(&xs, |x| 2.0 * x);
        let fp = DensityModel::parse("uniform:0:1", 1).unwrap();
        let fm = DensityModel::parse("uniform:0:2", 1).unwrap();
        let r = jacobian_residual(&m, &fp, &fm, 4).unwrap();
        assert_eq!(r.evaluated, 10);
        assert!(r.max_residual < 1e-12);
        let same = jacobian_residual(&map_of(&xs, |x| x), &fp, &fp, 4).unwrap();
        assert!(same.max_residual < 1e-12);
    }

    #[test]
    fn negative_density_rejected() {
        let xs: Vec<f64> = (0..5).map(|k| k as f64).collect();
        let m = map_of(&xs, |x| x);
        let neg = |_: &[f64]| -1.0;
        assert!(matches!(
            jacobian_residual(&m, &neg, &neg, 2),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn gaussian_density_normalized() {
        let g = DensityModel::<f64>::parse("gaussian:0:2", 1).unwrap();
        let h = 1e-3;
        let total: f64 = (-20000..20000)
            .map(|k| g.density(&[k as f64 * h]) * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(DensityModel::<f64>::parse("laplace:0:1", 1).is_err());
    }

    #[test]
    fn grid_density_roundtrip() {
        let centres: Vec<Vec<f64>> = (0..4).map(|k| vec![0.125 + 0.25 * k as f64]).collect();
        let g = GridDensity::from_cell_centres(&centres, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g.density(&[0.3]), 2.0);
        assert_eq!(g.density(&[1.0]), 4.0);
        assert_eq!(g.density(&[1.5]), 0.0);
        assert!(GridDensity::from_cell_centres(&centres[..1], &[1.0]).is_err());
    }

    #[test]
    fn pushforward_identity_and_permutation() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64 / 10.0).collect();
        let src = line(&xs);
        let m = map_of(&xs, |x| x);
        let cells = CellPartition::new(vec![0.0], vec![1.0], vec![7]).unwrap();
        assert_eq!(pushforward_check(&m, &src, &src, &cells).unwrap(), 0.0);
        assert!(CellPartition::new(vec![0.0], vec![1.0], vec![0]).is_err());
        let tgt = line(&[0.5, 0.2]);
        let plan = TransportPlan::new(
            line(&[0.2, 0.5]),
            tgt.clone(),
            vec![(0, 1, 0.5), (1, 0, 0.5)],
        )
        .unwrap();
        let pm = estimate_map(&plan, 0.1);
        assert_eq!(
            pushforward_check(&pm, plan.source(), &tgt, &cells).unwrap(),
            0.0
        );
    }
}
