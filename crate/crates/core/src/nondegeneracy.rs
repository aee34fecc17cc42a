//! Non-degeneracy of the mixed Hessian and sampled twist analysis.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dist, Scalar};

/// A point is degenerate when `σ_min ≤ DEGENERACY_THRESHOLD · σ_max`.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct HessianClassification<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub matrix: Matrix<T>,
    pub determinant: T,
    pub sigma_min: T,
    pub sigma_max: T,
    pub degenerate: bool,
}

/// Classifies `(x, y)` by the singular values of `D²xy c(x, y)`.
///
/// Uses the analytic Hessian when the model has one.
pub fn classify_point<T: Scalar>(
    model: &CostModel<T>,
    x: &[T],
    y: &[T],
    threshold: T,
) -> Result<HessianClassification<T>> {
    let matrix = model.mixed_hessian_auto(x, y)?;
    Ok(classify_matrix(x, y, matrix, threshold))
}

pub(crate) fn classify_matrix<T: Scalar>(
    x: &[T],
    y: &[T],
    matrix: Matrix<T>,
    threshold: T,
) -> HessianClassification<T> {
    let sv = matrix.singular_values();
    let sigma_max = sv.first().copied().unwrap_or_else(T::zero);
    let sigma_min = sv.last().copied().unwrap_or_else(T::zero);
    let degenerate = !(sigma_min > threshold * sigma_max) || !matrix.is_finite();
    HessianClassification {
        x: x.to_vec(),
        y: y.to_vec(),
        determinant: matrix.determinant(),
        matrix,
        sigma_min,
        sigma_max,
        degenerate,
    }
}

/// Which gradient map a twist scan probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// `x` fixed, `y ↦ D_x c(x, y)`.
    #[serde(rename = "x-to-y")]
    XToY,
    /// `y` fixed, `x ↦ D_y c(x, y)`.
    #[serde(rename = "y-to-x")]
    YToX,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x-to-y" => Ok(Self::XToY),
            "y-to-x" => Ok(Self::YToX),
            other => Err(Error::InvalidInput(format!(
                "unknown twist direction `{other}`; expected x-to-y or y-to-x"
            ))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::XToY => "x-to-y",
            Self::YToX => "y-to-x",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Collision<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub gradient_distance: T,
    pub separation: T,
}

#[derive(Clone, Debug, Serialize)]
pub struct TwistReport<T> {
    pub direction: Direction,
    pub fixed_point: Vec<T>,
    pub samples: usize,
    pub collision_tol: T,
    pub separation_floor: T,
    pub collisions: Vec<Collision<T>>,
    /// Injectivity holds on the scanned samples only.
    pub injective_on_sample: bool,
}

/// Searches `samples` for distinct arguments with (nearly) equal gradients.
///
/// For [`Direction::XToY`] the fixed point is `x` and the samples are target
/// points; for [`Direction::YToX`] it is the other way round. Pairs at least
/// `separation_floor` apart whose gradients are within `collision_tol` are
/// reported.
pub fn twist_scan<T: Scalar>(
    model: &CostModel<T>,
    direction: Direction,
    fixed_point: &[T],
    samples: &[Vec<T>],
    collision_tol: T,
    separation_floor: T,
) -> Result<TwistReport<T>> {
    if !(separation_floor > T::zero()) {
        return Err(Error::InvalidInput(
            "separation floor must be positive".into(),
        ));
    }
    if collision_tol < T::zero() {
        return Err(Error::InvalidInput(
            "collision tolerance must be nonnegative".into(),
        ));
    }
    let grads: Vec<Vec<T>> = samples
        .par_iter()
        .map(|s| match direction {
            Direction::XToY => model.grad_x(fixed_point, s),
            Direction::YToX => model.grad_y(s, fixed_point),
        })
        .collect::<Result<_>>()?;

    // Sort by the first gradient component and sweep a window of width tol.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        grads[a][0]
            .partial_cmp(&grads[b][0])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut found: Vec<(usize, usize, T, T)> = (0..order.len())
        .into_par_iter()
        .flat_map_iter(|p| {
            let a = order[p];
            let grads = &grads;
            let order = &order;
            order[p + 1..]
                .iter()
                .take_while(move |&&b| grads[b][0] - grads[a][0] <= collision_tol)
                .filter_map(move |&b| {
                    let g = dist(&grads[a], &grads[b]);
                    let s = dist(&samples[a], &samples[b]);
                    (g <= collision_tol && s >= separation_floor).then_some((
                        a.min(b),
                        a.max(b),
                        g,
                        s,
                    ))
                })
        })
        .collect();
    found.sort_by_key(|p| (p.0, p.1));
    let collisions: Vec<Collision<T>> = found
        .into_iter()
        .map(|(a, b, g, s)| Collision {
            first: samples[a].clone(),
            second: samples[b].clone(),
            gradient_distance: g,
            separation: s,
        })
        .collect();
    Ok(TwistReport {
        direction,
        fixed_point: fixed_point.to_vec(),
        samples: samples.len(),
        collision_tol,
        separation_floor,
        injective_on_sample: collisions.is_empty(),
        collisions,
    })
}

/// Regular half-open grid `lowerᵢ + k·(upperᵢ − lowerᵢ)/countsᵢ`,
/// `k = 0..countsᵢ`, in row-major order (last axis fastest).
pub fn grid_points<T: Scalar>(lower: &[T], upper: &[T], counts: &[usize]) -> Result<Vec<Vec<T>>> {
    if lower.len() != upper.len() || lower.len() != counts.len() || counts.contains(&0) {
        return Err(Error::InvalidInput(
            "grid needs one positive count per axis".into(),
        ));
    }
    let total: usize = counts.iter().product();
    Ok((0..total)
        .map(|mut flat| {
            let mut p = vec![T::zero(); counts.len()];
            for axis in (0..counts.len()).rev() {
                let k = flat % counts[axis];
                flat /= counts[axis];
                let step = (upper[axis] - lower[axis]) / T::from_usize_exact(counts[axis]);
                p[axis] = lower[axis] + T::from_usize_exact(k) * step;
            }
            p
        })
        .collect())
}

/// Largest radius `r` (found by halving from a quarter of the box diameter)
/// such that gradients near `(x, y)` separate at rate at least `σ_min/2`:
/// `|g(z) − g(z₀)| ≥ ½·σ_min·|z − z₀|` for probes `z` within `r` of the free
/// argument `z₀`. Returns `None` for degenerate points or when no radius down
/// to `10⁻⁶` of the diameter passes.
pub fn local_injectivity_radius<T: Scalar>(
    model: &CostModel<T>,
    direction: Direction,
    x: &[T],
    y: &[T],
    probes: usize,
) -> Result<Option<T>> {
    let class = classify_point(model, x, y, T::lit(DEGENERACY_THRESHOLD))?;
    if class.degenerate {
        return Ok(None);
    }
    let (free, domain) = match direction {
        Direction::XToY => (y, model.domain_y()),
        Direction::YToX => (x, model.domain_x()),
    };
    let grad = |z: &[T]| match direction {
        Direction::XToY => model.grad_x(x, z),
        Direction::YToX => model.grad_y(z, y),
    };
    let g0 = grad(free)?;
    let n = free.len();
    let dirs = sphere_directions::<T>(n, probes.max(1));
    let floor = domain.diameter() * T::lit(1e-6);
    let half = T::lit(0.5) * class.sigma_min;
    let mut r = domain.diameter() * T::lit(0.25);
    while r >= floor {
        let mut ok = true;
        'probe: for d in &dirs {
            for t in [T::lit(0.25), T::lit(0.5), T::lit(1.0)] {
                let z: Vec<T> = free.iter().zip(d).map(|(&a, &b)| a + r * t * b).collect();
                if !domain.contains(&z) {
                    continue;
                }
                let g = grad(&z)?;
                if dist(&g, &g0) < half * dist(&z, free) {
                    ok = false;
                    break 'probe;
                }
            }
        }
        if ok {
            return Ok(Some(r));
        }
        r = r * T::lit(0.5);
    }
    Ok(None)
}

/// Deterministic unit vectors: the coordinate axes (both signs) followed by
/// normalized Halton points.
fn sphere_directions<T: Scalar>(n: usize, count: usize) -> Vec<Vec<T>> {
    let mut out = Vec::with_capacity(count + 2 * n);
    for k in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![T::zero(); n];
            e[k] = T::lit(s);
            out.push(e);
        }
    }
    let mut index = 1;
    while out.len() < count + 2 * n {
        let p: Vec<f64> = (0..n)
            .map(|k| {
                2.0 * crate::rectifier::radical_inverse(
                    index,
                    crate::rectifier::PRIMES[k % crate::rectifier::PRIMES.len()],
                ) - 1.0
            })
            .collect();
        index += 1;
        let len = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 1e-6 {
            out.push(p.iter().map(|v| T::lit(v / len)).collect());
        }
    }
    out
}
