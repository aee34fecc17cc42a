//! Lipschitz-graph certificates for monotone pair sets.
//!
//! Around a base pair `(x₀, y₀)` the target coordinates are changed to
//! `ỹ = M·y` with `M = D²xy b(x₀, y₀)`, so that the normalized surplus has
//! mixed Hessian `I` at the base. After the rotation `u = (x + ỹ)/√2`,
//! `v = (ỹ − x)/√2`, a monotone set whose normalized Hessian stays within
//! `ε < 1` of the identity satisfies `(1 + ε)|Δu|² ≥ (1 − ε)|Δv|²`, that is,
//! it is a graph of `v` over `u` with Lipschitz constant `√((1+ε)/(1−ε))`.
//!
//! `ε` is estimated by sampling, so certificates are empirical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measure::SupportSample;
use crate::monotonicity::{check_pairwise_with, Coverage, MonotonicityReport};
use crate::nondegeneracy::{classify_matrix, DEGENERACY_THRESHOLD};
use crate::scalar::{dist, Scalar};

/// Pairs closer than this in both `u` and `v` count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Slack on `max_ratio ≤ lipschitz_bound` before a certificate is refused.
pub const RATIO_SLACK: f64 = 1e-9;

/// Factor applied to `ε̂` in conservative mode.
pub const CONSERVATIVE_FACTOR: f64 = 1.25;

pub(crate) const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Van der Corput radical inverse of `index` in `base`.
pub(crate) fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// `√((1+ε)/(1−ε))`; infinite for `ε ≥ 1`.
pub fn lipschitz_bound<T: Scalar>(epsilon: T) -> T {
    if epsilon >= T::one() {
        return T::infinity();
    }
    let e = epsilon.max(T::zero());
    ((T::one() + e) / (T::one() - e)).sqrt()
}

/// Returns `M = D²xy b(x₀, y₀) = −D²xy c(x₀, y₀)` and the cost re-expressed in
/// `ỹ = M·y`, whose normalized surplus has mixed Hessian `I` at `(x₀, M·y₀)`.
pub fn normalize_frame<T: Scalar>(
    model: &CostModel<T>,
    x0: &[T],
    y0: &[T],
) -> Result<(Matrix<T>, CostModel<T>)> {
    let h = model.mixed_hessian_auto(x0, y0)?;
    let class = classify_matrix(x0, y0, h, T::lit(DEGENERACY_THRESHOLD));
    if class.degenerate {
        return Err(Error::DegenerateHessian {
            point: format!(
                "({:?}, {:?})",
                crate::scalar::to_f64_vec(x0),
                crate::scalar::to_f64_vec(y0)
            ),
            sigma_min: class.sigma_min.to_f64_lossy(),
            sigma_max: class.sigma_max.to_f64_lossy(),
        });
    }
    let m = class.matrix.scale(-T::one());
    let transformed = model
        .reparametrize_target(&m)
        .ok_or_else(|| Error::DegenerateHessian {
            point: format!("{:?}", crate::scalar::to_f64_vec(x0)),
            sigma_min: 0.0,
            sigma_max: class.sigma_max.to_f64_lossy(),
        })?;
    Ok((m, transformed))
}

/// `u = (x + ỹ)/√2`, `v = (ỹ − x)/√2` for each pair.
pub fn rotate_diagonal<T: Scalar>(pairs: &SupportSample<T>) -> Vec<(Vec<T>, Vec<T>)> {
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    pairs
        .pairs
        .iter()
        .map(|(x, y)| {
            let u = x.iter().zip(y).map(|(&a, &b)| (a + b) * s).collect();
            let v = x.iter().zip(y).map(|(&a, &b)| (b - a) * s).collect();
            (u, v)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsilonEstimate<T> {
    /// Sampled maximum of `‖D²xy b̃ − I‖₂`; a lower bound on the true sup.
    pub epsilon: T,
    /// Sample attaining the maximum, in the coordinates that were sampled.
    pub argmax: (Vec<T>, Vec<T>),
    pub evaluated: usize,
}

/// Samples `‖D²xy b − I‖₂` over the product of radius balls around `(x₀, y₀)`
/// in the model's own coordinates. Pass a normalized model to estimate the
/// perturbation `G` of the normalized surplus `x·ỹ + G`.
pub fn estimate_epsilon<T: Scalar>(
    model: &CostModel<T>,
    x0: &[T],
    y0: &[T],
    radius: T,
    samples: usize,
) -> Result<EpsilonEstimate<T>> {
    estimate_epsilon_in_frame(
        model,
        &Matrix::identity(model.dim()),
        x0,
        y0,
        radius,
        samples,
        0,
    )
}

/// Like [`estimate_epsilon`], but samples the balls in the original
/// coordinates and measures the Hessian of the surplus normalized by `m`:
/// `‖−D²xy c(x, y)·m⁻¹ − I‖₂`.
///
/// Points are a Halton sequence in the `2n`-cube, shifted modulo one by a
/// seeded offset and mapped radially onto each ball, plus the centre. Points
/// outside the working boxes are skipped.
pub fn estimate_epsilon_in_frame<T: Scalar>(
    model: &CostModel<T>,
    m: &Matrix<T>,
    x0: &[T],
    y0: &[T],
    radius: T,
    samples: usize,
    seed: u64,
) -> Result<EpsilonEstimate<T>> {
    let n = model.dim();
    if !(radius > T::zero()) {
        return Err(Error::InvalidInput("radius must be positive".into()));
    }
    model.check_domain(x0, y0)?;
    if radius > model.domain_x().diameter() || radius > model.domain_y().diameter() {
        return Err(Error::Domain(format!(
            "radius {} exceeds the working box of `{}`",
            radius,
            model.label()
        )));
    }
    let m_inv = m
        .inverse()
        .ok_or_else(|| Error::InvalidInput("normalization matrix is singular".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
    let mut points = vec![(x0.to_vec(), y0.to_vec())];
    for index in 1..=samples as u64 {
        let cube: Vec<f64> = (0..2 * n)
            .map(|k| {
                let h = radical_inverse(index, PRIMES[k % PRIMES.len()]) + shift[k];
                2.0 * (h - h.floor()) - 1.0
            })
            .collect();
        let x = ball_point(&cube[..n], x0, radius);
        let y = ball_point(&cube[n..], y0, radius);
        if model.domain_x().contains(&x) && model.domain_y().contains(&y) {
            points.push((x, y));
        }
    }
    let values: Vec<T> = points
        .par_iter()
        .map(|(x, y)| {
            let h = model.mixed_hessian_auto(x, y)?;
            let g = h.matmul(&m_inv).scale(-T::one()).sub(&Matrix::identity(n));
            Ok(g.spectral_norm())
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] || v.is_nan() {
            best = k;
        }
    }
    Ok(EpsilonEstimate {
        epsilon: values[best],
        argmax: points[best].clone(),
        evaluated: points.len(),
    })
}

/// Maps a point of `[−1, 1]ⁿ` into the ball of radius `r` around `c` by
/// rescaling along rays.
fn ball_point<T: Scalar>(cube: &[f64], c: &[T], r: T) -> Vec<T> {
    let l2 = cube.iter().map(|v| v * v).sum::<f64>().sqrt();
    let linf = cube.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let s = if l2 > 0.0 { linf / l2 } else { 0.0 };
    cube.iter()
        .zip(c)
        .map(|(&p, &q)| q + r * T::lit(p * s))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateVerdict {
    Certified,
    Failed,
    Degenerate,
}

#[derive(Clone, Debug, Serialize)]
pub struct UvPoint<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    /// Largest `|Δv|/|Δu|` against any other point.
    pub ratio: T,
}

#[derive(Clone, Debug, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct RectifiabilityCertificate<T> {
    pub base_point: Option<(Vec<T>, Vec<T>)>,
    pub normalization: Option<Matrix<T>>,
    pub neighborhood_radius: Option<T>,
    /// `ε` used in the inequality (after the conservative factor, if any).
    pub epsilon: T,
    pub epsilon_sample: Option<(Vec<T>, Vec<T>)>,
    pub conservative: bool,
    pub lipschitz_bound: T,
    pub pairs_checked: u64,
    pub max_ratio: T,
    pub inequality_violations: u64,
    pub vertical_segments: u64,
    pub verdict: CertificateVerdict,
    pub reason: Option<String>,
    /// Always `"empirical"`: `ε` is a sampled estimate.
    pub status: &'static str,
    pub points: Vec<UvPoint<T>>,
}

impl<T: Scalar> RectifiabilityCertificate<T> {
    pub fn certified(&self) -> bool {
        self.verdict == CertificateVerdict::Certified
    }

    fn bare(epsilon: T, verdict: CertificateVerdict, reason: Option<String>) -> Self {
        Self {
            base_point: None,
            normalization: None,
            neighborhood_radius: None,
            epsilon,
            epsilon_sample: None,
            conservative: false,
            lipschitz_bound: lipschitz_bound(epsilon),
            pairs_checked: 0,
            max_ratio: T::zero(),
            inequality_violations: 0,
            vertical_segments: 0,
            verdict,
            reason,
            status: "empirical",
            points: Vec::new(),
        }
    }
}

fn dedup_uv<T: Scalar>(uv: &[(Vec<T>, Vec<T>)]) -> Vec<(Vec<T>, Vec<T>)> {
    let tol = T::lit(DUPLICATE_TOL);
    let mut kept: Vec<(Vec<T>, Vec<T>)> = Vec::new();
    for p in uv {
        if !kept
            .iter()
            .any(|q| dist(&p.0, &q.0) < tol && dist(&p.1, &q.1) < tol)
        {
            kept.push(p.clone());
        }
    }
    kept
}

/// Checks `(1 + ε)|Δu|² ≥ (1 − ε)|Δv|² − tolerance` over all pair-pairs.
///
/// Certified when `ε < 1`, every inequality holds, no two points share `u`
/// with different `v`, and `max |Δv|/|Δu| ≤ √((1+ε)/(1−ε))·(1 + 10⁻⁹)`.
pub fn certify_lipschitz<T: Scalar>(
    uv_pairs: &[(Vec<T>, Vec<T>)],
    epsilon: T,
    tolerance: T,
) -> Result<RectifiabilityCertificate<T>> {
    if uv_pairs.len() < 2 {
        return Err(Error::DegenerateInput(
            "a Lipschitz certificate needs at least two pairs".into(),
        ));
    }
    if !(epsilon < T::one()) {
        return Ok(RectifiabilityCertificate::bare(
            epsilon,
            CertificateVerdict::Failed,
            Some("epsilon ≥ 1: bound vacuous".into()),
        ));
    }
    let pts = dedup_uv(uv_pairs);
    let zero = T::lit(DUPLICATE_TOL);
    let (lo, hi) = (T::one() - epsilon, T::one() + epsilon);
    // Per point: (max ratio, violations, vertical segments) against later points
    // for the counts, against all points for the ratio.
    let rows: Vec<(T, u64, u64)> = (0..pts.len())
        .into_par_iter()
        .map(|a| {
            let mut ratio = T::zero();
            let (mut bad, mut vertical) = (0, 0);
            for b in 0..pts.len() {
                if a == b {
                    continue;
                }
                let du = dist(&pts[a].0, &pts[b].0);
                let dv = dist(&pts[a].1, &pts[b].1);
                if du <= zero {
                    if b > a {
                        vertical += 1;
                    }
                    ratio = T::infinity();
                    continue;
                }
                ratio = ratio.max(dv / du);
                if b > a && hi * du * du < lo * dv * dv - tolerance {
                    bad += 1;
                }
            }
            (ratio, bad, vertical)
        })
        .collect();
    let max_ratio = rows.iter().fold(T::zero(), |m, r| m.max(r.0));
    let violations: u64 = rows.iter().map(|r| r.1).sum();
    let vertical: u64 = rows.iter().map(|r| r.2).sum();
    let bound = lipschitz_bound(epsilon);
    let (verdict, reason) = if vertical > 0 {
        (
            CertificateVerdict::Failed,
            Some(format!(
                "{vertical} vertical segment(s): Δu = 0 with Δv ≠ 0"
            )),
        )
    } else if violations > 0 {
        (
            CertificateVerdict::Failed,
            Some(format!(
                "{violations} pair(s) violate the Lipschitz inequality"
            )),
        )
    } else if max_ratio > bound * (T::one() + T::lit(RATIO_SLACK)) {
        (
            CertificateVerdict::Failed,
            Some("max ratio exceeds the Lipschitz bound".into()),
        )
    } else {
        (CertificateVerdict::Certified, None)
    };
    let m = pts.len() as u64;
    Ok(RectifiabilityCertificate {
        pairs_checked: m * (m - 1) / 2,
        max_ratio,
        inequality_violations: violations,
        vertical_segments: vertical,
        verdict,
        reason,
        points: pts
            .into_iter()
            .zip(&rows)
            .map(|((u, v), r)| UvPoint { u, v, ratio: r.0 })
            .collect(),
        ..RectifiabilityCertificate::bare(epsilon, CertificateVerdict::Certified, None)
    })
}

/// Nearest-neighbour interpolant `u ↦ v` through certified samples.
///
/// This reproduces the samples only; it is not a Lipschitz-preserving
/// extension.
#[derive(Clone, Debug, Serialize)]
pub struct GraphFit<T> {
    samples: Vec<(Vec<T>, Vec<T>)>,
}

/// Builds the interpolant. Duplicate `u` with equal `v` collapse; duplicate
/// `u` with distinct `v` is a consistency error.
pub fn fit_graph<T: Scalar>(uv_pairs: &[(Vec<T>, Vec<T>)]) -> Result<GraphFit<T>> {
    if uv_pairs.is_empty() {
        return Err(Error::DegenerateInput(
            "cannot fit a graph through no samples".into(),
        ));
    }
    let mut samples: Vec<(Vec<T>, Vec<T>)> = uv_pairs.to_vec();
    samples.sort_by(|a, b| lex_cmp(&a.0, &b.0).then_with(|| lex_cmp(&a.1, &b.1)));
    let tol = T::lit(DUPLICATE_TOL);
    let mut kept: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(samples.len());
    for s in samples {
        if let Some(q) = kept.iter().find(|q| dist(&q.0, &s.0) <= tol) {
            if dist(&q.1, &s.1) > tol {
                return Err(Error::Consistency(format!(
                    "u = {:?} carries two values of v",
                    crate::scalar::to_f64_vec(&s.0)
                )));
            }
            continue;
        }
        kept.push(s);
    }
    Ok(GraphFit { samples: kept })
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    for (p, q) in a.iter().zip(b) {
        match p.partial_cmp(q) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

impl<T: Scalar> GraphFit<T> {
    pub fn samples(&self) -> &[(Vec<T>, Vec<T>)] {
        &self.samples
    }

    /// `v` at the sample nearest to `u`; ties go to the lexicographically
    /// smaller sample.
    pub fn evaluate(&self, u: &[T]) -> Vec<T> {
        let mut best = 0;
        let mut best_d = dist(&self.samples[0].0, u);
        for (k, s) in self.samples.iter().enumerate().skip(1) {
            let d = dist(&s.0, u);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        self.samples[best].1.clone()
    }

    /// `max |Δv|/|Δu|` over sample pairs; zero for a single sample.
    pub fn lipschitz_constant(&self) -> T {
        let s = &self.samples;
        (0..s.len())
            .flat_map(|a| (a + 1..s.len()).map(move |b| (a, b)))
            .map(|(a, b)| dist(&s[a].1, &s[b].1) / dist(&s[a].0, &s[b].0))
            .fold(T::zero(), T::max)
    }
}

/// Neighbourhood radius search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusPolicy<T> {
    /// Use exactly this radius.
    Fixed(T),
    /// Start at `initial · D` and halve until `ε̂ ≤ ε_target`, giving up below
    /// `floor · D`, where `D` is the larger working-box diameter.
    Halving { initial: T, floor: T },
}

impl<T: Scalar> Default for RadiusPolicy<T> {
    fn default() -> Self {
        Self::Halving {
            initial: T::lit(0.25),
            floor: T::lit(1e-3),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RectifyOptions<T> {
    /// Base pair; defaults to the support pair nearest the mass centroid.
    pub base: Option<(Vec<T>, Vec<T>)>,
    pub radius: RadiusPolicy<T>,
    pub eps_target: T,
    pub samples: usize,
    pub seed: u64,
    pub conservative: bool,
    /// Slack in the Lipschitz inequality.
    pub tolerance: T,
    /// Tolerance of the monotonicity pre-check.
    pub monotonicity_tolerance: T,
}

impl<T: Scalar> Default for RectifyOptions<T> {
    fn default() -> Self {
        Self {
            base: None,
            radius: RadiusPolicy::default(),
            eps_target: T::lit(0.5),
            samples: 1000,
            seed: 0,
            conservative: false,
            tolerance: T::slack_tolerance(),
            monotonicity_tolerance: T::slack_tolerance(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case", bound = "T: Scalar")]
pub enum RectifyOutcome<T> {
    Certificate(RectifiabilityCertificate<T>),
    /// The monotonicity pre-check failed; no certificate is attempted.
    NotMonotone(MonotonicityReport<T>),
}

/// Default base pair: the support pair nearest the mass centroid in
/// `(x, y)` space, skipping degenerate candidates.
pub fn default_base<T: Scalar>(
    support: &SupportSample<T>,
    model: &CostModel<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let n = support.dim();
    let weights: Vec<T> = match &support.masses {
        Some(m) => m.clone(),
        None => vec![T::one(); support.len()],
    };
    let total: T = weights.iter().copied().sum();
    let mut centroid = vec![T::zero(); 2 * n];
    for ((x, y), &w) in support.pairs.iter().zip(&weights) {
        for k in 0..n {
            centroid[k] = centroid[k] + w * x[k];
            centroid[n + k] = centroid[n + k] + w * y[k];
        }
    }
    centroid.iter_mut().for_each(|c| *c = *c / total);
    let mut order: Vec<(T, usize)> = support
        .pairs
        .iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let joined: Vec<T> = x.iter().chain(y).copied().collect();
            (dist(&joined, &centroid), k)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let threshold = T::lit(DEGENERACY_THRESHOLD);
    for (_, k) in order {
        let (x, y) = &support.pairs[k];
        let h = model.mixed_hessian_auto(x, y)?;
        if !classify_matrix(x, y, h, threshold).degenerate {
            return Ok((x.clone(), y.clone()));
        }
    }
    Err(Error::NoCertificate(
        "the mixed Hessian is degenerate at every support pair".into(),
    ))
}

/// Monotonicity pre-check, base selection, normalization, radius search,
/// rotation, and the Lipschitz check, in that order.
pub fn rectify<T: Scalar>(
    support: &SupportSample<T>,
    model: &CostModel<T>,
    options: &RectifyOptions<T>,
) -> Result<RectifyOutcome<T>> {
    let mono = check_pairwise_with(
        support,
        model,
        options.monotonicity_tolerance,
        Coverage::Auto {
            samples: 1_000_000,
            seed: options.seed,
        },
    )?;
    if !mono.passed() {
        return Ok(RectifyOutcome::NotMonotone(mono));
    }
    let (x0, y0) = match &options.base {
        Some(b) => b.clone(),
        None => default_base(support, model)?,
    };
    let (m, _) = match normalize_frame(model, &x0, &y0) {
        Ok(f) => f,
        Err(Error::DegenerateHessian { .. }) => {
            let mut cert = RectifiabilityCertificate::bare(
                T::infinity(),
                CertificateVerdict::Degenerate,
                Some("mixed Hessian is degenerate at the base point".into()),
            );
            cert.base_point = Some((x0, y0));
            return Ok(RectifyOutcome::Certificate(cert));
        }
        Err(e) => return Err(e),
    };
    let diameter = model.domain_x().diameter().max(model.domain_y().diameter());
    let factor = if options.conservative {
        T::lit(CONSERVATIVE_FACTOR)
    } else {
        T::one()
    };
    let (mut radius, floor) = match options.radius {
        RadiusPolicy::Fixed(r) => (r, r),
        RadiusPolicy::Halving { initial, floor } => (initial * diameter, floor * diameter),
    };
    let cap = model.domain_x().diameter().min(model.domain_y().diameter());
    if matches!(options.radius, RadiusPolicy::Halving { .. }) {
        radius = radius.min(cap);
    }
    let finish =
        |mut cert: RectifiabilityCertificate<T>, radius: T, est: Option<EpsilonEstimate<T>>| {
            cert.base_point = Some((x0.clone(), y0.clone()));
            cert.normalization = Some(m.clone());
            cert.neighborhood_radius = Some(radius);
            cert.conservative = options.conservative;
            cert.epsilon_sample = est.map(|e| e.argmax);
            RectifyOutcome::Certificate(cert)
        };
    loop {
        let est =
            estimate_epsilon_in_frame(model, &m, &x0, &y0, radius, options.samples, options.seed)?;
        let eps = est.epsilon * factor;
        if eps <= options.eps_target {
            let slack = T::one() + T::lit(1e-12);
            let local: Vec<(Vec<T>, Vec<T>)> = support
                .pairs
                .iter()
                .filter(|(x, y)| dist(x, &x0) <= radius * slack && dist(y, &y0) <= radius * slack)
                .map(|(x, y)| (x.clone(), m.mul_vec(y)))
                .collect();
            if local.len() < 2 {
                let cert = RectifiabilityCertificate::bare(
                    eps,
                    CertificateVerdict::Failed,
                    Some(format!(
                        "{} support pair(s) in the neighbourhood; at least two are needed",
                        local.len()
                    )),
                );
                return Ok(finish(cert, radius, Some(est)));
            }
            let normalized = SupportSample::new(local)?;
            let uv = rotate_diagonal(&normalized);
            let cert = certify_lipschitz(&uv, eps, options.tolerance)?;
            return Ok(finish(cert, radius, Some(est)));
        }
        let next = radius * T::lit(0.5);
        if matches!(options.radius, RadiusPolicy::Fixed(_)) || next < floor {
            let cert = RectifiabilityCertificate::bare(
                eps,
                CertificateVerdict::Failed,
                Some(format!(
                    "epsilon estimate {} exceeds target {} down to radius {}",
                    eps, options.eps_target, radius
                )),
            );
            return Ok(finish(cert, radius, Some(est)));
        }
        radius = next;
    }
}
