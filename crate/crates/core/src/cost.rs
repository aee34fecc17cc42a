//! Cost models `c(x, y)` with optional analytic derivatives.
//!
//! A [`CostModel`] bundles the cost function with its working boxes (one for
//! the source variable, one for the target variable) and, when known, the
//! analytic gradients and the mixed Hessian `∂²c/∂xᵢ∂yⱼ`. The surplus used by
//! the monotonicity and rectifiability checks is always `b = −c`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub type ScalarFn<T> = Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>;
pub type VectorFn<T> = Arc<dyn Fn(&[T], &[T]) -> Vec<T> + Send + Sync>;
pub type MatrixFn<T> = Arc<dyn Fn(&[T], &[T]) -> Matrix<T> + Send + Sync>;

/// Names accepted by [`builtin_cost`].
pub const BUILTIN_COSTS: [&str; 4] = ["bilinear", "quadratic", "example31", "example32"];

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Axis-aligned box `lower ≤ p ≤ upper`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> WorkBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidInput(format!(
                "work box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidInput(
                "work box requires lower < upper componentwise".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]ⁿ`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![T::lit(lo); dim], vec![T::lit(hi); dim]).expect("valid cube")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[T]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Length of the main diagonal.
    pub fn diameter(&self) -> T {
        crate::scalar::dist(&self.lower, &self.upper)
    }

    pub fn center(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| (l + u) * half)
            .collect()
    }

    /// Bounding box of the image of this box under `p ↦ m·p`.
    pub fn linear_image(&self, m: &Matrix<T>) -> Self {
        let n = self.dim();
        let mut lower = vec![T::infinity(); n];
        let mut upper = vec![T::neg_infinity(); n];
        for corner in 0..(1usize << n) {
            let p: Vec<T> = (0..n)
                .map(|k| {
                    if corner >> k & 1 == 1 {
                        self.upper[k]
                    } else {
                        self.lower[k]
                    }
                })
                .collect();
            for (k, v) in m.mul_vec(&p).into_iter().enumerate() {
                lower[k] = lower[k].min(v);
                upper[k] = upper[k].max(v);
            }
        }
        Self { lower, upper }
    }
}

/// How to obtain the mixed Hessian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HessianMethod<T> {
    Analytic,
    FiniteDifference { step: T },
}

/// An evaluable cost `c(x, y)` on `Rⁿ × Rⁿ`.
#[derive(Clone)]
pub struct CostModel<T> {
    label: String,
    dim: usize,
    domain_x: WorkBox<T>,
    domain_y: WorkBox<T>,
    eval: ScalarFn<T>,
    grad_x: Option<VectorFn<T>>,
    grad_y: Option<VectorFn<T>>,
    mixed_hessian: Option<MatrixFn<T>>,
}

impl<T> fmt::Debug for CostModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("analytic_grad_x", &self.grad_x.is_some())
            .field("analytic_grad_y", &self.grad_y.is_some())
            .field("analytic_mixed_hessian", &self.mixed_hessian.is_some())
            .finish()
    }
}

impl<T: Scalar> CostModel<T> {
    pub fn new(
        label: impl Into<String>,
        domain_x: WorkBox<T>,
        domain_y: WorkBox<T>,
        eval: impl Fn(&[T], &[T]) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        let dim = domain_x.dim();
        if domain_y.dim() != dim {
            return Err(Error::InvalidInput(format!(
                "source box has dimension {dim}, target box {}",
                domain_y.dim()
            )));
        }
        Ok(Self {
            label: label.into(),
            dim,
            domain_x,
            domain_y,
            eval: Arc::new(eval),
            grad_x: None,
            grad_y: None,
            mixed_hessian: None,
        })
    }

    pub fn with_grad_x(mut self, f: impl Fn(&[T], &[T]) -> Vec<T> + Send + Sync + 'static) -> Self {
        self.grad_x = Some(Arc::new(f));
        self
    }

    pub fn with_grad_y(mut self, f: impl Fn(&[T], &[T]) -> Vec<T> + Send + Sync + 'static) -> Self {
        self.grad_y = Some(Arc::new(f));
        self
    }

    pub fn with_mixed_hessian(
        mut self,
        f: impl Fn(&[T], &[T]) -> Matrix<T> + Send + Sync + 'static,
    ) -> Self {
        self.mixed_hessian = Some(Arc::new(f));
        self
    }

    /// Replaces both working boxes.
    pub fn with_domains(mut self, domain_x: WorkBox<T>, domain_y: WorkBox<T>) -> Result<Self> {
        if domain_x.dim() != self.dim || domain_y.dim() != self.dim {
            return Err(Error::InvalidInput(format!(
                "boxes must have dimension {}",
                self.dim
            )));
        }
        self.domain_x = domain_x;
        self.domain_y = domain_y;
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_x(&self) -> &WorkBox<T> {
        &self.domain_x
    }

    pub fn domain_y(&self) -> &WorkBox<T> {
        &self.domain_y
    }

    pub fn has_analytic_hessian(&self) -> bool {
        self.mixed_hessian.is_some()
    }

    pub(crate) fn check_domain(&self, x: &[T], y: &[T]) -> Result<()> {
        if !self.domain_x.contains(x) {
            return Err(Error::Domain(format!(
                "source point {:?} outside the working box of `{}`",
                crate::scalar::to_f64_vec(x),
                self.label
            )));
        }
        if !self.domain_y.contains(y) {
            return Err(Error::Domain(format!(
                "target point {:?} outside the working box of `{}`",
                crate::scalar::to_f64_vec(y),
                self.label
            )));
        }
        Ok(())
    }

    /// `c(x, y)`, rejecting points outside the working boxes.
    pub fn eval(&self, x: &[T], y: &[T]) -> Result<T> {
        self.check_domain(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// `c(x, y)` without the box check. Stencils use this to step past the
    /// boundary by at most one finite-difference step.
    pub fn eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        (self.eval)(x, y)
    }

    /// Surplus `b(x, y) = −c(x, y)`.
    pub fn surplus(&self, x: &[T], y: &[T]) -> Result<T> {
        self.eval(x, y).map(|c| -c)
    }

    /// `D_x c(x, y)`: analytic when available, central differences otherwise.
    pub fn grad_x(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.check_domain(x, y)?;
        Ok(match &self.grad_x {
            Some(g) => g(x, y),
            None => central_gradient(|p| self.eval_unchecked(p, y), x, T::lit(DEFAULT_FD_STEP)),
        })
    }

    /// `D_y c(x, y)`: analytic when available, central differences otherwise.
    pub fn grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.check_domain(x, y)?;
        Ok(match &self.grad_y {
            Some(g) => g(x, y),
            None => central_gradient(|p| self.eval_unchecked(x, p), y, T::lit(DEFAULT_FD_STEP)),
        })
    }

    /// Mixed Hessian `(∂²c/∂xᵢ∂yⱼ)ᵢⱼ`.
    ///
    /// The finite-difference mode uses the four-point central stencil
    /// `[c(x+hᵢ,y+hⱼ) − c(x+hᵢ,y−hⱼ) − c(x−hᵢ,y+hⱼ) + c(x−hᵢ,y−hⱼ)] / 4h²`
    /// per entry.
    pub fn mixed_hessian(&self, x: &[T], y: &[T], method: HessianMethod<T>) -> Result<Matrix<T>> {
        self.check_domain(x, y)?;
        match method {
            HessianMethod::Analytic => match &self.mixed_hessian {
                Some(h) => Ok(h(x, y)),
                None => Err(Error::Unsupported(format!(
                    "cost `{}` has no analytic mixed Hessian",
                    self.label
                ))),
            },
            HessianMethod::FiniteDifference { step } => {
                if !(step > T::zero()) {
                    return Err(Error::InvalidInput(
                        "finite-difference step must be positive".into(),
                    ));
                }
                Ok(self.fd_mixed_hessian(x, y, step))
            }
        }
    }

    /// Analytic mixed Hessian when present, finite differences otherwise.
    pub fn mixed_hessian_auto(&self, x: &[T], y: &[T]) -> Result<Matrix<T>> {
        let method = if self.mixed_hessian.is_some() {
            HessianMethod::Analytic
        } else {
            HessianMethod::FiniteDifference {
                step: T::lit(DEFAULT_FD_STEP),
            }
        };
        self.mixed_hessian(x, y, method)
    }

    fn fd_mixed_hessian(&self, x: &[T], y: &[T], h: T) -> Matrix<T> {
        let n = self.dim;
        let denom = T::lit(4.0) * h * h;
        let mut xs = x.to_vec();
        let mut ys = y.to_vec();
        Matrix::from_fn(n, n, |i, j| {
            let mut at = |sx: T, sy: T| {
                xs[i] = x[i] + sx;
                ys[j] = y[j] + sy;
                let v = self.eval_unchecked(&xs, &ys);
                xs[i] = x[i];
                ys[j] = y[j];
                v
            };
            (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / denom
        })
    }

    /// The same cost with the roles of the two arguments exchanged:
    /// `c'(y, x) = c(x, y)`. Its mixed Hessian is the transpose.
    pub fn swapped(&self) -> Self {
        let eval = Arc::clone(&self.eval);
        let mut out = Self {
            label: format!("{}(swapped)", self.label),
            dim: self.dim,
            domain_x: self.domain_y.clone(),
            domain_y: self.domain_x.clone(),
            eval: Arc::new(move |a: &[T], b: &[T]| eval(b, a)),
            grad_x: None,
            grad_y: None,
            mixed_hessian: None,
        };
        if let Some(g) = self.grad_y.clone() {
            out.grad_x = Some(Arc::new(move |a: &[T], b: &[T]| g(b, a)));
        }
        if let Some(g) = self.grad_x.clone() {
            out.grad_y = Some(Arc::new(move |a: &[T], b: &[T]| g(b, a)));
        }
        if let Some(h) = self.mixed_hessian.clone() {
            out.mixed_hessian = Some(Arc::new(move |a: &[T], b: &[T]| h(b, a).transpose()));
        }
        out
    }

    /// Re-expresses the cost in target coordinates `ỹ = m·y`:
    /// `c̃(x, ỹ) = c(x, m⁻¹ỹ)`, with derivatives transformed by the chain
    /// rule. Returns `None` when `m` is singular.
    pub fn reparametrize_target(&self, m: &Matrix<T>) -> Option<Self> {
        let m_inv = Arc::new(m.inverse()?);
        let back = {
            let m_inv = Arc::clone(&m_inv);
            move |yt: &[T]| m_inv.mul_vec(yt)
        };
        let back = Arc::new(back);
        let eval = Arc::clone(&self.eval);
        let b = Arc::clone(&back);
        let mut out = Self {
            label: format!("{}(normalized)", self.label),
            dim: self.dim,
            domain_x: self.domain_x.clone(),
            domain_y: self.domain_y.linear_image(m),
            eval: Arc::new(move |x: &[T], yt: &[T]| eval(x, &b(yt))),
            grad_x: None,
            grad_y: None,
            mixed_hessian: None,
        };
        if let Some(g) = self.grad_x.clone() {
            let b = Arc::clone(&back);
            out.grad_x = Some(Arc::new(move |x: &[T], yt: &[T]| g(x, &b(yt))));
        }
        if let Some(g) = self.grad_y.clone() {
            let b = Arc::clone(&back);
            let m_inv_t = m_inv.transpose();
            out.grad_y = Some(Arc::new(move |x: &[T], yt: &[T]| {
                m_inv_t.mul_vec(&g(x, &b(yt)))
            }));
        }
        if let Some(h) = self.mixed_hessian.clone() {
            let b = Arc::clone(&back);
            let m_inv = Arc::clone(&m_inv);
            out.mixed_hessian = Some(Arc::new(move |x: &[T], yt: &[T]| {
                h(x, &b(yt)).matmul(&m_inv)
            }));
        }
        Some(out)
    }
}

/// Central-difference gradient of a scalar function.
pub(crate) fn central_gradient<T: Scalar>(f: impl Fn(&[T]) -> T, p: &[T], h: T) -> Vec<T> {
    let mut q = p.to_vec();
    let two_h = h + h;
    (0..p.len())
        .map(|k| {
            q[k] = p[k] + h;
            let up = f(&q);
            q[k] = p[k] - h;
            let down = f(&q);
            q[k] = p[k];
            (up - down) / two_h
        })
        .collect()
}

/// `c(x, y)` on a model. Thin wrapper over [`CostModel::eval`].
pub fn eval_cost<T: Scalar>(model: &CostModel<T>, x: &[T], y: &[T]) -> Result<T> {
    model.eval(x, y)
}

/// Mixed Hessian by the requested method.
pub fn mixed_hessian<T: Scalar>(
    model: &CostModel<T>,
    x: &[T],
    y: &[T],
    method: HessianMethod<T>,
) -> Result<Matrix<T>> {
    model.mixed_hessian(x, y, method)
}

/// Looks up a built-in cost.
///
/// * `bilinear`: `c = −x·y` on `[−5, 5]ⁿ × [−5, 5]ⁿ`, any dimension.
/// * `quadratic`: `c = |x − y|²/2` on `[−5, 5]ⁿ × [−5, 5]ⁿ`, any dimension.
/// * `example31`: `c = e^{x₁+y₁} cos(x₂−y₂) + e^{2x₁}/2 + e^{2y₁}/2` in the
///   plane. Non-degenerate everywhere, but periodic in `x₂ − y₂`, hence not
///   twisted. Source box `[0,1]×[0,4π]`, target box `[0,1]×[0,9π]` (large
///   enough to hold the three sheets `y = x + (0, π), (0, 3π), (0, 5π)`).
/// * `example32`: `c = −(x₁cos y₁ + x₂ sin y₁)e^{y₂} + e^{2y₂}/2 + |x|²/2`
///   in the plane. Twisted in `y ↦ x` but not in `x ↦ y`. Source box
///   `[−3,3]²`, target box `[0,4π]×[−1,1]`.
pub fn builtin_cost<T: Scalar>(name: &str, dim: usize) -> Result<CostModel<T>> {
    if dim == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    let planar = |name: &str| -> Result<()> {
        if dim != 2 {
            Err(Error::InvalidInput(format!(
                "cost `{name}` is defined for dimension 2 only"
            )))
        } else {
            Ok(())
        }
    };
    match name {
        "bilinear" => Ok(bilinear(dim)),
        "quadratic" => Ok(quadratic(dim)),
        "example31" => {
            planar(name)?;
            Ok(cylinder())
        }
        "example32" => {
            planar(name)?;
            Ok(polar())
        }
        _ => Err(Error::UnknownCost {
            name: name.to_string(),
            available: BUILTIN_COSTS.to_vec(),
        }),
    }
}

fn bilinear<T: Scalar>(dim: usize) -> CostModel<T> {
    CostModel::new(
        "bilinear",
        WorkBox::cube(dim, -5.0, 5.0),
        WorkBox::cube(dim, -5.0, 5.0),
        |x: &[T], y: &[T]| -crate::scalar::dot(x, y),
    )
    .expect("consistent boxes")
    .with_grad_x(|_x, y| y.iter().map(|&v| -v).collect())
    .with_grad_y(|x, _y| x.iter().map(|&v| -v).collect())
    .with_mixed_hessian(move |_x, _y| Matrix::identity(dim).scale(-T::one()))
}

fn quadratic<T: Scalar>(dim: usize) -> CostModel<T> {
    CostModel::new(
        "quadratic",
        WorkBox::cube(dim, -5.0, 5.0),
        WorkBox::cube(dim, -5.0, 5.0),
        |x: &[T], y: &[T]| {
            let d = crate::scalar::dist(x, y);
            d * d * T::lit(0.5)
        },
    )
    .expect("consistent boxes")
    .with_grad_x(|x, y| crate::scalar::sub(x, y))
    .with_grad_y(|x, y| crate::scalar::sub(y, x))
    .with_mixed_hessian(move |_x, _y| Matrix::identity(dim).scale(-T::one()))
}

fn cylinder<T: Scalar>() -> CostModel<T> {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    CostModel::new(
        "example31",
        WorkBox::new(vec![T::zero(), T::zero()], vec![T::one(), T::lit(4.0 * PI)]).unwrap(),
        WorkBox::new(vec![T::zero(), T::zero()], vec![T::one(), T::lit(9.0 * PI)]).unwrap(),
        move |x: &[T], y: &[T]| {
            (x[0] + y[0]).exp() * (x[1] - y[1]).cos()
                + (two * x[0]).exp() * half
                + (two * y[0]).exp() * half
        },
    )
    .unwrap()
    .with_grad_x(move |x, y| {
        let e = (x[0] + y[0]).exp();
        let d = x[1] - y[1];
        vec![e * d.cos() + (two * x[0]).exp(), -e * d.sin()]
    })
    .with_grad_y(move |x, y| {
        let e = (x[0] + y[0]).exp();
        let d = x[1] - y[1];
        vec![e * d.cos() + (two * y[0]).exp(), e * d.sin()]
    })
    .with_mixed_hessian(|x, y| {
        let e = (x[0] + y[0]).exp();
        let (s, c) = (x[1] - y[1]).sin_cos();
        Matrix::from_rows(&[vec![e * c, e * s], vec![-e * s, e * c]])
    })
}

fn polar<T: Scalar>() -> CostModel<T> {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    CostModel::new(
        "example32",
        WorkBox::cube(2, -3.0, 3.0),
        WorkBox::new(vec![T::zero(), -T::one()], vec![T::lit(4.0 * PI), T::one()]).unwrap(),
        move |x: &[T], y: &[T]| {
            let (s, c) = y[0].sin_cos();
            -(x[0] * c + x[1] * s) * y[1].exp()
                + (two * y[1]).exp() * half
                + (x[0] * x[0] + x[1] * x[1]) * half
        },
    )
    .unwrap()
    .with_grad_x(|x, y| {
        let (s, c) = y[0].sin_cos();
        let e = y[1].exp();
        vec![x[0] - c * e, x[1] - s * e]
    })
    .with_grad_y(move |x, y| {
        let (s, c) = y[0].sin_cos();
        let e = y[1].exp();
        vec![
            (x[0] * s - x[1] * c) * e,
            -(x[0] * c + x[1] * s) * e + (two * y[1]).exp(),
        ]
    })
    .with_mixed_hessian(|_x, y| {
        let (s, c) = y[0].sin_cos();
        let e = y[1].exp();
        Matrix::from_rows(&[vec![s * e, -c * e], vec![-c * e, -s * e]])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FD: HessianMethod<f64> = HessianMethod::FiniteDifference { step: 1e-4 };

    fn sample_in(rng: &mut ChaCha8Rng, b: &WorkBox<f64>, margin: f64) -> Vec<f64> {
        b.lower
            .iter()
            .zip(&b.upper)
            .map(|(&l, &u)| rng.gen_range(l + margin..=u - margin))
            .collect()
    }

    fn rel_entry_error(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.sub(b).max_abs() / a.max_abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn bilinear_value() {
        let c = builtin_cost::<f64>("bilinear", 2).unwrap();
        assert_eq!(c.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), -11.0);
    }

    #[test]
    fn cylinder_values() {
        let c = builtin_cost::<f64>("example31", 2).unwrap();
        assert_eq!(c.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 2.0);
        // (x, y) on the first sheet: the cost meets its lower bound 0.
        let v = c.eval(&[0.0, 0.0], &[0.0, PI]).unwrap();
        assert!(v.abs() < 1e-15, "{v}");
    }

    #[test]
    fn out_of_box_is_a_domain_error() {
        let c = builtin_cost::<f64>("example31", 2).unwrap();
        assert!(matches!(
            c.eval(&[2.0, 0.0], &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            c.eval(&[0.0, 0.0], &[0.0, -1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cylinder_hessian_on_first_sheet() {
        let c = builtin_cost::<f64>("example31", 2).unwrap();
        let h = c
            .mixed_hessian(&[0.0, 0.0], &[0.0, PI], HessianMethod::Analytic)
            .unwrap();
        let expected = Matrix::identity(2).scale(-1.0);
        assert!(h.sub(&expected).max_abs() < 1e-15);
    }

    #[test]
    fn polar_determinant_closed_form() {
        let c = builtin_cost::<f64>("example32", 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = sample_in(&mut rng, c.domain_x(), 0.0);
            let y = sample_in(&mut rng, c.domain_y(), 0.0);
            let det = c
                .mixed_hessian(&x, &y, HessianMethod::Analytic)
                .unwrap()
                .determinant();
            let expected = -(2.0 * y[1]).exp();
            assert!((det - expected).abs() <= 1e-12 * expected.abs());
        }
    }

    #[test]
    fn quadratic_hessian_one_dimensional() {
        let c = builtin_cost::<f64>("quadratic", 1).unwrap();
        let h = c
            .mixed_hessian(&[0.3], &[-1.2], HessianMethod::Analytic)
            .unwrap();
        assert_eq!(h.to_rows(), vec![vec![-1.0]]);
        let b = builtin_cost::<f64>("bilinear", 3).unwrap();
        let h = b
            .mixed_hessian(&[0.1; 3], &[0.2; 3], HessianMethod::Analytic)
            .unwrap();
        assert_eq!(h, Matrix::identity(3).scale(-1.0));
    }

    #[test]
    fn unknown_cost_lists_the_builtins() {
        let err = builtin_cost::<f64>("cosine", 2).unwrap_err();
        let msg = err.to_string();
        for name in BUILTIN_COSTS {
            assert!(msg.contains(name), "{msg}");
        }
        assert!(builtin_cost::<f64>("example31", 3).is_err());
    }

    #[test]
    fn analytic_hessian_required_when_requested() {
        let custom = CostModel::new(
            "custom",
            WorkBox::cube(1, -1.0, 1.0),
            WorkBox::cube(1, -1.0, 1.0),
            |x: &[f64], y: &[f64]| (x[0] - y[0]).powi(2),
        )
        .unwrap();
        assert!(matches!(
            custom.mixed_hessian(&[0.0], &[0.0], HessianMethod::Analytic),
            Err(Error::Unsupported(_))
        ));
        let h = custom.mixed_hessian(&[0.0], &[0.5], FD).unwrap();
        assert!((h[(0, 0)] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in BUILTIN_COSTS {
            let c = builtin_cost::<f64>(name, 2).unwrap();
            for _ in 0..20 {
                let x = sample_in(&mut rng, c.domain_x(), 1e-3);
                let y = sample_in(&mut rng, c.domain_y(), 1e-3);
                let gx = c.grad_x(&x, &y).unwrap();
                let gy = c.grad_y(&x, &y).unwrap();
                let fx = central_gradient(|p| c.eval_unchecked(p, &y), &x, 1e-5);
                let fy = central_gradient(|p| c.eval_unchecked(&x, p), &y, 1e-5);
                for (a, b) in gx.iter().chain(&gy).zip(fx.iter().chain(&fy)) {
                    assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{name}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn swapped_hessian_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for name in BUILTIN_COSTS {
            let c = builtin_cost::<f64>(name, 2).unwrap();
            let s = c.swapped();
            for _ in 0..100 {
                let x = sample_in(&mut rng, c.domain_x(), 1e-4);
                let y = sample_in(&mut rng, c.domain_y(), 1e-4);
                let h = c.mixed_hessian(&x, &y, HessianMethod::Analytic).unwrap();
                let hs = s.mixed_hessian(&y, &x, FD).unwrap();
                assert!(rel_entry_error(&h.transpose(), &hs) <= 1e-5, "{name}");
                assert_eq!(s.eval(&y, &x).unwrap(), c.eval(&x, &y).unwrap());
            }
        }
    }

    #[test]
    fn reparametrized_target_hessian() {
        // b = 2xy in one dimension: c = −2xy, normalization m = [[2]].
        let c = CostModel::new(
            "scaled",
            WorkBox::cube(1, -1.0, 1.0),
            WorkBox::cube(1, -1.0, 1.0),
            |x: &[f64], y: &[f64]| -2.0 * x[0] * y[0],
        )
        .unwrap()
        .with_mixed_hessian(|_, _| Matrix::from_rows(&[vec![-2.0]]));
        let m = Matrix::from_rows(&[vec![2.0]]);
        let t = c.reparametrize_target(&m).unwrap();
        let h = t
            .mixed_hessian(&[0.1], &[0.4], HessianMethod::Analytic)
            .unwrap();
        assert_eq!(h.to_rows(), vec![vec![-1.0]]);
        assert_eq!(t.domain_y().upper, vec![2.0]);
        assert!((t.eval(&[0.5], &[1.0]).unwrap() - c.eval(&[0.5], &[0.5]).unwrap()).abs() < 1e-15);
        let fd = t.mixed_hessian(&[0.1], &[0.4], FD).unwrap();
        assert!((fd[(0, 0)] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn single_precision_model_evaluates() {
        let c = builtin_cost::<f32>("example31", 2).unwrap();
        let v = c.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
    }
}
