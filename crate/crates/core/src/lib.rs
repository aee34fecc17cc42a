//! Exact discrete optimal transport with certificates for the structure of
//! optimal supports.
//!
//! [`solver::solve_exact`] solves the Kantorovich linear program on two
//! discrete measures. The remaining modules check what optimal supports must
//! look like: b-monotone ([`monotonicity`]), locally a Lipschitz graph over
//! the diagonal after a change of frame ([`rectifier`]), and, for maps,
//! consistent with the change-of-variables equation ([`jacobian`]).
//! [`nondegeneracy`] classifies mixed Hessians and probes the twist
//! condition; [`reproduce`] builds the cylinder and polar examples.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below fix the precision used by the command-line tool.

pub mod cost;
pub mod error;
pub mod io;
pub mod jacobian;
pub mod linalg;
pub mod measure;
pub mod monotonicity;
pub mod nondegeneracy;
pub mod rectifier;
pub mod reproduce;
pub mod scalar;
pub mod solver;

pub use cost::{
    builtin_cost, eval_cost, mixed_hessian, CostModel, HessianMethod, WorkBox, BUILTIN_COSTS,
};
pub use error::{Error, Result};
pub use jacobian::{
    estimate_map, jacobian_residual, local_jacobian, pushforward_check, CellPartition, Density,
    DensityModel, JacobianReport, MapEstimate,
};
pub use linalg::Matrix;
pub use measure::{
    kantorovich_cost, marginals, support, DiscreteMeasure, SupportSample, TransportPlan,
};
pub use monotonicity::{check_cyclical, check_pairwise, MonotonicityReport};
pub use nondegeneracy::{
    classify_point, twist_scan, Direction, HessianClassification, TwistReport,
};
pub use rectifier::{
    certify_lipschitz, estimate_epsilon, fit_graph, normalize_frame, rectify, rotate_diagonal,
    RectifiabilityCertificate, RectifyOptions, RectifyOutcome,
};
pub use reproduce::{build_example31_plans, build_example32_surface, verify_lower_bound};
pub use scalar::Scalar;
pub use solver::{brute_force, dual_potentials, solve_exact, DualPotentials, OptimalPlan};

pub type CostModelF64 = CostModel<f64>;
pub type DiscreteMeasureF64 = DiscreteMeasure<f64>;
pub type TransportPlanF64 = TransportPlan<f64>;
pub type SupportSampleF64 = SupportSample<f64>;
pub type MatrixF64 = Matrix<f64>;
pub type RectifiabilityCertificateF64 = RectifiabilityCertificate<f64>;
pub type JacobianReportF64 = JacobianReport<f64>;
