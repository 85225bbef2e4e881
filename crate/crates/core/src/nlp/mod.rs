//! Smooth nonlinear programs and a primal-dual interior-point solver.
//!
//! Problems have the form
//!
//! ```text
//!     min  f(x)
//!     s.t. c_E(x)  = 0
//!          c_I(x) <= 0
//!          l <= x <= u        (entries of l, u may be infinite)
//! ```
//!
//! Derivatives are supplied as coordinate (triplet) lists. Duplicate entries
//! are summed by every consumer.

mod derivatives;
pub mod external;
mod ipm;
mod ldl;

use serde::{Deserialize, Serialize};

pub use derivatives::{check_derivatives, check_hessian, DerivativeCheck, DerivativeSource};
pub use external::ExternalSolver;
pub use ipm::{InteriorPoint, IterationLog};
pub use ldl::{minimum_degree_order, Inertia, SymmetricFactor};

/// Sparse matrix in coordinate form. Duplicates are summed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Triplets {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Triplets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Triplets {
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    /// Dense row-major copy with duplicates summed.
    pub fn to_dense(&self, nrows: usize, ncols: usize) -> Vec<f64> {
        let mut out = vec![0.0; nrows * ncols];
        for (r, c, v) in self.iter() {
            out[r * ncols + c] += v;
        }
        out
    }
}

/// A smooth constrained program evaluated through callbacks.
///
/// All evaluations must be deterministic. The Hessian, when provided, is the
/// lower triangle (`row >= col`) of
/// `obj_factor * ∇²f + Σ λ_E ∇²c_E + Σ λ_I ∇²c_I`.
pub trait NlpProblem: Sync {
    fn num_variables(&self) -> usize;
    fn num_equalities(&self) -> usize;
    fn num_inequalities(&self) -> usize;

    /// Lower and upper variable bounds.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn equalities(&self, x: &[f64], out: &mut [f64]);
    fn inequalities(&self, x: &[f64], out: &mut [f64]);
    fn equality_jacobian(&self, x: &[f64]) -> Triplets;
    fn inequality_jacobian(&self, x: &[f64]) -> Triplets;

    fn hessian(
        &self,
        _x: &[f64],
        _obj_factor: f64,
        _lambda_eq: &[f64],
        _lambda_ineq: &[f64],
    ) -> Option<Triplets> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// The looser `acceptable_tol` held for `acceptable_iter` consecutive
    /// iterations while progress stalled at rounding level.
    Acceptable,
    MaxIter,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }

    /// Optimal or acceptable.
    pub fn is_success(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Acceptable)
    }
}

/// Scaled first-order optimality measures at the returned point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.feasibility)
            .max(self.complementarity)
    }
}

/// Multipliers at a solution, in the sign convention of the Lagrangian
/// `f + λ_E·c_E + λ_I·c_I - z_L·(x - l) - z_U·(u - x)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
    pub multipliers: Multipliers,
    /// Barrier parameter at termination; useful to warm-start a re-solve.
    pub final_mu: f64,
}

/// Starting information for a solve. Multipliers are optional.
#[derive(Clone, Debug, Default)]
pub struct StartPoint {
    pub x: Vec<f64>,
    pub multipliers: Option<Multipliers>,
    /// Overrides [`SolveOptions::mu_init`] when set.
    pub mu: Option<f64>,
}

impl StartPoint {
    pub fn cold(x: Vec<f64>) -> Self {
        StartPoint {
            x,
            multipliers: None,
            mu: None,
        }
    }

    /// Restart from a previous result, keeping its multipliers and barrier level.
    pub fn warm(prev: &SolveResult, mu: f64) -> Self {
        StartPoint {
            x: prev.x.clone(),
            multipliers: Some(prev.multipliers.clone()),
            mu: Some(mu),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Scaled KKT tolerance.
    pub tol: f64,
    pub acceptable_tol: f64,
    pub acceptable_iter: usize,
    pub max_iter: usize,
    pub mu_init: f64,
    /// Fraction-to-the-boundary parameter.
    pub tau: f64,
    /// μ is divided by `mu_factor` once the barrier problem error drops below `kappa_eps * μ`.
    pub mu_factor: f64,
    pub kappa_eps: f64,
    /// Absolute and relative margins for pushing the start strictly inside its bounds.
    pub bound_push: f64,
    pub bound_frac: f64,
    /// First nonzero primal regularization tried by the inertia correction.
    pub regularization_init: f64,
    pub regularization_growth: f64,
    pub regularization_max: f64,
    /// Rescale the objective so its gradient at the start is at most this large.
    pub obj_scaling_threshold: f64,
    pub record_log: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            acceptable_tol: 1e-6,
            acceptable_iter: 15,
            max_iter: 500,
            mu_init: 0.1,
            tau: 0.995,
            mu_factor: 10.0,
            kappa_eps: 10.0,
            bound_push: 1e-2,
            bound_frac: 1e-2,
            regularization_init: 1e-8,
            regularization_growth: 10.0,
            regularization_max: 1e20,
            obj_scaling_threshold: 100.0,
            record_log: false,
        }
    }
}

/// Failure to run a solver at all. Failures *of* a solve are reported
/// through [`SolveStatus`].
#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("external solver: {0}")]
    External(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A backend that solves [`NlpProblem`]s.
pub trait NlpSolver: Sync {
    fn solve(
        &self,
        problem: &dyn NlpProblem,
        start: &StartPoint,
        opts: &SolveOptions,
    ) -> Result<SolveResult, SolverError>;

    fn name(&self) -> &str;
}
