//! Central finite-difference checks of user-supplied derivatives.

use super::{NlpProblem, Triplets};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeSource {
    Gradient,
    EqualityJacobian,
    InequalityJacobian,
    Hessian,
}

/// Worst mismatch found by a derivative check.
///
/// The relative error of an entry is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeCheck {
    pub max_rel_error: f64,
    pub source: DerivativeSource,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl DerivativeCheck {
    fn none() -> Self {
        DerivativeCheck {
            max_rel_error: 0.0,
            source: DerivativeSource::Gradient,
            row: 0,
            col: 0,
            analytic: 0.0,
            numeric: 0.0,
        }
    }

    fn consider(&mut self, source: DerivativeSource, row: usize, col: usize, a: f64, fd: f64) {
        let err = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
        if err > self.max_rel_error || err.is_nan() {
            *self = DerivativeCheck {
                max_rel_error: if err.is_nan() { f64::INFINITY } else { err },
                source,
                row,
                col,
                analytic: a,
                numeric: fd,
            };
        }
    }
}

fn perturbed(x: &[f64], j: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[j] += h;
    xm[j] -= h;
    (xp, xm)
}

/// Compare the objective gradient and both constraint Jacobians against
/// central differences with step `step`.
pub fn check_derivatives(problem: &dyn NlpProblem, x: &[f64], step: f64) -> DerivativeCheck {
    let n = problem.num_variables();
    let me = problem.num_equalities();
    let mi = problem.num_inequalities();
    let mut worst = DerivativeCheck::none();

    let mut grad = vec![0.0; n];
    problem.gradient(x, &mut grad);
    let je = Triplets::to_dense(&problem.equality_jacobian(x), me, n);
    let ji = Triplets::to_dense(&problem.inequality_jacobian(x), mi, n);

    let mut ce_p = vec![0.0; me];
    let mut ce_m = vec![0.0; me];
    let mut ci_p = vec![0.0; mi];
    let mut ci_m = vec![0.0; mi];
    for j in 0..n {
        let (xp, xm) = perturbed(x, j, step);
        let fd = (problem.objective(&xp) - problem.objective(&xm)) / (2.0 * step);
        worst.consider(DerivativeSource::Gradient, 0, j, grad[j], fd);

        problem.equalities(&xp, &mut ce_p);
        problem.equalities(&xm, &mut ce_m);
        for r in 0..me {
            let fd = (ce_p[r] - ce_m[r]) / (2.0 * step);
            worst.consider(DerivativeSource::EqualityJacobian, r, j, je[r * n + j], fd);
        }
        problem.inequalities(&xp, &mut ci_p);
        problem.inequalities(&xm, &mut ci_m);
        for r in 0..mi {
            let fd = (ci_p[r] - ci_m[r]) / (2.0 * step);
            worst.consider(DerivativeSource::InequalityJacobian, r, j, ji[r * n + j], fd);
        }
    }
    worst
}

/// Gradient of the Lagrangian `σ f + λ_Eᵀ c_E + λ_Iᵀ c_I`.
fn lagrangian_gradient(
    problem: &dyn NlpProblem,
    x: &[f64],
    obj_factor: f64,
    lam_eq: &[f64],
    lam_ineq: &[f64],
) -> Vec<f64> {
    let n = problem.num_variables();
    let mut g = vec![0.0; n];
    problem.gradient(x, &mut g);
    g.iter_mut().for_each(|v| *v *= obj_factor);
    for (r, c, v) in problem.equality_jacobian(x).iter() {
        g[c] += lam_eq[r] * v;
    }
    for (r, c, v) in problem.inequality_jacobian(x).iter() {
        g[c] += lam_ineq[r] * v;
    }
    g
}

/// Dense finite-difference Hessian of the Lagrangian (row-major, symmetrized).
fn fd_hessian_dense(
    problem: &dyn NlpProblem,
    x: &[f64],
    obj_factor: f64,
    lam_eq: &[f64],
    lam_ineq: &[f64],
    step: f64,
) -> Vec<f64> {
    let n = problem.num_variables();
    let mut h = vec![0.0; n * n];
    for j in 0..n {
        let (xp, xm) = perturbed(x, j, step);
        let gp = lagrangian_gradient(problem, &xp, obj_factor, lam_eq, lam_ineq);
        let gm = lagrangian_gradient(problem, &xm, obj_factor, lam_eq, lam_ineq);
        for i in 0..n {
            h[i * n + j] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (h[i * n + j] + h[j * n + i]);
            h[i * n + j] = avg;
            h[j * n + i] = avg;
        }
    }
    h
}

/// Lower-triangular finite-difference Hessian, used when a problem supplies none.
pub(crate) fn fd_hessian(
    problem: &dyn NlpProblem,
    x: &[f64],
    obj_factor: f64,
    lam_eq: &[f64],
    lam_ineq: &[f64],
) -> Triplets {
    let n = problem.num_variables();
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let h = fd_hessian_dense(problem, x, obj_factor, lam_eq, lam_ineq, 1e-6 * scale);
    let mut t = Triplets::new();
    for i in 0..n {
        for j in 0..=i {
            let v = h[i * n + j];
            if v != 0.0 {
                t.push(i, j, v);
            }
        }
    }
    t
}

/// Compare the problem's Hessian of the Lagrangian against central
/// differences of the Lagrangian gradient. Returns `None` when the problem
/// has no analytic Hessian.
pub fn check_hessian(
    problem: &dyn NlpProblem,
    x: &[f64],
    step: f64,
    obj_factor: f64,
    lam_eq: &[f64],
    lam_ineq: &[f64],
) -> Option<DerivativeCheck> {
    let n = problem.num_variables();
    let analytic = problem.hessian(x, obj_factor, lam_eq, lam_ineq)?;
    let mut a = vec![0.0; n * n];
    for (r, c, v) in analytic.iter() {
        a[r * n + c] += v;
        if r != c {
            a[c * n + r] += v;
        }
    }
    let fd = fd_hessian_dense(problem, x, obj_factor, lam_eq, lam_ineq, step);
    let mut worst = DerivativeCheck::none();
    for i in 0..n {
        for j in 0..=i {
            worst.consider(DerivativeSource::Hessian, i, j, a[i * n + j], fd[i * n + j]);
        }
    }
    Some(worst)
}
