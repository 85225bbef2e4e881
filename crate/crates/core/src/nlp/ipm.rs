//! Primal-dual interior-point method with a log barrier.
//!
//! Inequalities are turned into equalities with nonnegative slacks,
//! `c_I(x) + s = 0`, and the slack block is condensed out of the Newton
//! system, leaving the reduced KKT matrix
//!
//! ```text
//!     [ W + Σ_x + δ_w I + J_Iᵀ D J_I     J_Eᵀ  ]
//!     [ J_E                              -δ_c I ]
//! ```
//!
//! whose inertia must be `(n, m_E, 0)`; otherwise `δ_w` is raised. Steps
//! are damped by the fraction-to-the-boundary rule and a backtracking line
//! search on the ℓ1 merit function of the current barrier problem.

use super::ldl::{minimum_degree_order, SymmetricFactor};
use super::{
    KktResiduals, Multipliers, NlpProblem, NlpSolver, SolveOptions, SolveResult, SolveStatus,
    SolverError, StartPoint, Triplets,
};

/// One accepted (or final failed) iteration of the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub mu: f64,
    pub objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    /// Merit value before and after the step, both at this step's μ and penalty.
    pub merit_before: f64,
    pub merit_after: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub regularization: f64,
    pub backtracks: usize,
}

/// The built-in solver.
#[derive(Clone, Copy, Debug, Default)]
pub struct InteriorPoint;

impl NlpSolver for InteriorPoint {
    fn solve(
        &self,
        problem: &dyn NlpProblem,
        start: &StartPoint,
        opts: &SolveOptions,
    ) -> Result<SolveResult, SolverError> {
        self.solve_with_log(problem, start, opts).map(|(r, _)| r)
    }

    fn name(&self) -> &str {
        "builtin"
    }
}

const ARMIJO_ETA: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const KAPPA_SIGMA: f64 = 1e10;
const S_MAX: f64 = 100.0;
const MULT_INIT_MAX: f64 = 1e3;

impl InteriorPoint {
    pub fn solve_with_log(
        &self,
        problem: &dyn NlpProblem,
        start: &StartPoint,
        opts: &SolveOptions,
    ) -> Result<(SolveResult, Vec<IterationLog>), SolverError> {
        let mut state = State::new(problem, start, opts)?;
        let result = state.run();
        Ok((result, state.log))
    }
}

/// Index sets of the reduced problem.
struct Structure {
    n_full: usize,
    free: Vec<usize>,
    /// Position of each full variable among the free ones.
    free_pos: Vec<Option<usize>>,
    m_eq: usize,
    m_ineq: usize,
    xl: Vec<f64>,
    xu: Vec<f64>,
}

impl Structure {
    fn has_l(&self, i: usize) -> bool {
        self.xl[i].is_finite()
    }
    fn has_u(&self, i: usize) -> bool {
        self.xu[i].is_finite()
    }
}

/// Functions and derivatives at one point, restricted to free variables.
struct Eval {
    obj: f64,
    grad: Vec<f64>,
    c_eq: Vec<f64>,
    c_ineq: Vec<f64>,
    j_eq: Triplets,
    j_ineq: Triplets,
}

struct State<'a> {
    problem: &'a dyn NlpProblem,
    opts: &'a SolveOptions,
    st: Structure,
    obj_scale: f64,
    x_full: Vec<f64>,
    x: Vec<f64>,
    s: Vec<f64>,
    lam_eq: Vec<f64>,
    lam_ineq: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    zs: Vec<f64>,
    mu: f64,
    mu_min: f64,
    nu: f64,
    /// ℓ1 infeasibility at or below rounding level.
    theta_small: f64,
    reg_last: f64,
    order: Option<Vec<usize>>,
    log: Vec<IterationLog>,
}

enum StepOutcome {
    Accepted,
    Failed,
}

impl<'a> State<'a> {
    fn new(
        problem: &'a dyn NlpProblem,
        start: &StartPoint,
        opts: &'a SolveOptions,
    ) -> Result<Self, SolverError> {
        let n_full = problem.num_variables();
        if start.x.len() != n_full {
            return Err(SolverError::Dimension(format!(
                "start has {} entries, problem has {} variables",
                start.x.len(),
                n_full
            )));
        }
        let (lb, ub) = problem.bounds();
        if lb.len() != n_full || ub.len() != n_full {
            return Err(SolverError::Dimension("bounds length".into()));
        }
        let mut x_full = start.x.clone();
        let mut free = Vec::new();
        let mut free_pos = vec![None; n_full];
        let mut xl = Vec::new();
        let mut xu = Vec::new();
        for i in 0..n_full {
            if lb[i] > ub[i] {
                return Err(SolverError::Dimension(format!(
                    "variable {i} has lower bound {} above upper bound {}",
                    lb[i], ub[i]
                )));
            }
            if lb[i].is_finite() && ub[i] - lb[i] <= 1e-12 * (1.0 + lb[i].abs()) {
                x_full[i] = 0.5 * (lb[i] + ub[i]);
            } else {
                free_pos[i] = Some(free.len());
                free.push(i);
                xl.push(lb[i]);
                xu.push(ub[i]);
            }
        }
        let st = Structure {
            n_full,
            free,
            free_pos,
            m_eq: problem.num_equalities(),
            m_ineq: problem.num_inequalities(),
            xl,
            xu,
        };

        let mut x: Vec<f64> = st.free.iter().map(|&i| x_full[i]).collect();
        let warm = start.multipliers.is_some();
        // Warm starts keep the point almost where it was.
        let (push, frac) = if warm {
            (1e-10_f64.max(opts.bound_push * 1e-6), 1e-10_f64.max(opts.bound_frac * 1e-6))
        } else {
            (opts.bound_push, opts.bound_frac)
        };
        for i in 0..x.len() {
            let (l, u) = (st.xl[i], st.xu[i]);
            let range = u - l;
            if l.is_finite() {
                let p = (push * l.abs().max(1.0)).min(frac * range);
                x[i] = x[i].max(l + p);
            }
            if u.is_finite() {
                let p = (push * u.abs().max(1.0)).min(frac * range);
                x[i] = x[i].min(u - p);
            }
        }
        for (k, &i) in st.free.iter().enumerate() {
            x_full[i] = x[k];
        }

        let mu = start.mu.unwrap_or(opts.mu_init);
        let mut state = State {
            problem,
            opts,
            obj_scale: 1.0,
            x_full,
            x,
            s: vec![0.0; st.m_ineq],
            lam_eq: vec![0.0; st.m_eq],
            lam_ineq: vec![0.0; st.m_ineq],
            zl: vec![0.0; st.free.len()],
            zu: vec![0.0; st.free.len()],
            zs: vec![0.0; st.m_ineq],
            mu,
            mu_min: (opts.tol / 10.0).min(mu),
            nu: 1.0,
            theta_small: 1e-12 * (st.m_eq + st.m_ineq).max(1) as f64,
            reg_last: 0.0,
            order: None,
            log: Vec::new(),
            st,
        };
        state.initialize(start, push);
        Ok(state)
    }

    fn initialize(&mut self, start: &StartPoint, push: f64) {
        let ev = self.evaluate_raw(&self.x_full.clone());
        let gmax = ev.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        self.obj_scale = if gmax > self.opts.obj_scaling_threshold && gmax.is_finite() {
            self.opts.obj_scaling_threshold / gmax
        } else {
            1.0
        };
        for (i, c) in ev.c_ineq.iter().enumerate() {
            self.s[i] = (-c).max(push * c.abs().max(1.0));
        }

        match &start.multipliers {
            Some(m) => {
                let sc = self.obj_scale;
                let floor = self.mu * 1e-6;
                if m.eq.len() == self.st.m_eq {
                    self.lam_eq = m.eq.iter().map(|v| v * sc).collect();
                }
                if m.ineq.len() == self.st.m_ineq {
                    self.lam_ineq = m.ineq.iter().map(|v| v * sc).collect();
                }
                for (k, &i) in self.st.free.iter().enumerate() {
                    if self.st.has_l(k) {
                        let v = m.lower.get(i).copied().unwrap_or(0.0) * sc;
                        self.zl[k] = v.max(floor);
                    }
                    if self.st.has_u(k) {
                        let v = m.upper.get(i).copied().unwrap_or(0.0) * sc;
                        self.zu[k] = v.max(floor);
                    }
                }
                for i in 0..self.st.m_ineq {
                    self.zs[i] = self.lam_ineq[i].max(floor);
                }
            }
            None => {
                for k in 0..self.st.free.len() {
                    if self.st.has_l(k) {
                        self.zl[k] = 1.0;
                    }
                    if self.st.has_u(k) {
                        self.zu[k] = 1.0;
                    }
                }
                self.zs.iter_mut().for_each(|z| *z = 1.0);
                self.least_squares_multipliers(&ev);
            }
        }
    }

    /// Least-squares estimate of λ from stationarity, as in IPOPT.
    fn least_squares_multipliers(&mut self, ev: &Eval) {
        let (n, me, mi) = (self.st.free.len(), self.st.m_eq, self.st.m_ineq);
        if me + mi == 0 {
            return;
        }
        // [ I   Jᵀ ] [w]   [ -(∇f - z_L + z_U) ]
        // [ J   0  ] [λ] = [ 0 ]  with the slack block condensed (Σ_s = 1).
        let mut rx: Vec<f64> = (0..n)
            .map(|i| ev.grad[i] - self.zl[i] + self.zu[i])
            .collect();
        let rs: Vec<f64> = self.zs.iter().map(|z| -z).collect();
        let w_unit = Triplets::new();
        let sigma_x = vec![1.0; n];
        let sigma_s = vec![1.0; mi];
        rx.iter_mut().for_each(|v| *v = -*v);
        let sys = ReducedSystem::assemble(
            &w_unit, &sigma_x, &sigma_s, &ev.j_eq, &ev.j_ineq, me, 0.0, 0.0,
        );
        let order = minimum_degree_order(sys.dim, &sys.matrix);
        let f = SymmetricFactor::factor(sys.dim, &sys.matrix, Some(&order), 0.0);
        let rhs_e = vec![0.0; me];
        let rhs_i = vec![0.0; mi];
        let neg_rs: Vec<f64> = rs.iter().map(|v| -v).collect();
        if let Some(sol) = sys.solve(&f, &rx, &neg_rs, &rhs_e, &rhs_i) {
            let lmax = sol
                .dlam_eq
                .iter()
                .chain(&sol.dlam_ineq)
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if lmax <= MULT_INIT_MAX && lmax.is_finite() {
                self.lam_eq = sol.dlam_eq;
                self.lam_ineq = sol.dlam_ineq;
            }
        }
    }

    fn ordering(&mut self, matrix: &Triplets, dim: usize) -> Vec<usize> {
        match &self.order {
            Some(o) if o.len() == dim => o.clone(),
            _ => {
                let o = minimum_degree_order(dim, matrix);
                self.order = Some(o.clone());
                o
            }
        }
    }

    fn evaluate_raw(&self, x_full: &[f64]) -> Eval {
        let p = self.problem;
        let obj = p.objective(x_full);
        let mut g_full = vec![0.0; self.st.n_full];
        p.gradient(x_full, &mut g_full);
        let grad = self.st.free.iter().map(|&i| g_full[i]).collect();
        let mut c_eq = vec![0.0; self.st.m_eq];
        p.equalities(x_full, &mut c_eq);
        let mut c_ineq = vec![0.0; self.st.m_ineq];
        p.inequalities(x_full, &mut c_ineq);
        let j_eq = self.restrict_cols(p.equality_jacobian(x_full));
        let j_ineq = self.restrict_cols(p.inequality_jacobian(x_full));
        Eval {
            obj,
            grad,
            c_eq,
            c_ineq,
            j_eq,
            j_ineq,
        }
    }

    fn evaluate(&self) -> Eval {
        let mut ev = self.evaluate_raw(&self.x_full);
        ev.obj *= self.obj_scale;
        ev.grad.iter_mut().for_each(|g| *g *= self.obj_scale);
        ev
    }

    fn restrict_cols(&self, t: Triplets) -> Triplets {
        let mut out = Triplets::with_capacity(t.len());
        for (r, c, v) in t.iter() {
            if let Some(k) = self.st.free_pos[c] {
                out.push(r, k, v);
            }
        }
        out
    }

    fn hessian(&self) -> Triplets {
        let full = self.problem.hessian(
            &self.x_full,
            self.obj_scale,
            &self.lam_eq,
            &self.lam_ineq,
        );
        let full = match full {
            Some(h) => h,
            None => super::derivatives::fd_hessian(
                self.problem,
                &self.x_full,
                self.obj_scale,
                &self.lam_eq,
                &self.lam_ineq,
            ),
        };
        let mut out = Triplets::with_capacity(full.len());
        for (r, c, v) in full.iter() {
            if let (Some(a), Some(b)) = (self.st.free_pos[r], self.st.free_pos[c]) {
                let (i, j) = if a >= b { (a, b) } else { (b, a) };
                out.push(i, j, v);
            }
        }
        out
    }

    fn set_x(&mut self, x: Vec<f64>) {
        for (k, &i) in self.st.free.iter().enumerate() {
            self.x_full[i] = x[k];
        }
        self.x = x;
    }

    /// Stationarity vectors (x and slack parts) for multipliers `z`, or for
    /// the barrier gradient when `barrier` is set.
    fn stationarity(&self, ev: &Eval, barrier: bool) -> (Vec<f64>, Vec<f64>) {
        let n = self.x.len();
        let mut rx = ev.grad.clone();
        for (r, c, v) in ev.j_eq.iter() {
            rx[c] += v * self.lam_eq[r];
        }
        for (r, c, v) in ev.j_ineq.iter() {
            rx[c] += v * self.lam_ineq[r];
        }
        for i in 0..n {
            if self.st.has_l(i) {
                rx[i] -= if barrier {
                    self.mu / (self.x[i] - self.st.xl[i])
                } else {
                    self.zl[i]
                };
            }
            if self.st.has_u(i) {
                rx[i] += if barrier {
                    self.mu / (self.st.xu[i] - self.x[i])
                } else {
                    self.zu[i]
                };
            }
        }
        let rs = (0..self.s.len())
            .map(|i| {
                self.lam_ineq[i]
                    - if barrier {
                        self.mu / self.s[i]
                    } else {
                        self.zs[i]
                    }
            })
            .collect();
        (rx, rs)
    }

    /// Scaled optimality error of the barrier problem for `mu`.
    fn kkt_error(&self, ev: &Eval, mu: f64) -> KktResiduals {
        let (rx, rs) = self.stationarity(ev, false);
        let n = self.x.len();
        let m = self.st.m_eq + self.st.m_ineq;
        let lam_sum: f64 = self
            .lam_eq
            .iter()
            .chain(&self.lam_ineq)
            .map(|v| v.abs())
            .sum();
        let z_sum: f64 = self.zl.iter().chain(&self.zu).chain(&self.zs).map(|v| v.abs()).sum();
        let nz = (0..n)
            .map(|i| self.st.has_l(i) as usize + self.st.has_u(i) as usize)
            .sum::<usize>()
            + self.s.len();
        let s_d = if n + m > 0 {
            (S_MAX.max((lam_sum + z_sum) / (m + n) as f64)) / S_MAX
        } else {
            1.0
        };
        let s_c = if nz > 0 {
            (S_MAX.max(z_sum / nz as f64)) / S_MAX
        } else {
            1.0
        };
        let stat = rx
            .iter()
            .chain(&rs)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            / s_d;
        let feas = ev
            .c_eq
            .iter()
            .map(|v| v.abs())
            .chain(ev.c_ineq.iter().zip(&self.s).map(|(c, s)| (c + s).abs()))
            .fold(0.0f64, f64::max);
        let mut comp = 0.0f64;
        for i in 0..n {
            if self.st.has_l(i) {
                comp = comp.max(((self.x[i] - self.st.xl[i]) * self.zl[i] - mu).abs());
            }
            if self.st.has_u(i) {
                comp = comp.max(((self.st.xu[i] - self.x[i]) * self.zu[i] - mu).abs());
            }
        }
        for i in 0..self.s.len() {
            comp = comp.max((self.s[i] * self.zs[i] - mu).abs());
        }
        KktResiduals {
            stationarity: stat,
            feasibility: feas,
            complementarity: comp / s_c,
        }
    }

    fn barrier_value(&self, obj: f64, x: &[f64], s: &[f64]) -> f64 {
        let mut phi = obj;
        for (i, &xi) in x.iter().enumerate() {
            if self.st.has_l(i) {
                phi -= self.mu * (xi - self.st.xl[i]).ln();
            }
            if self.st.has_u(i) {
                phi -= self.mu * (self.st.xu[i] - xi).ln();
            }
        }
        for &si in s {
            phi -= self.mu * si.ln();
        }
        phi
    }

    fn result(&self, status: SolveStatus, iterations: usize, kkt: KktResiduals) -> SolveResult {
        let sc = self.obj_scale;
        let mut lower = vec![0.0; self.st.n_full];
        let mut upper = vec![0.0; self.st.n_full];
        for (k, &i) in self.st.free.iter().enumerate() {
            lower[i] = self.zl[k] / sc;
            upper[i] = self.zu[k] / sc;
        }
        SolveResult {
            x: self.x_full.clone(),
            objective: self.problem.objective(&self.x_full),
            status,
            iterations,
            kkt,
            multipliers: Multipliers {
                eq: self.lam_eq.iter().map(|v| v / sc).collect(),
                ineq: self.lam_ineq.iter().map(|v| v / sc).collect(),
                lower,
                upper,
            },
            final_mu: self.mu,
        }
    }

    fn run(&mut self) -> SolveResult {
        let opts = self.opts;
        let mut iter = 0usize;
        let mut last_kkt;
        let mut acceptable = 0usize;
        loop {
            let ev = self.evaluate();
            if !finite_eval(&ev) {
                let kkt = KktResiduals {
                    stationarity: f64::INFINITY,
                    feasibility: f64::INFINITY,
                    complementarity: f64::INFINITY,
                };
                return self.result(SolveStatus::NumericalFailure, iter, kkt);
            }
            last_kkt = self.kkt_error(&ev, 0.0);
            if last_kkt.max() <= opts.tol {
                return self.result(SolveStatus::Optimal, iter, last_kkt);
            }
            if last_kkt.max() <= opts.acceptable_tol {
                acceptable += 1;
                if acceptable >= opts.acceptable_iter {
                    return self.result(SolveStatus::Acceptable, iter, last_kkt);
                }
            } else {
                acceptable = 0;
            }
            if iter >= opts.max_iter {
                return self.result(SolveStatus::MaxIter, iter, last_kkt);
            }
            while self.mu > self.mu_min && self.kkt_error(&ev, self.mu).max() <= opts.kappa_eps * self.mu
            {
                self.mu = (self.mu / opts.mu_factor).max(self.mu_min);
            }

            match self.step(&ev, iter) {
                StepOutcome::Accepted => {}
                StepOutcome::Failed => {
                    let status = if last_kkt.feasibility > opts.tol.sqrt() {
                        SolveStatus::Infeasible
                    } else {
                        SolveStatus::NumericalFailure
                    };
                    return self.result(status, iter, last_kkt);
                }
            }
            iter += 1;
        }
    }

    fn step(&mut self, ev: &Eval, iter: usize) -> StepOutcome {
        let n = self.x.len();
        let (me, mi) = (self.st.m_eq, self.st.m_ineq);
        let w = self.hessian();

        let sigma_x: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = 0.0;
                if self.st.has_l(i) {
                    s += self.zl[i] / (self.x[i] - self.st.xl[i]);
                }
                if self.st.has_u(i) {
                    s += self.zu[i] / (self.st.xu[i] - self.x[i]);
                }
                s
            })
            .collect();
        let sigma_s: Vec<f64> = (0..mi).map(|i| self.zs[i] / self.s[i]).collect();

        let (rx_b, rs_b) = self.stationarity(ev, true);
        let neg_rx: Vec<f64> = rx_b.iter().map(|v| -v).collect();
        let neg_rs: Vec<f64> = rs_b.iter().map(|v| -v).collect();
        let neg_re: Vec<f64> = ev.c_eq.iter().map(|v| -v).collect();
        let neg_ri: Vec<f64> = (0..mi).map(|i| -(ev.c_ineq[i] + self.s[i])).collect();
        let theta = constraint_l1(&ev.c_eq, &ev.c_ineq, &self.s);
        let phi0 = self.barrier_value(ev.obj, &self.x, &self.s);

        let mut delta_w = 0.0;
        let mut delta_c = 0.0;
        loop {
            if delta_w > self.opts.regularization_max {
                return StepOutcome::Failed;
            }
            let sys = ReducedSystem::assemble(
                &w, &sigma_x, &sigma_s, &ev.j_eq, &ev.j_ineq, me, delta_w, delta_c,
            );
            let order = self.ordering(&sys.matrix, sys.dim);
            let zero_tol = 1e-14 * sys.scale.max(1.0);
            let f = SymmetricFactor::factor(sys.dim, &sys.matrix, Some(&order), zero_tol);
            let inertia = f.inertia();
            if inertia.zero > 0 && delta_c == 0.0 && me > 0 {
                delta_c = 1e-8 * self.mu.powf(0.25);
                continue;
            }
            if inertia.positive != n || inertia.negative != me || inertia.zero != 0 {
                delta_w = self.next_regularization(delta_w);
                continue;
            }
            let Some(sol) = sys.solve(&f, &neg_rx, &neg_rs, &neg_re, &neg_ri) else {
                delta_w = self.next_regularization(delta_w);
                continue;
            };

            // Penalty update so the direction is a descent direction of the merit.
            let mut dphi = 0.0;
            for i in 0..n {
                let mut g = ev.grad[i];
                if self.st.has_l(i) {
                    g -= self.mu / (self.x[i] - self.st.xl[i]);
                }
                if self.st.has_u(i) {
                    g += self.mu / (self.st.xu[i] - self.x[i]);
                }
                dphi += g * sol.dx[i];
            }
            for i in 0..mi {
                dphi -= self.mu / self.s[i] * sol.ds[i];
            }
            let mut quad = quad_form(&w, &sol.dx);
            for i in 0..n {
                quad += (sigma_x[i] + delta_w) * sol.dx[i] * sol.dx[i];
            }
            for i in 0..mi {
                quad += (sigma_s[i] + delta_w) * sol.ds[i] * sol.ds[i];
            }
            if theta > 0.0 {
                let trial = (dphi + 0.5 * quad.max(0.0)) / (0.9 * theta);
                if self.nu < trial {
                    self.nu = trial + 1.0;
                }
            }
            let model = Model {
                phi0,
                dphi,
                theta0: theta,
                merit0: phi0 + self.nu * theta,
                dmerit: dphi - self.nu * theta,
            };

            let dir = self.direction(sol, &sigma_s);
            if let Some(ls) = self.line_search(&dir, &f, &sys, &model) {
                let dual_inf = if self.opts.record_log {
                    let (rx, rs) = self.stationarity(ev, false);
                    rx.iter().chain(&rs).fold(0.0f64, |m, v| m.max(v.abs()))
                } else {
                    0.0
                };
                self.accept(&ls.direction, ls.alpha, dir.alpha_dual);
                self.reg_last = delta_w;
                if self.opts.record_log {
                    self.log.push(IterationLog {
                        iter,
                        mu: self.mu,
                        objective: ev.obj / self.obj_scale,
                        primal_infeasibility: theta,
                        dual_infeasibility: dual_inf,
                        merit_before: model.merit0,
                        merit_after: ls.merit,
                        alpha_primal: ls.alpha,
                        alpha_dual: dir.alpha_dual,
                        regularization: delta_w,
                        backtracks: ls.backtracks,
                    });
                }
                return StepOutcome::Accepted;
            }
            // A failed line search means the model is poor; regularize harder.
            delta_w = self.next_regularization(delta_w.max(self.opts.regularization_init));
        }
    }

    /// Complete a primal direction with the bound-multiplier step and the
    /// dual step length.
    fn direction(&self, sol: ReducedSolution, sigma_s: &[f64]) -> Direction {
        let n = self.x.len();
        let mi = self.s.len();
        let mu = self.mu;
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for i in 0..n {
            if self.st.has_l(i) {
                let sl = self.x[i] - self.st.xl[i];
                dzl[i] = mu / sl - self.zl[i] - (self.zl[i] / sl) * sol.dx[i];
            }
            if self.st.has_u(i) {
                let su = self.st.xu[i] - self.x[i];
                dzu[i] = mu / su - self.zu[i] + (self.zu[i] / su) * sol.dx[i];
            }
        }
        let dzs: Vec<f64> = (0..mi)
            .map(|i| mu / self.s[i] - self.zs[i] - sigma_s[i] * sol.ds[i])
            .collect();
        let tau = self.opts.tau;
        let mut alpha_dual = 1.0f64;
        for (z, dz) in self
            .zl
            .iter()
            .zip(&dzl)
            .chain(self.zu.iter().zip(&dzu))
            .chain(self.zs.iter().zip(&dzs))
        {
            if *dz < 0.0 && *z > 0.0 {
                alpha_dual = alpha_dual.min(-tau * z / dz);
            }
        }
        Direction {
            dx: sol.dx,
            ds: sol.ds,
            dlam_eq: sol.dlam_eq,
            dlam_ineq: sol.dlam_ineq,
            dzl,
            dzu,
            dzs,
            alpha_dual,
        }
    }

    fn next_regularization(&self, current: f64) -> f64 {
        if current == 0.0 {
            if self.reg_last > 0.0 {
                (self.reg_last / 3.0).max(self.opts.regularization_init)
            } else {
                self.opts.regularization_init
            }
        } else {
            current * self.opts.regularization_growth
        }
    }

    /// Largest step in `(0, 1]` keeping `x` and `s` a fraction `τ` away from their bounds.
    fn primal_step_bound(&self, dx: &[f64], ds: &[f64]) -> f64 {
        let tau = self.opts.tau;
        let mut alpha = 1.0f64;
        for i in 0..self.x.len() {
            if dx[i] < 0.0 && self.st.has_l(i) {
                alpha = alpha.min(-tau * (self.x[i] - self.st.xl[i]) / dx[i]);
            }
            if dx[i] > 0.0 && self.st.has_u(i) {
                alpha = alpha.min(tau * (self.st.xu[i] - self.x[i]) / dx[i]);
            }
        }
        for i in 0..self.s.len() {
            if ds[i] < 0.0 {
                alpha = alpha.min(-tau * self.s[i] / ds[i]);
            }
        }
        alpha
    }

    /// Backtracking on the merit function with one second-order correction
    /// tried on the first rejected full step.
    fn line_search(
        &self,
        dir: &Direction,
        f: &SymmetricFactor,
        sys: &ReducedSystem,
        model: &Model,
    ) -> Option<LineSearch> {
        let n = self.x.len();
        let mi = self.s.len();
        let alpha_max = self.primal_step_bound(&dir.dx, &dir.ds);
        let mut alpha = alpha_max;
        for bt in 0..MAX_BACKTRACKS {
            let xt: Vec<f64> = (0..n).map(|i| self.x[i] + alpha * dir.dx[i]).collect();
            let st: Vec<f64> = (0..mi).map(|i| self.s[i] + alpha * dir.ds[i]).collect();
            if let Some(trial) = self.trial_at(&xt, &st) {
                if self.sufficient(model, &trial, alpha) {
                    return Some(LineSearch {
                        alpha,
                        backtracks: bt,
                        merit: trial.merit(self.nu),
                        direction: dir.clone(),
                    });
                }
                if bt == 0 {
                    if let Some(ls) = self.second_order_correction(dir, f, sys, alpha, model) {
                        return Some(ls);
                    }
                }
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                break;
            }
        }
        None
    }

    /// Armijo on the merit, or on the barrier function alone once both the
    /// current and the trial infeasibility are at rounding level, where
    /// `nu * theta` is noise.
    fn sufficient(&self, model: &Model, trial: &Trial, alpha: f64) -> bool {
        if armijo(trial.merit(self.nu), model.merit0, alpha, model.dmerit) {
            return true;
        }
        model.theta0 <= self.theta_small
            && trial.theta <= self.theta_small
            && model.dphi < 0.0
            && armijo(trial.phi, model.phi0, alpha, model.dphi)
    }

    fn trial_at(&self, x: &[f64], s: &[f64]) -> Option<Trial> {
        let mut xf = self.x_full.clone();
        for (k, &i) in self.st.free.iter().enumerate() {
            xf[i] = x[k];
        }
        let obj = self.problem.objective(&xf) * self.obj_scale;
        let mut ce = vec![0.0; self.st.m_eq];
        self.problem.equalities(&xf, &mut ce);
        let mut ci = vec![0.0; self.st.m_ineq];
        self.problem.inequalities(&xf, &mut ci);
        let trial = Trial {
            phi: self.barrier_value(obj, x, s),
            theta: constraint_l1(&ce, &ci, s),
        };
        trial.merit(self.nu).is_finite().then_some(trial)
    }

    /// Correct the trial step `alpha * d` for constraint curvature with the
    /// existing factorization, and test the corrected point.
    fn second_order_correction(
        &self,
        dir: &Direction,
        f: &SymmetricFactor,
        sys: &ReducedSystem,
        alpha: f64,
        model: &Model,
    ) -> Option<LineSearch> {
        let n = self.x.len();
        let mi = self.s.len();
        let xt: Vec<f64> = (0..n).map(|i| self.x[i] + alpha * dir.dx[i]).collect();
        let st: Vec<f64> = (0..mi).map(|i| self.s[i] + alpha * dir.ds[i]).collect();
        let mut xf = self.x_full.clone();
        for (k, &i) in self.st.free.iter().enumerate() {
            xf[i] = xt[k];
        }
        let mut ce = vec![0.0; self.st.m_eq];
        self.problem.equalities(&xf, &mut ce);
        let mut ci = vec![0.0; mi];
        self.problem.inequalities(&xf, &mut ci);
        let neg_re: Vec<f64> = ce.iter().map(|v| -v).collect();
        let neg_ri: Vec<f64> = (0..mi).map(|i| -(ci[i] + st[i])).collect();
        let corr = sys.solve(f, &vec![0.0; n], &vec![0.0; mi], &neg_re, &neg_ri)?;
        // Express the corrected point as a unit step along a combined direction.
        let mut combined = dir.clone();
        for i in 0..n {
            combined.dx[i] = alpha * dir.dx[i] + corr.dx[i];
        }
        for i in 0..mi {
            combined.ds[i] = alpha * dir.ds[i] + corr.ds[i];
        }
        for v in combined
            .dlam_eq
            .iter_mut()
            .chain(combined.dlam_ineq.iter_mut())
        {
            *v *= alpha;
        }
        if self.primal_step_bound(&combined.dx, &combined.ds) < 1.0 {
            return None;
        }
        let xs: Vec<f64> = (0..n).map(|i| self.x[i] + combined.dx[i]).collect();
        let ss: Vec<f64> = (0..mi).map(|i| self.s[i] + combined.ds[i]).collect();
        let trial = self.trial_at(&xs, &ss)?;
        self.sufficient(model, &trial, alpha).then_some(LineSearch {
            alpha: 1.0,
            backtracks: 0,
            merit: trial.merit(self.nu),
            direction: combined,
        })
    }

    fn accept(&mut self, dir: &Direction, alpha: f64, alpha_dual: f64) {
        let n = self.x.len();
        let x: Vec<f64> = (0..n).map(|i| self.x[i] + alpha * dir.dx[i]).collect();
        self.set_x(x);
        for i in 0..self.s.len() {
            self.s[i] += alpha * dir.ds[i];
        }
        for i in 0..self.lam_eq.len() {
            self.lam_eq[i] += alpha * dir.dlam_eq[i];
        }
        for i in 0..self.lam_ineq.len() {
            self.lam_ineq[i] += alpha * dir.dlam_ineq[i];
        }
        let mu = self.mu;
        for i in 0..n {
            if self.st.has_l(i) {
                let slack = self.x[i] - self.st.xl[i];
                self.zl[i] = clamp_z(self.zl[i] + alpha_dual * dir.dzl[i], mu, slack);
            }
            if self.st.has_u(i) {
                let slack = self.st.xu[i] - self.x[i];
                self.zu[i] = clamp_z(self.zu[i] + alpha_dual * dir.dzu[i], mu, slack);
            }
        }
        for i in 0..self.s.len() {
            self.zs[i] = clamp_z(self.zs[i] + alpha_dual * dir.dzs[i], mu, self.s[i]);
        }
    }
}

struct Model {
    phi0: f64,
    dphi: f64,
    theta0: f64,
    merit0: f64,
    dmerit: f64,
}

struct Trial {
    phi: f64,
    theta: f64,
}

impl Trial {
    fn merit(&self, nu: f64) -> f64 {
        self.phi + nu * self.theta
    }
}

struct LineSearch {
    alpha: f64,
    backtracks: usize,
    merit: f64,
    direction: Direction,
}

/// Sufficient decrease, relaxed by the rounding error of the merit value.
fn armijo(trial: f64, merit0: f64, alpha: f64, dmerit: f64) -> bool {
    trial - merit0 <= ARMIJO_ETA * alpha * dmerit + 10.0 * f64::EPSILON * merit0.abs()
}

fn constraint_l1(c_eq: &[f64], c_ineq: &[f64], s: &[f64]) -> f64 {
    c_eq.iter().map(|v| v.abs()).sum::<f64>()
        + c_ineq
            .iter()
            .zip(s)
            .map(|(c, s)| (c + s).abs())
            .sum::<f64>()
}

fn clamp_z(z: f64, mu: f64, slack: f64) -> f64 {
    z.max(mu / (KAPPA_SIGMA * slack)).min(KAPPA_SIGMA * mu / slack)
}

fn finite_eval(ev: &Eval) -> bool {
    ev.obj.is_finite()
        && ev.grad.iter().all(|v| v.is_finite())
        && ev.c_eq.iter().all(|v| v.is_finite())
        && ev.c_ineq.iter().all(|v| v.is_finite())
        && ev.j_eq.vals.iter().all(|v| v.is_finite())
        && ev.j_ineq.vals.iter().all(|v| v.is_finite())
}

/// `xᵀ W x` for a lower-triangular symmetric triplet matrix.
fn quad_form(w: &Triplets, x: &[f64]) -> f64 {
    w.iter()
        .map(|(r, c, v)| {
            if r == c {
                v * x[r] * x[r]
            } else {
                2.0 * v * x[r] * x[c]
            }
        })
        .sum()
}

#[derive(Clone, Debug)]
struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dlam_eq: Vec<f64>,
    dlam_ineq: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    dzs: Vec<f64>,
    alpha_dual: f64,
}

/// The condensed Newton system.
struct ReducedSystem {
    dim: usize,
    n: usize,
    matrix: Triplets,
    /// Largest absolute entry of `W` and the Jacobians, for the zero-pivot
    /// threshold. Barrier and regularization terms are left out so that
    /// large `Σ` does not mask small but genuine Schur-complement pivots.
    scale: f64,
    /// `e = 1 / (Σ_s + δ_w)` and `D = 1 / (e + δ_c)` per inequality.
    e: Vec<f64>,
    d: Vec<f64>,
    j_ineq_rows: Vec<Vec<(usize, f64)>>,
}

struct ReducedSolution {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dlam_eq: Vec<f64>,
    dlam_ineq: Vec<f64>,
}

impl ReducedSystem {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        w: &Triplets,
        sigma_x: &[f64],
        sigma_s: &[f64],
        j_eq: &Triplets,
        j_ineq: &Triplets,
        m_eq: usize,
        delta_w: f64,
        delta_c: f64,
    ) -> Self {
        let n = sigma_x.len();
        let mi = sigma_s.len();
        let dim = n + m_eq;
        let mut m = Triplets::with_capacity(w.len() + j_eq.len() + n + m_eq + 4 * j_ineq.len());
        for (r, c, v) in w.iter() {
            m.push(r, c, v);
        }
        for (i, s) in sigma_x.iter().enumerate() {
            m.push(i, i, s + delta_w);
        }
        let e: Vec<f64> = sigma_s.iter().map(|s| 1.0 / (s + delta_w)).collect();
        let d: Vec<f64> = e.iter().map(|e| 1.0 / (e + delta_c)).collect();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mi];
        for (r, c, v) in j_ineq.iter() {
            rows[r].push((c, v));
        }
        for (r, row) in rows.iter().enumerate() {
            for &(a, va) in row {
                for &(b, vb) in row {
                    if a >= b {
                        m.push(a, b, d[r] * va * vb);
                    }
                }
            }
        }
        for (r, c, v) in j_eq.iter() {
            m.push(n + r, c, v);
        }
        for i in 0..m_eq {
            // Explicit diagonal so the ordering sees every constraint row.
            m.push(n + i, n + i, -delta_c);
        }
        let scale = w
            .vals
            .iter()
            .chain(&j_eq.vals)
            .chain(&j_ineq.vals)
            .fold(0.0f64, |a, v| a.max(v.abs()));
        ReducedSystem {
            dim,
            n,
            matrix: m,
            scale,
            e,
            d,
            j_ineq_rows: rows,
        }
    }

    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (r, c, val) in self.matrix.iter() {
            out[r] += val * v[c];
            if r != c {
                out[c] += val * v[r];
            }
        }
        out
    }

    /// Solve the full (uncondensed) system for right-hand sides
    /// `(R_x, R_s, R_E, R_I)`:
    ///
    /// ```text
    ///     (W + Σ_x + δ_w) dx + J_Eᵀ dλ_E + J_Iᵀ dλ_I = R_x
    ///     (Σ_s + δ_w) ds + dλ_I                     = R_s
    ///     J_E dx - δ_c dλ_E                         = R_E
    ///     J_I dx + ds - δ_c dλ_I                    = R_I
    /// ```
    fn solve(
        &self,
        f: &SymmetricFactor,
        rhs_x: &[f64],
        rhs_s: &[f64],
        rhs_e: &[f64],
        rhs_i: &[f64],
    ) -> Option<ReducedSolution> {
        let n = self.n;
        let mi = self.e.len();
        let mut rhs = vec![0.0; self.dim];
        rhs[..n].copy_from_slice(rhs_x);
        let t: Vec<f64> = (0..mi)
            .map(|i| self.d[i] * (rhs_i[i] - self.e[i] * rhs_s[i]))
            .collect();
        for (r, row) in self.j_ineq_rows.iter().enumerate() {
            for &(c, v) in row {
                rhs[c] += v * t[r];
            }
        }
        rhs[n..].copy_from_slice(rhs_e);

        let mut sol = rhs.clone();
        f.solve(&mut sol);
        for _ in 0..2 {
            let r = self.matvec(&sol);
            let mut corr: Vec<f64> = rhs.iter().zip(&r).map(|(a, b)| a - b).collect();
            f.solve(&mut corr);
            sol.iter_mut().zip(&corr).for_each(|(s, c)| *s += c);
        }
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        let dx = sol[..n].to_vec();
        let dlam_eq = sol[n..].to_vec();
        let mut jdx = vec![0.0; mi];
        for (r, row) in self.j_ineq_rows.iter().enumerate() {
            for &(c, v) in row {
                jdx[r] += v * dx[c];
            }
        }
        let dlam_ineq: Vec<f64> = (0..mi).map(|i| self.d[i] * jdx[i] - t[i]).collect();
        let ds: Vec<f64> = (0..mi)
            .map(|i| self.e[i] * (rhs_s[i] - dlam_ineq[i]))
            .collect();
        Some(ReducedSolution {
            dx,
            ds,
            dlam_eq,
            dlam_ineq,
        })
    }
}
