use radial_opf::nlp::{
    check_derivatives, check_hessian, DerivativeSource, InteriorPoint, NlpProblem, NlpSolver,
    SolveOptions, SolveStatus, StartPoint, Triplets,
};

/// min (x - 1)^2  s.t.  x >= 2
struct BoundedQuadratic;

impl NlpProblem for BoundedQuadratic {
    fn num_variables(&self) -> usize {
        1
    }
    fn num_equalities(&self) -> usize {
        0
    }
    fn num_inequalities(&self) -> usize {
        0
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![2.0], vec![f64::INFINITY])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (x[0] - 1.0).powi(2)
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * (x[0] - 1.0);
    }
    fn equalities(&self, _: &[f64], _: &mut [f64]) {}
    fn inequalities(&self, _: &[f64], _: &mut [f64]) {}
    fn equality_jacobian(&self, _: &[f64]) -> Triplets {
        Triplets::new()
    }
    fn inequality_jacobian(&self, _: &[f64]) -> Triplets {
        Triplets::new()
    }
    fn hessian(&self, _: &[f64], s: f64, _: &[f64], _: &[f64]) -> Option<Triplets> {
        let mut h = Triplets::new();
        h.push(0, 0, 2.0 * s);
        Some(h)
    }
}

/// min x^2 + y^2  s.t.  x + y = 1
struct LineConstrained;

impl NlpProblem for LineConstrained {
    fn num_variables(&self) -> usize {
        2
    }
    fn num_equalities(&self) -> usize {
        1
    }
    fn num_inequalities(&self) -> usize {
        0
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; 2], vec![f64::INFINITY; 2])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + x[1] * x[1]
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * x[0];
        g[1] = 2.0 * x[1];
    }
    fn equalities(&self, x: &[f64], c: &mut [f64]) {
        c[0] = x[0] + x[1] - 1.0;
    }
    fn inequalities(&self, _: &[f64], _: &mut [f64]) {}
    fn equality_jacobian(&self, _: &[f64]) -> Triplets {
        let mut j = Triplets::new();
        j.push(0, 0, 1.0);
        j.push(0, 1, 1.0);
        j
    }
    fn inequality_jacobian(&self, _: &[f64]) -> Triplets {
        Triplets::new()
    }
    fn hessian(&self, _: &[f64], s: f64, _: &[f64], _: &[f64]) -> Option<Triplets> {
        let mut h = Triplets::new();
        h.push(0, 0, 2.0 * s);
        h.push(1, 1, 2.0 * s);
        Some(h)
    }
}

/// min -x - y  s.t.  x^2 + y^2 <= 1. `with_hessian = false` exercises the
/// finite-difference fallback.
struct Disk {
    with_hessian: bool,
    gradient_error: f64,
}

impl Disk {
    fn new() -> Self {
        Disk {
            with_hessian: true,
            gradient_error: 0.0,
        }
    }
}

impl NlpProblem for Disk {
    fn num_variables(&self) -> usize {
        2
    }
    fn num_equalities(&self) -> usize {
        0
    }
    fn num_inequalities(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; 2], vec![f64::INFINITY; 2])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        -x[0] - x[1]
    }
    fn gradient(&self, _: &[f64], g: &mut [f64]) {
        g[0] = -1.0 + self.gradient_error;
        g[1] = -1.0;
    }
    fn equalities(&self, _: &[f64], _: &mut [f64]) {}
    fn inequalities(&self, x: &[f64], c: &mut [f64]) {
        c[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
    }
    fn equality_jacobian(&self, _: &[f64]) -> Triplets {
        Triplets::new()
    }
    fn inequality_jacobian(&self, x: &[f64]) -> Triplets {
        let mut j = Triplets::new();
        j.push(0, 0, 2.0 * x[0]);
        j.push(0, 1, 2.0 * x[1]);
        j
    }
    fn hessian(&self, _: &[f64], _: f64, _: &[f64], li: &[f64]) -> Option<Triplets> {
        if !self.with_hessian {
            return None;
        }
        let mut h = Triplets::new();
        h.push(0, 0, 2.0 * li[0]);
        h.push(1, 1, 2.0 * li[0]);
        Some(h)
    }
}

/// Hock-Schittkowski problem 71: nonconvex, optimum 17.0140173.
struct Hs071;

impl NlpProblem for Hs071 {
    fn num_variables(&self) -> usize {
        4
    }
    fn num_equalities(&self) -> usize {
        1
    }
    fn num_inequalities(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![1.0; 4], vec![5.0; 4])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = x[3] * (2.0 * x[0] + x[1] + x[2]);
        g[1] = x[0] * x[3];
        g[2] = x[0] * x[3] + 1.0;
        g[3] = x[0] * (x[0] + x[1] + x[2]);
    }
    fn equalities(&self, x: &[f64], c: &mut [f64]) {
        c[0] = x.iter().map(|v| v * v).sum::<f64>() - 40.0;
    }
    fn inequalities(&self, x: &[f64], c: &mut [f64]) {
        c[0] = 25.0 - x[0] * x[1] * x[2] * x[3];
    }
    fn equality_jacobian(&self, x: &[f64]) -> Triplets {
        let mut j = Triplets::new();
        for (k, v) in x.iter().enumerate() {
            j.push(0, k, 2.0 * v);
        }
        j
    }
    fn inequality_jacobian(&self, x: &[f64]) -> Triplets {
        let mut j = Triplets::new();
        j.push(0, 0, -x[1] * x[2] * x[3]);
        j.push(0, 1, -x[0] * x[2] * x[3]);
        j.push(0, 2, -x[0] * x[1] * x[3]);
        j.push(0, 3, -x[0] * x[1] * x[2]);
        j
    }
}

fn solve(p: &dyn NlpProblem, x0: Vec<f64>) -> radial_opf::nlp::SolveResult {
    InteriorPoint
        .solve(p, &StartPoint::cold(x0), &SolveOptions::default())
        .unwrap()
}

#[test]
fn bound_constrained_quadratic() {
    let r = solve(&BoundedQuadratic, vec![5.0]);
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.x[0] - 2.0).abs() < 1e-6, "{:?}", r.x);
    assert!((r.multipliers.lower[0] - 2.0).abs() < 1e-5);
}

#[test]
fn equality_constrained_quadratic() {
    let r = solve(&LineConstrained, vec![3.0, -7.0]);
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.x[0] - 0.5).abs() < 1e-6 && (r.x[1] - 0.5).abs() < 1e-6);
    assert!((r.multipliers.eq[0] + 1.0).abs() < 1e-6);
}

#[test]
fn disk_constrained_linear_objective() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for with_hessian in [true, false] {
        let p = Disk {
            with_hessian,
            ..Disk::new()
        };
        let r = solve(&p, vec![0.0, 0.0]);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x[0] - h).abs() < 1e-6 && (r.x[1] - h).abs() < 1e-6, "{:?}", r.x);
    }
}

#[test]
fn nonconvex_test_problem() {
    let r = solve(&Hs071, vec![1.0, 5.0, 5.0, 1.0]);
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective - 17.014017).abs() < 1e-5, "{}", r.objective);
}

#[test]
fn merit_never_increases() {
    let (r, log) = InteriorPoint.solve_with_log(
        &Hs071,
        &StartPoint::cold(vec![1.0, 5.0, 5.0, 1.0]),
        &SolveOptions {
            record_log: true,
            ..SolveOptions::default()
        },
    )
    .unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(!log.is_empty());
    for it in &log {
        assert!(
            it.merit_after <= it.merit_before + 1e-12 * it.merit_before.abs().max(1.0),
            "iteration {}: {} -> {}",
            it.iter,
            it.merit_before,
            it.merit_after
        );
    }
}

#[test]
fn warm_start_at_solution_is_quick() {
    let first = solve(&Hs071, vec![1.0, 5.0, 5.0, 1.0]);
    let again = InteriorPoint
        .solve(
            &Hs071,
            &StartPoint::warm(&first, 1e-9),
            &SolveOptions::default(),
        )
        .unwrap();
    assert_eq!(again.status, SolveStatus::Optimal);
    assert!(again.iterations <= 5, "{} iterations", again.iterations);
    assert!((again.objective - first.objective).abs() < 1e-7);
}

#[test]
fn derivative_check_flags_wrong_gradient() {
    let good = check_derivatives(&Disk::new(), &[0.3, -0.4], 1e-6);
    assert!(good.max_rel_error <= 1e-8, "{good:?}");

    let bad = Disk {
        gradient_error: 0.1,
        ..Disk::new()
    };
    let c = check_derivatives(&bad, &[0.3, -0.4], 1e-6);
    assert!(c.max_rel_error >= 1e-2);
    assert_eq!(c.source, DerivativeSource::Gradient);
    assert_eq!(c.col, 0);
}

#[test]
fn derivative_check_is_exact_on_quadratics() {
    let c = check_derivatives(&LineConstrained, &[0.7, 1.3], 1e-3);
    assert!(c.max_rel_error <= 1e-10, "{c:?}");
}

#[test]
fn hessian_check() {
    let c = check_hessian(&Disk::new(), &[0.3, -0.4], 1e-5, 1.0, &[], &[0.7]).unwrap();
    assert!(c.max_rel_error <= 1e-7, "{c:?}");
    let none = Disk {
        with_hessian: false,
        ..Disk::new()
    };
    assert!(check_hessian(&none, &[0.3, -0.4], 1e-5, 1.0, &[], &[0.7]).is_none());
}
