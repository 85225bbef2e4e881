mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use radial_opf::acopf::{build_centralized, gap};
use radial_opf::dica::{
    run, run_with, ConsensusState, DicaError, DicaParams, DicaStatus, IterationRecord, Observer,
};
use radial_opf::nlp::{
    InteriorPoint, NlpProblem, NlpSolver, SolveOptions, SolveResult, SolverError, StartPoint,
};
use radial_opf::partition::{radial_partition, Graph, Partition, StartRule};

use common::case;

fn case9() -> (radial_opf::network::Network, Partition) {
    let net = case("case9");
    let p = radial_partition(&Graph::from_network(&net), StartRule::Lowest).unwrap();
    (net, p)
}

fn centralized(net: &radial_opf::network::Network) -> f64 {
    let p = build_centralized(net);
    let r = InteriorPoint
        .solve(&p, &StartPoint::cold(p.flat_start()), &SolveOptions::default())
        .unwrap();
    p.generation_cost(&r.x)
}

#[test]
fn case9_converges_near_centralized_optimum() {
    let (net, part) = case9();
    let out = run(&net, &part, &DicaParams::new(400.0).unwrap()).unwrap();
    assert_eq!(out.status, DicaStatus::Converged);
    assert_eq!(out.trace.len(), out.iterations());
    assert!(gap(out.objective, centralized(&net)).unwrap() < 1e-4);
    for rec in &out.trace {
        for r in &rec.regions {
            assert!(r.primal_res >= 0.0 && r.dual_res >= 0.0);
        }
    }
}

#[test]
fn single_region_converges_immediately() {
    let net = case("case14");
    let out = run(&net, &Partition::single(net.buses.len()), &DicaParams::new(100.0).unwrap()).unwrap();
    assert_eq!(out.status, DicaStatus::Converged);
    assert_eq!(out.iterations(), 1);
    assert!(out.state.shared.is_empty());
    let reference = centralized(&net);
    assert!((out.objective - reference).abs() <= 1e-9 * reference);
}

#[test]
fn sequential_matches_parallel() {
    let (net, part) = case9();
    let mut params = DicaParams::new(400.0).unwrap();
    params.max_iter = 15;
    let par = run(&net, &part, &params).unwrap();
    params.parallel = false;
    let seq = run(&net, &part, &params).unwrap();
    assert_eq!(par.trace, seq.trace);
    assert_eq!(par.state, seq.state);
}

struct DualSums {
    worst: f64,
    calls: usize,
}

impl Observer for DualSums {
    fn iteration(&mut self, _: &IterationRecord, state: &ConsensusState) {
        self.calls += 1;
        for v in &state.shared {
            let scale = v.y.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            if scale > 0.0 {
                let sum: f64 = v.y.iter().sum();
                self.worst = self.worst.max(sum.abs() / scale);
            }
        }
    }
}

#[test]
fn duals_sum_to_zero_every_iteration() {
    let net = case("case14");
    let part = radial_partition(&Graph::from_network(&net), StartRule::Lowest).unwrap();
    let mut params = DicaParams::new(1000.0).unwrap();
    params.max_iter = 20;
    let mut obs = DualSums { worst: 0.0, calls: 0 };
    let out = run_with(&net, &part, &params, &InteriorPoint, None, &mut obs).unwrap();
    assert_eq!(obs.calls, out.iterations());
    assert!(obs.worst <= 1e-8, "{}", obs.worst);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let (net, part) = case9();
    let mut params = DicaParams::new(400.0).unwrap();
    params.warm_start = false;
    params.max_iter = 10;
    let full = run(&net, &part, &params).unwrap();

    params.max_iter = 4;
    let head = run(&net, &part, &params).unwrap();
    assert_eq!(head.status, DicaStatus::MaxIter);
    let snapshot = ConsensusState::from_json(&head.state.to_json()).unwrap();
    assert_eq!(snapshot, head.state);

    params.max_iter = 6;
    let tail = run_with(&net, &part, &params, &InteriorPoint, Some(snapshot), &mut ()).unwrap();
    assert_eq!(tail.trace.first().unwrap().iteration, 5);
    assert_eq!(tail.state, full.state);
    assert_eq!(tail.trace[..], full.trace[4..]);
}

#[test]
fn resume_rejects_foreign_state() {
    let (net, part) = case9();
    let other = case("case14");
    let other_part = radial_partition(&Graph::from_network(&other), StartRule::Lowest).unwrap();
    let mut params = DicaParams::new(400.0).unwrap();
    params.max_iter = 1;
    let foreign = run(&other, &other_part, &params).unwrap().state;
    let err = run_with(&net, &part, &params, &InteriorPoint, Some(foreign), &mut ()).unwrap_err();
    assert!(matches!(err, DicaError::StateMismatch(_)));
}

/// Delegates to the interior point solver until the call budget runs out.
struct Flaky {
    budget: AtomicUsize,
}

impl NlpSolver for Flaky {
    fn solve(
        &self,
        problem: &dyn NlpProblem,
        start: &StartPoint,
        opts: &SolveOptions,
    ) -> Result<SolveResult, SolverError> {
        if self.budget.fetch_sub(1, Ordering::SeqCst) == 0 {
            return Err(SolverError::External("out of budget".into()));
        }
        InteriorPoint.solve(problem, start, opts)
    }

    fn name(&self) -> &str {
        "flaky"
    }
}

#[test]
fn failing_subproblem_aborts_the_run() {
    let (net, part) = case9();
    let mut params = DicaParams::new(400.0).unwrap();
    params.parallel = false;
    // Two regions: calls 0..=2 succeed, the fourth is region 1 at t = 2.
    let solver = Flaky { budget: AtomicUsize::new(3) };
    let err = run_with(&net, &part, &params, &solver, None, &mut ()).unwrap_err();
    match err {
        DicaError::SubproblemFailure { region, iteration, .. } => {
            assert_eq!((region, iteration), (1, 2));
        }
        other => panic!("{other}"),
    }
}

#[test]
fn iteration_cap_reports_max_iter() {
    let (net, part) = case9();
    let mut params = DicaParams::new(1.0).unwrap();
    params.max_iter = 7;
    let out = run(&net, &part, &params).unwrap();
    assert_eq!(out.status, DicaStatus::MaxIter);
    assert_eq!(out.trace.len(), 7);
    assert_eq!(out.state.iteration, 7);
    let iters: Vec<usize> = out.trace.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, (1..=7).collect::<Vec<_>>());
    assert!(out.objective.is_finite());
}

#[test]
fn invalid_rho_is_rejected() {
    for rho in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(DicaParams::new(rho), Err(DicaError::InvalidParameter(_))));
    }
}

#[test]
fn region_solves_at_initial_consensus_do_not_stall() {
    // case14 region {6, 10, 11} once stalled at rounding-level infeasibility.
    let net = case("case14");
    let part = radial_partition(&Graph::from_network(&net), StartRule::Lowest).unwrap();
    let (closures, map) = radial_opf::partition::region_closures(&net, &part).unwrap();
    let state = ConsensusState::initial(&closures, &map);
    let rho = DicaParams::new(400.0).unwrap().schedule();
    for c in &closures {
        let entries = radial_opf::acopf::shared_quantities(c, &map)
            .into_iter()
            .map(|q| radial_opf::acopf::ConsensusEntry {
                quantity: q,
                beta: state.get(q).unwrap().beta,
                y: 0.0,
                rho: rho.get(q.kind()),
            })
            .collect();
        let p = radial_opf::acopf::build_region(&net, c, &map, radial_opf::acopf::ConsensusParams { entries })
            .unwrap();
        let r = InteriorPoint
            .solve(&p, &StartPoint::cold(p.flat_start()), &SolveOptions::default())
            .unwrap();
        assert!(r.status.is_optimal(), "region {}: {:?}", c.id, r.status);
        assert!(r.iterations < 50);
    }
}
