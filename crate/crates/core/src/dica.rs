//! Consensus ADMM over region subproblems.
//!
//! Each iteration has three stages separated by barriers:
//!
//! 1. every region minimizes its augmented problem for the current `β`, `y`
//!    (independently, optionally in parallel);
//! 2. each shared quantity's reference becomes `β = mean_k(w^k + y^k/ρ)`;
//! 3. each region's dual moves by `y^k += ρ (w^k − β)`.
//!
//! A region is done when its primal residual `‖w − β‖` and its dual residual
//! `‖ρ (β⁺ − β)‖` are small relative to its copies and duals; the run stops
//! when all regions are done.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acopf::{
    build_centralized, build_region, shared_quantities, ConsensusEntry, ConsensusParams,
    OpfProblem, Quantity, RhoSchedule, VariableLayout,
};
use crate::acopf::AcopfError;
use crate::network::{Direction, Network};
use crate::nlp::{
    InteriorPoint, NlpProblem, NlpSolver, SolveOptions, SolveResult, SolverError,
    StartPoint,
};
use crate::partition::{region_closures, Partition, PartitionError, RegionClosure, SharedEntityMap};

#[derive(Debug, thiserror::Error)]
pub enum DicaError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("region {region} failed at iteration {iteration}: {reason}")]
    SubproblemFailure {
        region: usize,
        iteration: usize,
        reason: String,
    },
    #[error("consensus state does not match the partition: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Acopf(#[from] AcopfError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DicaParams {
    rho: f64,
    pub eps: f64,
    pub max_iter: usize,
    /// Start region solves from the previous iterate after the first iteration.
    pub warm_start: bool,
    /// Barrier parameter used for warm starts.
    pub warm_start_mu: f64,
    /// Solve regions concurrently.
    pub parallel: bool,
    pub solver: SolveOptions,
}

impl DicaParams {
    pub fn new(rho: f64) -> Result<Self, DicaError> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(DicaError::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        Ok(DicaParams {
            rho,
            eps: 1e-4,
            max_iter: 2000,
            warm_start: true,
            warm_start_mu: 1e-6,
            parallel: true,
            solver: SolveOptions::default(),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn schedule(&self) -> RhoSchedule {
        RhoSchedule::from_scalar(self.rho)
    }

    fn validate(&self) -> Result<(), DicaError> {
        if !(self.eps > 0.0) {
            return Err(DicaError::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(DicaError::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reference value and per-region duals of one shared quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedValue {
    pub quantity: Quantity,
    /// Regions holding a copy, ascending.
    pub regions: Vec<usize>,
    pub beta: f64,
    /// Duals, aligned with `regions`.
    pub y: Vec<f64>,
}

/// `β` and `y` for every shared quantity, after `iteration` completed iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub iteration: usize,
    pub shared: Vec<SharedValue>,
}

impl ConsensusState {
    /// `β_v = 1`, every other `β = 0`, all duals zero.
    pub fn initial(closures: &[RegionClosure], map: &SharedEntityMap) -> Self {
        let mut holders: BTreeMap<Quantity, Vec<usize>> = BTreeMap::new();
        for c in closures {
            for q in shared_quantities(c, map) {
                holders.entry(q).or_default().push(c.id);
            }
        }
        let shared = holders
            .into_iter()
            .map(|(quantity, regions)| SharedValue {
                quantity,
                beta: if matches!(quantity, Quantity::Voltage(_)) { 1.0 } else { 0.0 },
                y: vec![0.0; regions.len()],
                regions,
            })
            .collect();
        ConsensusState {
            iteration: 0,
            shared,
        }
    }

    pub fn get(&self, q: Quantity) -> Option<&SharedValue> {
        self.shared
            .binary_search_by(|s| s.quantity.cmp(&q))
            .ok()
            .map(|i| &self.shared[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("consensus state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DicaError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `β = (1/|M|) Σ_k (w^k + y^k/ρ)`.
pub fn beta_update(copies: &[f64], duals: &[f64], rho: f64) -> f64 {
    let sum: f64 = copies.iter().zip(duals).map(|(w, y)| w + y / rho).sum();
    sum / copies.len() as f64
}

/// `y + ρ (w − β)`.
pub fn y_update(y: f64, w: f64, beta: f64, rho: f64) -> f64 {
    y + rho * (w - beta)
}

/// Norms for one region's stopping test.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegionResiduals {
    /// `‖w − β‖₂` over the region's shared quantities.
    pub primal: f64,
    /// `‖ρ ∘ (β − β_prev)‖₂`.
    pub dual: f64,
    pub w_norm: f64,
    pub beta_norm: f64,
    pub y_norm: f64,
}

/// Residuals of one region; all slices are aligned with its shared quantities.
pub fn residuals(
    w: &[f64],
    beta: &[f64],
    beta_prev: &[f64],
    y: &[f64],
    rho: &[f64],
) -> RegionResiduals {
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    RegionResiduals {
        primal: norm(&mut w.iter().zip(beta).map(|(a, b)| a - b)),
        dual: norm(
            &mut beta
                .iter()
                .zip(beta_prev)
                .zip(rho)
                .map(|((b, p), r)| r * (b - p)),
        ),
        w_norm: norm(&mut w.iter().copied()),
        beta_norm: norm(&mut beta.iter().copied()),
        y_norm: norm(&mut y.iter().copied()),
    }
}

impl RegionResiduals {
    /// Per-region stopping test. With all duals zero the dual test is absolute.
    pub fn satisfied(&self, eps: f64) -> bool {
        let primal_ok = self.primal <= eps * self.w_norm.max(self.beta_norm);
        let dual_ok = if self.y_norm == 0.0 {
            self.dual <= eps
        } else {
            self.dual <= eps * self.y_norm
        };
        primal_ok && dual_ok
    }
}

pub fn converged(regions: &[RegionResiduals], eps: f64) -> bool {
    regions.iter().all(|r| r.satisfied(eps))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionRecord {
    pub region: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    /// Augmented objective at the region solution.
    pub local_obj: f64,
    pub solver_iters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iteration: usize,
    pub regions: Vec<RegionRecord>,
    /// Generation cost summed over regions, each counting only its own generators.
    pub total_cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DicaStatus {
    Converged,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct DicaOutcome {
    pub status: DicaStatus,
    pub state: ConsensusState,
    pub trace: Vec<IterationRecord>,
    /// Final solution of each region, in that region's layout.
    pub region_solutions: Vec<Vec<f64>>,
    /// Global point in the centralized layout: shared quantities from `β`,
    /// everything else from the region that owns it.
    pub solution: Vec<f64>,
    /// Generation cost of the stitched dispatch.
    pub objective: f64,
}

impl DicaOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// Mean subproblem iteration count over all region solves.
    pub fn mean_solver_iterations(&self) -> f64 {
        let (sum, count) = self
            .trace
            .iter()
            .flat_map(|r| &r.regions)
            .fold((0usize, 0usize), |(s, c), r| (s + r.solver_iters, c + 1));
        if count == 0 {
            0.0
        } else {
            sum as f64 / count as f64
        }
    }
}

/// Hook called after every completed iteration.
pub trait Observer {
    fn iteration(&mut self, _record: &IterationRecord, _state: &ConsensusState) {}
}

impl Observer for () {}

struct Region<'a> {
    problem: OpfProblem<'a>,
    /// For each consensus entry: index into `ConsensusState::shared` and
    /// position of this region in that quantity's region list.
    slots: Vec<(usize, usize)>,
    last: Option<SolveResult>,
}

impl Region<'_> {
    fn consensus(&self, state: &ConsensusState, rho: &RhoSchedule) -> ConsensusParams {
        ConsensusParams {
            entries: slots_to_entries(&self.slots, state, rho),
        }
    }

    fn solve(
        &self,
        solver: &dyn NlpSolver,
        params: &DicaParams,
    ) -> Result<SolveResult, SolverError> {
        let start = match (&self.last, params.warm_start) {
            (Some(prev), true) => StartPoint::warm(prev, params.warm_start_mu),
            _ => StartPoint::cold(self.problem.flat_start()),
        };
        solver.solve(&self.problem, &start, &params.solver)
    }
}

/// Distributed solve with the built-in solver.
pub fn run(net: &Network, partition: &Partition, params: &DicaParams) -> Result<DicaOutcome, DicaError> {
    run_with(net, partition, params, &InteriorPoint, None, &mut ())
}

/// Distributed solve with a chosen solver, an optional state to resume from,
/// and a per-iteration observer.
pub fn run_with(
    net: &Network,
    partition: &Partition,
    params: &DicaParams,
    solver: &dyn NlpSolver,
    resume: Option<ConsensusState>,
    observer: &mut dyn Observer,
) -> Result<DicaOutcome, DicaError> {
    params.validate()?;
    let (closures, map) = region_closures(net, partition)?;
    let fresh = ConsensusState::initial(&closures, &map);
    let mut state = match resume {
        None => fresh,
        Some(s) => {
            let keys = |st: &ConsensusState| -> Vec<(Quantity, Vec<usize>)> {
                st.shared.iter().map(|v| (v.quantity, v.regions.clone())).collect()
            };
            if keys(&s) != keys(&fresh) || s.shared.iter().any(|v| v.y.len() != v.regions.len()) {
                return Err(DicaError::StateMismatch(
                    "shared quantities or their regions differ".into(),
                ));
            }
            s
        }
    };
    let rho = params.schedule();

    let index: BTreeMap<Quantity, usize> = state
        .shared
        .iter()
        .enumerate()
        .map(|(i, v)| (v.quantity, i))
        .collect();
    let mut regions = Vec::with_capacity(closures.len());
    for closure in closures {
        let slots: Vec<(usize, usize)> = shared_quantities(&closure, &map)
            .into_iter()
            .map(|q| {
                let s = index[&q];
                let pos = state.shared[s]
                    .regions
                    .binary_search(&closure.id)
                    .expect("region holds its shared quantity");
                (s, pos)
            })
            .collect();
        let entries = slots_to_entries(&slots, &state, &rho);
        regions.push(Region {
            problem: build_region(net, &closure, &map, ConsensusParams { entries })?,
            slots,
            last: None,
        });
    }

    let mut trace = Vec::new();
    let mut status = DicaStatus::MaxIter;
    let first = state.iteration;
    for t in first..first + params.max_iter {
        // Stage 1: region solves.
        let solve_one = |r: &Region| r.solve(solver, params);
        let results: Vec<Result<SolveResult, SolverError>> = if params.parallel {
            regions.par_iter().map(solve_one).collect()
        } else {
            regions.iter().map(solve_one).collect()
        };
        for (k, res) in results.into_iter().enumerate() {
            let res = res.map_err(|e| DicaError::SubproblemFailure {
                region: k,
                iteration: t + 1,
                reason: e.to_string(),
            })?;
            if !res.status.is_success() {
                return Err(DicaError::SubproblemFailure {
                    region: k,
                    iteration: t + 1,
                    reason: format!("solver status {:?}", res.status),
                });
            }
            regions[k].last = Some(res);
        }

        // Stage 2: references.
        let copies: Vec<Vec<f64>> = regions
            .iter()
            .map(|r| r.problem.shared_values(&r.last.as_ref().unwrap().x))
            .collect();
        let mut holder_values: Vec<Vec<f64>> =
            state.shared.iter().map(|v| vec![0.0; v.regions.len()]).collect();
        for (r, w) in regions.iter().zip(&copies) {
            for (&(s, pos), &val) in r.slots.iter().zip(w) {
                holder_values[s][pos] = val;
            }
        }
        let beta_prev: Vec<f64> = state.shared.iter().map(|v| v.beta).collect();
        for (sv, w) in state.shared.iter_mut().zip(&holder_values) {
            sv.beta = beta_update(w, &sv.y, rho.get(sv.quantity.kind()));
        }

        // Stage 3: duals.
        for (sv, w) in state.shared.iter_mut().zip(&holder_values) {
            let r = rho.get(sv.quantity.kind());
            for (y, &wk) in sv.y.iter_mut().zip(w) {
                *y = y_update(*y, wk, sv.beta, r);
            }
        }
        state.iteration = t + 1;

        let mut records = Vec::with_capacity(regions.len());
        let mut region_res = Vec::with_capacity(regions.len());
        let mut total_cost = 0.0;
        for (k, (r, w)) in regions.iter_mut().zip(&copies).enumerate() {
            let beta: Vec<f64> = r.slots.iter().map(|&(s, _)| state.shared[s].beta).collect();
            let prev: Vec<f64> = r.slots.iter().map(|&(s, _)| beta_prev[s]).collect();
            let y: Vec<f64> = r.slots.iter().map(|&(s, pos)| state.shared[s].y[pos]).collect();
            let rhos: Vec<f64> = r
                .slots
                .iter()
                .map(|&(s, _)| rho.get(state.shared[s].quantity.kind()))
                .collect();
            let res = residuals(w, &beta, &prev, &y, &rhos);
            let sol = r.last.as_ref().unwrap();
            total_cost += r.problem.generation_cost(&sol.x);
            records.push(RegionRecord {
                region: k,
                primal_res: res.primal,
                dual_res: res.dual,
                local_obj: r.problem.objective(&sol.x),
                solver_iters: sol.iterations,
            });
            region_res.push(res);
            let next = r.consensus(&state, &rho);
            r.problem.update_consensus(next)?;
        }
        let record = IterationRecord {
            iteration: t + 1,
            regions: records,
            total_cost,
        };
        observer.iteration(&record, &state);
        trace.push(record);
        if converged(&region_res, params.eps) {
            status = DicaStatus::Converged;
            break;
        }
    }

    let region_solutions: Vec<Vec<f64>> = regions
        .iter()
        .map(|r| r.last.as_ref().map(|s| s.x.clone()).unwrap_or_else(|| r.problem.flat_start()))
        .collect();
    let solution = stitch(net, partition, &regions, &region_solutions, &state)?;
    let objective = build_centralized(net).generation_cost(&solution);
    Ok(DicaOutcome {
        status,
        state,
        trace,
        region_solutions,
        solution,
        objective,
    })
}

fn slots_to_entries(
    slots: &[(usize, usize)],
    state: &ConsensusState,
    rho: &RhoSchedule,
) -> Vec<ConsensusEntry> {
    slots
        .iter()
        .map(|&(s, pos)| {
            let sv = &state.shared[s];
            ConsensusEntry {
                quantity: sv.quantity,
                beta: sv.beta,
                y: sv.y[pos],
                rho: rho.get(sv.quantity.kind()),
            }
        })
        .collect()
}

/// Assemble a point in the centralized layout from region solutions.
fn stitch(
    net: &Network,
    partition: &Partition,
    regions: &[Region],
    solutions: &[Vec<f64>],
    state: &ConsensusState,
) -> Result<Vec<f64>, DicaError> {
    let owner = partition.owners(net.num_buses())?;
    let all_nodes: Vec<usize> = (0..net.num_buses()).collect();
    let all_lines: Vec<usize> = (0..net.lines.len()).collect();
    let all_gens: Vec<usize> = (0..net.generators.len()).collect();
    let global = VariableLayout::new(&all_nodes, &all_lines, &all_gens);
    let mut x = vec![0.0; global.len()];

    let pick = |q: Quantity, k: usize| -> f64 {
        match state.get(q) {
            Some(sv) => sv.beta,
            None => {
                let idx = regions[k].problem.layout().index_of(q).expect("owner holds quantity");
                solutions[k][idx]
            }
        }
    };
    for i in 0..net.num_buses() {
        let k = owner[i];
        x[global.v(i).unwrap()] = pick(Quantity::Voltage(i), k);
        x[global.theta(i).unwrap()] = pick(Quantity::Angle(i), k);
    }
    for (e, line) in net.lines.iter().enumerate() {
        let k = owner[line.from];
        for d in Direction::BOTH {
            x[global.p(e, d).unwrap()] = pick(Quantity::ActiveFlow(e, d), k);
            x[global.q(e, d).unwrap()] = pick(Quantity::ReactiveFlow(e, d), k);
        }
    }
    for (g, gen) in net.generators.iter().enumerate() {
        let k = owner[gen.bus];
        let layout = regions[k].problem.layout();
        x[global.pg(g).unwrap()] = solutions[k][layout.pg(g).unwrap()];
        x[global.qg(g).unwrap()] = solutions[k][layout.qg(g).unwrap()];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_examples() {
        assert_eq!(beta_update(&[1.0, 1.0], &[0.0, 0.0], 7.0), 1.0);
        assert_eq!(beta_update(&[1.0, 2.0], &[0.0, 0.0], 7.0), 1.5);
        assert_eq!(beta_update(&[1.0, 2.0], &[200.0, -200.0], 400.0), 1.5);
    }

    #[test]
    fn y_examples() {
        assert_eq!(y_update(3.5, 1.2, 1.2, 400.0), 3.5);
        assert!((y_update(0.0, 1.01, 1.0, 400.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn duals_keep_zero_sum() {
        let (w, y, rho) = ([0.98, 1.03, 1.01], [0.0; 3], 400.0);
        let beta = beta_update(&w, &y, rho);
        let sum: f64 = w.iter().zip(&y).map(|(&w, &y)| y_update(y, w, beta, rho)).sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let r = residuals(&[1.0, 0.1], &[1.0, 0.1], &[1.0, 0.1], &[0.0, 0.0], &[400.0, 800.0]);
        assert_eq!((r.primal, r.dual), (0.0, 0.0));
        let r = residuals(&[1.0], &[1.01], &[1.0], &[0.0], &[400.0]);
        assert!((r.dual - 4.0).abs() < 1e-9);
    }

    #[test]
    fn stopping_test() {
        let at_rest = RegionResiduals {
            primal: 0.0,
            dual: 0.0,
            w_norm: 1.0,
            beta_norm: 1.0,
            y_norm: 2.0,
        };
        assert!(converged(&[at_rest, at_rest], 1e-4));
        let off = RegionResiduals {
            primal: 0.1,
            ..at_rest
        };
        assert!(!converged(&[at_rest, off], 1e-4));
        let boundary = RegionResiduals {
            primal: 1e-4,
            dual: 0.0,
            w_norm: 1.0,
            beta_norm: 2.0,
            y_norm: 1.0,
        };
        // 1e-4 <= 1e-4 * 2
        assert!(boundary.satisfied(1e-4));
        let edge = RegionResiduals {
            primal: 2e-4,
            ..boundary
        };
        assert!(edge.satisfied(1e-4));
    }

    #[test]
    fn zero_duals_use_absolute_dual_test() {
        let r = RegionResiduals {
            primal: 0.0,
            dual: 5e-5,
            w_norm: 1.0,
            beta_norm: 1.0,
            y_norm: 0.0,
        };
        assert!(r.satisfied(1e-4));
        assert!(!RegionResiduals { dual: 2e-4, ..r }.satisfied(1e-4));
    }

    #[test]
    fn params_validation() {
        assert!(DicaParams::new(0.0).is_err());
        assert!(DicaParams::new(-1.0).is_err());
        assert!(DicaParams::new(f64::NAN).is_err());
        let p = DicaParams::new(400.0).unwrap();
        assert_eq!((p.eps, p.max_iter), (1e-4, 2000));
        assert_eq!(p.schedule().angle, 800.0);
    }
}
