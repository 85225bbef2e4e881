//! AC optimal power flow in polar form with explicit directed line flows.
//!
//! Every line contributes four flow variables `p_ij, q_ij, p_ji, q_ji`, each
//! tied to voltages by an equality. Power balance is linear in the flows and
//! generator outputs plus the shunt terms. Apparent-power limits use the
//! squared form `p² + q² ≤ s̄²`, which stays smooth at zero flow.
//!
//! Region problems keep the same constraint families over a region closure
//! and add, for every quantity shared with another region, the augmented
//! Lagrangian term `y (w − β) + ρ/2 (w − β)²`.

mod problem;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::network::{Direction, Network};
use crate::partition::{RegionClosure, SharedEntityMap};

pub use problem::OpfProblem;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcopfError {
    #[error("region {region}: consensus keys do not match the shared quantities ({detail})")]
    InconsistentConsensusKeys { region: usize, detail: String },
    #[error("reference objective is zero")]
    DivisionByZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuantityKind {
    Voltage,
    Angle,
    ActiveFlow,
    ReactiveFlow,
}

/// A variable that several regions hold a copy of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quantity {
    Voltage(usize),
    Angle(usize),
    ActiveFlow(usize, Direction),
    ReactiveFlow(usize, Direction),
}

impl Quantity {
    pub fn kind(self) -> QuantityKind {
        match self {
            Quantity::Voltage(_) => QuantityKind::Voltage,
            Quantity::Angle(_) => QuantityKind::Angle,
            Quantity::ActiveFlow(..) => QuantityKind::ActiveFlow,
            Quantity::ReactiveFlow(..) => QuantityKind::ReactiveFlow,
        }
    }
}

/// Penalty per quantity kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule {
    pub voltage: f64,
    pub angle: f64,
    pub active: f64,
    pub reactive: f64,
}

impl RhoSchedule {
    /// `ρ_v = ρ` and `ρ_θ = ρ_p = ρ_q = 2ρ`.
    pub fn from_scalar(rho: f64) -> Self {
        RhoSchedule {
            voltage: rho,
            angle: 2.0 * rho,
            active: 2.0 * rho,
            reactive: 2.0 * rho,
        }
    }

    pub fn get(&self, kind: QuantityKind) -> f64 {
        match kind {
            QuantityKind::Voltage => self.voltage,
            QuantityKind::Angle => self.angle,
            QuantityKind::ActiveFlow => self.active,
            QuantityKind::ReactiveFlow => self.reactive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsensusEntry {
    pub quantity: Quantity,
    pub beta: f64,
    pub y: f64,
    pub rho: f64,
}

/// Reference values, duals and penalties for one region's shared quantities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConsensusParams {
    pub entries: Vec<ConsensusEntry>,
}

impl ConsensusParams {
    /// The augmented terms at copies `w` (same order as `entries`).
    pub fn penalty(&self, w: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(w)
            .map(|(e, &w)| {
                let d = w - e.beta;
                e.y * d + 0.5 * e.rho * d * d
            })
            .sum()
    }
}

/// Shared quantities of a closure, sorted.
pub fn shared_quantities(closure: &RegionClosure, shared: &SharedEntityMap) -> Vec<Quantity> {
    let mut out = Vec::new();
    for &i in &closure.nodes {
        if shared.node_regions[i].len() > 1 {
            out.push(Quantity::Voltage(i));
            out.push(Quantity::Angle(i));
        }
    }
    for &e in &closure.lines {
        if shared.line_regions[e].len() > 1 {
            for d in Direction::BOTH {
                out.push(Quantity::ActiveFlow(e, d));
                out.push(Quantity::ReactiveFlow(e, d));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Dense positions of the variables of a problem.
///
/// Layout: all `v`, then all `θ`, then `p_ij, q_ij, p_ji, q_ji` per line,
/// then `p_g, q_g` per generator.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableLayout {
    nodes: Vec<usize>,
    lines: Vec<usize>,
    gens: Vec<usize>,
    node_slot: BTreeMap<usize, usize>,
    line_slot: BTreeMap<usize, usize>,
    gen_slot: BTreeMap<usize, usize>,
}

impl VariableLayout {
    pub fn new(nodes: &[usize], lines: &[usize], gens: &[usize]) -> Self {
        let slots = |items: &[usize]| items.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        VariableLayout {
            node_slot: slots(nodes),
            line_slot: slots(lines),
            gen_slot: slots(gens),
            nodes: nodes.to_vec(),
            lines: lines.to_vec(),
            gens: gens.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.nodes.len() + 4 * self.lines.len() + 2 * self.gens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn lines(&self) -> &[usize] {
        &self.lines
    }

    pub fn gens(&self) -> &[usize] {
        &self.gens
    }

    pub fn v(&self, bus: usize) -> Option<usize> {
        self.node_slot.get(&bus).copied()
    }

    pub fn theta(&self, bus: usize) -> Option<usize> {
        self.node_slot.get(&bus).map(|&k| self.nodes.len() + k)
    }

    fn flow_base(&self, line: usize) -> Option<usize> {
        self.line_slot
            .get(&line)
            .map(|&k| 2 * self.nodes.len() + 4 * k)
    }

    pub fn p(&self, line: usize, dir: Direction) -> Option<usize> {
        let off = match dir {
            Direction::Forward => 0,
            Direction::Reverse => 2,
        };
        self.flow_base(line).map(|b| b + off)
    }

    pub fn q(&self, line: usize, dir: Direction) -> Option<usize> {
        self.p(line, dir).map(|i| i + 1)
    }

    pub fn pg(&self, gen: usize) -> Option<usize> {
        self.gen_slot
            .get(&gen)
            .map(|&k| 2 * self.nodes.len() + 4 * self.lines.len() + 2 * k)
    }

    pub fn qg(&self, gen: usize) -> Option<usize> {
        self.pg(gen).map(|i| i + 1)
    }

    pub fn index_of(&self, q: Quantity) -> Option<usize> {
        match q {
            Quantity::Voltage(i) => self.v(i),
            Quantity::Angle(i) => self.theta(i),
            Quantity::ActiveFlow(e, d) => self.p(e, d),
            Quantity::ReactiveFlow(e, d) => self.q(e, d),
        }
    }
}

/// The full network problem: every node balanced, reference angle fixed.
pub fn build_centralized(net: &Network) -> OpfProblem<'_> {
    let nodes: Vec<usize> = (0..net.num_buses()).collect();
    let lines: Vec<usize> = (0..net.lines.len()).collect();
    let gens: Vec<usize> = (0..net.generators.len()).collect();
    OpfProblem::new(
        net,
        VariableLayout::new(&nodes, &lines, &gens),
        &nodes,
        Some(net.ref_bus()),
        ConsensusParams::default(),
    )
}

/// The augmented problem of one region closure.
pub fn build_region<'a>(
    net: &'a Network,
    closure: &RegionClosure,
    shared: &SharedEntityMap,
    consensus: ConsensusParams,
) -> Result<OpfProblem<'a>, AcopfError> {
    check_consensus_keys(closure, shared, &consensus)?;
    let reference = closure.owns(net.ref_bus()).then_some(net.ref_bus());
    Ok(OpfProblem::new(
        net,
        VariableLayout::new(&closure.nodes, &closure.lines, &closure.gens),
        &closure.owned,
        reference,
        consensus,
    ))
}

pub(crate) fn check_consensus_keys(
    closure: &RegionClosure,
    shared: &SharedEntityMap,
    consensus: &ConsensusParams,
) -> Result<(), AcopfError> {
    let expected: BTreeSet<Quantity> = shared_quantities(closure, shared).into_iter().collect();
    let given: BTreeSet<Quantity> = consensus.entries.iter().map(|e| e.quantity).collect();
    if given.len() != consensus.entries.len() {
        return Err(AcopfError::InconsistentConsensusKeys {
            region: closure.id,
            detail: "duplicate key".into(),
        });
    }
    if expected != given {
        let missing = expected.difference(&given).next();
        let extra = given.difference(&expected).next();
        return Err(AcopfError::InconsistentConsensusKeys {
            region: closure.id,
            detail: format!("missing {missing:?}, unexpected {extra:?}"),
        });
    }
    Ok(())
}

/// Relative objective difference `|(p_ipm − p_dica) / p_ipm|`.
pub fn gap(p_dica: f64, p_ipm: f64) -> Result<f64, AcopfError> {
    if p_ipm == 0.0 {
        return Err(AcopfError::DivisionByZero);
    }
    Ok(((p_ipm - p_dica) / p_ipm).abs())
}

/// Generation cost of a per-unit active dispatch, one entry per generator.
pub fn total_cost(net: &Network, dispatch: &[f64]) -> f64 {
    net.generators
        .iter()
        .zip(dispatch)
        .map(|(g, &p)| g.cost(p))
        .sum()
}
