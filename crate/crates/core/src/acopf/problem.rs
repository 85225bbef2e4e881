use rand::Rng;

use crate::network::{Direction, Network};
use crate::nlp::{NlpProblem, Triplets};

use super::{AcopfError, ConsensusParams, VariableLayout};

/// `w − [c0 va² + va vb (α cos δ + γ sin δ)]` with `δ = θa − θb`.
#[derive(Clone, Copy, Debug)]
struct FlowDef {
    w: usize,
    va: usize,
    vb: usize,
    ta: usize,
    tb: usize,
    c0: f64,
    alpha: f64,
    gamma: f64,
}

/// Value and derivatives of the flow expression `h` (not the residual).
struct FlowEval {
    h: f64,
    /// `∂h/∂(va, vb, θa, θb)`.
    grad: [f64; 4],
}

impl FlowDef {
    fn eval(&self, x: &[f64]) -> FlowEval {
        let (va, vb) = (x[self.va], x[self.vb]);
        let (s, c) = (x[self.ta] - x[self.tb]).sin_cos();
        let cc = self.alpha * c + self.gamma * s;
        let ss = -self.alpha * s + self.gamma * c;
        FlowEval {
            h: self.c0 * va * va + va * vb * cc,
            grad: [
                2.0 * self.c0 * va + vb * cc,
                va * cc,
                va * vb * ss,
                -va * vb * ss,
            ],
        }
    }

    /// Lower-triangular entries of `scale · ∇²h`.
    fn hessian(&self, x: &[f64], scale: f64, out: &mut Triplets) {
        let (va, vb) = (x[self.va], x[self.vb]);
        let (s, c) = (x[self.ta] - x[self.tb]).sin_cos();
        let cc = self.alpha * c + self.gamma * s;
        let ss = -self.alpha * s + self.gamma * c;
        let idx = [self.va, self.vb, self.ta, self.tb];
        // Symmetric 4x4 in the order (va, vb, θa, θb).
        let h = [
            [2.0 * self.c0, cc, vb * ss, -vb * ss],
            [cc, 0.0, va * ss, -va * ss],
            [vb * ss, va * ss, -va * vb * cc, va * vb * cc],
            [-vb * ss, -va * ss, va * vb * cc, -va * vb * cc],
        ];
        for a in 0..4 {
            for b in 0..=a {
                let v = scale * h[a][b];
                if v != 0.0 {
                    let (r, c) = if idx[a] >= idx[b] {
                        (idx[a], idx[b])
                    } else {
                        (idx[b], idx[a])
                    };
                    out.push(r, c, v);
                }
            }
        }
    }
}

/// `constant + quad · v² + Σ coeff · x`.
#[derive(Clone, Debug)]
struct BalanceRow {
    constant: f64,
    v: usize,
    quad: f64,
    linear: Vec<(usize, f64)>,
}

#[derive(Clone, Copy, Debug)]
enum LimitRow {
    /// `p² + q² − s̄² ≤ 0`.
    Apparent { p: usize, q: usize, s2: f64 },
    /// `sign · (θa − θb) − bound ≤ 0`.
    Angle { ta: usize, tb: usize, sign: f64, bound: f64 },
}

#[derive(Clone, Copy, Debug)]
struct GenCost {
    idx: usize,
    c2: f64,
    c1: f64,
    c0: f64,
}

/// An OPF or region problem as an [`NlpProblem`].
///
/// Equalities are the four flow definitions of every line followed by the
/// active and reactive balance of every balanced node. Inequalities are the
/// squared apparent-power limits (both ends) and finite angle-difference
/// bounds.
#[derive(Clone, Debug)]
pub struct OpfProblem<'a> {
    net: &'a Network,
    layout: VariableLayout,
    balance_nodes: Vec<usize>,
    reference: Option<usize>,
    consensus: ConsensusParams,
    consensus_idx: Vec<usize>,
    flows: Vec<FlowDef>,
    balances: Vec<BalanceRow>,
    limits: Vec<LimitRow>,
    costs: Vec<GenCost>,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl<'a> OpfProblem<'a> {
    pub(super) fn new(
        net: &'a Network,
        layout: VariableLayout,
        balance_nodes: &[usize],
        reference: Option<usize>,
        consensus: ConsensusParams,
    ) -> Self {
        let mut flows = Vec::with_capacity(4 * layout.lines().len());
        let mut limits = Vec::new();
        for &e in layout.lines() {
            let line = &net.lines[e];
            let k = &line.coeffs;
            let (vf, vt) = (layout.v(line.from).unwrap(), layout.v(line.to).unwrap());
            let (tf, tt) = (layout.theta(line.from).unwrap(), layout.theta(line.to).unwrap());
            let fwd = |w, c0, alpha, gamma| FlowDef {
                w,
                va: vf,
                vb: vt,
                ta: tf,
                tb: tt,
                c0,
                alpha,
                gamma,
            };
            let rev = |w, c0, alpha, gamma| FlowDef {
                w,
                va: vt,
                vb: vf,
                ta: tt,
                tb: tf,
                c0,
                alpha,
                gamma,
            };
            let (pf, qf) = (layout.p(e, Direction::Forward).unwrap(), layout.q(e, Direction::Forward).unwrap());
            let (pr, qr) = (layout.p(e, Direction::Reverse).unwrap(), layout.q(e, Direction::Reverse).unwrap());
            flows.push(fwd(pf, k.g_c_ij, -k.g_ij, k.b_ij));
            flows.push(fwd(qf, k.b_c_ij, -k.b_ij, -k.g_ij));
            flows.push(rev(pr, k.g_c_ji, -k.g_ji, k.b_ji));
            flows.push(rev(qr, k.b_c_ji, -k.b_ji, -k.g_ji));
            if let Some(s) = line.s_max {
                limits.push(LimitRow::Apparent { p: pf, q: qf, s2: s * s });
                limits.push(LimitRow::Apparent { p: pr, q: qr, s2: s * s });
            }
            if let Some((lo, hi)) = line.angle_limits {
                if hi.is_finite() {
                    limits.push(LimitRow::Angle { ta: tf, tb: tt, sign: 1.0, bound: hi });
                }
                if lo.is_finite() {
                    limits.push(LimitRow::Angle { ta: tf, tb: tt, sign: -1.0, bound: -lo });
                }
            }
        }

        let mut balances = Vec::with_capacity(2 * balance_nodes.len());
        for &i in balance_nodes {
            let bus = &net.buses[i];
            let v = layout.v(i).unwrap();
            let mut p_row = BalanceRow {
                constant: -bus.p_d,
                v,
                quad: -bus.g_sh,
                linear: Vec::new(),
            };
            let mut q_row = BalanceRow {
                constant: -bus.q_d,
                v,
                quad: bus.b_sh,
                linear: Vec::new(),
            };
            for &g in net.generators_at(i) {
                p_row.linear.push((layout.pg(g).expect("generator of a balanced node"), 1.0));
                q_row.linear.push((layout.qg(g).unwrap(), 1.0));
            }
            for &e in net.lines_at(i) {
                let dir = if net.lines[e].from == i {
                    Direction::Forward
                } else {
                    Direction::Reverse
                };
                p_row.linear.push((layout.p(e, dir).expect("line of a balanced node"), -1.0));
                q_row.linear.push((layout.q(e, dir).unwrap(), -1.0));
            }
            balances.push(p_row);
            balances.push(q_row);
        }

        let n = layout.len();
        let mut lb = vec![f64::NEG_INFINITY; n];
        let mut ub = vec![f64::INFINITY; n];
        for &i in layout.nodes() {
            let v = layout.v(i).unwrap();
            lb[v] = net.buses[i].v_min;
            ub[v] = net.buses[i].v_max;
        }
        if let Some(r) = reference {
            let t = layout.theta(r).unwrap();
            lb[t] = 0.0;
            ub[t] = 0.0;
        }
        let mut costs = Vec::with_capacity(layout.gens().len());
        for &g in layout.gens() {
            let gen = &net.generators[g];
            let (p, q) = (layout.pg(g).unwrap(), layout.qg(g).unwrap());
            lb[p] = gen.p_min;
            ub[p] = gen.p_max;
            lb[q] = gen.q_min;
            ub[q] = gen.q_max;
            costs.push(GenCost {
                idx: p,
                c2: gen.c2,
                c1: gen.c1,
                c0: gen.c0,
            });
        }

        let consensus_idx = consensus
            .entries
            .iter()
            .map(|e| layout.index_of(e.quantity).expect("consensus quantity in layout"))
            .collect();

        OpfProblem {
            net,
            layout,
            balance_nodes: balance_nodes.to_vec(),
            reference,
            consensus,
            consensus_idx,
            flows,
            balances,
            limits,
            costs,
            lb,
            ub,
        }
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    pub fn layout(&self) -> &VariableLayout {
        &self.layout
    }

    pub fn balance_nodes(&self) -> &[usize] {
        &self.balance_nodes
    }

    pub fn reference(&self) -> Option<usize> {
        self.reference
    }

    pub fn consensus(&self) -> &ConsensusParams {
        &self.consensus
    }

    /// Replace β, y and ρ. The quantities must be the same, in the same order.
    pub fn update_consensus(&mut self, params: ConsensusParams) -> Result<(), AcopfError> {
        let same = params.entries.len() == self.consensus.entries.len()
            && params
                .entries
                .iter()
                .zip(&self.consensus.entries)
                .all(|(a, b)| a.quantity == b.quantity);
        if !same {
            return Err(AcopfError::InconsistentConsensusKeys {
                region: usize::MAX,
                detail: "consensus update changes the set of quantities".into(),
            });
        }
        self.consensus = params;
        Ok(())
    }

    /// Values of the consensus quantities, in entry order.
    pub fn shared_values(&self, x: &[f64]) -> Vec<f64> {
        self.consensus_idx.iter().map(|&i| x[i]).collect()
    }

    /// Generation cost of the generators in this problem.
    pub fn generation_cost(&self, x: &[f64]) -> f64 {
        self.costs
            .iter()
            .map(|g| {
                let p = x[g.idx];
                (g.c2 * p + g.c1) * p + g.c0
            })
            .sum()
    }

    /// Active dispatch of this problem's generators, as `(generator, p)`.
    pub fn dispatch(&self, x: &[f64]) -> Vec<(usize, f64)> {
        self.layout
            .gens()
            .iter()
            .map(|&g| (g, x[self.layout.pg(g).unwrap()]))
            .collect()
    }

    /// Flat start: `v = 1`, `θ = 0`, zero flows, generation at mid-range,
    /// then moved inside the bounds by `1e-4` of each range.
    pub fn flat_start(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut x = vec![0.0; l.len()];
        for &i in l.nodes() {
            x[l.v(i).unwrap()] = 1.0;
        }
        for &g in l.gens() {
            for idx in [l.pg(g).unwrap(), l.qg(g).unwrap()] {
                x[idx] = match (self.lb[idx].is_finite(), self.ub[idx].is_finite()) {
                    (true, true) => 0.5 * (self.lb[idx] + self.ub[idx]),
                    (true, false) => self.lb[idx],
                    (false, true) => self.ub[idx],
                    (false, false) => 0.0,
                };
            }
        }
        for (i, xi) in x.iter_mut().enumerate() {
            let (lo, hi) = (self.lb[i], self.ub[i]);
            if lo.is_finite() && hi.is_finite() {
                let margin = 1e-4 * (hi - lo);
                *xi = xi.clamp(lo + margin, hi - margin);
            } else if lo.is_finite() {
                *xi = xi.max(lo + 1e-4 * lo.abs().max(1.0));
            } else if hi.is_finite() {
                *xi = xi.min(hi - 1e-4 * hi.abs().max(1.0));
            }
        }
        x
    }

    /// A random point strictly inside the bounds: boxed variables uniform
    /// over the middle 80% of their range, angles within ±0.3 rad, free
    /// flows within ±1 p.u. Fixed variables keep their value.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let l = &self.layout;
        let mut x = self.flat_start();
        let n_nodes = l.nodes().len();
        for (i, xi) in x.iter_mut().enumerate() {
            let (lo, hi) = (self.lb[i], self.ub[i]);
            if lo.is_finite() && hi.is_finite() {
                if hi > lo {
                    let r = hi - lo;
                    *xi = rng.gen_range(lo + 0.1 * r..hi - 0.1 * r);
                }
            } else {
                let spread = if (n_nodes..2 * n_nodes).contains(&i) { 0.3 } else { 1.0 };
                *xi += rng.gen_range(-spread..spread);
                if lo.is_finite() {
                    *xi = xi.max(lo + 0.1);
                } else if hi.is_finite() {
                    *xi = xi.min(hi - 0.1);
                }
            }
        }
        x
    }

    pub fn num_flow_rows(&self) -> usize {
        self.flows.len()
    }
}

impl NlpProblem for OpfProblem<'_> {
    fn num_variables(&self) -> usize {
        self.layout.len()
    }

    fn num_equalities(&self) -> usize {
        self.flows.len() + self.balances.len()
    }

    fn num_inequalities(&self) -> usize {
        self.limits.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lb.clone(), self.ub.clone())
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let w = self.shared_values(x);
        self.generation_cost(x) + self.consensus.penalty(&w)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for g in &self.costs {
            grad[g.idx] += 2.0 * g.c2 * x[g.idx] + g.c1;
        }
        for (e, &i) in self.consensus.entries.iter().zip(&self.consensus_idx) {
            grad[i] += e.y + e.rho * (x[i] - e.beta);
        }
    }

    fn equalities(&self, x: &[f64], out: &mut [f64]) {
        let nf = self.flows.len();
        for (k, f) in self.flows.iter().enumerate() {
            out[k] = x[f.w] - f.eval(x).h;
        }
        for (k, b) in self.balances.iter().enumerate() {
            let v = x[b.v];
            out[nf + k] = b.constant
                + b.quad * v * v
                + b.linear.iter().map(|&(i, c)| c * x[i]).sum::<f64>();
        }
    }

    fn inequalities(&self, x: &[f64], out: &mut [f64]) {
        for (k, l) in self.limits.iter().enumerate() {
            out[k] = match *l {
                LimitRow::Apparent { p, q, s2 } => x[p] * x[p] + x[q] * x[q] - s2,
                LimitRow::Angle { ta, tb, sign, bound } => sign * (x[ta] - x[tb]) - bound,
            };
        }
    }

    fn equality_jacobian(&self, x: &[f64]) -> Triplets {
        let mut j = Triplets::with_capacity(5 * self.flows.len() + 8 * self.balances.len());
        for (k, f) in self.flows.iter().enumerate() {
            let ev = f.eval(x);
            j.push(k, f.w, 1.0);
            for (idx, d) in [f.va, f.vb, f.ta, f.tb].into_iter().zip(ev.grad) {
                j.push(k, idx, -d);
            }
        }
        let nf = self.flows.len();
        for (k, b) in self.balances.iter().enumerate() {
            if b.quad != 0.0 {
                j.push(nf + k, b.v, 2.0 * b.quad * x[b.v]);
            }
            for &(i, c) in &b.linear {
                j.push(nf + k, i, c);
            }
        }
        j
    }

    fn inequality_jacobian(&self, x: &[f64]) -> Triplets {
        let mut j = Triplets::with_capacity(2 * self.limits.len());
        for (k, l) in self.limits.iter().enumerate() {
            match *l {
                LimitRow::Apparent { p, q, .. } => {
                    j.push(k, p, 2.0 * x[p]);
                    j.push(k, q, 2.0 * x[q]);
                }
                LimitRow::Angle { ta, tb, sign, .. } => {
                    j.push(k, ta, sign);
                    j.push(k, tb, -sign);
                }
            }
        }
        j
    }

    fn hessian(
        &self,
        x: &[f64],
        obj_factor: f64,
        lambda_eq: &[f64],
        lambda_ineq: &[f64],
    ) -> Option<Triplets> {
        let mut h = Triplets::with_capacity(10 * self.flows.len() + self.costs.len());
        for g in &self.costs {
            if g.c2 != 0.0 {
                h.push(g.idx, g.idx, 2.0 * obj_factor * g.c2);
            }
        }
        for (e, &i) in self.consensus.entries.iter().zip(&self.consensus_idx) {
            h.push(i, i, obj_factor * e.rho);
        }
        for (f, &lam) in self.flows.iter().zip(lambda_eq) {
            if lam != 0.0 {
                f.hessian(x, -lam, &mut h);
            }
        }
        let nf = self.flows.len();
        for (b, &lam) in self.balances.iter().zip(&lambda_eq[nf..]) {
            if b.quad != 0.0 && lam != 0.0 {
                h.push(b.v, b.v, 2.0 * b.quad * lam);
            }
        }
        for (l, &lam) in self.limits.iter().zip(lambda_ineq) {
            if let LimitRow::Apparent { p, q, .. } = *l {
                if lam != 0.0 {
                    h.push(p, p, 2.0 * lam);
                    h.push(q, q, 2.0 * lam);
                }
            }
        }
        Some(h)
    }
}
