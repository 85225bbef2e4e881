//! Per-unit network model with precomputed line coefficients.

use std::collections::BTreeSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("tap ratio has zero magnitude")]
    ZeroTap,
    #[error("series admittance is zero")]
    ZeroAdmittance,
    #[error("line {0} connects a bus to itself")]
    SelfLoop(usize),
    #[error("line {line} references bus index {bus} outside the network")]
    BadBusIndex { line: usize, bus: usize },
    #[error("generator {gen} references bus index {bus} outside the network")]
    BadGeneratorBus { gen: usize, bus: usize },
    #[error("no reference bus")]
    NoReferenceBus,
    #[error("more than one reference bus")]
    MultipleReferenceBuses,
    #[error("bus {0} has no in-service connection")]
    IslandedBus(usize),
    #[error("network graph is not connected")]
    DisconnectedGraph,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub index: usize,
    /// Bus number in the source case.
    pub id: usize,
    pub p_d: f64,
    pub q_d: f64,
    pub g_sh: f64,
    pub b_sh: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub is_ref: bool,
}

/// Coefficients of the four directed flow expressions of a π-model line.
///
/// With `δ = θ_i − θ_j`:
/// `p_ij = g_c_ij v_i² − g_ij v_i v_j cos δ + b_ij v_i v_j sin δ`,
/// `q_ij = b_c_ij v_i² − b_ij v_i v_j cos δ − g_ij v_i v_j sin δ`,
/// and the `ji` expressions with `v_j²` and `−δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineCoefficients {
    pub g_c_ij: f64,
    pub b_c_ij: f64,
    pub g_ij: f64,
    pub b_ij: f64,
    pub g_c_ji: f64,
    pub b_c_ji: f64,
    pub g_ji: f64,
    pub b_ji: f64,
}

pub fn line_coefficients(
    y: Complex64,
    b_ch: f64,
    tap: Complex64,
) -> Result<LineCoefficients, NetworkError> {
    if tap.norm() == 0.0 || !tap.is_finite() {
        return Err(NetworkError::ZeroTap);
    }
    if y.norm() == 0.0 || !y.is_finite() {
        return Err(NetworkError::ZeroAdmittance);
    }
    let yc = y.conj();
    let half_ch = Complex64::new(0.0, b_ch / 2.0);
    let from_self = (yc - half_ch) / tap.norm_sqr();
    let to_self = yc - half_ch;
    let mutual_ij = yc / tap;
    let mutual_ji = yc / tap.conj();
    Ok(LineCoefficients {
        g_c_ij: from_self.re,
        b_c_ij: from_self.im,
        g_ij: mutual_ij.re,
        b_ij: mutual_ij.im,
        g_c_ji: to_self.re,
        b_c_ji: to_self.im,
        g_ji: mutual_ji.re,
        b_ji: mutual_ji.im,
    })
}

/// Orientation of a line: `Forward` is from → to (`ij`), `Reverse` is to → from (`ji`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Reverse];
}

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub index: usize,
    pub from: usize,
    pub to: usize,
    pub y: Complex64,
    pub b_ch: f64,
    pub tap: Complex64,
    /// Apparent-power limit, if any.
    pub s_max: Option<f64>,
    /// Bounds on `θ_from − θ_to` in radians. A side may be infinite.
    pub angle_limits: Option<(f64, f64)>,
    pub coeffs: LineCoefficients,
}

impl Line {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        index: usize,
        from: usize,
        to: usize,
        y: Complex64,
        b_ch: f64,
        tap: Complex64,
        s_max: Option<f64>,
        angle_limits: Option<(f64, f64)>,
    ) -> Result<Self, NetworkError> {
        if from == to {
            return Err(NetworkError::SelfLoop(index));
        }
        let coeffs = line_coefficients(y, b_ch, tap)?;
        Ok(Line {
            index,
            from,
            to,
            y,
            b_ch,
            tap,
            s_max,
            angle_limits,
            coeffs,
        })
    }

    /// Lossless line with reactance `x` and no charging or transformer.
    pub fn reactance(index: usize, from: usize, to: usize, x: f64) -> Result<Self, NetworkError> {
        Line::new(
            index,
            from,
            to,
            Complex64::new(0.0, -1.0 / x),
            0.0,
            Complex64::new(1.0, 0.0),
            None,
            None,
        )
    }

    pub fn other_end(&self, bus: usize) -> usize {
        if bus == self.from {
            self.to
        } else {
            self.from
        }
    }
}

/// Generator with a quadratic cost `c2 p² + c1 p + c0` on per-unit output.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub index: usize,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        (self.c2 * p + self.c1) * p + self.c0
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    ref_bus: usize,
    adjacency: Vec<Vec<usize>>,
    bus_lines: Vec<Vec<usize>>,
    bus_gens: Vec<Vec<usize>>,
}

impl Network {
    /// Validate and index a network. Bus, line and generator `index` fields
    /// must equal their positions.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
    ) -> Result<Self, NetworkError> {
        let n = buses.len();
        let refs: Vec<usize> = buses.iter().filter(|b| b.is_ref).map(|b| b.index).collect();
        let ref_bus = match refs.as_slice() {
            [] => return Err(NetworkError::NoReferenceBus),
            [r] => *r,
            _ => return Err(NetworkError::MultipleReferenceBuses),
        };
        let mut adjacency = vec![Vec::new(); n];
        let mut bus_lines = vec![Vec::new(); n];
        for l in &lines {
            for b in [l.from, l.to] {
                if b >= n {
                    return Err(NetworkError::BadBusIndex { line: l.index, bus: b });
                }
            }
            adjacency[l.from].push(l.to);
            adjacency[l.to].push(l.from);
            bus_lines[l.from].push(l.index);
            bus_lines[l.to].push(l.index);
        }
        for a in &mut adjacency {
            a.sort_unstable();
            a.dedup();
        }
        let mut bus_gens = vec![Vec::new(); n];
        for g in &generators {
            if g.bus >= n {
                return Err(NetworkError::BadGeneratorBus { gen: g.index, bus: g.bus });
            }
            bus_gens[g.bus].push(g.index);
        }
        if n > 1 {
            if let Some(b) = (0..n).find(|&i| adjacency[i].is_empty()) {
                return Err(NetworkError::IslandedBus(buses[b].id));
            }
        }
        let net = Network {
            base_mva,
            buses,
            lines,
            generators,
            ref_bus,
            adjacency,
            bus_lines,
            bus_gens,
        };
        if !net.is_connected() {
            return Err(NetworkError::DisconnectedGraph);
        }
        Ok(net)
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn ref_bus(&self) -> usize {
        self.ref_bus
    }

    pub fn neighbors(&self, bus: usize) -> BTreeSet<usize> {
        self.adjacency[bus].iter().copied().collect()
    }

    /// Sorted, duplicate-free neighbor list.
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Indices of lines incident to `bus`.
    pub fn lines_at(&self, bus: usize) -> &[usize] {
        &self.bus_lines[bus]
    }

    pub fn generators_at(&self, bus: usize) -> &[usize] {
        &self.bus_gens[bus]
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_d, q + b.q_d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn pure_reactance_is_symmetric() {
        let k = line_coefficients(c(0.0, -1.0), 0.0, c(1.0, 0.0)).unwrap();
        assert_eq!((k.g_ij, k.b_ij, k.g_c_ij, k.b_c_ij), (0.0, 1.0, 0.0, 1.0));
        assert_eq!((k.g_ji, k.b_ji, k.g_c_ji, k.b_c_ji), (0.0, 1.0, 0.0, 1.0));
    }

    #[test]
    fn real_tap_on_resistive_line() {
        let k = line_coefficients(c(1.0, 0.0), 0.0, c(2.0, 0.0)).unwrap();
        assert_eq!(k.g_c_ij, 0.25);
        assert_eq!(k.g_ij, 0.5);
        assert_eq!(k.g_c_ji, 1.0);
        assert_eq!(k.g_ji, 0.5);
        for b in [k.b_c_ij, k.b_ij, k.b_c_ji, k.b_ji] {
            assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert_eq!(
            line_coefficients(c(1.0, 0.0), 0.0, c(0.0, 0.0)),
            Err(NetworkError::ZeroTap)
        );
        assert_eq!(
            line_coefficients(c(0.0, 0.0), 0.0, c(1.0, 0.0)),
            Err(NetworkError::ZeroAdmittance)
        );
    }

    fn bus(index: usize, is_ref: bool) -> Bus {
        Bus {
            index,
            id: index + 1,
            p_d: 0.0,
            q_d: 0.0,
            g_sh: 0.0,
            b_sh: 0.0,
            v_min: 0.9,
            v_max: 1.1,
            is_ref,
        }
    }

    #[test]
    fn triangle_neighbors() {
        let buses = (0..3).map(|i| bus(i, i == 0)).collect();
        let lines = vec![
            Line::reactance(0, 0, 1, 0.1).unwrap(),
            Line::reactance(1, 1, 2, 0.1).unwrap(),
            Line::reactance(2, 2, 0, 0.1).unwrap(),
        ];
        let net = Network::new(100.0, buses, lines, vec![]).unwrap();
        for i in 0..3 {
            assert_eq!(net.neighbors(i).len(), 2);
        }
    }

    #[test]
    fn single_bus_has_no_neighbors() {
        let net = Network::new(100.0, vec![bus(0, true)], vec![], vec![]).unwrap();
        assert!(net.neighbors(0).is_empty());
    }

    #[test]
    fn validation_errors() {
        assert_eq!(
            Network::new(100.0, vec![bus(0, false)], vec![], vec![]).unwrap_err(),
            NetworkError::NoReferenceBus
        );
        let buses = (0..3).map(|i| bus(i, i == 0)).collect();
        let lines = vec![Line::reactance(0, 0, 1, 0.1).unwrap()];
        assert_eq!(
            Network::new(100.0, buses, lines, vec![]).unwrap_err(),
            NetworkError::IslandedBus(3)
        );
        let buses = (0..4).map(|i| bus(i, i == 0)).collect();
        let lines = vec![
            Line::reactance(0, 0, 1, 0.1).unwrap(),
            Line::reactance(1, 2, 3, 0.1).unwrap(),
        ];
        assert_eq!(
            Network::new(100.0, buses, lines, vec![]).unwrap_err(),
            NetworkError::DisconnectedGraph
        );
    }
}
