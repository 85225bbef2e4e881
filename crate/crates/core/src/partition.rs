//! Greedy radial partitioning, partition validation, and region closures.
//!
//! A partition is radial when every region induces a tree. The greedy
//! construction grows one region at a time from a start node, admitting a
//! popped candidate only when exactly one of its neighbors is already in the
//! region, so the region stays a tree.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::network::Network;

#[derive(Debug, thiserror::Error)]
pub enum PartitionError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("partition refers to unknown bus {0}")]
    UnknownBus(usize),
    #[error("not a partition: {0}")]
    NotAPartition(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Simple undirected graph on nodes `0..n` with sorted adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
}

impl Graph {
    /// Self-loops are dropped and parallel edges merged.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (a, b) in edges {
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        Graph { adj }
    }

    pub fn from_network(net: &Network) -> Self {
        Graph {
            adj: net.adjacency().to_vec(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.num_nodes()).collect();
        self.components_within(&all) <= 1
    }

    /// Number of connected components of the subgraph induced by `nodes`.
    fn components_within(&self, nodes: &[usize]) -> usize {
        let mut inside = vec![false; self.num_nodes()];
        for &v in nodes {
            inside[v] = true;
        }
        let mut seen = vec![false; self.num_nodes()];
        let mut count = 0;
        for &s in nodes {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &w in &self.adj[u] {
                    if inside[w] && !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    fn induced_edges(&self, nodes: &[usize]) -> usize {
        let mut inside = vec![false; self.num_nodes()];
        for &v in nodes {
            inside[v] = true;
        }
        nodes
            .iter()
            .map(|&v| self.adj[v].iter().filter(|&&w| inside[w]).count())
            .sum::<usize>()
            / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StartRule {
    /// Lowest-numbered node of the residual graph.
    #[default]
    Lowest,
    /// Uniformly random residual node from a seeded generator.
    Random { seed: u64 },
}

/// Ordered list of node sets. Each region's nodes are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub regions: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn single(n: usize) -> Self {
        Partition {
            regions: vec![(0..n).collect()],
        }
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            regions: (0..n).map(|v| vec![v]).collect(),
        }
    }

    /// Region index of every node, if the partition covers `0..n` disjointly.
    pub fn owners(&self, n: usize) -> Result<Vec<usize>, PartitionError> {
        let mut owner = vec![usize::MAX; n];
        for (k, region) in self.regions.iter().enumerate() {
            if region.is_empty() {
                return Err(PartitionError::NotAPartition(format!("region {k} is empty")));
            }
            for &v in region {
                if v >= n {
                    return Err(PartitionError::NotAPartition(format!("node {v} out of range")));
                }
                if owner[v] != usize::MAX {
                    return Err(PartitionError::NotAPartition(format!(
                        "node {v} is in regions {} and {k}",
                        owner[v]
                    )));
                }
                owner[v] = k;
            }
        }
        if let Some(v) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(PartitionError::NotAPartition(format!("node {v} is not covered")));
        }
        Ok(owner)
    }

    /// JSON document `{"regions": [[bus ids], ...]}` using source bus numbers.
    pub fn to_json(&self, net: &Network) -> String {
        let doc = PartitionDoc {
            regions: self
                .regions
                .iter()
                .map(|r| r.iter().map(|&v| net.buses[v].id).collect())
                .collect(),
        };
        serde_json::to_string(&doc).expect("partition serializes")
    }

    pub fn from_json(text: &str, net: &Network) -> Result<Self, PartitionError> {
        let doc: PartitionDoc = serde_json::from_str(text)?;
        let index: BTreeMap<usize, usize> = net.buses.iter().map(|b| (b.id, b.index)).collect();
        let regions = doc
            .regions
            .iter()
            .map(|r| {
                let mut nodes = r
                    .iter()
                    .map(|id| index.get(id).copied().ok_or(PartitionError::UnknownBus(*id)))
                    .collect::<Result<Vec<_>, _>>()?;
                nodes.sort_unstable();
                Ok(nodes)
            })
            .collect::<Result<Vec<_>, PartitionError>>()?;
        let p = Partition { regions };
        p.owners(net.num_buses())?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct PartitionDoc {
    regions: Vec<Vec<usize>>,
}

/// Greedy radial partition. Candidates are kept on a LIFO stack; a node's
/// residual neighbors are pushed in ascending order only when the node joins
/// the current region.
pub fn radial_partition(graph: &Graph, rule: StartRule) -> Result<Partition, PartitionError> {
    let n = graph.num_nodes();
    if n == 0 {
        return Err(PartitionError::EmptyGraph);
    }
    let mut rng = match rule {
        StartRule::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        StartRule::Lowest => None,
    };
    // Region id of each assigned node.
    let mut region_of = vec![usize::MAX; n];
    let mut remaining = n;
    let mut regions = Vec::new();
    while remaining > 0 {
        let k = regions.len();
        let start = match rng.as_mut() {
            None => region_of.iter().position(|&r| r == usize::MAX).unwrap(),
            Some(rng) => {
                let pick = rng.gen_range(0..remaining);
                (0..n).filter(|&v| region_of[v] == usize::MAX).nth(pick).unwrap()
            }
        };
        let mut members = vec![start];
        region_of[start] = k;
        let mut stack: Vec<usize> = Vec::new();
        let push_residual = |stack: &mut Vec<usize>, u: usize, region_of: &[usize]| {
            stack.extend(graph.neighbors(u).iter().filter(|&&w| region_of[w] == usize::MAX));
        };
        push_residual(&mut stack, start, &region_of);
        while let Some(u) = stack.pop() {
            if region_of[u] != usize::MAX {
                continue;
            }
            let links = graph.neighbors(u).iter().filter(|&&w| region_of[w] == k).count();
            if links == 1 {
                region_of[u] = k;
                members.push(u);
                push_residual(&mut stack, u, &region_of);
            }
        }
        remaining -= members.len();
        members.sort_unstable();
        regions.push(members);
    }
    Ok(Partition { regions })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyRegion(usize),
    NodeOutOfRange { region: usize, node: usize },
    Overlap { node: usize, regions: (usize, usize) },
    Uncovered(usize),
    Disconnected { region: usize, components: usize },
    Cycle { region: usize, extra_edges: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RadialReport {
    pub violations: Vec<Violation>,
}

impl RadialReport {
    pub fn is_radial(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check that regions are nonempty, disjoint, covering, and each induces a tree.
pub fn verify_radial(graph: &Graph, partition: &Partition) -> RadialReport {
    let n = graph.num_nodes();
    let mut violations = Vec::new();
    let mut owner = vec![usize::MAX; n];
    for (k, region) in partition.regions.iter().enumerate() {
        if region.is_empty() {
            violations.push(Violation::EmptyRegion(k));
            continue;
        }
        let mut valid_nodes = Vec::with_capacity(region.len());
        for &v in region {
            if v >= n {
                violations.push(Violation::NodeOutOfRange { region: k, node: v });
                continue;
            }
            if owner[v] != usize::MAX {
                violations.push(Violation::Overlap {
                    node: v,
                    regions: (owner[v], k),
                });
            } else {
                owner[v] = k;
            }
            valid_nodes.push(v);
        }
        valid_nodes.sort_unstable();
        valid_nodes.dedup();
        let components = graph.components_within(&valid_nodes);
        if components > 1 {
            violations.push(Violation::Disconnected {
                region: k,
                components,
            });
        }
        // A forest with c components has |V| - c edges.
        let edges = graph.induced_edges(&valid_nodes);
        let forest_edges = valid_nodes.len() - components;
        if edges > forest_edges {
            violations.push(Violation::Cycle {
                region: k,
                extra_edges: edges - forest_edges,
            });
        }
    }
    violations.extend((0..n).filter(|&v| owner[v] == usize::MAX).map(Violation::Uncovered));
    RadialReport { violations }
}

/// A region's owned nodes together with their neighbors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionClosure {
    pub id: usize,
    pub owned: Vec<usize>,
    /// Neighbors of owned nodes that belong to other regions.
    pub boundary: Vec<usize>,
    /// `owned ∪ boundary`, sorted.
    pub nodes: Vec<usize>,
    /// Lines with at least one owned endpoint.
    pub lines: Vec<usize>,
    /// Generators at owned nodes.
    pub gens: Vec<usize>,
}

impl RegionClosure {
    pub fn owns(&self, node: usize) -> bool {
        self.owned.binary_search(&node).is_ok()
    }
}

/// Which closures contain each node and each line. A closure holds both
/// orientations of each of its lines, so the sets of `ij` and `ji` coincide.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedEntityMap {
    pub node_regions: Vec<Vec<usize>>,
    pub line_regions: Vec<Vec<usize>>,
}

impl SharedEntityMap {
    pub fn shared_nodes(&self) -> Vec<usize> {
        (0..self.node_regions.len())
            .filter(|&i| self.node_regions[i].len() > 1)
            .collect()
    }

    pub fn shared_lines(&self) -> Vec<usize> {
        (0..self.line_regions.len())
            .filter(|&e| self.line_regions[e].len() > 1)
            .collect()
    }

    /// Shared lines counted once per orientation.
    pub fn num_shared_directed_lines(&self) -> usize {
        2 * self.shared_lines().len()
    }
}

pub fn region_closures(
    net: &Network,
    partition: &Partition,
) -> Result<(Vec<RegionClosure>, SharedEntityMap), PartitionError> {
    let n = net.num_buses();
    let owner = partition.owners(n)?;
    let mut node_regions = vec![Vec::new(); n];
    let mut line_regions = vec![Vec::new(); net.lines.len()];
    let mut closures = Vec::with_capacity(partition.num_regions());
    for (k, region) in partition.regions.iter().enumerate() {
        let mut owned = region.clone();
        owned.sort_unstable();
        let mut boundary: Vec<usize> = owned
            .iter()
            .flat_map(|&v| net.adjacency()[v].iter().copied())
            .filter(|&w| owner[w] != k)
            .collect();
        boundary.sort_unstable();
        boundary.dedup();
        let mut nodes: Vec<usize> = owned.iter().chain(&boundary).copied().collect();
        nodes.sort_unstable();
        let mut lines: Vec<usize> = owned
            .iter()
            .flat_map(|&v| net.lines_at(v).iter().copied())
            .collect();
        lines.sort_unstable();
        lines.dedup();
        let gens: Vec<usize> = owned
            .iter()
            .flat_map(|&v| net.generators_at(v).iter().copied())
            .collect();
        for &v in &nodes {
            node_regions[v].push(k);
        }
        for &e in &lines {
            line_regions[e].push(k);
        }
        closures.push(RegionClosure {
            id: k,
            owned,
            boundary,
            nodes,
            lines,
            gens,
        });
    }
    Ok((
        closures,
        SharedEntityMap {
            node_regions,
            line_regions,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize) -> Graph {
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    #[test]
    fn single_node() {
        let p = radial_partition(&Graph::new(1, []), StartRule::Lowest).unwrap();
        assert_eq!(p.regions, vec![vec![0]]);
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(matches!(
            radial_partition(&Graph::new(0, []), StartRule::Lowest),
            Err(PartitionError::EmptyGraph)
        ));
    }

    #[test]
    fn triangle_trace() {
        // Start 0, push 1 then 2; pop 2 (joins), pop 1 (two links, rejected).
        let p = radial_partition(&cycle(3), StartRule::Lowest).unwrap();
        assert_eq!(p.regions, vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn tree_gives_one_region() {
        let g = Graph::new(7, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (5, 6)]);
        for rule in [StartRule::Lowest, StartRule::Random { seed: 3 }] {
            assert_eq!(radial_partition(&g, rule).unwrap().num_regions(), 1);
        }
    }

    #[test]
    fn verify_flags_cycle_and_accepts_singletons() {
        let g = cycle(3);
        let report = verify_radial(&g, &Partition::single(3));
        assert!(!report.is_radial());
        assert!(matches!(report.violations[0], Violation::Cycle { region: 0, extra_edges: 1 }));
        assert!(verify_radial(&g, &Partition::singletons(3)).is_radial());
    }

    #[test]
    fn verify_flags_overlap_gap_and_disconnection() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)]);
        let p = Partition {
            regions: vec![vec![0, 2], vec![2]],
        };
        let v = verify_radial(&g, &p).violations;
        assert!(v.contains(&Violation::Disconnected { region: 0, components: 2 }));
        assert!(v.contains(&Violation::Overlap { node: 2, regions: (0, 1) }));
        assert!(v.contains(&Violation::Uncovered(1)));
        assert!(v.contains(&Violation::Uncovered(3)));
    }

    #[test]
    fn parallel_edges_are_merged() {
        let g = Graph::new(2, [(0, 1), (1, 0), (0, 1)]);
        assert_eq!(g.num_edges(), 1);
        assert!(verify_radial(&g, &Partition::single(2)).is_radial());
    }
}
