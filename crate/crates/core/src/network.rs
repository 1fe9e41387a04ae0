//! Time-varying communication graphs, doubly-stochastic weight construction,
//! and the connectivity / weight-matrix validators.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gp::Position;

/// A directed communication graph at one round. The distance-based generator
/// only emits symmetric edge sets, but the type allows directed graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    pub robot_count: usize,
    /// Ordered pairs (from, to); no self-edges.
    pub edges: BTreeSet<(usize, usize)>,
    /// Round index this graph was generated for.
    pub timestamp: usize,
}

impl CommGraph {
    pub fn new(robot_count: usize, timestamp: usize) -> Self {
        CommGraph {
            robot_count,
            edges: BTreeSet::new(),
            timestamp,
        }
    }

    /// Outgoing neighbors of robot `i`, ascending.
    pub fn neighbors_of(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|(a, _)| *a == i)
            .map(|(_, b)| *b)
            .collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|(a, _)| *a == i).count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges
            .iter()
            .all(|(a, b)| self.edges.contains(&(*b, *a)))
    }
}

/// One round's communication weights A(t).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub weights: DMatrix<f64>,
}

impl AdjacencyMatrix {
    /// Checks the non-degeneracy and doubly-stochastic conditions: row and
    /// column sums of one, diagonal at least `weight_floor`, off-diagonals
    /// either zero or in `[weight_floor, 1]`.
    pub fn validate(&self, weight_floor: f64) -> Result<()> {
        let p = self.weights.nrows();
        if self.weights.ncols() != p {
            return Err(Error::Validation("adjacency matrix is not square".into()));
        }
        for i in 0..p {
            let row: f64 = self.weights.row(i).iter().sum();
            let col: f64 = self.weights.column(i).iter().sum();
            if (row - 1.0).abs() > 1e-12 || (col - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!(
                    "robot {i}: row sum {row}, column sum {col} (expected 1)"
                )));
            }
            if self.weights[(i, i)] < weight_floor - 1e-15 {
                return Err(Error::Validation(format!(
                    "robot {i}: diagonal weight {} below floor {weight_floor}",
                    self.weights[(i, i)]
                )));
            }
            for j in 0..p {
                if i == j {
                    continue;
                }
                let w = self.weights[(i, j)];
                if w != 0.0 && !(w >= weight_floor - 1e-15 && w <= 1.0) {
                    return Err(Error::Validation(format!(
                        "robot {i}: off-diagonal weight {w} to {j} outside {{0}} U [{weight_floor}, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Row entries for the neighbors of `i` as (neighbor, weight) pairs.
    pub fn neighbor_weights(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.weights.ncols())
            .filter(|&j| j != i && self.weights[(i, j)] > 0.0)
            .map(|j| (j, self.weights[(i, j)]))
            .collect()
    }
}

/// Distance-based graph: edge (i, j) iff `0 < |x_i - x_j| <= comm_range`.
/// Symmetric and deterministic in its inputs.
pub fn graph_from_positions(
    positions: &[Position],
    comm_range: f64,
    timestamp: usize,
) -> CommGraph {
    let p = positions.len();
    let mut graph = CommGraph::new(p, timestamp);
    for i in 0..p {
        for j in (i + 1)..p {
            let d2: f64 = positions[i]
                .iter()
                .zip(&positions[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let d = d2.sqrt();
            if d > 0.0 && d <= comm_range {
                graph.edges.insert((i, j));
                graph.edges.insert((j, i));
            }
        }
    }
    graph
}

/// Uniform-weight adjacency matrix: `edge_weight` on every edge, diagonal
/// completing each row to one. For a symmetric graph the result is doubly
/// stochastic; the diagonal must stay at least `edge_weight` (the implied
/// weight floor), which bounds the admissible degree.
pub fn weights_from_graph(graph: &CommGraph, edge_weight: f64) -> Result<AdjacencyMatrix> {
    if !(edge_weight > 0.0 && edge_weight <= 1.0) {
        return Err(Error::Argument(format!(
            "edge weight must lie in (0, 1], got {edge_weight}"
        )));
    }
    let p = graph.robot_count;
    for i in 0..p {
        let degree = graph.degree(i);
        if edge_weight * degree as f64 > 1.0 - edge_weight + 1e-15 {
            return Err(Error::Argument(format!(
                "robot {i} has degree {degree}: edge weight {edge_weight} leaves diagonal {} below the floor",
                1.0 - edge_weight * degree as f64
            )));
        }
    }
    let mut weights = DMatrix::zeros(p, p);
    for &(i, j) in &graph.edges {
        weights[(i, j)] = edge_weight;
    }
    for i in 0..p {
        let off: f64 = (0..p).filter(|&j| j != i).map(|j| weights[(i, j)]).sum();
        weights[(i, i)] = 1.0 - off;
    }
    Ok(AdjacencyMatrix { weights })
}

fn reachable(p: usize, edges: &BTreeSet<(usize, usize)>, reversed: bool) -> usize {
    let mut seen = vec![false; p];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(node) = stack.pop() {
        for &(a, b) in edges.iter() {
            let (from, to) = if reversed { (b, a) } else { (a, b) };
            if from == node && !seen[to] {
                seen[to] = true;
                count += 1;
                stack.push(to);
            }
        }
    }
    count
}

fn strongly_connected(p: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    if p <= 1 {
        return true;
    }
    reachable(p, edges, false) == p && reachable(p, edges, true) == p
}

/// True iff every window of `b` consecutive graphs has a strongly connected
/// union. Returns false for an empty window spec or a too-short sequence.
pub fn check_periodic_connectivity(graphs: &[CommGraph], b: usize) -> bool {
    if b == 0 || graphs.len() < b {
        return false;
    }
    let p = graphs[0].robot_count;
    for window in graphs.windows(b) {
        let mut union = BTreeSet::new();
        for g in window {
            union.extend(g.edges.iter().copied());
        }
        if !strongly_connected(p, &union) {
            return false;
        }
    }
    true
}

/// Line-oriented debug trace: one line per graph, `round: i-j i-k ...` with
/// symmetric pairs collapsed and one-way edges written `i>j`.
pub fn graph_trace(graphs: &[CommGraph]) -> String {
    let mut out = String::new();
    for g in graphs {
        let mut parts: Vec<String> = Vec::new();
        for &(i, j) in &g.edges {
            if g.edges.contains(&(j, i)) {
                if i < j {
                    parts.push(format!("{i}-{j}"));
                }
            } else {
                parts.push(format!("{i}>{j}"));
            }
        }
        out.push_str(&format!("{}: {}\n", g.timestamp, parts.join(" ")));
    }
    out
}
