//! Mode-filtered road graph and shortest-path routing.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::Serialize;

use crate::geometry::Point;

/// An undirected road segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Meters, strictly positive.
    pub length: f64,
    /// Bit `i` set means `RoadNetwork::modes()[i]` may use this edge.
    mask: u64,
}

impl Edge {
    pub fn allows(&self, bit: u64) -> bool {
        self.mask & bit != 0
    }

    fn other(&self, node: usize) -> usize {
        if self.from == node {
            self.to
        } else {
            self.from
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub distance: f64,
    /// Edge indices in travel order.
    pub path: Vec<usize>,
    /// Node ids visited, origin first.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RoadNetwork {
    nodes: Vec<Point>,
    edges: Vec<Edge>,
    modes: Vec<String>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
    #[serde(skip)]
    node_index: HashMap<(i64, i64), usize>,
}

fn node_key(p: &Point) -> (i64, i64) {
    // millimeter grid
    ((p.x * 1000.0).round() as i64, (p.y * 1000.0).round() as i64)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RoadNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of the node at `p`, creating it if needed.
    /// Points closer than a millimeter are the same node.
    pub fn add_node(&mut self, p: Point) -> usize {
        let key = node_key(&p);
        if let Some(&id) = self.node_index.get(&key) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(p);
        self.adjacency.push(Vec::new());
        self.node_index.insert(key, id);
        id
    }

    fn mode_bit_or_insert(&mut self, mode: &str) -> u64 {
        if let Some(i) = self.modes.iter().position(|m| m == mode) {
            return 1 << i;
        }
        assert!(self.modes.len() < 64, "at most 64 distinct mode tags");
        self.modes.push(mode.to_string());
        1 << (self.modes.len() - 1)
    }

    /// Bit for `mode`, or `None` if no edge was ever tagged with it.
    pub fn mode_bit(&self, mode: &str) -> Option<u64> {
        self.modes.iter().position(|m| m == mode).map(|i| 1 << i)
    }

    /// Adds an undirected edge; `length` must be positive.
    pub fn add_edge<S: AsRef<str>>(&mut self, from: usize, to: usize, length: f64, modes: &[S]) -> usize {
        assert!(length > 0.0, "edge length must be positive");
        let mut mask = 0;
        for m in modes {
            mask |= self.mode_bit_or_insert(m.as_ref());
        }
        let id = self.edges.len();
        self.edges.push(Edge {
            from,
            to,
            length,
            mask,
        });
        self.adjacency[from].push(id);
        if to != from {
            self.adjacency[to].push(id);
        }
        id
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn modes(&self) -> &[String] {
        &self.modes
    }

    /// Mode ids allowed on an edge, in tag-registration order.
    pub fn edge_modes(&self, edge: usize) -> Vec<&str> {
        let mask = self.edges[edge].mask;
        self.modes
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, m)| m.as_str())
            .collect()
    }

    /// Nearest node usable by the mode (incident to at least one edge that
    /// allows it); ties go to the smaller node id.
    pub fn snap(&self, p: &Point, mode: &str) -> Option<usize> {
        let bit = self.mode_bit(mode)?;
        let mut best: Option<(f64, usize)> = None;
        for (id, node) in self.nodes.iter().enumerate() {
            if !self.adjacency[id].iter().any(|&e| self.edges[e].allows(bit)) {
                continue;
            }
            let d = node.distance(p);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// Single-source shortest distances over edges allowing `bit`.
    pub fn distances_from(&self, source: usize, bit: u64) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Frontier {
            dist: 0.0,
            node: source,
        });
        while let Some(Frontier { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &e in &self.adjacency[node] {
                let edge = &self.edges[e];
                if !edge.allows(bit) {
                    continue;
                }
                let next = edge.other(node);
                let nd = d + edge.length;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(Frontier { dist: nd, node: next });
                }
            }
        }
        dist
    }

    /// Shortest path between two nodes using only edges that allow `mode`.
    /// Among equal-length paths the lexicographically smallest node-id
    /// sequence wins. `None` means unreachable by that mode.
    pub fn route_nodes(&self, origin: usize, destination: usize, mode: &str) -> Option<Route> {
        if origin == destination {
            return Some(Route {
                distance: 0.0,
                path: Vec::new(),
                nodes: vec![origin],
            });
        }
        let bit = self.mode_bit(mode)?;
        let to_dest = self.distances_from(destination, bit);
        let total = to_dest[origin];
        if !total.is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut nodes = vec![origin];
        let mut here = origin;
        while here != destination {
            let mut pick: Option<(usize, usize)> = None;
            for &e in &self.adjacency[here] {
                let edge = &self.edges[e];
                if !edge.allows(bit) {
                    continue;
                }
                let next = edge.other(here);
                if !close(edge.length + to_dest[next], to_dest[here]) {
                    continue;
                }
                if pick.is_none_or(|(pn, pe)| (next, e) < (pn, pe)) {
                    pick = Some((next, e));
                }
            }
            let (next, e) = pick.expect("shortest-path tree is consistent");
            path.push(e);
            nodes.push(next);
            here = next;
        }
        let distance = path.iter().map(|&e| self.edges[e].length).sum();
        Some(Route {
            distance,
            path,
            nodes,
        })
    }

    /// Routes between two arbitrary points after snapping each to the mode's subgraph.
    pub fn route(&self, origin: &Point, destination: &Point, mode: &str) -> Option<Route> {
        let a = self.snap(origin, mode)?;
        let b = self.snap(destination, mode)?;
        self.route_nodes(a, b, mode)
    }
}
