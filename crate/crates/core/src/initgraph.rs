//! Bipartite scan/marker graph weighted by marker fit error, and the
//! shortest-path propagation of anchor-relative initial poses.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use log::warn;
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::pose_svd::CanonicalCorners;
use crate::tagdetect::MarkerObservation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitGraphError {
    #[error("no marker observations")]
    NoObservations,
    #[error("scans not connected to the anchor: {0:?}")]
    DisconnectedScan(Vec<u32>),
    #[error("path does not alternate scan and marker nodes along graph edges")]
    InvalidPath,
}

/// Graph node. Scans order before markers, then by id; this ordering breaks
/// ties between equal-cost paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Scan(u32),
    Marker(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    /// Fit error of the observation, m².
    pub weight: f64,
    /// Marker-to-scan transform `T^j_i`.
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitGraph {
    pub scan_nodes: BTreeSet<u32>,
    pub marker_nodes: BTreeSet<u32>,
    /// Keyed by (scan id, marker id).
    pub edges: BTreeMap<(u32, u32), Edge>,
    /// Scan whose frame is the global frame: the smallest scan id.
    pub anchor: u32,
}

impl InitGraph {
    pub fn build(observations: &[MarkerObservation]) -> Result<Self, InitGraphError> {
        let mut edges: BTreeMap<(u32, u32), Edge> = BTreeMap::new();
        for obs in observations {
            let key = (obs.scan_id, obs.marker_id);
            let keep = edges.get(&key).is_none_or(|e| obs.e_pp < e.weight);
            if keep {
                edges.insert(
                    key,
                    Edge {
                        weight: obs.e_pp,
                        pose: obs.pose,
                    },
                );
            }
        }
        let scan_nodes: BTreeSet<u32> = edges.keys().map(|k| k.0).collect();
        let marker_nodes = edges.keys().map(|k| k.1).collect();
        let anchor = *scan_nodes.first().ok_or(InitGraphError::NoObservations)?;
        Ok(InitGraph {
            scan_nodes,
            marker_nodes,
            edges,
            anchor,
        })
    }

    /// Same as [`InitGraph::build`] but with an explicit anchor, which must
    /// have observations.
    pub fn build_with_anchor(observations: &[MarkerObservation], anchor: u32) -> Result<Self, InitGraphError> {
        let mut g = Self::build(observations)?;
        if !g.scan_nodes.contains(&anchor) {
            return Err(InitGraphError::DisconnectedScan(vec![anchor]));
        }
        g.anchor = anchor;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.scan_nodes.len() + self.marker_nodes.len()
    }

    pub fn edge(&self, scan: u32, marker: u32) -> Option<&Edge> {
        self.edges.get(&(scan, marker))
    }

    /// Neighbours of `n` with edge weights, in node order.
    pub fn neighbors(&self, n: Node) -> Vec<(Node, f64)> {
        match n {
            Node::Scan(i) => self
                .edges
                .range((i, 0)..=(i, u32::MAX))
                .map(|(&(_, j), e)| (Node::Marker(j), e.weight))
                .collect(),
            Node::Marker(j) => self
                .edges
                .iter()
                .filter(|(k, _)| k.1 == j)
                .map(|(&(i, _), e)| (Node::Scan(i), e.weight))
                .collect(),
        }
    }

    /// Graphviz rendering for debugging.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph init {\n");
        for i in &self.scan_nodes {
            let shape = if *i == self.anchor { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  f{i} [shape={shape}];");
        }
        for j in &self.marker_nodes {
            let _ = writeln!(out, "  m{j} [shape=box];");
        }
        for ((i, j), e) in &self.edges {
            let _ = writeln!(out, "  f{i} -- m{j} [label=\"{:.3e}\"];", e.weight);
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanPath {
    /// Alternating scan/marker nodes from the anchor to the scan.
    pub nodes: Vec<Node>,
    /// Sum of edge weights along `nodes`, accumulated from the anchor.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShortestPaths {
    pub anchor: u32,
    /// One entry per reachable non-anchor scan.
    pub paths: BTreeMap<u32, ScanPath>,
    /// Predecessor of every reached node in the shortest-path tree.
    pub predecessor: BTreeMap<Node, Node>,
    /// Scans with no path to the anchor.
    pub unreachable: Vec<u32>,
}

impl ShortestPaths {
    pub fn require_connected(&self) -> Result<(), InitGraphError> {
        if self.unreachable.is_empty() {
            Ok(())
        } else {
            Err(InitGraphError::DisconnectedScan(self.unreachable.clone()))
        }
    }
}

#[derive(PartialEq)]
struct Queued(f64, Node);

impl Eq for Queued {}

impl Ord for Queued {
    // Reversed so the max-heap pops the smallest distance, then smallest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from the anchor. A node's predecessor changes only on a strict
/// improvement, and equal distances are settled in node order.
pub fn shortest_paths(g: &InitGraph) -> ShortestPaths {
    let start = Node::Scan(g.anchor);
    let mut dist: BTreeMap<Node, f64> = BTreeMap::from([(start, 0.0)]);
    let mut predecessor: BTreeMap<Node, Node> = BTreeMap::new();
    let mut settled: BTreeSet<Node> = BTreeSet::new();
    let mut heap = BinaryHeap::from([Queued(0.0, start)]);
    while let Some(Queued(d, n)) = heap.pop() {
        if !settled.insert(n) {
            continue;
        }
        for (m, w) in g.neighbors(n) {
            if settled.contains(&m) {
                continue;
            }
            let cand = d + w;
            if dist.get(&m).is_none_or(|&old| cand < old) {
                dist.insert(m, cand);
                predecessor.insert(m, n);
                heap.push(Queued(cand, m));
            }
        }
    }

    let mut paths = BTreeMap::new();
    let mut unreachable = Vec::new();
    for &i in &g.scan_nodes {
        if i == g.anchor {
            continue;
        }
        let target = Node::Scan(i);
        let Some(&weight) = dist.get(&target) else {
            unreachable.push(i);
            continue;
        };
        let mut nodes = vec![target];
        let mut cur = target;
        while let Some(&p) = predecessor.get(&cur) {
            nodes.push(p);
            cur = p;
        }
        nodes.reverse();
        paths.insert(i, ScanPath { nodes, weight });
    }
    ShortestPaths {
        anchor: g.anchor,
        paths,
        predecessor,
        unreachable,
    }
}

/// Pose of the path's last scan in the frame of its first scan, composing
/// `T^j_a · (T^j_b)⁻¹` per scan–marker–scan hop.
pub fn compose_path(g: &InitGraph, nodes: &[Node]) -> Result<Pose, InitGraphError> {
    if nodes.is_empty() || nodes.len().is_multiple_of(2) {
        return Err(InitGraphError::InvalidPath);
    }
    let mut acc = Pose::identity();
    for hop in nodes.windows(3).step_by(2) {
        let (Node::Scan(a), Node::Marker(j), Node::Scan(b)) = (hop[0], hop[1], hop[2]) else {
            return Err(InitGraphError::InvalidPath);
        };
        let ea = g.edge(a, j).ok_or(InitGraphError::InvalidPath)?;
        let eb = g.edge(b, j).ok_or(InitGraphError::InvalidPath)?;
        acc = acc * ea.pose * eb.pose.inverse();
    }
    match nodes[0] {
        Node::Scan(_) => Ok(acc),
        Node::Marker(_) => Err(InitGraphError::InvalidPath),
    }
}

/// Anchor-relative initial values for every reachable variable.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialEstimate {
    pub anchor: u32,
    /// `G_T_i`, mapping scan-local points into the anchor frame.
    pub scan_poses: BTreeMap<u32, Pose>,
    /// Marker-to-global transforms.
    pub marker_poses: BTreeMap<u32, Pose>,
    /// Corner positions in the global frame, canonical order.
    pub corners: BTreeMap<u32, [Vec3; 4]>,
    /// Accumulated path weight per scan; zero for the anchor.
    pub path_weights: BTreeMap<u32, f64>,
    pub unreachable: Vec<u32>,
}

pub fn propagate_poses(
    g: &InitGraph,
    paths: &ShortestPaths,
    canonical: &CanonicalCorners,
) -> InitialEstimate {
    let mut scan_poses = BTreeMap::from([(g.anchor, Pose::identity())]);
    let mut path_weights = BTreeMap::from([(g.anchor, 0.0)]);
    for (&i, path) in &paths.paths {
        let pose = compose_path(g, &path.nodes).expect("shortest path follows graph edges");
        scan_poses.insert(i, pose);
        path_weights.insert(i, path.weight);
    }

    // A marker on some returned path is placed through its tree predecessor;
    // any other marker through its best-fitting observation from a placed scan.
    let on_path: BTreeSet<u32> = paths
        .paths
        .values()
        .flat_map(|p| p.nodes.iter())
        .filter_map(|n| match n {
            Node::Marker(j) => Some(*j),
            Node::Scan(_) => None,
        })
        .collect();
    let mut marker_poses = BTreeMap::new();
    for &j in &g.marker_nodes {
        let host = if on_path.contains(&j) {
            match paths.predecessor.get(&Node::Marker(j)) {
                Some(Node::Scan(i)) => Some(*i),
                _ => None,
            }
        } else {
            g.edges
                .iter()
                .filter(|(k, _)| k.1 == j && scan_poses.contains_key(&k.0))
                .min_by(|a, b| a.1.weight.total_cmp(&b.1.weight).then(a.0.cmp(b.0)))
                .map(|(k, _)| k.0)
        };
        match host {
            Some(i) => {
                let pose = scan_poses[&i] * g.edges[&(i, j)].pose;
                marker_poses.insert(j, pose);
            }
            None => warn!("marker {j} is only seen by unreachable scans"),
        }
    }
    let corners = marker_poses
        .iter()
        .map(|(&j, p)| (j, canonical.corners.map(|c| p.apply(&c))))
        .collect();
    InitialEstimate {
        anchor: g.anchor,
        scan_poses,
        marker_poses,
        corners,
        path_weights,
        unreachable: paths.unreachable.clone(),
    }
}
