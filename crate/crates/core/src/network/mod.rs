//! Planar street graph with docking stations and boundary entry points embedded as vertices.
//!
//! All routing distances are network distances. Single-source distance trees are computed
//! lazily and cached per source node, so a loaded network can be shared read-only between
//! parallel replications.

mod geojson;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::geojson::{load_geojson, parse_geojson, to_geojson};

/// Relative slack used when comparing path lengths that went through different summation orders.
const PATH_EPS: f64 = 1e-9;
/// Edge lengths may undercut the straight-line distance by at most this much (meters).
const EDGE_LENGTH_TOLERANCE: f64 = 1e-6;
/// Boundary points must lie this close to the district perimeter (meters).
const PERIMETER_TOLERANCE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl std::fmt::Display for StationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Planar point in projected meters.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub position: Point,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub length: f64,
}

/// A docking station: a network vertex with a fixed number of docks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Station {
    pub id: StationId,
    pub node: NodeId,
    pub capacity: u32,
}

/// Node sequence plus its total length in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub length: f64,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no path from node {from} to node {to}")]
    UnreachableNode { from: NodeId, to: NodeId },
    #[error("node {0} has a non-finite position")]
    NonFinitePosition(NodeId),
    #[error("edge {a}-{b} has invalid length {length} (straight-line distance {euclidean})")]
    InvalidEdge {
        a: NodeId,
        b: NodeId,
        length: f64,
        euclidean: f64,
    },
    #[error("duplicate station id {0}")]
    DuplicateStation(StationId),
    #[error("station {0} has zero capacity")]
    ZeroCapacity(StationId),
    #[error("stations {0} and {1} share node {2}")]
    SharedStationNode(StationId, StationId, NodeId),
    #[error("boundary point at node {0} is {1:.3} m away from the district perimeter")]
    BoundaryOffPerimeter(NodeId, f64),
    #[error("district bounds need at least 3 vertices")]
    DegenerateBounds,
    #[error("node {0} is not connected to the rest of the station/boundary subgraph")]
    Disconnected(NodeId),
    #[error("coordinates look like longitude/latitude degrees; project to planar meters first")]
    LonLatCoordinates,
    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Incrementally assembles a [`StreetNetwork`]; all invariants are checked by [`build`](Self::build).
#[derive(Debug, Default, Clone)]
pub struct NetworkBuilder {
    nodes: Vec<Point>,
    edges: Vec<(NodeId, NodeId, Option<f64>)>,
    stations: Vec<Station>,
    boundary: Vec<NodeId>,
    bounds: Vec<Point>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, position: Point) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(position);
        id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn position(&self, id: NodeId) -> Option<Point> {
        self.nodes.get(id.index()).copied()
    }

    /// Adds an undirected edge whose length is the straight-line distance.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId) -> &mut Self {
        self.edges.push((a, b, None));
        self
    }

    pub fn add_edge_with_length(&mut self, a: NodeId, b: NodeId, length: f64) -> &mut Self {
        self.edges.push((a, b, Some(length)));
        self
    }

    pub fn add_station(&mut self, id: StationId, node: NodeId, capacity: u32) -> &mut Self {
        self.stations.push(Station { id, node, capacity });
        self
    }

    pub fn add_boundary(&mut self, node: NodeId) -> &mut Self {
        self.boundary.push(node);
        self
    }

    pub fn bounds(&mut self, polygon: Vec<Point>) -> &mut Self {
        self.bounds = polygon;
        self
    }

    /// Nearest existing node by euclidean distance, ties by smallest id.
    pub fn nearest_node(&self, p: Point) -> Option<(NodeId, f64)> {
        nearest_by_euclid(&self.nodes, p)
    }

    pub fn build(&self) -> Result<StreetNetwork, NetworkError> {
        let n = self.nodes.len();
        let nodes: Vec<Node> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &position)| Node {
                id: NodeId(i as u32),
                position,
            })
            .collect();
        for node in &nodes {
            if !node.position.is_finite() {
                return Err(NetworkError::NonFinitePosition(node.id));
            }
        }
        let check = |id: NodeId| {
            if id.index() < n {
                Ok(id)
            } else {
                Err(NetworkError::UnknownNode(id))
            }
        };

        // Parallel edges collapse to the shortest one.
        let mut edge_map: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
        for &(a, b, length) in &self.edges {
            check(a)?;
            check(b)?;
            if a == b {
                continue;
            }
            let euclidean = nodes[a.index()]
                .position
                .distance(nodes[b.index()].position);
            let length = length.unwrap_or(euclidean);
            if !(length.is_finite() && length > 0.0 && length >= euclidean - EDGE_LENGTH_TOLERANCE)
            {
                return Err(NetworkError::InvalidEdge {
                    a,
                    b,
                    length,
                    euclidean,
                });
            }
            let key = (a.min(b), a.max(b));
            edge_map
                .entry(key)
                .and_modify(|l| *l = l.min(length))
                .or_insert(length);
        }
        let edges: Vec<Edge> = edge_map
            .iter()
            .map(|(&(a, b), &length)| Edge { a, b, length })
            .collect();
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.a.index()].push((e.b, e.length));
            adjacency[e.b.index()].push((e.a, e.length));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(id, _)| id);
        }

        let mut stations = self.stations.clone();
        stations.sort_by_key(|s| s.id);
        let mut station_at_node = vec![None; n];
        for (idx, s) in stations.iter().enumerate() {
            check(s.node)?;
            if idx > 0 && stations[idx - 1].id == s.id {
                return Err(NetworkError::DuplicateStation(s.id));
            }
            if s.capacity == 0 {
                return Err(NetworkError::ZeroCapacity(s.id));
            }
            if let Some(other) = station_at_node[s.node.index()] {
                let other: &Station = &stations[other];
                return Err(NetworkError::SharedStationNode(other.id, s.id, s.node));
            }
            station_at_node[s.node.index()] = Some(idx);
        }

        if self.bounds.len() < 3 {
            return Err(NetworkError::DegenerateBounds);
        }
        let mut boundary = self.boundary.clone();
        boundary.sort();
        boundary.dedup();
        for &b in &boundary {
            check(b)?;
            let d = distance_to_perimeter(&self.bounds, nodes[b.index()].position);
            if d > PERIMETER_TOLERANCE {
                return Err(NetworkError::BoundaryOffPerimeter(b, d));
            }
        }

        let diameter = polygon_diameter(&self.bounds);
        let mut net = StreetNetwork {
            nodes,
            adjacency,
            edges,
            stations,
            station_at_node,
            boundary,
            bounds: self.bounds.clone(),
            diameter,
            trees: (0..n).map(|_| OnceLock::new()).collect(),
            station_distances: Vec::new(),
        };
        net.check_connected()?;
        net.station_distances = net.compute_station_distances();
        Ok(net)
    }
}

/// Immutable street graph; see module docs.
#[derive(Clone, Debug)]
pub struct StreetNetwork {
    nodes: Vec<Node>,
    adjacency: Vec<Vec<(NodeId, f64)>>,
    edges: Vec<Edge>,
    stations: Vec<Station>,
    station_at_node: Vec<Option<usize>>,
    boundary: Vec<NodeId>,
    bounds: Vec<Point>,
    diameter: f64,
    trees: Vec<OnceLock<Arc<[f64]>>>,
    station_distances: Vec<f64>,
}

impl StreetNetwork {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, id: NodeId) -> &[(NodeId, f64)] {
        &self.adjacency[id.index()]
    }

    /// Stations sorted by id.
    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn station_ids(&self) -> Vec<StationId> {
        self.stations.iter().map(|s| s.id).collect()
    }

    /// Index of the station located at `node`, in [`stations`](Self::stations) order.
    pub fn station_at(&self, node: NodeId) -> Option<usize> {
        self.station_at_node.get(node.index()).copied().flatten()
    }

    pub fn station_index(&self, id: StationId) -> Option<usize> {
        self.stations.binary_search_by_key(&id, |s| s.id).ok()
    }

    /// Boundary entry points (the set `I`), sorted by node id.
    pub fn boundary_points(&self) -> &[NodeId] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: NodeId) -> bool {
        self.boundary.binary_search(&node).is_ok()
    }

    pub fn bounds(&self) -> &[Point] {
        &self.bounds
    }

    /// Largest distance between two vertices of the district polygon.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn position(&self, id: NodeId) -> Point {
        self.nodes[id.index()].position
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    /// Euclidean snap of an off-network point; ties by smallest node id.
    pub fn snap(&self, p: Point) -> NodeId {
        let mut best = (NodeId(0), f64::INFINITY);
        for node in &self.nodes {
            let d = node.position.distance_sq(p);
            if d < best.1 {
                best = (node.id, d);
            }
        }
        best.0
    }

    /// Distances from `source` to every node (infinite when unreachable). Cached.
    pub fn distances_from(&self, source: NodeId) -> Arc<[f64]> {
        self.trees[source.index()]
            .get_or_init(|| dijkstra(&self.adjacency, source).into())
            .clone()
    }

    /// Network distance; exactly symmetric in its arguments.
    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        if a == b {
            return 0.0;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.distances_from(lo)[hi.index()]
    }

    /// Minimal-length path; among equal-length paths the lexicographically smallest node sequence.
    pub fn shortest_path(&self, from: NodeId, to: NodeId) -> Result<Path, NetworkError> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(NetworkError::UnknownNode(id));
            }
        }
        if from == to {
            return Ok(Path {
                nodes: vec![from],
                length: 0.0,
            });
        }
        let to_target = self.distances_from(to);
        if !to_target[from.index()].is_finite() {
            return Err(NetworkError::UnreachableNode { from, to });
        }
        let mut nodes = vec![from];
        let mut length = 0.0;
        let mut current = from;
        while current != to {
            let remaining = to_target[current.index()];
            let slack = PATH_EPS * remaining.max(1.0);
            // Adjacency is sorted by id, so the first tight edge is the smallest next node.
            let (next, edge) = self.adjacency[current.index()]
                .iter()
                .copied()
                .find(|&(w, len)| (len + to_target[w.index()] - remaining).abs() <= slack)
                .expect("a finite distance implies a tight outgoing edge");
            nodes.push(next);
            length += edge;
            current = next;
        }
        Ok(Path { nodes, length })
    }

    /// Closest station (network distance from `from`) satisfying `pred`; ties by smallest id.
    pub fn nearest_station_from<F>(&self, from: NodeId, mut pred: F) -> Option<&Station>
    where
        F: FnMut(&Station) -> bool,
    {
        let mut best: Option<(&Station, f64)> = None;
        for s in &self.stations {
            if !pred(s) {
                continue;
            }
            let d = self.distance(from, s.node);
            if !d.is_finite() {
                continue;
            }
            // Stations are visited in id order, so strict improvement keeps the smallest id.
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((s, d));
            }
        }
        best.map(|(s, _)| s)
    }

    pub fn nearest_station<F>(&self, point: Point, pred: F) -> Option<&Station>
    where
        F: FnMut(&Station) -> bool,
    {
        self.nearest_station_from(self.snap(point), pred)
    }

    /// Station ids within network distance `radius` of `from`, minus `exclude`, sorted by id.
    pub fn stations_within_from(
        &self,
        from: NodeId,
        radius: f64,
        exclude: &BTreeSet<StationId>,
    ) -> Vec<StationId> {
        self.stations
            .iter()
            .filter(|s| !exclude.contains(&s.id) && self.distance(from, s.node) <= radius)
            .map(|s| s.id)
            .collect()
    }

    pub fn stations_within(
        &self,
        point: Point,
        radius: f64,
        exclude: &BTreeSet<StationId>,
    ) -> Vec<StationId> {
        self.stations_within_from(self.snap(point), radius, exclude)
    }

    /// Precomputed network distance between stations `i` and `j` (indices in id order).
    pub fn station_distance(&self, i: usize, j: usize) -> f64 {
        self.station_distances[i * self.stations.len() + j]
    }

    /// Row-major |S|×|S| station distance matrix.
    pub fn station_distance_matrix(&self) -> &[f64] {
        &self.station_distances
    }

    fn compute_station_distances(&self) -> Vec<f64> {
        let m = self.stations.len();
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let d = self.distance(self.stations[i].node, self.stations[j].node);
                out[i * m + j] = d;
                out[j * m + i] = d;
            }
        }
        out
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let mut anchors: Vec<NodeId> = self.stations.iter().map(|s| s.node).collect();
        anchors.extend(self.boundary.iter().copied());
        anchors.sort();
        let Some(&first) = anchors.first() else {
            return Ok(());
        };
        let reach = self.distances_from(first);
        match anchors.iter().find(|a| !reach[a.index()].is_finite()) {
            Some(&a) => Err(NetworkError::Disconnected(a)),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adjacency: &[Vec<(NodeId, f64)>], source: NodeId) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source.index()] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        if d > dist[node.index()] {
            continue;
        }
        for &(next, len) in &adjacency[node.index()] {
            let nd = d + len;
            if nd < dist[next.index()] {
                dist[next.index()] = nd;
                heap.push(HeapEntry {
                    dist: nd,
                    node: next,
                });
            }
        }
    }
    dist
}

fn nearest_by_euclid(points: &[Point], p: Point) -> Option<(NodeId, f64)> {
    let mut best: Option<(NodeId, f64)> = None;
    for (i, q) in points.iter().enumerate() {
        let d = q.distance_sq(p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((NodeId(i as u32), d));
        }
    }
    best.map(|(id, d)| (id, d.sqrt()))
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len_sq = dx * dx + dy * dy;
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len_sq).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

pub(crate) fn distance_to_perimeter(polygon: &[Point], p: Point) -> f64 {
    (0..polygon.len())
        .map(|i| segment_distance(p, polygon[i], polygon[(i + 1) % polygon.len()]))
        .fold(f64::INFINITY, f64::min)
}

/// Even-odd rule; points on the perimeter count as inside.
pub fn point_in_polygon(polygon: &[Point], p: Point) -> bool {
    if distance_to_perimeter(polygon, p) <= 1e-9 {
        return true;
    }
    let mut inside = false;
    let n = polygon.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn polygon_diameter(polygon: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in polygon.iter().enumerate() {
        for b in &polygon[i + 1..] {
            best = best.max(a.distance(*b));
        }
    }
    best
}

/// Square lattice helper used by tests and the synthetic scenario generator.
///
/// Nodes are numbered row-major from the south-west corner; `side` is the full extent in meters.
pub fn grid_builder(cols: usize, rows: usize, side: f64) -> NetworkBuilder {
    let mut b = NetworkBuilder::new();
    let dx = side / (cols.max(2) - 1) as f64;
    let dy = side / (rows.max(2) - 1) as f64;
    for r in 0..rows {
        for c in 0..cols {
            b.add_node(Point::new(c as f64 * dx, r as f64 * dy));
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let id = NodeId((r * cols + c) as u32);
            if c + 1 < cols {
                b.add_edge(id, NodeId((r * cols + c + 1) as u32));
            }
            if r + 1 < rows {
                b.add_edge(id, NodeId(((r + 1) * cols + c) as u32));
            }
        }
    }
    b.bounds(vec![
        Point::new(0.0, 0.0),
        Point::new(side, 0.0),
        Point::new(side, side),
        Point::new(0.0, side),
    ]);
    b
}
