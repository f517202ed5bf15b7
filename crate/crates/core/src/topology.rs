//! The shard graph: standard topologies, all-pairs hop distances, diameter.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TopologyError;
use crate::types::ShardId;

/// Draws attempted before a random graph is rejected as disconnected.
pub const RANDOM_RETRY_CAP: u32 = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TopologySpec {
    Clique { shards: u32 },
    Line { shards: u32 },
    Ring { shards: u32 },
    Grid { rows: u32, cols: u32 },
    RandomConnected { shards: u32, edge_prob: f64, seed: u64 },
}

impl TopologySpec {
    pub fn shard_count(&self) -> u32 {
        match *self {
            TopologySpec::Clique { shards }
            | TopologySpec::Line { shards }
            | TopologySpec::Ring { shards }
            | TopologySpec::RandomConnected { shards, .. } => shards,
            TopologySpec::Grid { rows, cols } => rows * cols,
        }
    }
}

/// Immutable after construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardGraph {
    adjacency: Vec<Vec<ShardId>>,
    dist: Vec<Vec<u32>>,
    diameter: u32,
}

impl ShardGraph {
    /// Builds from an explicit edge list. Fails when the graph is disconnected.
    pub fn from_edges(shards: u32, edges: &[(u32, u32)]) -> Result<Self, TopologyError> {
        if shards == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        let n = shards as usize;
        let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= shards {
                return Err(TopologyError::UnknownShard(ShardId(a)));
            }
            if b >= shards {
                return Err(TopologyError::UnknownShard(ShardId(b)));
            }
            if a != b {
                adj[a as usize].insert(b);
                adj[b as usize].insert(a);
            }
        }
        let adjacency: Vec<Vec<ShardId>> =
            adj.into_iter().map(|s| s.into_iter().map(ShardId).collect()).collect();
        let dist: Vec<Vec<u32>> = (0..n).map(|src| bfs(&adjacency, src)).collect();
        if dist.iter().any(|row| row.contains(&u32::MAX)) {
            return Err(TopologyError::Disconnected { shards, attempts: 1 });
        }
        let diameter = dist.iter().flat_map(|r| r.iter().copied()).max().unwrap_or(0);
        Ok(Self { adjacency, dist, diameter })
    }

    pub fn shard_count(&self) -> u32 {
        self.adjacency.len() as u32
    }

    pub fn shards(&self) -> impl Iterator<Item = ShardId> {
        (0..self.shard_count()).map(ShardId)
    }

    pub fn neighbors(&self, s: ShardId) -> &[ShardId] {
        &self.adjacency[s.index()]
    }

    pub fn diameter(&self) -> u32 {
        self.diameter
    }

    pub fn contains(&self, s: ShardId) -> bool {
        s.0 < self.shard_count()
    }

    /// Hop distance between two shards.
    pub fn distance(&self, a: ShardId, b: ShardId) -> Result<u32, TopologyError> {
        if !self.contains(a) {
            return Err(TopologyError::UnknownShard(a));
        }
        if !self.contains(b) {
            return Err(TopologyError::UnknownShard(b));
        }
        Ok(self.dist[a.index()][b.index()])
    }

    /// Unchecked variant for hot paths; panics on out-of-range ids.
    pub fn dist(&self, a: ShardId, b: ShardId) -> u32 {
        self.dist[a.index()][b.index()]
    }

    /// All shards within `radius` hops of `center`, ascending.
    pub fn ball(&self, center: ShardId, radius: u64) -> BTreeSet<ShardId> {
        self.dist[center.index()]
            .iter()
            .enumerate()
            .filter(|(_, &d)| u64::from(d) <= radius)
            .map(|(i, _)| ShardId(i as u32))
            .collect()
    }

    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (a, ns) in self.adjacency.iter().enumerate() {
            for b in ns {
                if (a as u32) < b.0 {
                    out.push((a as u32, b.0));
                }
            }
        }
        out
    }

    /// Diameter of the subgraph induced on `members`; `None` when it is disconnected.
    pub fn induced_diameter(&self, members: &BTreeSet<ShardId>) -> Option<u32> {
        let mut worst = 0;
        for &src in members {
            let mut seen = vec![u32::MAX; self.adjacency.len()];
            let mut q = VecDeque::from([src]);
            seen[src.index()] = 0;
            while let Some(u) = q.pop_front() {
                for &v in &self.adjacency[u.index()] {
                    if members.contains(&v) && seen[v.index()] == u32::MAX {
                        seen[v.index()] = seen[u.index()] + 1;
                        q.push_back(v);
                    }
                }
            }
            for m in members {
                let d = seen[m.index()];
                if d == u32::MAX {
                    return None;
                }
                worst = worst.max(d);
            }
        }
        Some(worst)
    }
}

fn bfs(adjacency: &[Vec<ShardId>], src: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; adjacency.len()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for v in &adjacency[u] {
            if dist[v.index()] == u32::MAX {
                dist[v.index()] = dist[u] + 1;
                q.push_back(v.index());
            }
        }
    }
    dist
}

/// Builds one of the standard topologies.
pub fn build_graph(spec: &TopologySpec) -> Result<ShardGraph, TopologyError> {
    match *spec {
        TopologySpec::Clique { shards } => {
            let mut edges = Vec::new();
            for a in 0..shards {
                for b in a + 1..shards {
                    edges.push((a, b));
                }
            }
            ShardGraph::from_edges(shards, &edges)
        }
        TopologySpec::Line { shards } => {
            let edges: Vec<_> = (1..shards).map(|i| (i - 1, i)).collect();
            ShardGraph::from_edges(shards, &edges)
        }
        TopologySpec::Ring { shards } => {
            let mut edges: Vec<_> = (1..shards).map(|i| (i - 1, i)).collect();
            if shards > 2 {
                edges.push((shards - 1, 0));
            }
            ShardGraph::from_edges(shards, &edges)
        }
        TopologySpec::Grid { rows, cols } => {
            if rows == 0 || cols == 0 {
                return Err(TopologyError::GridShape { rows, cols, shards: 0 });
            }
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let id = r * cols + c;
                    if c + 1 < cols {
                        edges.push((id, id + 1));
                    }
                    if r + 1 < rows {
                        edges.push((id, id + cols));
                    }
                }
            }
            ShardGraph::from_edges(rows * cols, &edges)
        }
        TopologySpec::RandomConnected { shards, edge_prob, seed } => {
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                return Err(TopologyError::EdgeProbability(edge_prob));
            }
            if shards == 0 {
                return Err(TopologyError::EmptyGraph);
            }
            for attempt in 0..RANDOM_RETRY_CAP {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(attempt)));
                let mut edges = Vec::new();
                for a in 0..shards {
                    for b in a + 1..shards {
                        if rng.gen_bool(edge_prob) {
                            edges.push((a, b));
                        }
                    }
                }
                match ShardGraph::from_edges(shards, &edges) {
                    Ok(g) => return Ok(g),
                    Err(TopologyError::Disconnected { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(TopologyError::Disconnected { shards, attempts: RANDOM_RETRY_CAP })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn floyd_warshall(g: &ShardGraph) -> Vec<Vec<u32>> {
        let n = g.shard_count() as usize;
        let inf = u32::MAX / 2;
        let mut d = vec![vec![inf; n]; n];
        for i in 0..n {
            d[i][i] = 0;
        }
        for (a, b) in g.edges() {
            d[a as usize][b as usize] = 1;
            d[b as usize][a as usize] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    #[test]
    fn clique_distances() {
        let g = build_graph(&TopologySpec::Clique { shards: 4 }).unwrap();
        for a in g.shards() {
            for b in g.shards() {
                assert_eq!(g.distance(a, b).unwrap(), u32::from(a != b));
            }
        }
        assert_eq!(g.diameter(), 1);
        let g3 = build_graph(&TopologySpec::Clique { shards: 3 }).unwrap();
        assert_eq!(g3.distance(ShardId(0), ShardId(1)).unwrap(), 1);
    }

    #[test]
    fn line_distances() {
        let g = build_graph(&TopologySpec::Line { shards: 5 }).unwrap();
        assert_eq!(g.distance(ShardId(0), ShardId(4)).unwrap(), 4);
        assert_eq!(g.diameter(), 4);
        let g4 = build_graph(&TopologySpec::Line { shards: 4 }).unwrap();
        assert_eq!(g4.distance(ShardId(1), ShardId(3)).unwrap(), 2);
    }

    #[test]
    fn ring_of_six_has_diameter_three() {
        let g = build_graph(&TopologySpec::Ring { shards: 6 }).unwrap();
        assert_eq!(g.diameter(), 3);
    }

    #[test]
    fn self_distance_is_zero_and_unknown_shard_rejected() {
        let g = build_graph(&TopologySpec::Grid { rows: 3, cols: 4 }).unwrap();
        for s in g.shards() {
            assert_eq!(g.distance(s, s).unwrap(), 0);
        }
        assert_eq!(g.distance(ShardId(0), ShardId(12)), Err(TopologyError::UnknownShard(ShardId(12))));
        assert_eq!(g.diameter(), 5);
    }

    #[test]
    fn disconnected_edges_rejected() {
        assert!(matches!(
            ShardGraph::from_edges(4, &[(0, 1), (2, 3)]),
            Err(TopologyError::Disconnected { .. })
        ));
    }

    #[test]
    fn sparse_random_draw_gives_up() {
        // p is far below the connectivity threshold for 64 shards
        let spec = TopologySpec::RandomConnected { shards: 64, edge_prob: 0.001, seed: 7 };
        assert_eq!(
            build_graph(&spec),
            Err(TopologyError::Disconnected { shards: 64, attempts: RANDOM_RETRY_CAP })
        );
    }

    #[test]
    fn distances_match_floyd_warshall() {
        let mut specs = vec![
            TopologySpec::Clique { shards: 7 },
            TopologySpec::Line { shards: 9 },
            TopologySpec::Ring { shards: 11 },
            TopologySpec::Grid { rows: 4, cols: 5 },
        ];
        for seed in 0..10 {
            specs.push(TopologySpec::RandomConnected { shards: 8 + 5 * seed as u32, edge_prob: 0.2, seed });
        }
        for spec in specs {
            let g = build_graph(&spec).unwrap();
            let fw = floyd_warshall(&g);
            let mut max = 0;
            for a in g.shards() {
                for b in g.shards() {
                    let d = g.dist(a, b);
                    assert_eq!(d, fw[a.index()][b.index()], "{spec:?}");
                    assert_eq!(d, g.dist(b, a));
                    max = max.max(d);
                    for c in g.shards() {
                        assert!(g.dist(a, c) <= d + g.dist(b, c));
                    }
                }
            }
            assert_eq!(max, g.diameter());
        }
    }

    #[test]
    fn random_graph_is_deterministic() {
        let spec = TopologySpec::RandomConnected { shards: 30, edge_prob: 0.15, seed: 42 };
        assert_eq!(build_graph(&spec).unwrap(), build_graph(&spec).unwrap());
    }
}
