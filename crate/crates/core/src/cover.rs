//! Layered sparse cover of the shard graph.
//!
//! Layer 0 holds one singleton cluster per shard. Layer `i >= 1` covers every
//! `2^(i-1)`-ball: balls are grown around seeds while their size keeps doubling,
//! the grown ball becomes a cluster, and every ball centered in its core is
//! retired. Overlapping clusters of a layer are then split into sublayers by
//! greedy coloring of the intersection graph, so each sublayer is a partition
//! of a subset of shards.
//!
//! Heights `(layer, sublayer)` are ordered lexicographically. Besides the
//! adjacent-height parent/child relation, each shard has a *chain*: the
//! clusters that contain it, sorted by height. Schedule control for a shard
//! moves only along its chain.

use std::collections::BTreeSet;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::CoverError;
use crate::topology::ShardGraph;
use crate::types::{ClusterId, ShardId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Height {
    pub layer: u32,
    pub sublayer: u32,
}

impl Height {
    pub const BOTTOM: Height = Height { layer: 0, sublayer: 0 };
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub height: Height,
    pub members: BTreeSet<ShardId>,
    pub leader: ShardId,
    /// `2^(layer-1)` for layer >= 1, 0 for layer 0.
    pub radius: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredConstants {
    pub c_diam: Rational64,
    pub c_overlap: Rational64,
    /// Number of layers.
    pub layers: u32,
    /// Largest sublayer count over all layers.
    pub max_sublayers: u32,
}

impl MeasuredConstants {
    /// Stand-in for `c1 * log D * log s` in the multi-leader bounds.
    pub fn overhead(&self) -> u64 {
        u64::from(self.layers) * u64::from(self.max_sublayers)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterHierarchy {
    clusters: Vec<Cluster>,
    /// layer -> sublayer -> cluster ids
    layers: Vec<Vec<Vec<ClusterId>>>,
    /// shard -> layer -> clusters containing the shard
    membership: Vec<Vec<Vec<ClusterId>>>,
    parents: Vec<Vec<ClusterId>>,
    children: Vec<Vec<ClusterId>>,
    /// shard -> clusters containing it, ascending height
    chains: Vec<Vec<ClusterId>>,
    /// position of each cluster in each member's chain, keyed (cluster, shard)
    chain_pos: Vec<Vec<(ShardId, usize)>>,
}

pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Number of layers: one more than the textbook count so the top layer
/// contains every diameter-sized neighborhood.
pub fn layer_count(diameter: u32) -> u32 {
    ceil_log2(u64::from(diameter.max(1))) + 2
}

struct Proto {
    layer: u32,
    members: BTreeSet<ShardId>,
}

/// Builds the full hierarchy. Always succeeds on a connected graph.
pub fn build_hierarchy(g: &ShardGraph) -> ClusterHierarchy {
    let s = g.shard_count();
    let layer_total = layer_count(g.diameter());

    // layer -> list of (sublayer, members)
    let mut per_layer: Vec<Vec<(u32, BTreeSet<ShardId>)>> = Vec::new();
    per_layer.push(g.shards().map(|v| (0, BTreeSet::from([v]))).collect());

    for layer in 1..layer_total {
        let radius = 1u64 << (layer - 1);
        let protos = carve_layer(g, layer, radius);
        let colors = color_overlaps(&protos);
        per_layer.push(protos.into_iter().zip(colors).map(|(p, c)| (c, p.members)).collect());
    }

    // ids ascend with height, then carving order
    let mut clusters = Vec::new();
    let mut layers = Vec::new();
    for (layer, protos) in per_layer.into_iter().enumerate() {
        let layer = layer as u32;
        let radius = if layer == 0 { 0 } else { 1u64 << (layer - 1) };
        let sublayers = protos.iter().map(|(c, _)| c + 1).max().unwrap_or(1);
        let mut by_sub = vec![Vec::new(); sublayers as usize];
        for sub in 0..sublayers {
            for (c, members) in protos.iter().filter(|(c, _)| *c == sub) {
                let id = ClusterId(clusters.len() as u32);
                let leader = members
                    .iter()
                    .copied()
                    .find(|&m| g.ball(m, radius).is_subset(members))
                    .expect("carved clusters contain their seed ball");
                clusters.push(Cluster {
                    id,
                    height: Height { layer, sublayer: *c },
                    members: members.clone(),
                    leader,
                    radius,
                });
                by_sub[sub as usize].push(id);
            }
        }
        layers.push(by_sub);
    }

    let mut membership = vec![vec![Vec::new(); layers.len()]; s as usize];
    let mut chains = vec![Vec::new(); s as usize];
    for c in &clusters {
        for m in &c.members {
            membership[m.index()][c.height.layer as usize].push(c.id);
            chains[m.index()].push(c.id);
        }
    }
    let mut chain_pos = vec![Vec::new(); clusters.len()];
    for (shard, chain) in chains.iter().enumerate() {
        for (pos, c) in chain.iter().enumerate() {
            chain_pos[c.0 as usize].push((ShardId(shard as u32), pos));
        }
    }

    let heights: Vec<Height> = {
        let set: BTreeSet<Height> = clusters.iter().map(|c| c.height).collect();
        set.into_iter().collect()
    };
    let at_height = |h: Height| clusters.iter().filter(move |c| c.height == h);
    let mut parents = vec![Vec::new(); clusters.len()];
    let mut children = vec![Vec::new(); clusters.len()];
    for w in heights.windows(2) {
        for lo in at_height(w[0]) {
            for hi in at_height(w[1]) {
                if !lo.members.is_disjoint(&hi.members) {
                    parents[lo.id.0 as usize].push(hi.id);
                    children[hi.id.0 as usize].push(lo.id);
                }
            }
        }
    }

    ClusterHierarchy { clusters, layers, membership, parents, children, chains, chain_pos }
}

/// Ball growing with geometric stopping over every not-yet-retired center.
fn carve_layer(g: &ShardGraph, layer: u32, radius: u64) -> Vec<Proto> {
    let mut retired = vec![false; g.shard_count() as usize];
    let mut out = Vec::new();
    for seed in g.shards() {
        if retired[seed.index()] {
            continue;
        }
        let mut m = 0u64;
        let (core, grown) = loop {
            let inner = g.ball(seed, radius * m);
            let outer = g.ball(seed, radius * (m + 1));
            if outer.len() < 2 * inner.len() {
                break (inner, outer);
            }
            m += 1;
        };
        for c in &core {
            retired[c.index()] = true;
        }
        out.push(Proto { layer, members: grown });
    }
    out
}

fn color_overlaps(protos: &[Proto]) -> Vec<u32> {
    let mut colors: Vec<u32> = Vec::with_capacity(protos.len());
    for (i, p) in protos.iter().enumerate() {
        let used: BTreeSet<u32> = (0..i)
            .filter(|&j| !protos[j].members.is_disjoint(&p.members))
            .map(|j| colors[j])
            .collect();
        let c = (0..).find(|c| !used.contains(c)).unwrap();
        debug_assert!(protos.iter().all(|q| q.layer == p.layer));
        colors.push(c);
    }
    colors
}

impl ClusterHierarchy {
    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: ClusterId) -> &Cluster {
        &self.clusters[id.0 as usize]
    }

    pub fn layer_count(&self) -> u32 {
        self.layers.len() as u32
    }

    pub fn sublayers(&self, layer: u32) -> &[Vec<ClusterId>] {
        &self.layers[layer as usize]
    }

    pub fn max_sublayers(&self) -> u32 {
        self.layers.iter().map(|l| l.len() as u32).max().unwrap_or(1)
    }

    /// Clusters containing `shard` at `layer`.
    pub fn membership(&self, shard: ShardId, layer: u32) -> &[ClusterId] {
        &self.membership[shard.index()][layer as usize]
    }

    pub fn parents(&self, c: ClusterId) -> &[ClusterId] {
        &self.parents[c.0 as usize]
    }

    pub fn children(&self, c: ClusterId) -> &[ClusterId] {
        &self.children[c.0 as usize]
    }

    pub fn singleton(&self, shard: ShardId) -> ClusterId {
        // layer-0 ids equal shard ids
        ClusterId(shard.0)
    }

    pub fn is_bottom(&self, c: ClusterId) -> bool {
        self.cluster(c).height == Height::BOTTOM
    }

    /// Clusters containing `shard`, ascending height.
    pub fn chain(&self, shard: ShardId) -> &[ClusterId] {
        &self.chains[shard.index()]
    }

    fn chain_index(&self, c: ClusterId, shard: ShardId) -> Option<usize> {
        self.chain_pos[c.0 as usize].iter().find(|(s, _)| *s == shard).map(|&(_, p)| p)
    }

    /// Next cluster below `c` on `shard`'s chain.
    pub fn chain_child(&self, c: ClusterId, shard: ShardId) -> Option<ClusterId> {
        let pos = self.chain_index(c, shard)?;
        pos.checked_sub(1).map(|p| self.chains[shard.index()][p])
    }

    /// Next cluster above `c` on `shard`'s chain.
    pub fn chain_parent(&self, c: ClusterId, shard: ShardId) -> Option<ClusterId> {
        let pos = self.chain_index(c, shard)?;
        self.chains[shard.index()].get(pos + 1).copied()
    }

    /// Structural constants; the cover-quality ratios come from [`validate_cover`].
    pub fn structure(&self) -> (u32, u32) {
        (self.layer_count(), self.max_sublayers())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.clusters
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "id": c.id.0,
                        "height": [c.height.layer, c.height.sublayer],
                        "members": c.members.iter().map(|m| m.0).collect::<Vec<_>>(),
                        "leader": c.leader.0,
                    })
                })
                .collect(),
        )
    }
}

/// Lowest-height cluster holding the full `z`-neighborhood of `home`, where
/// `z` is the farthest destination. Intra-shard work stays at the singleton.
pub fn home_cluster(
    h: &ClusterHierarchy,
    home: ShardId,
    dests: &BTreeSet<ShardId>,
    g: &ShardGraph,
) -> ClusterId {
    let z = dests.iter().map(|&d| g.dist(home, d)).max().unwrap_or(0);
    if z == 0 {
        return h.singleton(home);
    }
    let ball = g.ball(home, u64::from(z));
    // A cluster holding the ball contains `home`, and at most one cluster per
    // height contains `home`, so walking the chain visits candidates in order.
    h.chain(home)
        .iter()
        .copied()
        .find(|&c| ball.is_subset(&h.cluster(c).members))
        .expect("top layer covers every diameter-sized neighborhood")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoverReport {
    /// Largest induced cluster diameter per layer.
    pub layer_max_diameter: Vec<u32>,
    /// Largest per-shard membership count per layer.
    pub layer_max_membership: Vec<u32>,
    /// layer -> shard -> a cluster containing the shard's neighborhood (layer >= 1).
    pub witnesses: Vec<Vec<(ShardId, ClusterId)>>,
    pub constants: MeasuredConstants,
    pub passed: bool,
}

/// Checks the three cover properties and structural invariants, and measures
/// the constants that replace the asymptotic ones in the bound formulas.
pub fn validate_cover(h: &ClusterHierarchy, g: &ShardGraph) -> Result<CoverReport, CoverError> {
    let s = g.shard_count();
    let log_s = i64::from(ceil_log2(u64::from(s)).max(1));
    let mut layer_max_diameter = Vec::new();
    let mut layer_max_membership = Vec::new();
    let mut witnesses = Vec::new();
    let mut c_diam = Rational64::from_integer(0);
    let mut c_overlap = Rational64::from_integer(0);

    for c in &h.clusters {
        if !c.members.contains(&c.leader) || !g.ball(c.leader, c.radius).is_subset(&c.members) {
            return Err(CoverError::LeaderNeighborhood(c.id));
        }
    }

    for (layer, subs) in h.layers.iter().enumerate() {
        let layer = layer as u32;
        for (j, sub) in subs.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &cid in sub {
                for &m in &h.cluster(cid).members {
                    if !seen.insert(m) {
                        return Err(CoverError::SublayerOverlap { layer, sublayer: j as u32, shard: m });
                    }
                }
            }
        }

        let mut max_d = 0;
        for &cid in subs.iter().flatten() {
            let d = g.induced_diameter(&h.cluster(cid).members).ok_or(CoverError::Disconnected(cid))?;
            max_d = max_d.max(d);
        }
        layer_max_diameter.push(max_d);
        let max_m = g.shards().map(|v| h.membership(v, layer).len() as u32).max().unwrap_or(0);
        layer_max_membership.push(max_m);

        if layer == 0 {
            witnesses.push(Vec::new());
            continue;
        }
        let radius = 1u64 << (layer - 1);
        let mut wit = Vec::new();
        for v in g.shards() {
            let ball = g.ball(v, radius);
            let found = h
                .membership(v, layer)
                .iter()
                .copied()
                .find(|&cid| ball.is_subset(&h.cluster(cid).members))
                .ok_or(CoverError::Uncovered { layer, radius, shard: v })?;
            wit.push((v, found));
        }
        witnesses.push(wit);

        let scale = (1i64 << layer) * log_s;
        c_diam = c_diam.max(Rational64::new(i64::from(max_d), scale));
        c_overlap = c_overlap.max(Rational64::new(i64::from(max_m), log_s));
    }

    Ok(CoverReport {
        layer_max_diameter,
        layer_max_membership,
        witnesses,
        constants: MeasuredConstants {
            c_diam,
            c_overlap,
            layers: h.layer_count(),
            max_sublayers: h.max_sublayers(),
        },
        passed: true,
    })
}
