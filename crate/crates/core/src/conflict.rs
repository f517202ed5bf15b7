//! Transaction conflict graphs and greedy coloring.
//!
//! Vertex order is the order transactions entered the pending queue; the
//! greedy pass assigns each vertex the smallest color not used by an earlier
//! neighbor, so the number of colors is the serial length of the batch.

use std::collections::BTreeMap;

use crate::types::{AccountId, Transaction, TxnId};

/// True when some account is touched by both and at least one side writes it.
pub fn conflicts(a: &Transaction, b: &Transaction) -> bool {
    // accesses are sorted by account: merge-walk
    let (mut i, mut j) = (0, 0);
    while i < a.accesses.len() && j < b.accesses.len() {
        let (x, y) = (&a.accesses[i], &b.accesses[j]);
        match x.account.cmp(&y.account) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let acct = x.account;
                let aw = a.accesses[i..].iter().take_while(|z| z.account == acct).any(|z| z.is_write());
                let bw = b.accesses[j..].iter().take_while(|z| z.account == acct).any(|z| z.is_write());
                if aw || bw {
                    return true;
                }
                while i < a.accesses.len() && a.accesses[i].account == acct {
                    i += 1;
                }
                while j < b.accesses.len() && b.accesses[j].account == acct {
                    j += 1;
                }
            }
        }
    }
    false
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConflictGraph {
    vertices: Vec<TxnId>,
    adjacency: Vec<Vec<usize>>,
    /// Scheduling version this graph was frozen under, if any.
    pub version: Option<u64>,
}

impl ConflictGraph {
    /// Builds the graph over `txns` in the given order.
    pub fn build<'a, I>(txns: I) -> Self
    where
        I: IntoIterator<Item = &'a Transaction>,
    {
        let txns: Vec<&Transaction> = txns.into_iter().collect();
        let n = txns.len();
        let mut adjacency = vec![Vec::new(); n];

        // index by account to avoid testing every pair
        let mut by_account: BTreeMap<AccountId, Vec<usize>> = BTreeMap::new();
        for (i, t) in txns.iter().enumerate() {
            let mut last = None;
            for a in &t.accesses {
                if last != Some(a.account) {
                    by_account.entry(a.account).or_default().push(i);
                    last = Some(a.account);
                }
            }
        }
        for users in by_account.values() {
            for (x, &i) in users.iter().enumerate() {
                for &j in &users[x + 1..] {
                    if !adjacency[i].contains(&j) && conflicts(txns[i], txns[j]) {
                        adjacency[i].push(j);
                        adjacency[j].push(i);
                    }
                }
            }
        }
        for row in &mut adjacency {
            row.sort_unstable();
        }
        Self { vertices: txns.iter().map(|t| t.id).collect(), adjacency, version: None }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[TxnId] {
        &self.vertices
    }

    /// Neighbors of vertex `i` by position.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Graph from a bare adjacency list, for tests and oracles.
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Self {
        let vertices = (0..adjacency.len() as u64).map(TxnId).collect();
        let mut adjacency = adjacency;
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
        }
        Self { vertices, adjacency, version: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Coloring {
    /// Color per vertex position.
    pub colors: Vec<u32>,
    pub lambda: u32,
}

impl Coloring {
    pub fn color_of(&self, i: usize) -> u32 {
        self.colors[i]
    }

    /// Vertex positions grouped by color, ascending color then vertex order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.lambda as usize];
        for (i, &c) in self.colors.iter().enumerate() {
            out[c as usize].push(i);
        }
        out
    }

    pub fn is_proper(&self, g: &ConflictGraph) -> bool {
        (0..g.len()).all(|i| g.neighbors(i).iter().all(|&j| self.colors[i] != self.colors[j]))
    }
}

pub fn greedy_color(g: &ConflictGraph) -> Coloring {
    let n = g.len();
    let mut colors = vec![u32::MAX; n];
    let mut lambda = 0;
    let mut taken = Vec::new();
    for i in 0..n {
        taken.clear();
        taken.resize(g.neighbors(i).len() + 1, false);
        for &j in g.neighbors(i) {
            let c = colors[j];
            if (c as usize) < taken.len() {
                taken[c as usize] = true;
            }
        }
        let c = taken.iter().position(|&t| !t).unwrap() as u32;
        colors[i] = c;
        lambda = lambda.max(c + 1);
    }
    Coloring { colors, lambda }
}
