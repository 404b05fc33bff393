//! Undirected graphs, the elimination bound on map sparsity, and orderings.
//!
//! Nodes are `0..d` internally. Use [`UndirectedGraph::from_one_based`] and
//! [`UndirectedGraph::to_one_based`] at file and CLI boundaries.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::transport::SparsityPattern;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndirectedGraph {
    d: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl UndirectedGraph {
    pub fn empty(d: usize) -> Self {
        UndirectedGraph { d, edges: BTreeSet::new() }
    }

    pub fn complete(d: usize) -> Self {
        let edges = (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
        UndirectedGraph { d, edges }
    }

    /// `0 − 1 − … − (d−1)`.
    pub fn chain(d: usize) -> Self {
        UndirectedGraph { d, edges: (1..d).map(|i| (i - 1, i)).collect() }
    }

    /// Node 0 joined to every other node.
    pub fn star(d: usize) -> Self {
        UndirectedGraph { d, edges: (1..d).map(|i| (0, i)).collect() }
    }

    pub fn from_edges<I: IntoIterator<Item = (usize, usize)>>(d: usize, edges: I) -> Result<Self> {
        let mut g = UndirectedGraph::empty(d);
        for (i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    pub fn from_one_based<I: IntoIterator<Item = (usize, usize)>>(d: usize, edges: I) -> Result<Self> {
        let mut g = UndirectedGraph::empty(d);
        for (i, j) in edges {
            if i == 0 || j == 0 {
                return Err(Error::InvalidParameter("one-based node labels start at 1"));
            }
            g.add_edge(i - 1, j - 1)?;
        }
        Ok(g)
    }

    pub fn to_one_based(&self) -> Vec<[usize; 2]> {
        self.edges.iter().map(|&(i, j)| [i + 1, j + 1]).collect()
    }

    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        if i == j {
            return Err(Error::InvalidParameter("self-loops are not allowed"));
        }
        if i >= self.d || j >= self.d {
            return Err(Error::InvalidParameter("edge endpoint outside the graph"));
        }
        self.edges.insert((i.min(j), i.max(j)));
        Ok(())
    }

    pub fn remove_edge(&mut self, i: usize, j: usize) -> bool {
        self.edges.remove(&(i.min(j), i.max(j)))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical pairs `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(i, j)| if i == v { Some(j) } else if j == v { Some(i) } else { None })
            .collect()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(i, j)| i == v || j == v).count()
    }

    /// `d × d` 0/1 adjacency matrix, row-major.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.d]; self.d];
        for &(i, j) in &self.edges {
            a[i][j] = 1;
            a[j][i] = 1;
        }
        a
    }

    fn adjacency_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.d];
        for &(i, j) in &self.edges {
            adj[i].insert(j);
            adj[j].insert(i);
        }
        adj
    }
}

/// A relabeling: `perm[new_position] = old_node`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Ordering {
    perm: Vec<usize>,
}

impl Ordering {
    pub fn identity(d: usize) -> Self {
        Ordering { perm: (0..d).collect() }
    }

    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::InvalidParameter("ordering is not a permutation"));
            }
            seen[p] = true;
        }
        Ok(Ordering { perm })
    }

    pub fn from_one_based(perm: &[usize]) -> Result<Self> {
        if perm.contains(&0) {
            return Err(Error::InvalidParameter("one-based node labels start at 1"));
        }
        Ordering::new(perm.iter().map(|p| p - 1).collect())
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    /// `inverse()[old_node] = new_position`.
    pub fn inverse(&self) -> Ordering {
        let mut inv = vec![0; self.perm.len()];
        for (new, &old) in self.perm.iter().enumerate() {
            inv[old] = new;
        }
        Ordering { perm: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}

impl TryFrom<Vec<usize>> for Ordering {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Ordering::new(v)
    }
}

impl From<Ordering> for Vec<usize> {
    fn from(o: Ordering) -> Self {
        o.perm
    }
}

/// The graph with old node `perm[p]` renamed `p`.
pub fn relabel(g: &UndirectedGraph, o: &Ordering) -> Result<UndirectedGraph> {
    if o.len() != g.d {
        return Err(Error::DimensionMismatch { expected: g.d, found: o.len() });
    }
    let pos = o.inverse();
    UndirectedGraph::from_edges(g.d, g.edges().map(|(i, j)| (pos.perm[i], pos.perm[j])))
}

/// Pairs `(j, k)` that the elimination argument guarantees to be absent from
/// component `k`: eliminate nodes `d−1, …, 0` in turn, recording the
/// non-neighbors of each and joining its neighbors into a clique.
pub fn sparsity_bound(g: &UndirectedGraph) -> SparsityPattern {
    let mut adj = g.adjacency_sets();
    let mut pairs = Vec::new();
    for k in (0..g.d).rev() {
        let nb: Vec<usize> = adj[k].iter().copied().filter(|&j| j < k).collect();
        pairs.extend((0..k).filter(|j| !adj[k].contains(j)).map(|j| (j, k)));
        for &a in &nb {
            adj[a].remove(&k);
            for &b in &nb {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        adj[k].clear();
    }
    SparsityPattern::from_pairs(g.d, pairs).expect("pairs are canonical by construction")
}

/// Minimum-degree elimination order (ties broken toward the larger index),
/// reversed so the first-eliminated node sits in the last position.
pub fn reverse_cholesky_ordering(g: &UndirectedGraph) -> Ordering {
    let mut adj = g.adjacency_sets();
    let mut alive = vec![true; g.d];
    let mut eliminated = Vec::with_capacity(g.d);
    for _ in 0..g.d {
        let v = (0..g.d)
            .filter(|&v| alive[v])
            .min_by(|&a, &b| adj[a].len().cmp(&adj[b].len()).then(b.cmp(&a)))
            .expect("a live node remains");
        let nb: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nb {
            adj[a].remove(&v);
            for &b in &nb {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        adj[v].clear();
        alive[v] = false;
        eliminated.push(v);
    }
    eliminated.reverse();
    Ordering { perm: eliminated }
}

/// `(|Ê \ E|, |E \ Ê|)`: false positives and false negatives.
pub fn edge_errors(truth: &UndirectedGraph, estimate: &UndirectedGraph) -> Result<(usize, usize)> {
    if truth.d != estimate.d {
        return Err(Error::DimensionMismatch { expected: truth.d, found: estimate.d });
    }
    let type1 = estimate.edges.difference(&truth.edges).count();
    let type2 = truth.edges.difference(&estimate.edges).count();
    Ok((type1, type2))
}
