//! Graph data model: full causal DAGs, partial constraint graphs, the input
//! masks derived from them, and cycle detection/repair.
//!
//! Node 0 is always the target feature.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Edge = (usize, usize);

/// Directed acyclic graph over all `d + 1` features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalGraph {
    names: Vec<String>,
    edges: BTreeSet<Edge>,
}

impl CausalGraph {
    pub fn new(names: Vec<String>, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let n = names.len();
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        for &(i, k) in &edges {
            if i >= n || k >= n {
                return Err(Error::Graph(format!("edge ({i},{k}) out of range for {n} nodes")));
            }
            if i == k {
                return Err(Error::Graph(format!("self-loop on node {i}")));
            }
        }
        if !is_acyclic(edges.iter().copied(), n) {
            return Err(Error::Graph("edge set contains a directed cycle".into()));
        }
        Ok(Self { names, edges })
    }

    pub fn empty(names: Vec<String>) -> Self {
        Self {
            names,
            edges: BTreeSet::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, k: usize) -> bool {
        self.edges.contains(&(i, k))
    }

    pub fn parents(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == k).map(|e| e.0)
    }

    /// Copy without the given edges.
    pub fn without_edges(&self, removed: &BTreeSet<Edge>) -> CausalGraph {
        CausalGraph {
            names: self.names.clone(),
            edges: self.edges.difference(removed).copied().collect(),
        }
    }

    /// Restriction to the first `n` nodes (drops edges touching the rest).
    pub fn restricted(&self, n: usize) -> CausalGraph {
        CausalGraph {
            names: self.names[..n.min(self.names.len())].to_vec(),
            edges: self.edges.iter().filter(|e| e.0 < n && e.1 < n).copied().collect(),
        }
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            nodes: self.names.clone(),
            edges: self.edges.iter().map(|&(i, k)| [i, k]).collect(),
            kind: GraphKind::Full,
            known_nodes: None,
        }
    }
}

/// Partial causal knowledge over a subset of nodes.
///
/// For two known nodes, a missing `(i, k)` edge forbids `i → k`. Pairs that
/// involve an unknown node carry no constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialGraph {
    names: Vec<String>,
    known_nodes: BTreeSet<usize>,
    edges: BTreeSet<Edge>,
}

impl PartialGraph {
    pub fn new(names: Vec<String>, known_nodes: impl IntoIterator<Item = usize>, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let n = names.len();
        let known_nodes: BTreeSet<usize> = known_nodes.into_iter().collect();
        if let Some(&bad) = known_nodes.iter().find(|&&v| v >= n) {
            return Err(Error::Graph(format!("known node {bad} out of range for {n} nodes")));
        }
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        for &(i, k) in &edges {
            if i == k {
                return Err(Error::Graph(format!("self-loop on node {i}")));
            }
            if !known_nodes.contains(&i) || !known_nodes.contains(&k) {
                return Err(Error::Graph(format!("edge ({i},{k}) touches a node outside the known set")));
            }
        }
        Ok(Self { names, known_nodes, edges })
    }

    /// Every node known, every off-diagonal pair allowed.
    pub fn complete(names: Vec<String>) -> Self {
        let n = names.len();
        let edges = (0..n).flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k))).collect();
        Self {
            names,
            known_nodes: (0..n).collect(),
            edges,
        }
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn known_nodes(&self) -> &BTreeSet<usize> {
        &self.known_nodes
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    /// Same constraints over a larger node set; the added nodes are unknown.
    pub fn extended(&self, names: Vec<String>) -> Result<Self> {
        if names.len() < self.names.len() {
            return Err(Error::Graph("cannot shrink a partial graph".into()));
        }
        Ok(Self {
            names,
            known_nodes: self.known_nodes.clone(),
            edges: self.edges.clone(),
        })
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            nodes: self.names.clone(),
            edges: self.edges.iter().map(|&(i, k)| [i, k]).collect(),
            kind: GraphKind::Partial,
            known_nodes: Some(self.known_nodes.iter().copied().collect()),
        }
    }
}

/// Either kind of graph that can be injected into a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Knowledge {
    Full(CausalGraph),
    Partial(PartialGraph),
}

impl Knowledge {
    pub fn node_count(&self) -> usize {
        match self {
            Knowledge::Full(g) => g.node_count(),
            Knowledge::Partial(g) => g.node_count(),
        }
    }

    pub fn mask(&self) -> MaskMatrix {
        match self {
            Knowledge::Full(g) => mask_from_full(g),
            Knowledge::Partial(g) => mask_from_partial(g),
        }
    }

    pub fn to_json(&self) -> GraphJson {
        match self {
            Knowledge::Full(g) => g.to_json(),
            Knowledge::Partial(g) => g.to_json(),
        }
    }

    pub fn from_json(json: &GraphJson) -> Result<Self> {
        let edges = json.edges.iter().map(|e| (e[0], e[1]));
        match json.kind {
            GraphKind::Full => {
                if json.known_nodes.is_some() {
                    return Err(Error::Graph("known_nodes is only valid for partial graphs".into()));
                }
                Ok(Knowledge::Full(CausalGraph::new(json.nodes.clone(), edges)?))
            }
            GraphKind::Partial => {
                let known = json
                    .known_nodes
                    .clone()
                    .ok_or_else(|| Error::Graph("partial graph without known_nodes".into()))?;
                Ok(Knowledge::Partial(PartialGraph::new(json.nodes.clone(), known, edges)?))
            }
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Full,
    Partial,
}

/// Interchange format shared by the CLI, the service and the UI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<String>,
    pub edges: Vec<[usize; 2]>,
    pub kind: GraphKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_nodes: Option<Vec<usize>>,
}

/// `allowed(i, k)` says whether input `i` may feed sub-network `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskMatrix {
    size: usize,
    allowed: Vec<bool>,
}

impl MaskMatrix {
    /// Everything allowed except the diagonal.
    pub fn unconstrained(size: usize) -> Self {
        let mut allowed = vec![true; size * size];
        for i in 0..size {
            allowed[i * size + i] = false;
        }
        Self { size, allowed }
    }

    pub fn none_allowed(size: usize) -> Self {
        Self {
            size,
            allowed: vec![false; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn allowed(&self, i: usize, k: usize) -> bool {
        self.allowed[i * self.size + k]
    }

    pub fn forbid(&mut self, i: usize, k: usize) {
        self.allowed[i * self.size + k] = false;
    }

    fn set(&mut self, i: usize, k: usize, v: bool) {
        self.allowed[i * self.size + k] = v && i != k;
    }

    pub fn allowed_pairs(&self) -> BTreeSet<Edge> {
        (0..self.size)
            .flat_map(|i| (0..self.size).map(move |k| (i, k)))
            .filter(|&(i, k)| self.allowed(i, k))
            .collect()
    }

    pub fn masked_pairs(&self) -> BTreeSet<Edge> {
        (0..self.size)
            .flat_map(|i| (0..self.size).map(move |k| (i, k)))
            .filter(|&(i, k)| i != k && !self.allowed(i, k))
            .collect()
    }

    /// Pointwise AND.
    pub fn intersect(&self, other: &MaskMatrix) -> MaskMatrix {
        assert_eq!(self.size, other.size, "mask sizes differ");
        MaskMatrix {
            size: self.size,
            allowed: self.allowed.iter().zip(&other.allowed).map(|(&a, &b)| a && b).collect(),
        }
    }
}

pub fn mask_from_partial(g: &PartialGraph) -> MaskMatrix {
    let n = g.node_count();
    let mut mask = MaskMatrix::unconstrained(n);
    for &i in g.known_nodes() {
        for &k in g.known_nodes() {
            if i != k && !g.edges().contains(&(i, k)) {
                mask.forbid(i, k);
            }
        }
    }
    mask
}

pub fn mask_from_full(g: &CausalGraph) -> MaskMatrix {
    let mut mask = MaskMatrix::none_allowed(g.node_count());
    for &(i, k) in g.edges() {
        mask.set(i, k, true);
    }
    mask
}

/// Three-colour DFS cycle check. Out-of-range indices are ignored.
pub fn is_acyclic(edges: impl IntoIterator<Item = Edge>, n: usize) -> bool {
    find_cycle(&adjacency(edges, n)).is_none()
}

fn adjacency(edges: impl IntoIterator<Item = Edge>, n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (i, k) in edges {
        if i < n && k < n {
            adj[i].push(k);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// Some directed cycle as a list of edges, if one exists.
fn find_cycle(adj: &[Vec<usize>]) -> Option<Vec<Edge>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Colour {
        White,
        Grey,
        Black,
    }
    let n = adj.len();
    let mut colour = vec![Colour::White; n];
    let mut parent = vec![usize::MAX; n];

    for root in 0..n {
        if colour[root] != Colour::White {
            continue;
        }
        // explicit stack of (node, next child position)
        let mut stack = vec![(root, 0usize)];
        colour[root] = Colour::Grey;
        while let Some(top) = stack.last_mut() {
            let v = top.0;
            if top.1 < adj[v].len() {
                let w = adj[v][top.1];
                top.1 += 1;
                match colour[w] {
                    Colour::White => {
                        parent[w] = v;
                        colour[w] = Colour::Grey;
                        stack.push((w, 0));
                    }
                    Colour::Grey => {
                        let mut cycle = vec![(v, w)];
                        let mut cur = v;
                        while cur != w {
                            let p = parent[cur];
                            cycle.push((p, cur));
                            cur = p;
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    Colour::Black => {}
                }
            } else {
                colour[v] = Colour::Black;
                stack.pop();
            }
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CycleRepair {
    pub kept: BTreeSet<Edge>,
    pub removed: Vec<WeightedEdge>,
}

/// Removes the lightest edge of some remaining cycle until none is left.
pub fn break_cycles(edges: &[WeightedEdge], n: usize) -> CycleRepair {
    let mut live: Vec<WeightedEdge> = edges.to_vec();
    let mut removed = Vec::new();
    loop {
        let adj = adjacency(live.iter().map(|e| (e.from, e.to)), n);
        let Some(cycle) = find_cycle(&adj) else { break };
        let weakest = live
            .iter()
            .enumerate()
            .filter(|(_, e)| cycle.contains(&(e.from, e.to)))
            .min_by(|a, b| a.1.weight.total_cmp(&b.1.weight))
            .map(|(idx, _)| idx)
            .expect("cycle edges are live");
        let e = live.remove(weakest);
        log::warn!(
            "removed edge {} -> {} (w = {:.6}) to break a directed cycle",
            e.from,
            e.to,
            e.weight
        );
        removed.push(e);
    }
    CycleRepair {
        kept: live.iter().map(|e| (e.from, e.to)).collect(),
        removed,
    }
}

/// Default labels: `Y`, `X1`, …, `Xd`.
pub fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| if i == 0 { "Y".to_string() } else { format!("X{i}") }).collect()
}
