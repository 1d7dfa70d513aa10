//! Directed acyclic graphs, partially directed graphs and random graph models.
//!
//! Adjacency convention everywhere in the crate: `adj[i][j] == true` means the
//! edge `i -> j`, i.e. `i` is a parent of `j`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kahn elimination over an implicit edge relation.
pub(crate) fn acyclic_by(d: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut indeg = vec![0usize; d];
    for i in 0..d {
        for j in 0..d {
            if edge(i, j) {
                indeg[j] += 1;
            }
        }
    }
    let mut stack: Vec<usize> = (0..d).filter(|&j| indeg[j] == 0).collect();
    let mut seen = 0;
    while let Some(i) = stack.pop() {
        seen += 1;
        for j in 0..d {
            if edge(i, j) {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    stack.push(j);
                }
            }
        }
    }
    seen == d
}

/// Returns whether the binary adjacency matrix admits a topological order.
pub fn is_acyclic(adj: &[Vec<bool>]) -> Result<bool> {
    let d = adj.len();
    for (i, row) in adj.iter().enumerate() {
        if row.len() != d {
            return Err(Error::invalid(format!(
                "adjacency matrix is not square: row {i} has {} entries, expected {d}",
                row.len()
            )));
        }
        if row[i] {
            return Err(Error::invalid(format!("nonzero diagonal entry at node {i}")));
        }
    }
    Ok(acyclic_by(d, |i, j| adj[i][j]))
}

/// A directed acyclic graph over `d` nodes. Acyclicity is checked on construction
/// and preserved by every mutating method.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "EdgeListRepr", into = "EdgeListRepr")]
pub struct Dag {
    d: usize,
    adj: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct EdgeListRepr {
    d: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<EdgeListRepr> for Dag {
    type Error = Error;
    fn try_from(r: EdgeListRepr) -> Result<Self> {
        Dag::from_edges(r.d, &r.edges)
    }
}

impl From<Dag> for EdgeListRepr {
    fn from(g: Dag) -> Self {
        EdgeListRepr {
            d: g.d,
            edges: g.edges(),
        }
    }
}

impl std::fmt::Debug for Dag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Dag(d={}, edges={:?})", self.d, self.edges())
    }
}

impl Dag {
    pub fn empty(d: usize) -> Self {
        Dag {
            d,
            adj: vec![false; d * d],
        }
    }

    pub fn from_adjacency(adj: &[Vec<bool>]) -> Result<Self> {
        if !is_acyclic(adj)? {
            return Err(Error::Cyclic("adjacency matrix contains a directed cycle".into()));
        }
        let d = adj.len();
        Ok(Dag {
            d,
            adj: adj.iter().flatten().copied().collect(),
        })
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![vec![false; d]; d];
        for &(i, j) in edges {
            if i >= d || j >= d {
                return Err(Error::invalid(format!("edge {i}->{j} out of range for d={d}")));
            }
            adj[i][j] = true;
        }
        Dag::from_adjacency(&adj)
    }

    /// Builds a DAG from a flat row-major mask without re-validating the shape.
    pub(crate) fn from_flat(d: usize, adj: Vec<bool>) -> Result<Self> {
        debug_assert_eq!(adj.len(), d * d);
        if (0..d).any(|i| adj[i * d + i]) {
            return Err(Error::invalid("self-loop in adjacency"));
        }
        if !acyclic_by(d, |i, j| adj[i * d + j]) {
            return Err(Error::Cyclic("adjacency matrix contains a directed cycle".into()));
        }
        Ok(Dag { d, adj })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.d + j]
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.has_edge(i, j) || self.has_edge(j, i)
    }

    /// Removing an edge can never create a cycle.
    pub fn remove_edge(&mut self, i: usize, j: usize) {
        self.adj[i * self.d + j] = false;
    }

    /// Edges in lexicographic `(parent, child)` order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let d = self.d;
        (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .collect()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().filter(|&&b| b).count()
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|&i| self.has_edge(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.d).filter(|&j| self.has_edge(i, j)).collect()
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        self.adj.chunks(self.d.max(1)).map(|r| r.to_vec()).take(self.d).collect()
    }

    pub fn topological_order(&self) -> Vec<usize> {
        let d = self.d;
        let mut indeg: Vec<usize> = (0..d).map(|j| self.parents(j).len()).collect();
        let mut ready: Vec<usize> = (0..d).rev().filter(|&j| indeg[j] == 0).collect();
        let mut order = Vec::with_capacity(d);
        while let Some(i) = ready.pop() {
            order.push(i);
            for j in (0..d).rev() {
                if self.has_edge(i, j) {
                    indeg[j] -= 1;
                    if indeg[j] == 0 {
                        ready.push(j);
                    }
                }
            }
        }
        order
    }

    /// Descendants of `i`, including `i` itself.
    pub fn descendants(&self, i: usize) -> Vec<bool> {
        self.reach(i, |a, b| self.has_edge(a, b))
    }

    /// Ancestors of `j`, including `j` itself.
    pub fn ancestors(&self, j: usize) -> Vec<bool> {
        self.reach(j, |a, b| self.has_edge(b, a))
    }

    fn reach(&self, start: usize, step: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.d];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(a) = stack.pop() {
            for b in 0..self.d {
                if !seen[b] && step(a, b) {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen
    }

    /// Text form: a `d=<n>` header followed by one zero-indexed `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("d={}\n", self.d);
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let d: usize = header
            .strip_prefix("d=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad edge-list header {header:?}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse(format!("bad edge line {line:?}")));
            };
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad node index {v:?}")))
            };
            edges.push((parse(a)?, parse(b)?));
        }
        Dag::from_edges(d, &edges)
    }

    /// Adjacency CSV: `d` rows of `d` comma-separated 0/1 entries.
    pub fn parse_adjacency_csv(text: &str) -> Result<Self> {
        let mut adj = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let row = line
                .split(',')
                .map(|v| match v.trim() {
                    "0" | "0.0" => Ok(false),
                    "1" | "1.0" => Ok(true),
                    other => Err(Error::Parse(format!("adjacency entry {other:?} is not 0/1"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            adj.push(row);
        }
        Dag::from_adjacency(&adj)
    }

    /// Accepts either the edge-list or the adjacency-CSV form.
    pub fn parse_any(text: &str) -> Result<Self> {
        if text.trim_start().starts_with("d=") {
            Dag::parse_edge_list(text)
        } else {
            Dag::parse_adjacency_csv(text)
        }
    }
}

/// Edge type of an unordered pair `{i, j}` with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairType {
    Absent,
    /// `i -> j` for the stored `i < j`.
    Forward,
    /// `j -> i` for the stored `i < j`.
    Backward,
    Undirected,
}

/// Partially directed graph stored as one [`PairType`] per unordered pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pdag {
    d: usize,
    pairs: Vec<PairType>,
}

impl Pdag {
    pub fn empty(d: usize) -> Self {
        Pdag {
            d,
            pairs: vec![PairType::Absent; d * d.saturating_sub(1) / 2],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.d);
        // row-major upper triangle without the diagonal
        i * (2 * self.d - i - 1) / 2 + (j - i - 1)
    }

    /// Type of the pair `{a, b}` oriented from `a`'s point of view.
    pub fn pair(&self, a: usize, b: usize) -> PairType {
        assert_ne!(a, b, "self pairs have no edge type");
        if a < b {
            self.pairs[self.index(a, b)]
        } else {
            match self.pairs[self.index(b, a)] {
                PairType::Forward => PairType::Backward,
                PairType::Backward => PairType::Forward,
                other => other,
            }
        }
    }

    pub fn set(&mut self, a: usize, b: usize, t: PairType) {
        assert_ne!(a, b, "self-loops are not representable");
        let (lo, hi, t) = if a < b {
            (a, b, t)
        } else {
            let flipped = match t {
                PairType::Forward => PairType::Backward,
                PairType::Backward => PairType::Forward,
                other => other,
            };
            (b, a, flipped)
        };
        let k = self.index(lo, hi);
        self.pairs[k] = t;
    }

    pub fn is_directed(&self, a: usize, b: usize) -> bool {
        self.pair(a, b) == PairType::Forward
    }

    pub fn is_undirected(&self, a: usize, b: usize) -> bool {
        self.pair(a, b) == PairType::Undirected
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.pair(a, b) != PairType::Absent
    }

    /// Iterates `(i, j, type)` over all unordered pairs with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, PairType)> + '_ {
        let d = self.d;
        (0..d)
            .flat_map(move |i| (i + 1..d).map(move |j| (i, j)))
            .zip(self.pairs.iter().copied())
            .map(|((i, j), t)| (i, j, t))
    }

    pub fn n_directed(&self) -> usize {
        self.pairs
            .iter()
            .filter(|t| matches!(t, PairType::Forward | PairType::Backward))
            .count()
    }

    pub fn n_undirected(&self) -> usize {
        self.pairs.iter().filter(|t| **t == PairType::Undirected).count()
    }
}

impl From<&Dag> for Pdag {
    fn from(g: &Dag) -> Self {
        let mut p = Pdag::empty(g.d());
        for (i, j) in g.edges() {
            p.set(i, j, PairType::Forward);
        }
        p
    }
}

/// Completed partially directed graph of the Markov equivalence class of `g`:
/// skeleton plus v-structures, closed under Meek's orientation rules.
pub fn dag_to_cpdag(g: &Dag) -> Pdag {
    let d = g.d();
    let mut p = Pdag::empty(d);
    for (i, j) in g.edges() {
        p.set(i, j, PairType::Undirected);
    }
    for k in 0..d {
        let pa = g.parents(k);
        for (x, &a) in pa.iter().enumerate() {
            for &b in &pa[x + 1..] {
                if !g.adjacent(a, b) {
                    p.set(a, k, PairType::Forward);
                    p.set(b, k, PairType::Forward);
                }
            }
        }
    }
    apply_meek_rules(&mut p);
    p
}

/// Orients undirected edges of `p` in place until none of Meek's four rules applies.
pub fn apply_meek_rules(p: &mut Pdag) {
    let d = p.d();
    loop {
        let mut changed = false;
        for a in 0..d {
            for b in 0..d {
                if a == b || !p.is_undirected(a, b) {
                    continue;
                }
                if meek_orients(p, a, b) {
                    p.set(a, b, PairType::Forward);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Whether some Meek rule forces the undirected edge `a - b` into `a -> b`.
fn meek_orients(p: &Pdag, a: usize, b: usize) -> bool {
    let d = p.d();
    let others = || (0..d).filter(move |&c| c != a && c != b);
    // R1: c -> a - b with c, b nonadjacent
    if others().any(|c| p.is_directed(c, a) && !p.adjacent(c, b)) {
        return true;
    }
    // R2: a -> c -> b
    if others().any(|c| p.is_directed(a, c) && p.is_directed(c, b)) {
        return true;
    }
    // R3: a - c -> b and a - e -> b with c, e nonadjacent
    let r3: Vec<usize> = others()
        .filter(|&c| p.is_undirected(a, c) && p.is_directed(c, b))
        .collect();
    for (x, &c) in r3.iter().enumerate() {
        if r3[x + 1..].iter().any(|&e| !p.adjacent(c, e)) {
            return true;
        }
    }
    // R4: a - c -> e -> b with a adjacent to e and c, b nonadjacent
    for c in others().filter(|&c| p.is_undirected(a, c) && !p.adjacent(c, b)) {
        if others().any(|e| e != c && p.is_directed(c, e) && p.is_directed(e, b) && p.adjacent(a, e)) {
            return true;
        }
    }
    false
}

/// Erdős–Rényi DAG: uniform random topological order, each allowed edge kept
/// independently with probability `2e / (d^2 - d)`.
pub fn sample_er<R: Rng + ?Sized>(d: usize, expected_edges: f64, rng: &mut R) -> Result<Dag> {
    if d < 2 {
        return Err(Error::invalid(format!("ER sampling needs d >= 2, got {d}")));
    }
    let max_edges = (d * (d - 1) / 2) as f64;
    if !(0.0..=max_edges).contains(&expected_edges) {
        return Err(Error::invalid(format!(
            "expected edge count {expected_edges} outside [0, {max_edges}]"
        )));
    }
    let p = er_edge_probability(d, expected_edges);
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut adj = vec![false; d * d];
    for a in 0..d {
        for b in a + 1..d {
            if rng.random::<f64>() < p {
                adj[order[a] * d + order[b]] = true;
            }
        }
    }
    Dag::from_flat(d, adj)
}

pub fn er_edge_probability(d: usize, expected_edges: f64) -> f64 {
    2.0 * expected_edges / ((d * d - d) as f64)
}

/// Number of seed nodes used by [`sample_sf`].
pub fn sf_seed_count(d: usize, m: usize) -> usize {
    m.min(d.saturating_sub(1))
}

/// Number of nodes that attach fewer than `m` edges because too few nodes exist yet.
pub fn sf_capped_nodes(d: usize, m: usize) -> usize {
    let seeds = sf_seed_count(d, m);
    (seeds..d).filter(|&t| t < m).count()
}

/// Barabási–Albert scale-free DAG. Nodes are inserted one at a time; each new
/// node draws `min(m, existing)` distinct targets with probability proportional
/// to their degree count and points an edge at each of them. Seed nodes start
/// with a degree count of one. Node labels are randomly permuted at the end.
pub fn sample_sf<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<Dag> {
    if d < 2 || m < 1 {
        return Err(Error::invalid(format!("SF sampling needs d >= 2 and m >= 1, got d={d}, m={m}")));
    }
    let seeds = sf_seed_count(d, m);
    let mut weight = vec![0.0f64; d];
    weight[..seeds].iter_mut().for_each(|w| *w = 1.0);
    let mut edges = Vec::new();
    for t in seeds..d {
        let k = m.min(t);
        let mut available: Vec<usize> = (0..t).collect();
        for _ in 0..k {
            let total: f64 = available.iter().map(|&i| weight[i]).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = available.len() - 1;
            for (pos, &i) in available.iter().enumerate() {
                u -= weight[i];
                if u < 0.0 {
                    pick = pos;
                    break;
                }
            }
            let target = available.swap_remove(pick);
            edges.push((t, target));
            weight[target] += 1.0;
        }
        weight[t] += k as f64;
    }
    let mut label: Vec<usize> = (0..d).collect();
    label.shuffle(rng);
    let mut adj = vec![false; d * d];
    for (a, b) in edges {
        adj[label[a] * d + label[b]] = true;
    }
    Dag::from_flat(d, adj)
}

/// All labelled DAGs on `d` nodes. Only practical for `d <= 5`.
pub fn all_dags(d: usize) -> Vec<Dag> {
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut adj = vec![false; d * d];
        for &(i, j) in &pairs {
            match c % 3 {
                1 => adj[i * d + j] = true,
                2 => adj[j * d + i] = true,
                _ => {}
            }
            c /= 3;
        }
        if let Ok(g) = Dag::from_flat(d, adj) {
            out.push(g);
        }
    }
    out
}
