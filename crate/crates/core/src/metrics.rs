//! Structural distances between a ground-truth graph and an estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{dag_to_cpdag, is_acyclic, Dag, Pdag};

/// Number of unordered pairs whose edge type differs (absent, either
/// direction, undirected).
pub fn shd(a: &Pdag, b: &Pdag) -> Result<usize> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch {
            expected: a.d(),
            found: b.d(),
        });
    }
    Ok(a.pairs().filter(|&(i, j, t)| b.pair(i, j) != t).count())
}

/// SHD between the CPDAGs of two DAGs.
pub fn shd_c(a: &Dag, b: &Dag) -> Result<usize> {
    shd(&dag_to_cpdag(a), &dag_to_cpdag(b))
}

/// Nodes reachable from `start` along active trails given `z`, in `g` with the
/// edges `skip(u, v)` removed. `start` itself is not reported unless revisited.
fn d_connected(g: &Dag, start: usize, z: &[bool], skip: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let d = g.d();
    let has = |u: usize, v: usize| g.has_edge(u, v) && !skip(u, v);
    // ancestors of z (including z) in the reduced graph
    let mut anc_z = z.to_vec();
    let mut stack: Vec<usize> = (0..d).filter(|&v| z[v]).collect();
    while let Some(v) = stack.pop() {
        for u in 0..d {
            if has(u, v) && !anc_z[u] {
                anc_z[u] = true;
                stack.push(u);
            }
        }
    }
    // (node, arrived_from_child): `true` = travelling up, `false` = travelling down
    let mut seen = vec![[false; 2]; d];
    let mut reach = vec![false; d];
    let mut queue = vec![(start, true)];
    while let Some((v, up)) = queue.pop() {
        if std::mem::replace(&mut seen[v][usize::from(up)], true) {
            continue;
        }
        if v != start && !z[v] {
            reach[v] = true;
        }
        if up {
            if z[v] {
                continue;
            }
            for u in 0..d {
                if has(u, v) {
                    queue.push((u, true));
                }
                if has(v, u) {
                    queue.push((u, false));
                }
            }
        } else {
            if !z[v] {
                for u in 0..d {
                    if has(v, u) {
                        queue.push((u, false));
                    }
                }
            }
            if anc_z[v] {
                for u in 0..d {
                    if has(u, v) {
                        queue.push((u, true));
                    }
                }
            }
        }
    }
    reach
}

/// Whether the intervention distribution of `x_j` under `do(x_i)` is inferred
/// correctly in `truth` from the parents of `i` in `est`.
pub fn parent_adjustment_valid(truth: &Dag, est: &Dag, i: usize, j: usize) -> bool {
    let d = truth.d();
    let desc_i = truth.descendants(i);
    if est.has_edge(j, i) {
        // the estimate claims no effect of i on j
        return !desc_i[j];
    }
    // nodes (other than i) lying on a directed path from i to j
    let anc_j = truth.ancestors(j);
    let on_path: Vec<bool> = (0..d).map(|w| w != i && desc_i[w] && anc_j[w]).collect();
    let mut forbidden = vec![false; d];
    for w in (0..d).filter(|&w| on_path[w]) {
        for (f, dw) in forbidden.iter_mut().zip(truth.descendants(w)) {
            *f |= dw;
        }
    }
    let mut z = vec![false; d];
    for p in est.parents(i) {
        if forbidden[p] {
            return false;
        }
        z[p] = true;
    }
    !d_connected(truth, i, &z, |u, v| u == i && on_path[v])[j]
}

/// Structural intervention distance: ordered pairs `(i, j)`, `i != j`, whose
/// interventional distribution is miscalculated by parent adjustment in `est`.
pub fn sid(truth: &Dag, est: &Dag) -> Result<usize> {
    if truth.d() != est.d() {
        return Err(Error::DimensionMismatch {
            expected: truth.d(),
            found: est.d(),
        });
    }
    if !is_acyclic(&est.adjacency())? {
        return Err(Error::invalid("SID needs an acyclic estimate"));
    }
    let d = truth.d();
    Ok((0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && !parent_adjustment_valid(truth, est, i, j))
        .count())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Shd,
    ShdC,
    Sid,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shd" => Ok(Metric::Shd),
            "shdc" | "shd-c" | "shd_c" => Ok(Metric::ShdC),
            "sid" => Ok(Metric::Sid),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shd: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shd_c: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sid: Option<usize>,
    pub edges_true: usize,
    pub edges_est: usize,
    /// Free-form provenance (files, seed, configuration).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub provenance: serde_json::Map<String, serde_json::Value>,
}

pub fn evaluate(truth: &Dag, est: &Dag, which: &[Metric]) -> Result<MetricsReport> {
    let mut r = MetricsReport {
        edges_true: truth.n_edges(),
        edges_est: est.n_edges(),
        ..MetricsReport::default()
    };
    for m in which {
        match m {
            Metric::Shd => r.shd = Some(shd(&Pdag::from(truth), &Pdag::from(est))?),
            Metric::ShdC => r.shd_c = Some(shd_c(truth, est)?),
            Metric::Sid => r.sid = Some(sid(truth, est)?),
        }
    }
    Ok(r)
}
