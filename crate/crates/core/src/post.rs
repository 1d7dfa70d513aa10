//! Processing around the optimizer: preliminary neighbour selection before
//! training, and after it the expected-Jacobian cut to a DAG, spline-based
//! pruning, and the retrain protocol that produces held-out scores.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::constraint::weighted_adjacency;
use crate::error::{Error, Result};
use crate::extra_trees::feature_importances;
use crate::graph::{acyclic_by, Dag};
use crate::nn::{NnStack, Workspace};
use crate::optim::{run_auglag, Mode, NnLearner, TrainConfig};
use crate::simul::{Dataset, Rows};

/// Expected absolute sensitivity of each conditional density to each input.
/// `get(i, j)` scores the edge `i -> j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianScore {
    pub d: usize,
    pub values: Vec<f64>,
}

impl JacobianScore {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }
}

/// `E |d p_j(x) / d x_i|` over the training rows, where `p_j` is the Gaussian
/// density of `x_j` given the network's output.
pub fn expected_jacobian(stack: &NnStack, rows: &Rows) -> Result<JacobianScore> {
    let d = stack.d();
    if rows.d != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rows.d,
        });
    }
    let mut values = vec![0.0; d * d];
    let mut ws = Workspace::new(stack.arch());
    let mut g = vec![0.0; d];
    for x in rows.iter() {
        for j in 0..d {
            g.iter_mut().for_each(|v| *v = 0.0);
            let out = stack.node_nll(j, x, &mut ws, 1.0, None, Some(&mut g));
            let density = (-out.value).exp();
            for i in 0..d {
                if i != j {
                    values[i * d + j] += density * g[i].abs();
                }
            }
        }
    }
    let n = rows.n.max(1) as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(JacobianScore { d, values })
}

/// Deletes `candidates` in ascending score order (ties by `(i, j)`) until the
/// remaining graph is acyclic.
pub fn delete_until_acyclic(d: usize, candidates: &[(usize, usize)], score: impl Fn(usize, usize) -> f64) -> Dag {
    let mut adj = vec![false; d * d];
    for &(i, j) in candidates {
        adj[i * d + j] = true;
    }
    let mut order: Vec<(f64, usize, usize)> = candidates.iter().map(|&(i, j)| (score(i, j), i, j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut next = order.into_iter();
    while !acyclic_by(d, |i, j| adj[i * d + j]) {
        let (_, i, j) = next.next().expect("an empty graph is acyclic");
        adj[i * d + j] = false;
    }
    Dag::from_flat(d, adj).expect("square adjacency with empty diagonal")
}

/// Final DAG from a trained stack: the support of its weighted adjacency, cut
/// by ascending expected Jacobian until acyclic.
pub fn jacobian_threshold(stack: &NnStack, ds: &Dataset) -> Result<(Dag, JacobianScore)> {
    let d = stack.d();
    let a = weighted_adjacency(stack);
    let support: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && a.get(i, j) > 0.0)
        .collect();
    let score = expected_jacobian(stack, &ds.train)?;
    let dag = delete_until_acyclic(d, &support, |i, j| score.get(i, j));
    Ok((dag, score))
}

/// Candidate parent sets from tree importances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnsReport {
    pub threshold_factor: f64,
    pub n_trees: usize,
    /// `importances[j][i]`: importance of `x_i` for predicting `x_j` (zero at `i == j`).
    pub importances: Vec<Vec<f64>>,
    /// `kept[j]`: candidate parents of `j`.
    pub kept: Vec<Vec<usize>>,
    /// Targets with no usable split; all their candidates are kept.
    pub degenerate: Vec<usize>,
}

impl PnsReport {
    /// `allowed[j][i]`, ready for [`NnStack::restrict_masks`].
    pub fn candidates_by_target(&self) -> Vec<Vec<bool>> {
        let d = self.kept.len();
        self.kept
            .iter()
            .map(|ks| {
                let mut row = vec![false; d];
                ks.iter().for_each(|&i| row[i] = true);
                row
            })
            .collect()
    }
}

/// Indices whose importance strictly exceeds `factor` times the mean importance.
pub fn select_by_importance(importances: &[f64], factor: f64) -> Vec<usize> {
    if importances.is_empty() {
        return Vec::new();
    }
    let mean = importances.iter().sum::<f64>() / importances.len() as f64;
    let cutoff = factor * mean;
    (0..importances.len()).filter(|&k| importances[k] > cutoff).collect()
}

/// Preliminary neighbour selection on the (standardized) training split.
pub fn pns(ds: &Dataset, threshold_factor: f64, n_trees: usize, seed: u64) -> Result<PnsReport> {
    if !(threshold_factor > 0.0) {
        return Err(Error::invalid("PNS threshold factor must be positive"));
    }
    if n_trees == 0 {
        return Err(Error::invalid("PNS needs at least one tree"));
    }
    let d = ds.d();
    let rows = &ds.train;
    let per_target: Vec<(Vec<f64>, Vec<usize>, bool)> = (0..d)
        .into_par_iter()
        .map(|j| {
            let others: Vec<usize> = (0..d).filter(|&i| i != j).collect();
            let x: Vec<f64> = rows.iter().flat_map(|r| others.iter().map(move |&i| r[i])).collect();
            let y = rows.column(j);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64 + 1);
            let imp = feature_importances(&x, others.len(), &y, n_trees, &mut rng);
            let mut full = vec![0.0; d];
            others.iter().zip(&imp).for_each(|(&i, &v)| full[i] = v);
            if imp.iter().all(|&v| v == 0.0) {
                (full, others, true)
            } else {
                let kept = select_by_importance(&imp, threshold_factor).into_iter().map(|k| others[k]).collect();
                (full, kept, false)
            }
        })
        .collect();
    let mut report = PnsReport {
        threshold_factor,
        n_trees,
        importances: Vec::with_capacity(d),
        kept: Vec::with_capacity(d),
        degenerate: Vec::new(),
    };
    for (j, (imp, kept, degenerate)) in per_target.into_iter().enumerate() {
        if degenerate {
            report.degenerate.push(j);
        }
        report.importances.push(imp);
        report.kept.push(kept);
    }
    Ok(report)
}

pub const SPLINE_DEGREE: usize = 3;
pub const SPLINE_INTERIOR_KNOTS: usize = 10;

/// Clamped knot vector on `[min, max]` with interior knots at the sample
/// quantiles `k / (m + 1)`; duplicate interior knots are merged.
pub fn spline_knots(x: &[f64], interior: usize) -> Vec<f64> {
    let mut s: Vec<f64> = x.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let mut knots = vec![lo; SPLINE_DEGREE + 1];
    for k in 1..=interior {
        let pos = k as f64 / (interior + 1) as f64 * (s.len() - 1) as f64;
        let (a, frac) = (pos.floor() as usize, pos.fract());
        let q = if a + 1 < s.len() { s[a] * (1.0 - frac) + s[a + 1] * frac } else { s[a] };
        if q > lo && q < hi && knots.last().is_none_or(|&l| q > l) {
            knots.push(q);
        }
    }
    knots.extend(std::iter::repeat_n(hi, SPLINE_DEGREE + 1));
    knots
}

/// Values of all B-spline basis functions of the given degree at `x`
/// (Cox-de Boor recursion). The right end of the knot range is included in the
/// last nonempty interval.
pub fn bspline_basis(x: f64, knots: &[f64], degree: usize) -> Vec<f64> {
    let m = knots.len() - 1;
    let mut b = vec![0.0; m];
    let last = (0..m).rev().find(|&k| knots[k] < knots[k + 1]);
    if let Some(last) = last {
        let span = (0..m).find(|&k| knots[k] <= x && x < knots[k + 1] && knots[k] < knots[k + 1]);
        match span {
            Some(k) => b[k] = 1.0,
            None if x == knots[last + 1] => b[last] = 1.0,
            None => {}
        }
    }
    for p in 1..=degree {
        let mut next = vec![0.0; b.len() - 1];
        for (k, v) in next.iter_mut().enumerate() {
            let left = knots[k + p] - knots[k];
            let right = knots[k + p + 1] - knots[k + 1];
            if left > 0.0 {
                *v += (x - knots[k]) / left * b[k];
            }
            if right > 0.0 {
                *v += (knots[k + p + 1] - x) / right * b[k + 1];
            }
        }
        b = next;
    }
    b
}

/// Spline block of one regressor, first basis function dropped so the block is
/// not collinear with the intercept.
fn spline_block(x: &[f64], interior_knots: usize) -> Vec<Vec<f64>> {
    let knots = spline_knots(x, interior_knots);
    x.iter().map(|&v| bspline_basis(v, &knots, SPLINE_DEGREE)[1..].to_vec()).collect()
}

struct LsFit {
    rss: f64,
    ridge: bool,
}

fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> LsFit {
    let xtx = design.tr_mul(design);
    let xty = design.tr_mul(y);
    let (beta, ridge) = match xtx.clone().cholesky() {
        Some(c) => (c.solve(&xty), false),
        None => {
            let q = xtx.nrows();
            let scale = (xtx.trace() / q as f64).max(1e-300);
            let mut reg = xtx;
            for k in 0..q {
                reg[(k, k)] += 1e-8 * scale;
            }
            let beta = reg.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| DVector::zeros(q));
            (beta, true)
        }
    };
    let resid = y - design * beta;
    LsFit {
        rss: resid.norm_squared(),
        ridge,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneNode {
    pub node: usize,
    pub parents: Vec<usize>,
    /// F-test p-value per tested parent, aligned with `parents`.
    pub p_values: Vec<f64>,
    pub removed: Vec<usize>,
    /// Whether a ridge term had to stabilize a rank-deficient design.
    pub ridge: bool,
    /// Set when the design has too few residual degrees of freedom to test.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub cutoff: f64,
    pub nodes: Vec<PruneNode>,
}

impl PruneReport {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        for n in &self.nodes {
            if n.ridge {
                w.push(format!("node {}: rank-deficient spline design, ridge-stabilized fit", n.node));
            }
            if n.skipped {
                w.push(format!("node {}: too few samples to test {} parents", n.node, n.parents.len()));
            }
        }
        w
    }
}

fn prune_node(g: &Dag, rows: &Rows, j: usize, cutoff: f64, interior_knots: usize) -> PruneNode {
    let parents = g.parents(j);
    let mut report = PruneNode {
        node: j,
        parents: parents.clone(),
        p_values: Vec::new(),
        removed: Vec::new(),
        ridge: false,
        skipped: false,
    };
    if parents.is_empty() {
        return report;
    }
    let n = rows.n;
    let blocks: Vec<Vec<Vec<f64>>> = parents.iter().map(|&p| spline_block(&rows.column(p), interior_knots)).collect();
    let widths: Vec<usize> = blocks.iter().map(|b| b[0].len()).collect();
    let build = |skip: Option<usize>| {
        let cols = 1 + widths.iter().enumerate().filter(|&(k, _)| Some(k) != skip).map(|(_, w)| w).sum::<usize>();
        DMatrix::from_fn(n, cols, |r, c| {
            if c == 0 {
                return 1.0;
            }
            let mut c = c - 1;
            for (k, b) in blocks.iter().enumerate() {
                if Some(k) == skip {
                    continue;
                }
                if c < widths[k] {
                    return b[r][c];
                }
                c -= widths[k];
            }
            unreachable!("column index within design")
        })
    };
    let y = DVector::from_vec(rows.column(j));
    let full = build(None);
    let q = full.ncols();
    if n <= q {
        report.skipped = true;
        report.p_values = vec![f64::NAN; parents.len()];
        return report;
    }
    let fit = least_squares(&full, &y);
    report.ridge |= fit.ridge;
    let df2 = (n - q) as f64;
    for (k, &p) in parents.iter().enumerate() {
        let reduced = least_squares(&build(Some(k)), &y);
        report.ridge |= reduced.ridge;
        let df1 = widths[k] as f64;
        let f = ((reduced.rss - fit.rss).max(0.0) / df1) / (fit.rss.max(1e-300) / df2);
        let pval = FisherSnedecor::new(df1, df2).map(|dist| dist.sf(f)).unwrap_or(1.0);
        report.p_values.push(pval);
        if pval > cutoff {
            report.removed.push(p);
        }
    }
    report
}

/// Removes every parent whose additive spline contribution is not significant
/// at `cutoff` (F-test of the full additive model against the model without
/// that parent), fitted on the training split.
pub fn prune(g: &Dag, ds: &Dataset, cutoff: f64) -> Result<(Dag, PruneReport)> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::invalid(format!("pruning cutoff {cutoff} must lie in (0, 1)")));
    }
    if g.d() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: ds.d(),
            found: g.d(),
        });
    }
    prune_rows(g, &ds.train, cutoff, SPLINE_INTERIOR_KNOTS)
}

/// [`prune`] on explicit rows with a chosen number of interior knots.
pub fn prune_rows(g: &Dag, rows: &Rows, cutoff: f64, interior_knots: usize) -> Result<(Dag, PruneReport)> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::invalid(format!("pruning cutoff {cutoff} must lie in (0, 1)")));
    }
    if g.d() != rows.d {
        return Err(Error::DimensionMismatch {
            expected: rows.d,
            found: g.d(),
        });
    }
    let nodes: Vec<PruneNode> = (0..g.d()).into_par_iter().map(|j| prune_node(g, rows, j, cutoff, interior_knots)).collect();
    let mut out = g.clone();
    for n in &nodes {
        for &p in &n.removed {
            out.remove_edge(p, n.node);
        }
    }
    Ok((out, PruneReport { cutoff, nodes }))
}

/// Refits a fresh stack by maximum likelihood with masks frozen to `g` and
/// returns the mean held-out log-likelihood per sample (no penalty terms).
pub fn retrain_heldout_score(g: &Dag, ds: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let d = ds.d();
    if g.d() != d {
        return Err(Error::DimensionMismatch { expected: d, found: g.d() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stack = NnStack::new(cfg.architecture(d), &mut rng);
    let allowed: Vec<Vec<bool>> = (0..d).map(|j| (0..d).map(|i| g.has_edge(i, j)).collect()).collect();
    stack.restrict_masks(&allowed)?;
    let mut learner = NnLearner::new(stack);
    run_auglag(&mut learner, ds, cfg, Mode::MaxLikelihood)?;
    heldout_log_likelihood(&learner.stack, &ds.heldout)
}

/// Mean over rows of `sum_j log p_j(x_j | x)`.
pub fn heldout_log_likelihood(stack: &NnStack, rows: &Rows) -> Result<f64> {
    use crate::optim::Learner;
    let learner = NnLearner::new(stack.clone());
    let idx: Vec<usize> = (0..rows.n).collect();
    Ok(-learner.data_loss(rows, &idx, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Head};
    use crate::simul::{simulate, split_and_standardize, GenOptions, Scheme};
    use rand::Rng;

    fn dataset(x: DMatrix<f64>, seed: u64) -> Dataset {
        split_and_standardize(&x, 0.8, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn two_cycle_drops_the_weaker_edge() {
        let scores = [[0.0, 0.5], [0.2, 0.0]];
        let g = delete_until_acyclic(2, &[(0, 1), (1, 0)], |i, j| scores[i][j]);
        assert_eq!(g.edges(), vec![(0, 1)]);
        let acyclic = delete_until_acyclic(3, &[(0, 1), (1, 2)], |_, _| 0.0);
        assert_eq!(acyclic.n_edges(), 2);
    }

    #[test]
    fn three_cycle_loses_only_its_minimum_edge() {
        let cycle = [(0, 1), (1, 2), (2, 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let g = delete_until_acyclic(3, &cycle, |i, _| s[i]);
            assert_eq!(g.n_edges(), 2);
            // brute force: any single deletion breaks the cycle, so the minimal one is the cheapest
            let min_edge = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            assert!(!g.has_edge(cycle[min_edge].0, cycle[min_edge].1));
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        let g = delete_until_acyclic(2, &[(1, 0), (0, 1)], |_, _| 1.0);
        assert_eq!(g.edges(), vec![(1, 0)]);
    }

    #[test]
    fn jacobian_is_zero_for_masked_inputs_and_threshold_is_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = NnStack::new(Architecture::new(4, vec![5], Head::MeanOnly), &mut rng);
        s.mask_out(2, 0);
        let x = DMatrix::from_fn(100, 4, |_, _| rng.random_range(-1.0..1.0));
        let ds = dataset(x, 0);
        let (dag, score) = jacobian_threshold(&s, &ds).unwrap();
        assert_eq!(score.get(0, 2), 0.0);
        assert!(score.values.iter().all(|&v| v >= 0.0));
        assert!(crate::graph::is_acyclic(&dag.adjacency()).unwrap());
        assert!(!dag.has_edge(0, 2));
    }

    #[test]
    fn expected_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = NnStack::new(Architecture::new(3, vec![4], Head::MeanOnly), &mut rng);
        let rows = Rows {
            n: 5,
            d: 3,
            data: (0..15).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let score = expected_jacobian(&s, &rows).unwrap();
        let density = |x: &[f64], j: usize| (-s.nll(j, x, false).unwrap().loss).exp();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let mut acc = 0.0;
                for r in 0..5 {
                    let mut x = rows.row(r).to_vec();
                    x[i] += 1e-6;
                    let up = density(&x, j);
                    x[i] -= 2e-6;
                    let dn = density(&x, j);
                    acc += ((up - dn) / 2e-6).abs();
                }
                let fd = acc / 5.0;
                assert!((fd - score.get(i, j)).abs() < 1e-6 * fd.max(1.0), "{i}->{j}");
            }
        }
    }

    #[test]
    fn importance_selection_rule() {
        assert_eq!(select_by_importance(&[0.1, 0.9, 0.5], 0.75), vec![1, 2]);
        assert!(select_by_importance(&[0.25; 4], 1.0).is_empty());
    }

    #[test]
    fn pns_keeps_an_exact_copy_and_survives_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 300;
        let mut x = DMatrix::from_fn(n, 5, |_, _| rng.random_range(-1.0..1.0));
        for r in 0..n {
            x[(r, 4)] = x[(r, 1)];
        }
        let ds = dataset(x, 1);
        let rep = pns(&ds, 0.75, 50, 9).unwrap();
        assert!(rep.kept[4].contains(&1));
        assert!(rep.kept[1].contains(&4));
        // target 0 is pure noise: no crash, importances sum to one
        assert!((rep.importances[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(rep.importances[0][0], 0.0);
        assert!(rep.degenerate.is_empty());
        let allowed = rep.candidates_by_target();
        assert!(allowed[4][1] && !allowed[4][4]);
        assert_eq!(pns(&ds, 0.75, 50, 9).unwrap(), rep);
    }

    #[test]
    fn bspline_basis_is_a_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..2.0)).collect();
        let knots = spline_knots(&x, 10);
        assert_eq!(knots.len(), 18);
        for &v in x.iter().chain(&[knots[0], knots[17]]) {
            let b = bspline_basis(v, &knots, 3);
            assert_eq!(b.len(), 14);
            assert!(b.iter().all(|&w| w >= -1e-15));
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bspline_reproduces_a_cubic() {
        // cubic splines contain every cubic polynomial: the least-squares fit is exact
        let x: Vec<f64> = (0..100).map(|k| k as f64 / 33.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v * v - 2.0 * v + 0.5).collect();
        let block = spline_block(&x, SPLINE_INTERIOR_KNOTS);
        let design = DMatrix::from_fn(100, 1 + block[0].len(), |r, c| if c == 0 { 1.0 } else { block[r][c - 1] });
        let fit = least_squares(&design, &DVector::from_vec(y));
        assert!(fit.rss < 1e-16, "{}", fit.rss);
    }

    #[test]
    fn prune_removes_spurious_parent_and_keeps_real_one() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 500;
            let mut x: DMatrix<f64> = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
            for r in 0..n {
                x[(r, 2)] = (1.5 * x[(r, 0)]).sin() + 0.1 * rng.random_range(-1.0..1.0);
            }
            let ds = dataset(x, seed);
            let g = Dag::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
            let (pruned, report) = prune(&g, &ds, 1e-3).unwrap();
            assert!(pruned.has_edge(0, 2), "seed {seed}");
            assert!(!pruned.has_edge(1, 2), "seed {seed}: {:?}", report.nodes[2].p_values);
            assert_eq!(report.nodes[0].parents, Vec::<usize>::new());
            assert!(report.nodes[2].p_values[0] < 1e-10);
        }
    }

    #[test]
    fn prune_only_deletes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = crate::graph::sample_er(5, 5.0, &mut rng).unwrap();
        let sim = simulate(Scheme::GaussAnm, &g, 200, 6, &GenOptions::default()).unwrap();
        let ds = dataset(sim.x, 6);
        let (pruned, _) = prune(&g, &ds, 1e-3).unwrap();
        for (i, j) in pruned.edges() {
            assert!(g.has_edge(i, j));
        }
    }

    #[test]
    fn retrained_empty_graph_matches_gaussian_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(1000, 2, |_, _| rng.random_range(-1.0..1.0));
        let ds = dataset(x, 7);
        let cfg = TrainConfig {
            eval_period: 200,
            ..TrainConfig::default()
        };
        let score = retrain_heldout_score(&Dag::empty(2), &ds, &cfg).unwrap();
        // closed form: Gaussian with train mean 0 and variance 1 on standardized data
        let mut oracle = 0.0;
        for r in ds.heldout.iter() {
            for &v in r {
                oracle -= crate::nn::gaussian_nll(v, 0.0, 1.0);
            }
        }
        oracle /= ds.heldout.n as f64;
        assert!((score - oracle).abs() < 0.05, "score {score} oracle {oracle}");
        assert_eq!(retrain_heldout_score(&Dag::empty(2), &ds, &cfg).unwrap(), score);
    }

    #[test]
    fn retrained_true_graph_beats_empty_graph() {
        let g = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let cfg = TrainConfig {
            eval_period: 200,
            ..TrainConfig::default()
        };
        for seed in 0..2 {
            let sim = simulate(Scheme::GaussAnm, &g, 500, seed, &GenOptions::default()).unwrap();
            let ds = dataset(sim.x, seed);
            let truth = retrain_heldout_score(&g, &ds, &cfg).unwrap();
            let empty = retrain_heldout_score(&Dag::empty(3), &ds, &cfg).unwrap();
            assert!(truth > empty, "seed {seed}: {truth} vs {empty}");
        }
    }
}
