//! Extremely randomized regression trees, used only for their impurity-based
//! feature importances.

use rand::Rng;

/// Fits `n_trees` fully grown trees of `y` on the columns of `x` (row-major,
/// `n x p`) and returns the feature importances, averaged over trees and
/// normalized to sum to one. Returns all zeros if no tree could split.
///
/// Each split draws one uniform threshold per feature between the feature's
/// minimum and maximum in the node and keeps the feature with the largest
/// variance reduction.
pub fn feature_importances<R: Rng + ?Sized>(x: &[f64], p: usize, y: &[f64], n_trees: usize, rng: &mut R) -> Vec<f64> {
    let n = y.len();
    assert_eq!(x.len(), n * p);
    let mut total = vec![0.0; p];
    let mut tree_imp = vec![0.0; p];
    let mut idx: Vec<usize> = (0..n).collect();
    let mut stack: Vec<(usize, usize)> = Vec::new();

    for _ in 0..n_trees {
        tree_imp.iter_mut().for_each(|v| *v = 0.0);
        idx.iter_mut().enumerate().for_each(|(k, v)| *v = k);
        stack.clear();
        stack.push((0, n));
        while let Some((lo, hi)) = stack.pop() {
            let node = &mut idx[lo..hi];
            let m = node.len();
            if m < 2 {
                continue;
            }
            let (sum, sum_sq) = node.iter().fold((0.0, 0.0), |(s, q), &r| (s + y[r], q + y[r] * y[r]));
            let sse = sum_sq - sum * sum / m as f64;
            if sse <= 1e-12 * sum_sq.max(1e-300) {
                continue;
            }
            let base = sum * sum / m as f64;

            let mut best: Option<(usize, f64, f64)> = None;
            for f in 0..p {
                let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
                for &r in node.iter() {
                    let v = x[r * p + f];
                    lo_v = lo_v.min(v);
                    hi_v = hi_v.max(v);
                }
                if !(hi_v > lo_v) {
                    continue;
                }
                let t = rng.random_range(lo_v..hi_v);
                let (mut sl, mut nl) = (0.0, 0usize);
                for &r in node.iter() {
                    if x[r * p + f] <= t {
                        sl += y[r];
                        nl += 1;
                    }
                }
                let nr = m - nl;
                if nl == 0 || nr == 0 {
                    continue;
                }
                let sr = sum - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - base;
                if best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((f, t, gain));
                }
            }
            let Some((f, t, gain)) = best else { continue };
            tree_imp[f] += gain.max(0.0);
            // partition in place: left block `<= t`
            let mut split = 0;
            for k in 0..m {
                if x[node[k] * p + f] <= t {
                    node.swap(k, split);
                    split += 1;
                }
            }
            stack.push((lo, lo + split));
            stack.push((lo + split, hi));
        }
        let s: f64 = tree_imp.iter().sum();
        if s > 0.0 {
            total.iter_mut().zip(&tree_imp).for_each(|(t, v)| *t += v / s);
        }
    }
    let s: f64 = total.iter().sum();
    if s > 0.0 {
        total.iter_mut().for_each(|v| *v /= s);
    }
    total
}
