//! Randomized invariants across modules.

use grandag::graph::{dag_to_cpdag, is_acyclic, PairType};
use grandag::hpsearch::{sample_config, SampledConfig, SearchSpace};
use grandag::linear::LinearConfig;
use grandag::metrics::{shd, shd_c, sid};
use grandag::optim::{maybe_threshold, AugLagState, RmsProp};
use grandag::pipeline::Method;
use grandag::post::{delete_until_acyclic, prune, select_by_importance};
use grandag::simul::split_and_standardize;
use grandag::{Architecture, Dag, Head, NnStack, Pdag, TrainConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A DAG on `d` nodes from a random upper-triangular pattern and a random
/// relabelling.
fn dag_strategy(max_d: usize) -> impl Strategy<Value = Dag> {
    (2..=max_d).prop_flat_map(|d| {
        (
            proptest::collection::vec(any::<bool>(), d * (d - 1) / 2),
            Just((0..d).collect::<Vec<usize>>()).prop_shuffle(),
        )
            .prop_map(move |(bits, perm)| {
                let mut edges = Vec::new();
                let mut k = 0;
                for i in 0..d {
                    for j in i + 1..d {
                        if bits[k] {
                            edges.push((perm[i], perm[j]));
                        }
                        k += 1;
                    }
                }
                Dag::from_edges(d, &edges).unwrap()
            })
    })
}

fn dag_pair(max_d: usize) -> impl Strategy<Value = (Dag, Dag)> {
    dag_strategy(max_d).prop_flat_map(|a| {
        let d = a.d();
        (Just(a), dag_strategy(d).prop_filter("same size", move |b| b.d() == d))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topological_order_respects_every_edge(g in dag_strategy(8)) {
        let order = g.topological_order();
        let pos: Vec<usize> = (0..g.d()).map(|v| order.iter().position(|&o| o == v).unwrap()).collect();
        for (i, j) in g.edges() {
            prop_assert!(pos[i] < pos[j]);
        }
    }

    #[test]
    fn edge_list_round_trip(g in dag_strategy(8)) {
        prop_assert_eq!(Dag::parse_edge_list(&g.to_edge_list()).unwrap(), g);
    }

    #[test]
    fn cpdag_keeps_skeleton_and_is_class_invariant(g in dag_strategy(6)) {
        let p = dag_to_cpdag(&g);
        for a in 0..g.d() {
            for b in a + 1..g.d() {
                prop_assert_eq!(p.adjacent(a, b), g.adjacent(a, b));
                // a directed CPDAG edge agrees with the DAG
                match p.pair(a, b) {
                    PairType::Forward => prop_assert!(g.has_edge(a, b)),
                    PairType::Backward => prop_assert!(g.has_edge(b, a)),
                    _ => {}
                }
            }
        }
        // v-structures are always compelled
        for c in 0..g.d() {
            let pa = g.parents(c);
            for (x, &a) in pa.iter().enumerate() {
                for &b in &pa[x + 1..] {
                    if !g.adjacent(a, b) {
                        prop_assert!(p.is_directed(a, c) && p.is_directed(b, c));
                    }
                }
            }
        }
    }

    #[test]
    fn shd_is_a_metric((a, b) in dag_pair(6)) {
        let (pa, pb) = (Pdag::from(&a), Pdag::from(&b));
        prop_assert_eq!(shd(&pa, &pa).unwrap(), 0);
        prop_assert_eq!(shd(&pa, &pb).unwrap(), shd(&pb, &pa).unwrap());
        prop_assert_eq!(shd_c(&a, &b).unwrap(), shd_c(&b, &a).unwrap());
        prop_assert!(shd_c(&a, &b).unwrap() <= shd(&pa, &pb).unwrap() + a.d() * a.d());
    }

    #[test]
    fn sid_bounds((a, b) in dag_pair(6)) {
        let d = a.d();
        prop_assert_eq!(sid(&a, &a).unwrap(), 0);
        prop_assert!(sid(&a, &b).unwrap() <= d * (d - 1));
    }

    #[test]
    fn deletion_yields_an_acyclic_subset(
        d in 2usize..7,
        raw in proptest::collection::vec((0usize..7, 0usize..7, 0.0f64..1.0), 0..30),
    ) {
        let mut cand: Vec<(usize, usize)> = Vec::new();
        let mut score = vec![vec![0.0; d]; d];
        for (i, j, s) in raw {
            let (i, j) = (i % d, j % d);
            if i != j && !cand.contains(&(i, j)) {
                cand.push((i, j));
                score[i][j] = s;
            }
        }
        let g = delete_until_acyclic(d, &cand, |i, j| score[i][j]);
        prop_assert!(is_acyclic(&g.adjacency()).unwrap());
        prop_assert!(g.edges().iter().all(|e| cand.contains(e)));
        let mut support = vec![vec![false; d]; d];
        cand.iter().for_each(|&(i, j)| support[i][j] = true);
        if is_acyclic(&support).unwrap() {
            prop_assert_eq!(g.n_edges(), cand.len());
        }
    }

    #[test]
    fn importance_selection_keeps_something(v in proptest::collection::vec(0.0f64..1.0, 1..20), factor in 0.1f64..1.0) {
        let kept = select_by_importance(&v, factor);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for (k, &x) in v.iter().enumerate() {
            prop_assert_eq!(kept.contains(&k), x > factor * mean);
        }
        if mean > 0.0 {
            prop_assert!(!kept.is_empty());
        }
    }

    #[test]
    fn threshold_only_removes_inputs(seed in any::<u64>(), eps in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = NnStack::new(Architecture::new(4, vec![3], Head::MeanOnly), &mut rng);
        let before = s.masks().to_vec();
        let removed = maybe_threshold(&mut s, eps);
        for j in 0..4 {
            for i in 0..4 {
                prop_assert!(!s.mask(j, i) || before[j][i]);
                prop_assert_eq!(removed.contains(&(i, j)), before[j][i] && !s.mask(j, i));
            }
        }
        // idempotent at the same threshold
        prop_assert!(maybe_threshold(&mut s, eps).is_empty());
    }

    #[test]
    fn penalty_coefficients_never_decrease(hs in proptest::collection::vec(0.0f64..10.0, 1..20)) {
        let mut st = AugLagState::new(0.0, 1e-3);
        for h in hs {
            let (l, m) = (st.lambda, st.mu);
            st.update(h, 10.0, 0.9);
            prop_assert!(st.lambda >= l && st.mu >= m);
            prop_assert!((st.lambda - (l + m * h)).abs() <= 1e-12 * st.lambda.max(1.0));
        }
    }

    #[test]
    fn rmsprop_steps_are_bounded(g in proptest::collection::vec(-1e3f64..1e3, 1..10), lr in 1e-5f64..1e-1) {
        let mut opt = RmsProp::new(g.len(), 0.9, 1e-8);
        let mut p = vec![0.0; g.len()];
        opt.step(&mut p, &g, lr);
        // first step: |dp| = lr |g| / sqrt(0.1 g^2 + delta) <= lr / sqrt(0.1)
        for (x, gi) in p.iter().zip(&g) {
            prop_assert!(x.abs() <= lr / 0.1f64.sqrt() + 1e-15);
            prop_assert!(*x == 0.0 || x.signum() == -gi.signum());
        }
    }

    #[test]
    fn split_is_a_disjoint_cover(n in 10usize..60, frac in 0.2f64..0.8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |r, c| (r * 7 + c * 3) as f64 + (r as f64).sin());
        let ds = split_and_standardize(&x, frac, true, &mut rng).unwrap();
        let mut all: Vec<usize> = ds.train_index.iter().chain(&ds.heldout_index).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for c in 0..2 {
            let col = ds.train.column(c);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            prop_assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_configs_are_valid(seed in any::<u64>()) {
        let base = SampledConfig { train: TrainConfig::default(), linear: LinearConfig::default() };
        for method in [Method::GranDag, Method::Linear] {
            let c = sample_config(&SearchSpace::for_method(method), &base, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(c.train.validate().is_ok());
            prop_assert!((1e-3..=1e-2).contains(&c.train.lr_first));
            prop_assert!((1e-4..=1e-3).contains(&c.train.lr_rest));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pruning_only_deletes(g in dag_strategy(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(120, g.d(), |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let ds = split_and_standardize(&x, 0.8, true, &mut rng).unwrap();
        let (out, report) = prune(&g, &ds, 1e-3).unwrap();
        prop_assert!(out.edges().iter().all(|&(i, j)| g.has_edge(i, j)));
        for node in &report.nodes {
            prop_assert_eq!(node.parents.len(), node.p_values.len());
        }
    }
}
