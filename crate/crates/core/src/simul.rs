//! Synthetic data from a ground-truth DAG, and the train / held-out split.
//!
//! Every node draws its hyperparameters, function sample and noise from its
//! own ChaCha stream derived from a base seed, so a column depends only on its
//! ancestors' streams and its own.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;

pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-3;
/// Lower bound applied to parent sums before the logarithm in PNL-MULT.
pub const PNL_MULT_SUM_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    GaussAnm,
    Lin,
    AddFunc,
    PnlGp,
    PnlMult,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::GaussAnm, Scheme::Lin, Scheme::AddFunc, Scheme::PnlGp, Scheme::PnlMult];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::GaussAnm => "gauss-anm",
            Scheme::Lin => "lin",
            Scheme::AddFunc => "add-func",
            Scheme::PnlGp => "pnl-gp",
            Scheme::PnlMult => "pnl-mult",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Knobs for tests and audits.
#[derive(Clone, Debug, PartialEq)]
pub struct GenOptions {
    /// Multiplies every non-root noise draw; `0.0` gives the deterministic limit.
    pub noise_scale: f64,
    /// Per-node seed overrides replacing the stream derived from the base seed.
    pub node_seeds: BTreeMap<usize, u64>,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            noise_scale: 1.0,
            node_seeds: BTreeMap::new(),
        }
    }
}

/// Values drawn for one node, recorded for auditing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeDraws {
    pub node: usize,
    pub parents: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub laplace_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Largest diagonal jitter needed by this node's GP draws.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    pub clamp_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub scheme: Scheme,
    pub n: usize,
    pub d: usize,
    pub base_seed: u64,
    pub noise_scale: f64,
    pub nodes: Vec<NodeDraws>,
}

impl GenMeta {
    pub fn max_jitter(&self) -> f64 {
        self.nodes.iter().filter_map(|n| n.jitter).fold(0.0, f64::max)
    }

    pub fn total_clamps(&self) -> usize {
        self.nodes.iter().map(|n| n.clamp_count).sum()
    }
}

/// Generated sample matrix plus the intermediate quantities behind it.
#[derive(Clone, Debug)]
pub struct Simulation {
    /// `n x d` samples.
    pub x: DMatrix<f64>,
    /// Deterministic part per column (function of the parents); zero for roots.
    pub signal: DMatrix<f64>,
    /// Raw noise draws per column, before any scaling by `0.2` or `noise_scale`.
    /// For roots this is the root sample itself.
    pub noise: DMatrix<f64>,
    pub meta: GenMeta,
}

fn node_rng(base_seed: u64, node: usize, opts: &GenOptions) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.node_seeds.get(&node).copied().unwrap_or(base_seed));
    rng.set_stream(node as u64);
    rng
}

/// Unit-bandwidth RBF kernel `exp(-|u - v|^2 / 2)`.
pub fn rbf_kernel(u: &[f64], v: &[f64]) -> f64 {
    let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-0.5 * sq).exp()
}

/// Joint draw of a zero-mean GP with the unit RBF kernel at the given points.
/// Returns the function values and the jitter that made the kernel factorizable.
pub fn sample_gp<R: Rng + ?Sized>(points: &[Vec<f64>], node: usize, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    let n = points.len();
    let kernel = DMatrix::from_fn(n, n, |a, b| rbf_kernel(&points[a], &points[b]));
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let mut jitter = JITTER_START;
    loop {
        let mut k = kernel.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            let f = chol.l() * z;
            return Ok((f.iter().copied().collect(), jitter));
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::Generation {
                node,
                reason: format!("GP kernel not positive definite with jitter up to {JITTER_MAX:e}"),
            });
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Ancestral sampling of `n` rows under `scheme`.
pub fn simulate(scheme: Scheme, g: &Dag, n: usize, base_seed: u64, opts: &GenOptions) -> Result<Simulation> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let d = g.d();
    let mut x = DMatrix::zeros(n, d);
    let mut signal = DMatrix::zeros(n, d);
    let mut noise = DMatrix::zeros(n, d);
    let mut nodes = vec![NodeDraws::default(); d];
    let ns = opts.noise_scale;

    for j in g.topological_order() {
        let parents = g.parents(j);
        let mut rng = node_rng(base_seed, j, opts);
        let mut draws = NodeDraws {
            node: j,
            parents: parents.clone(),
            ..NodeDraws::default()
        };

        if parents.is_empty() {
            match scheme {
                Scheme::GaussAnm => {
                    let v = rng.random_range(1.0..2.0);
                    draws.root_variance = Some(v);
                    let dist = Normal::new(0.0, f64::sqrt(v)).expect("valid normal");
                    for r in 0..n {
                        noise[(r, j)] = dist.sample(&mut rng);
                    }
                }
                Scheme::PnlMult => {
                    for r in 0..n {
                        noise[(r, j)] = rng.random_range(0.0..2.0);
                    }
                }
                _ => {
                    for r in 0..n {
                        noise[(r, j)] = rng.random_range(-1.0..1.0);
                    }
                }
            }
            for r in 0..n {
                x[(r, j)] = noise[(r, j)];
            }
            nodes[j] = draws;
            continue;
        }

        match scheme {
            Scheme::GaussAnm | Scheme::PnlGp => {
                let points: Vec<Vec<f64>> = (0..n).map(|r| parents.iter().map(|&p| x[(r, p)]).collect()).collect();
                let (f, jitter) = sample_gp(&points, j, &mut rng)?;
                draws.jitter = Some(jitter);
                for r in 0..n {
                    signal[(r, j)] = f[r];
                }
                if scheme == Scheme::GaussAnm {
                    let s2 = rng.random_range(0.4..0.8);
                    draws.noise_variance = Some(s2);
                    let dist = Normal::new(0.0, f64::sqrt(s2)).expect("valid normal");
                    for r in 0..n {
                        noise[(r, j)] = dist.sample(&mut rng);
                        x[(r, j)] = f[r] + ns * noise[(r, j)];
                    }
                } else {
                    let l = rng.random_range(0.0..1.0);
                    draws.laplace_scale = Some(l);
                    for r in 0..n {
                        let e1: f64 = Exp1.sample(&mut rng);
                        let e2: f64 = Exp1.sample(&mut rng);
                        noise[(r, j)] = l * (e1 - e2);
                        x[(r, j)] = sigmoid(f[r] + ns * noise[(r, j)]);
                    }
                }
            }
            Scheme::Lin => {
                let w: Vec<f64> = parents.iter().map(|_| rng.random_range(0.0..1.0)).collect();
                let s2 = rng.random_range(1.0..2.0);
                let dist = Normal::new(0.0, f64::sqrt(s2)).expect("valid normal");
                for r in 0..n {
                    let f: f64 = parents.iter().zip(&w).map(|(&p, wi)| wi * x[(r, p)]).sum();
                    signal[(r, j)] = f;
                    noise[(r, j)] = dist.sample(&mut rng);
                    x[(r, j)] = f + 0.2 * ns * noise[(r, j)];
                }
                draws.weights = Some(w);
                draws.noise_variance = Some(s2);
            }
            Scheme::AddFunc => {
                let mut total = vec![0.0; n];
                let mut max_jitter: f64 = 0.0;
                for &p in &parents {
                    let points: Vec<Vec<f64>> = (0..n).map(|r| vec![x[(r, p)]]).collect();
                    let (f, jitter) = sample_gp(&points, j, &mut rng)?;
                    max_jitter = max_jitter.max(jitter);
                    total.iter_mut().zip(&f).for_each(|(t, v)| *t += v);
                }
                draws.jitter = Some(max_jitter);
                let s2 = rng.random_range(1.0..2.0);
                draws.noise_variance = Some(s2);
                let dist = Normal::new(0.0, f64::sqrt(s2)).expect("valid normal");
                for r in 0..n {
                    signal[(r, j)] = total[r];
                    noise[(r, j)] = dist.sample(&mut rng);
                    x[(r, j)] = total[r] + 0.2 * ns * noise[(r, j)];
                }
            }
            Scheme::PnlMult => {
                let s2 = rng.random_range(0.0..1.0);
                draws.noise_variance = Some(s2);
                let dist = Normal::new(0.0, f64::sqrt(s2)).expect("valid normal");
                for r in 0..n {
                    let mut sum: f64 = parents.iter().map(|&p| x[(r, p)]).sum();
                    if sum < PNL_MULT_SUM_FLOOR {
                        sum = PNL_MULT_SUM_FLOOR;
                        draws.clamp_count += 1;
                    }
                    let e: f64 = dist.sample(&mut rng);
                    signal[(r, j)] = sum.ln();
                    noise[(r, j)] = e.abs();
                    x[(r, j)] = (sum.ln() + ns * e.abs()).exp();
                }
            }
        }
        nodes[j] = draws;
    }

    Ok(Simulation {
        x,
        signal,
        noise,
        meta: GenMeta {
            scheme,
            n,
            d,
            base_seed,
            noise_scale: ns,
            nodes,
        },
    })
}

pub fn gen_gauss_anm<R: Rng + ?Sized>(g: &Dag, n: usize, rng: &mut R) -> Result<Simulation> {
    simulate(Scheme::GaussAnm, g, n, rng.random(), &GenOptions::default())
}

pub fn gen_lin<R: Rng + ?Sized>(g: &Dag, n: usize, rng: &mut R) -> Result<Simulation> {
    simulate(Scheme::Lin, g, n, rng.random(), &GenOptions::default())
}

pub fn gen_add_func<R: Rng + ?Sized>(g: &Dag, n: usize, rng: &mut R) -> Result<Simulation> {
    simulate(Scheme::AddFunc, g, n, rng.random(), &GenOptions::default())
}

pub fn gen_pnl_gp<R: Rng + ?Sized>(g: &Dag, n: usize, rng: &mut R) -> Result<Simulation> {
    simulate(Scheme::PnlGp, g, n, rng.random(), &GenOptions::default())
}

pub fn gen_pnl_mult<R: Rng + ?Sized>(g: &Dag, n: usize, rng: &mut R) -> Result<Simulation> {
    simulate(Scheme::PnlMult, g, n, rng.random(), &GenOptions::default())
}

/// Row-major sample block.
#[derive(Clone, Debug, PartialEq)]
pub struct Rows {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Rows {
    pub fn from_matrix(x: &DMatrix<f64>, rows: &[usize]) -> Self {
        let d = x.ncols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend((0..d).map(|c| x[(r, c)]));
        }
        Rows { n: rows.len(), d, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.d..(r + 1) * self.d]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.data[r * self.d + c]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d.max(1)).take(self.n)
    }
}

/// Samples split into train and held-out rows, optionally standardized with
/// train-split statistics.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Rows,
    pub heldout: Rows,
    pub train_index: Vec<usize>,
    pub heldout_index: Vec<usize>,
    /// Per-column train mean and standard deviation; identity when not standardized.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub standardized: bool,
}

impl Dataset {
    pub fn d(&self) -> usize {
        self.train.d
    }

    pub fn n(&self) -> usize {
        self.train.n + self.heldout.n
    }

    /// Train rows followed by held-out rows.
    pub fn all_rows(&self) -> Rows {
        let mut data = self.train.data.clone();
        data.extend_from_slice(&self.heldout.data);
        Rows {
            n: self.n(),
            d: self.d(),
            data,
        }
    }
}

/// Seeded shuffle, split, and optional per-column standardization.
pub fn split_and_standardize<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    train_fraction: f64,
    standardize: bool,
    rng: &mut R,
) -> Result<Dataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::invalid("need at least two rows to split"));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let train_index = perm[..n_train].to_vec();
    let heldout_index = perm[n_train..].to_vec();

    let mut mean = vec![0.0; d];
    let mut std = vec![1.0; d];
    let mut x = x.clone();
    if standardize {
        for c in 0..d {
            let m = train_index.iter().map(|&r| x[(r, c)]).sum::<f64>() / n_train as f64;
            let var = train_index.iter().map(|&r| (x[(r, c)] - m).powi(2)).sum::<f64>() / n_train as f64;
            let s = var.sqrt();
            if !(s > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::ConstantColumn { column: c });
            }
            mean[c] = m;
            std[c] = s;
            for r in 0..n {
                x[(r, c)] = (x[(r, c)] - m) / s;
            }
        }
    }
    Ok(Dataset {
        train: Rows::from_matrix(&x, &train_index),
        heldout: Rows::from_matrix(&x, &heldout_index),
        train_index,
        heldout_index,
        mean,
        std,
        standardized: standardize,
    })
}
