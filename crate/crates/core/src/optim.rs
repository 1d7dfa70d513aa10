//! Augmented Lagrangian training with an RMSprop inner solver, minibatching,
//! held-out early stopping and online mask thresholding.
//!
//! The outer loop is written once against [`Learner`], so the neural stack and
//! the linear baseline share every schedule and stopping rule.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{accumulate_h_grad, trace_exp_constraint, weighted_adjacency};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Head, NnStack, Workspace, DEFAULT_LEAKY_SLOPE};
use crate::post::{pns, PnsReport};
use crate::simul::{Dataset, Rows};

/// Hyperparameters of a training run. Defaults follow the reference setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_first: f64,
    pub lr_rest: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
    pub leaky_slope: f64,
    /// Mask entries whose weighted adjacency drops strictly below this are removed.
    pub edge_threshold: f64,
    pub eval_period: usize,
    pub patience: usize,
    /// Training stops once the acyclicity function is at most this.
    pub h_tol: f64,
    pub max_iter: usize,
    pub train_fraction: f64,
    pub standardize: bool,
    pub seed: u64,
    pub lambda0: f64,
    pub mu0: f64,
    /// Penalty growth factor.
    pub eta: f64,
    /// Required relative decrease of the constraint between subproblems.
    pub gamma: f64,
    pub rms_rho: f64,
    pub rms_delta: f64,
    /// Preliminary neighbour selection runs when enabled and `d >= pns_min_nodes`.
    pub pns: bool,
    pub pns_min_nodes: usize,
    pub pns_threshold: f64,
    pub pns_trees: usize,
    pub prune: bool,
    pub prune_cutoff: f64,
    /// Optional wall-clock budget for one training run, in seconds.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_first: 1e-2,
            lr_rest: 1e-4,
            batch_size: 64,
            hidden: vec![10, 10],
            head: Head::MeanOnly,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            edge_threshold: 1e-4,
            eval_period: 100,
            patience: 2,
            h_tol: 1e-8,
            max_iter: 500_000,
            train_fraction: 0.8,
            standardize: true,
            seed: 0,
            lambda0: 0.0,
            mu0: 1e-3,
            eta: 10.0,
            gamma: 0.9,
            rms_rho: 0.9,
            rms_delta: 1e-8,
            pns: true,
            pns_min_nodes: 50,
            pns_threshold: 0.75,
            pns_trees: 500,
            prune: true,
            prune_cutoff: 1e-3,
            time_budget_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self, d: usize) -> Architecture {
        Architecture {
            leaky_slope: self.leaky_slope,
            ..Architecture::new(d, self.hidden.clone(), self.head)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_first", self.lr_first),
            ("lr_rest", self.lr_rest),
            ("mu0", self.mu0),
            ("eta", self.eta),
            ("rms_delta", self.rms_delta),
            ("pns_threshold", self.pns_threshold),
            ("prune_cutoff", self.prune_cutoff),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
        if self.batch_size == 0 || self.eval_period == 0 || self.patience == 0 || self.max_iter == 0 {
            return Err(Error::invalid("batch_size, eval_period, patience and max_iter must be positive"));
        }
        if self.edge_threshold < 0.0 || self.h_tol < 0.0 || self.lambda0 < 0.0 {
            return Err(Error::invalid("edge_threshold, h_tol and lambda0 must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.rms_rho) {
            return Err(Error::invalid("rms_rho must lie in [0, 1)"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// Coefficients of the augmented Lagrangian and the outer-loop history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugLagState {
    pub lambda: f64,
    pub mu: f64,
    /// Constraint value at the end of each completed subproblem.
    pub h_hist: Vec<f64>,
    /// Index of the current subproblem.
    pub t: usize,
    pub iter_total: usize,
}

impl AugLagState {
    pub fn new(lambda0: f64, mu0: f64) -> Self {
        AugLagState {
            lambda: lambda0,
            mu: mu0,
            h_hist: Vec::new(),
            t: 0,
            iter_total: 0,
        }
    }

    /// Coefficient update after a subproblem ends at constraint value `h`:
    /// `lambda += mu * h`, and `mu *= eta` when `h` did not fall below `gamma` times
    /// the previous subproblem's value.
    pub fn update(&mut self, h: f64, eta: f64, gamma: f64) {
        self.lambda += self.mu * h;
        if let Some(&prev) = self.h_hist.last() {
            if h > gamma * prev {
                self.mu *= eta;
            }
        }
        self.h_hist.push(h);
        self.t += 1;
    }
}

/// RMSprop accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub delta: f64,
    pub acc: Vec<f64>,
}

impl RmsProp {
    pub fn new(n: usize, rho: f64, delta: f64) -> Self {
        RmsProp {
            rho,
            delta,
            acc: vec![0.0; n],
        }
    }

    /// `acc <- rho acc + (1 - rho) g^2`, `p <- p - lr g / (sqrt(acc) + delta)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        for ((p, &g), a) in params.iter_mut().zip(grads).zip(&mut self.acc) {
            *a = self.rho * *a + (1.0 - self.rho) * g * g;
            *p -= lr * g / (a.sqrt() + self.delta);
        }
    }
}

/// A model trainable by the augmented Lagrangian loop.
pub trait Learner {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Average data loss over `rows` of `data` (to be minimized); when `grad` is
    /// given the gradient is added into it.
    fn data_loss(&self, data: &Rows, rows: &[usize], grad: Option<&mut [f64]>) -> Result<f64>;
    /// Acyclicity function; when `grad` is given, `scale * dh/dparams` is added.
    fn acyclicity(&self, grad: Option<(f64, &mut [f64])>) -> Result<f64>;
    /// Permanently removes candidate edges whose weight falls below `eps`;
    /// returns the removed `(i, j)` pairs.
    fn threshold(&mut self, eps: f64) -> Vec<(usize, usize)>;
    /// Number of edges in the current weighted-adjacency support.
    fn support_edges(&self) -> usize;
}

/// The neural stack paired with a running count of clamped variances.
#[derive(Clone, Debug)]
pub struct NnLearner {
    pub stack: NnStack,
    pub clamp_count: std::cell::Cell<u64>,
}

impl NnLearner {
    pub fn new(stack: NnStack) -> Self {
        NnLearner {
            stack,
            clamp_count: std::cell::Cell::new(0),
        }
    }
}

impl Learner for NnLearner {
    fn params(&self) -> &[f64] {
        self.stack.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.stack.params_mut()
    }

    fn data_loss(&self, data: &Rows, rows: &[usize], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let s = &self.stack;
        if data.d != s.d() {
            return Err(Error::DimensionMismatch {
                expected: s.d(),
                found: data.d,
            });
        }
        if rows.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / rows.len() as f64;
        let mut ws = Workspace::new(s.arch());
        let mut total = 0.0;
        let mut clamps = 0;
        for j in 0..s.d() {
            let range = s.node_range(j);
            let mut node_total = 0.0;
            for &r in rows {
                let g = grad.as_deref_mut().map(|g| &mut g[range.clone()]);
                let out = s.node_nll(j, data.row(r), &mut ws, scale, g, None);
                node_total += out.value;
                clamps += u64::from(out.clamped);
            }
            if !node_total.is_finite() {
                return Err(Error::numeric(Some(j), "non-finite negative log-likelihood"));
            }
            total += node_total;
        }
        self.clamp_count.set(self.clamp_count.get() + clamps);
        Ok(total * scale)
    }

    fn acyclicity(&self, grad: Option<(f64, &mut [f64])>) -> Result<f64> {
        let a = weighted_adjacency(&self.stack);
        let (h, e) = trace_exp_constraint(&a.0)?;
        if let Some((scale, g)) = grad {
            if scale != 0.0 {
                accumulate_h_grad(&self.stack, &e, scale, g);
            }
        }
        Ok(h)
    }

    fn threshold(&mut self, eps: f64) -> Vec<(usize, usize)> {
        maybe_threshold(&mut self.stack, eps)
    }

    fn support_edges(&self) -> usize {
        let a = weighted_adjacency(&self.stack);
        a.0.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Value and gradient of one stochastic subproblem objective.
#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemObjective {
    /// Average log-likelihood minus `lambda h + mu/2 h^2` (the quantity maximized).
    pub value: f64,
    pub log_likelihood: f64,
    pub h: f64,
    /// Gradient of `-value`, congruent with the parameters.
    pub loss_grad: Vec<f64>,
}

fn objective_of<L: Learner + ?Sized>(
    learner: &L,
    data: &Rows,
    rows: &[usize],
    lambda: f64,
    mu: f64,
    constrained: bool,
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let nll = learner.data_loss(data, rows, Some(grad))?;
    let h = if constrained {
        let h = learner.acyclicity(None)?;
        learner.acyclicity(Some((lambda + mu * h, grad)))?;
        h
    } else {
        0.0
    };
    Ok((nll, h))
}

/// Minibatch objective `(1/|B|) sum log p - lambda h - (mu/2) h^2` of a stack.
pub fn subproblem_objective(stack: &NnStack, batch: &Rows, lambda: f64, mu: f64) -> Result<SubproblemObjective> {
    let learner = NnLearner::new(stack.clone());
    let rows: Vec<usize> = (0..batch.n).collect();
    let mut grad = vec![0.0; stack.params().len()];
    let (nll, h) = objective_of(&learner, batch, &rows, lambda, mu, true, &mut grad)?;
    let value = -nll - lambda * h - 0.5 * mu * h * h;
    if !value.is_finite() {
        return Err(Error::numeric(None, format!("non-finite subproblem objective (nll {nll}, h {h})")));
    }
    Ok(SubproblemObjective {
        value,
        log_likelihood: -nll,
        h,
        loss_grad: grad,
    })
}

/// Masks every input `i` of network `j` whose weighted adjacency `A[i][j]` is
/// strictly below `eps`. Returns newly masked `(i, j)` pairs; masking is permanent.
pub fn maybe_threshold(stack: &mut NnStack, eps: f64) -> Vec<(usize, usize)> {
    let a = weighted_adjacency(stack);
    let d = stack.d();
    let mut removed = Vec::new();
    for j in 0..d {
        for i in 0..d {
            if i != j && stack.mask(j, i) && a.get(i, j) < eps {
                stack.mask_out(j, i);
                removed.push((i, j));
            }
        }
    }
    removed
}

/// One line of the training trajectory, written at every held-out evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iteration: usize,
    pub subproblem: usize,
    pub lambda: f64,
    pub mu: f64,
    pub h: f64,
    /// Mean minibatch loss (negative objective) since the previous row.
    pub train_objective: f64,
    /// Negative augmented objective on the held-out split.
    pub heldout_objective: f64,
    pub edges: usize,
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: std::io::Read>(input: R) -> Result<Vec<TrajectoryRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// How an optimization run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// The constraint reached the tolerance.
    Converged,
    /// Unconstrained fit stopped early on the held-out set.
    EarlyStopped,
    IterationCap,
    TimeBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimRecord {
    pub state: AugLagState,
    pub trajectory: Vec<TrajectoryRow>,
    pub termination: Termination,
    pub final_h: f64,
    /// Every `(i, j)` pair removed by thresholding, in removal order.
    pub thresholded: Vec<(usize, usize)>,
}

impl OptimRecord {
    /// True when the run stopped on a budget rather than on its criterion.
    pub fn budget_exceeded(&self) -> bool {
        matches!(self.termination, Termination::IterationCap | Termination::TimeBudget)
    }
}

/// Whether the loop enforces the constraint or only fits the likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Constrained,
    /// No penalty, no thresholding, a single subproblem at `lr_first`.
    MaxLikelihood,
}

struct Batcher {
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, size: usize, rng: ChaCha8Rng) -> Self {
        let mut b = Batcher {
            order: (0..n).collect(),
            pos: usize::MAX,
            size: size.min(n),
            rng,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    /// Next batch of distinct rows; the remainder of an epoch smaller than a
    /// full batch is dropped and a new epoch starts.
    fn next(&mut self) -> &[usize] {
        if self.pos + self.size > self.order.len() {
            self.reshuffle();
        }
        let b = &self.order[self.pos..self.pos + self.size];
        self.pos += self.size;
        b
    }
}

/// Runs the augmented Lagrangian program on `learner`.
pub fn run_auglag<L: Learner + ?Sized>(learner: &mut L, ds: &Dataset, cfg: &TrainConfig, mode: Mode) -> Result<OptimRecord> {
    cfg.validate()?;
    if ds.heldout.n == 0 || ds.train.n == 0 {
        return Err(Error::invalid("training needs nonempty train and held-out splits"));
    }
    let constrained = mode == Mode::Constrained;
    let n_params = learner.params().len();
    let mut state = if constrained {
        AugLagState::new(cfg.lambda0, cfg.mu0)
    } else {
        AugLagState::new(0.0, 0.0)
    };
    let mut rms = RmsProp::new(n_params, cfg.rms_rho, cfg.rms_delta);
    let mut batcher = Batcher::new(ds.train.n, cfg.batch_size, ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6261_7463_6865_7321));
    let heldout_rows: Vec<usize> = (0..ds.heldout.n).collect();
    let mut grad = vec![0.0; n_params];
    let mut trajectory = Vec::new();
    let mut thresholded = Vec::new();
    let start = Instant::now();

    let heldout_objective = |l: &L, lambda: f64, mu: f64| -> Result<(f64, f64)> {
        let nll = l.data_loss(&ds.heldout, &heldout_rows, None)?;
        let h = if constrained { l.acyclicity(None)? } else { 0.0 };
        Ok((nll + lambda * h + 0.5 * mu * h * h, h))
    };

    let termination = 'outer: loop {
        let lr = if state.t == 0 { cfg.lr_first } else { cfg.lr_rest };
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut bad = 0;
        let mut window_loss = 0.0;
        let mut window_len = 0usize;
        let mut k = 0usize;

        let stop = loop {
            let batch = batcher.next();
            let (nll, h) = objective_of(&*learner, &ds.train, batch, state.lambda, state.mu, constrained, &mut grad)?;
            let loss = nll + state.lambda * h + 0.5 * state.mu * h * h;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(
                    None,
                    format!(
                        "non-finite objective at iteration {} (subproblem {}, lambda {:e}, mu {:e}, h {h:e})",
                        state.iter_total, state.t, state.lambda, state.mu
                    ),
                ));
            }
            rms.step(learner.params_mut(), &grad, lr);
            state.iter_total += 1;
            k += 1;
            window_loss += loss;
            window_len += 1;

            if k % cfg.eval_period == 0 {
                if constrained {
                    thresholded.extend(learner.threshold(cfg.edge_threshold));
                }
                let (ho, h) = heldout_objective(&*learner, state.lambda, state.mu)?;
                trajectory.push(TrajectoryRow {
                    iteration: state.iter_total,
                    subproblem: state.t,
                    lambda: state.lambda,
                    mu: state.mu,
                    h,
                    train_objective: window_loss / window_len as f64,
                    heldout_objective: ho,
                    edges: learner.support_edges(),
                });
                window_loss = 0.0;
                window_len = 0;
                if constrained && h <= cfg.h_tol {
                    break Some(Termination::Converged);
                }
                if best.as_ref().is_none_or(|(b, _)| ho < *b) {
                    best = Some((ho, learner.params().to_vec()));
                    bad = 0;
                } else {
                    bad += 1;
                }
                if bad >= cfg.patience {
                    break None;
                }
                if cfg.time_budget_secs.is_some_and(|b| start.elapsed().as_secs_f64() > b) {
                    break Some(Termination::TimeBudget);
                }
            }
            if state.iter_total >= cfg.max_iter {
                break Some(Termination::IterationCap);
            }
        };

        if stop != Some(Termination::Converged) {
            if let Some((_, params)) = best {
                learner.params_mut().copy_from_slice(&params);
            }
        }
        if let Some(reason) = stop {
            break 'outer reason;
        }
        if !constrained {
            break 'outer Termination::EarlyStopped;
        }
        let h = learner.acyclicity(None)?;
        if h <= cfg.h_tol {
            break 'outer Termination::Converged;
        }
        state.update(h, cfg.eta, cfg.gamma);
    };

    let final_h = if constrained { learner.acyclicity(None)? } else { 0.0 };
    Ok(OptimRecord {
        state,
        trajectory,
        termination,
        final_h,
        thresholded,
    })
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub stack: NnStack,
    pub record: OptimRecord,
    pub pns: Option<PnsReport>,
    pub variance_clamps: u64,
}

/// Full constrained training of a fresh stack, preceded by preliminary
/// neighbour selection on large graphs.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = ds.d();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stack = NnStack::new(cfg.architecture(d), &mut rng);
    let pns_report = if cfg.pns && d >= cfg.pns_min_nodes {
        let report = pns(ds, cfg.pns_threshold, cfg.pns_trees, cfg.seed)?;
        stack.restrict_masks(&report.candidates_by_target())?;
        Some(report)
    } else {
        None
    };
    let mut learner = NnLearner::new(stack);
    let record = run_auglag(&mut learner, ds, cfg, Mode::Constrained)?;
    Ok(TrainOutcome {
        variance_clamps: learner.clamp_count.get(),
        stack: learner.stack,
        record,
        pns: pns_report,
    })
}
