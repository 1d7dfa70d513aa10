//! Random hyperparameter search scored by the held-out log-likelihood of a
//! model refitted on the selected graph.

use std::io::Write;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::linear::{linear_retrain_heldout_score, LinearConfig};
use crate::optim::{Termination, TrainConfig};
use crate::pipeline::{run, Method};
use crate::post::retrain_heldout_score;
use crate::simul::Dataset;

/// Wall-clock budget per trial when none is configured: twelve hours.
pub const DEFAULT_TRIAL_BUDGET_SECS: f64 = 12.0 * 3600.0;

/// `10^U[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogUniform {
    pub lo: f64,
    pub hi: f64,
}

impl LogUniform {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        10f64.powf(rng.random_range(self.lo..=self.hi))
    }

    pub fn contains(&self, v: f64) -> bool {
        let e = v.log10();
        e >= self.lo - 1e-12 && e <= self.hi + 1e-12
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GranDagSpace {
    pub lr_first: LogUniform,
    pub lr_rest: LogUniform,
    pub edge_threshold: Vec<f64>,
    pub prune_cutoff: Vec<f64>,
    pub hidden_units: Vec<usize>,
    pub hidden_layers: Vec<usize>,
    pub h_tol: Vec<f64>,
    pub pns_threshold: Vec<f64>,
}

impl Default for GranDagSpace {
    fn default() -> Self {
        GranDagSpace {
            lr_first: LogUniform { lo: -3.0, hi: -2.0 },
            lr_rest: LogUniform { lo: -4.0, hi: -3.0 },
            edge_threshold: vec![1e-3, 1e-4, 1e-5],
            prune_cutoff: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            hidden_units: vec![4, 8, 16, 32],
            hidden_layers: vec![1, 2, 3],
            h_tol: vec![1e-6, 1e-8, 1e-10],
            pns_threshold: vec![0.5, 0.75, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSpace {
    pub l1_coeff: Vec<f64>,
    pub final_threshold: Vec<f64>,
    pub h_tol: Vec<f64>,
}

impl Default for LinearSpace {
    fn default() -> Self {
        LinearSpace {
            l1_coeff: vec![0.001, 0.005, 0.01, 0.05, 0.1, 0.5],
            final_threshold: vec![0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0],
            h_tol: vec![1e-6, 1e-8, 1e-10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum SearchSpace {
    GranDag(GranDagSpace),
    Linear(LinearSpace),
}

impl SearchSpace {
    /// The default space for a method's family.
    pub fn for_method(method: Method) -> Self {
        match method {
            Method::GranDag | Method::GranDagPlusPlus => SearchSpace::GranDag(GranDagSpace::default()),
            Method::Linear => SearchSpace::Linear(LinearSpace::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
            if v.is_empty() {
                return Err(Error::invalid(format!("search space choice set {name} is empty")));
            }
            Ok(())
        }
        match self {
            SearchSpace::GranDag(s) => {
                for r in [s.lr_first, s.lr_rest] {
                    if !(r.lo <= r.hi && r.lo.is_finite() && r.hi.is_finite()) {
                        return Err(Error::invalid("log-uniform range must satisfy lo <= hi"));
                    }
                }
                nonempty("edge_threshold", &s.edge_threshold)?;
                nonempty("prune_cutoff", &s.prune_cutoff)?;
                nonempty("hidden_units", &s.hidden_units)?;
                nonempty("hidden_layers", &s.hidden_layers)?;
                nonempty("h_tol", &s.h_tol)?;
                nonempty("pns_threshold", &s.pns_threshold)
            }
            SearchSpace::Linear(s) => {
                nonempty("l1_coeff", &s.l1_coeff)?;
                nonempty("final_threshold", &s.final_threshold)?;
                nonempty("h_tol", &s.h_tol)
            }
        }
    }
}

/// One draw from a search space, applied on top of base configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledConfig {
    pub train: TrainConfig,
    pub linear: LinearConfig,
}

fn pick<T: Copy, R: Rng + ?Sized>(choices: &[T], rng: &mut R) -> T {
    *choices.choose(rng).expect("validated non-empty choice set")
}

/// Draws every hyperparameter of `space` once; fields outside the space keep
/// their base values.
pub fn sample_config<R: Rng + ?Sized>(space: &SearchSpace, base: &SampledConfig, rng: &mut R) -> SampledConfig {
    let mut out = base.clone();
    match space {
        SearchSpace::GranDag(s) => {
            let t = &mut out.train;
            t.lr_first = s.lr_first.sample(rng);
            t.lr_rest = s.lr_rest.sample(rng);
            t.edge_threshold = pick(&s.edge_threshold, rng);
            t.prune_cutoff = pick(&s.prune_cutoff, rng);
            let units = pick(&s.hidden_units, rng);
            let layers = pick(&s.hidden_layers, rng);
            t.hidden = vec![units; layers];
            t.h_tol = pick(&s.h_tol, rng);
            t.pns_threshold = pick(&s.pns_threshold, rng);
        }
        SearchSpace::Linear(s) => {
            out.linear.l1_coeff = pick(&s.l1_coeff, rng);
            out.linear.final_threshold = pick(&s.final_threshold, rng);
            out.train.h_tol = pick(&s.h_tol, rng);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Ok,
    /// Finished but training hit its wall-clock budget; not eligible for selection.
    TimedOut,
    Failed,
}

/// One row of the trial table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub config: SampledConfig,
    pub score: Option<f64>,
    pub status: TrialStatus,
    pub wall_secs: f64,
    pub edges: Option<usize>,
    pub message: Option<String>,
}

/// What a runner returns for a completed trial.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub dag: Dag,
    pub score: f64,
    pub timed_out: bool,
}

/// Executes one trial. The default implementation is [`PipelineRunner`];
/// tests substitute cheap scorers.
pub trait TrialRunner: Sync {
    fn run_trial(&self, trial: usize, config: &SampledConfig) -> Result<TrialResult>;
}

/// Trains, post-processes, and scores by refitting on the estimated graph.
pub struct PipelineRunner<'a> {
    pub dataset: &'a Dataset,
    pub method: Method,
}

impl TrialRunner for PipelineRunner<'_> {
    fn run_trial(&self, _trial: usize, config: &SampledConfig) -> Result<TrialResult> {
        let out = run(self.dataset, &config.train, self.method, &config.linear)?;
        let score = match self.method {
            Method::Linear => linear_retrain_heldout_score(&out.estimate, self.dataset)?,
            _ => retrain_heldout_score(&out.estimate, self.dataset, &out.config)?,
        };
        Ok(TrialResult {
            dag: out.estimate,
            score,
            timed_out: out.record.termination == Termination::TimeBudget,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// Index into `trials` of the selected trial.
    pub best: usize,
    pub best_dag: Dag,
    pub trials: Vec<TrialRecord>,
}

impl SearchOutcome {
    pub fn best_record(&self) -> &TrialRecord {
        &self.trials[self.best]
    }
}

/// Argmax of the score over completed trials; ties go to the earlier trial.
pub fn select_best(trials: &[TrialRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, t) in trials.iter().enumerate() {
        let Some(s) = t.score.filter(|s| t.status == TrialStatus::Ok && s.is_finite()) else {
            continue;
        };
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

/// Runs `trials` independent trials. Trial `k` is sampled from its own
/// generator seeded with `base_seed + k`, and that seed is also the training
/// seed, so any trial can be rerun alone. Trials run in parallel on the
/// current rayon pool; results are ordered by trial index.
pub fn run_search<T: TrialRunner>(
    runner: &T,
    space: &SearchSpace,
    base: &SampledConfig,
    trials: usize,
    base_seed: u64,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    space.validate()?;
    let results: Vec<(TrialRecord, Option<Dag>)> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed.wrapping_add(k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut config = sample_config(space, base, &mut rng);
            config.train.seed = seed;
            if config.train.time_budget_secs.is_none() {
                config.train.time_budget_secs = Some(DEFAULT_TRIAL_BUDGET_SECS);
            }
            let start = Instant::now();
            let outcome = runner.run_trial(k, &config);
            let wall_secs = start.elapsed().as_secs_f64();
            let mut rec = TrialRecord {
                trial: k,
                seed,
                config,
                score: None,
                status: TrialStatus::Failed,
                wall_secs,
                edges: None,
                message: None,
            };
            match outcome {
                Ok(r) => {
                    rec.score = Some(r.score);
                    rec.edges = Some(r.dag.n_edges());
                    rec.status = if r.timed_out { TrialStatus::TimedOut } else { TrialStatus::Ok };
                    (rec, Some(r.dag))
                }
                Err(e) => {
                    rec.message = Some(e.to_string());
                    (rec, None)
                }
            }
        })
        .collect();
    let (records, dags): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let best = select_best(&records).ok_or(Error::AllTrialsFailed)?;
    let best_dag = dags[best].clone().expect("selected trial completed");
    Ok(SearchOutcome {
        best,
        best_dag,
        trials: records,
    })
}

#[derive(Serialize, Deserialize)]
struct TrialRow {
    trial: usize,
    seed: u64,
    config: String,
    score: Option<f64>,
    status: String,
    wall_secs: f64,
    edges: Option<usize>,
    message: Option<String>,
}

fn status_name(s: &TrialStatus) -> &'static str {
    match s {
        TrialStatus::Ok => "ok",
        TrialStatus::TimedOut => "timed-out",
        TrialStatus::Failed => "failed",
    }
}

/// Trial table as CSV with the sampled configuration embedded as JSON.
pub fn write_trial_table<W: Write>(trials: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in trials {
        w.serialize(TrialRow {
            trial: t.trial,
            seed: t.seed,
            config: serde_json::to_string(&t.config)?,
            score: t.score,
            status: status_name(&t.status).to_string(),
            wall_secs: t.wall_secs,
            edges: t.edges,
            message: t.message.clone(),
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trial_table<R: std::io::Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize::<TrialRow>() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        let status = match row.status.as_str() {
            "ok" => TrialStatus::Ok,
            "timed-out" => TrialStatus::TimedOut,
            "failed" => TrialStatus::Failed,
            other => return Err(Error::Parse(format!("unknown trial status {other:?}"))),
        };
        out.push(TrialRecord {
            trial: row.trial,
            seed: row.seed,
            config: serde_json::from_str(&row.config)?,
            score: row.score,
            status,
            wall_secs: row.wall_secs,
            edges: row.edges,
            message: row.message,
        });
    }
    Ok(out)
}
