//! End-to-end estimation: training, thresholding to a DAG, and pruning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::linear::{train_linear, LinearConfig, LinearModel};
use crate::nn::{Head, NnStack};
use crate::optim::{train, OptimRecord, TrainConfig};
use crate::post::{jacobian_threshold, prune, PnsReport, PruneReport};
use crate::simul::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "grandag")]
    GranDag,
    /// Networks also output the log-variance.
    #[serde(rename = "grandag++")]
    GranDagPlusPlus,
    #[serde(rename = "linear")]
    Linear,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GranDag => "grandag",
            Method::GranDagPlusPlus => "grandag++",
            Method::Linear => "linear",
        }
    }

    /// The training configuration this method actually runs with.
    pub fn adjust(self, cfg: &TrainConfig) -> TrainConfig {
        let mut cfg = cfg.clone();
        match self {
            Method::GranDag => cfg.head = Head::MeanOnly,
            Method::GranDagPlusPlus => cfg.head = Head::MeanLogVariance,
            Method::Linear => {}
        }
        cfg
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grandag" => Ok(Method::GranDag),
            "grandag++" => Ok(Method::GranDagPlusPlus),
            "linear" => Ok(Method::Linear),
            other => Err(Error::invalid(format!("unknown method {other:?} (grandag, grandag++, linear)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything produced by one estimation run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub method: Method,
    pub config: TrainConfig,
    /// Final estimate (after pruning when enabled).
    pub estimate: Dag,
    /// DAG right after thresholding, before pruning.
    pub thresholded: Dag,
    pub record: OptimRecord,
    pub pns: Option<PnsReport>,
    pub prune: Option<PruneReport>,
    pub stack: Option<NnStack>,
    pub linear: Option<LinearModel>,
    pub warnings: Vec<String>,
}

pub fn run(ds: &Dataset, cfg: &TrainConfig, method: Method, lin: &LinearConfig) -> Result<RunOutput> {
    let cfg = method.adjust(cfg);
    let mut warnings = Vec::new();
    let out = match method {
        Method::Linear => {
            let l = train_linear(ds, &cfg, lin)?;
            RunOutput {
                method,
                estimate: l.dag.clone(),
                thresholded: l.dag,
                record: l.record,
                pns: None,
                prune: None,
                stack: None,
                linear: Some(l.model),
                config: cfg,
                warnings: Vec::new(),
            }
        }
        Method::GranDag | Method::GranDagPlusPlus => {
            let t = train(ds, &cfg)?;
            if t.variance_clamps > 0 {
                warnings.push(format!("variance floor hit {} times", t.variance_clamps));
            }
            if let Some(p) = &t.pns {
                for j in &p.degenerate {
                    warnings.push(format!("node {j}: constant target in neighbour selection, all candidates kept"));
                }
            }
            let (thresholded, _) = jacobian_threshold(&t.stack, ds)?;
            let (estimate, prune_report) = if cfg.prune {
                let (g, r) = prune(&thresholded, ds, cfg.prune_cutoff)?;
                warnings.extend(r.warnings());
                (g, Some(r))
            } else {
                (thresholded.clone(), None)
            };
            RunOutput {
                method,
                estimate,
                thresholded,
                record: t.record,
                pns: t.pns,
                prune: prune_report,
                stack: Some(t.stack),
                linear: None,
                config: cfg,
                warnings,
            }
        }
    };
    let mut out = out;
    if out.record.budget_exceeded() {
        out.warnings.push(format!(
            "training stopped on its budget ({:?}) after {} iterations with h = {:e}",
            out.record.termination, out.record.state.iter_total, out.record.final_h
        ));
    }
    Ok(out)
}
