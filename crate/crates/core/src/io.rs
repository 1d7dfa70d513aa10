//! File formats: headerless numeric CSV for data matrices and a versioned JSON
//! checkpoint for trained network stacks.
//!
//! Checkpoint layout (`format = "grandag-checkpoint"`, `version = 1`):
//!
//! ```json
//! {
//!   "format": "grandag-checkpoint",
//!   "version": 1,
//!   "architecture": { "d": 3, "hidden": [10, 10], "head": "mean-only", "leaky_slope": 0.01 },
//!   "masks": [[false, true, true], ...],   // masks[j][i]: input i feeds network j
//!   "params": [ ... ]                      // flat, network-major
//! }
//! ```
//!
//! Within a network, parameters are stored layer by layer, each as a row-major
//! `fan_in x fan_out` weight block followed by `fan_out` biases; mean-only
//! networks end with one free log-variance.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, NnStack};

pub const CHECKPOINT_FORMAT: &str = "grandag-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub masks: Vec<Vec<bool>>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_stack(stack: &NnStack) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture: stack.arch().clone(),
            masks: stack.masks().to_vec(),
            params: stack.params().to_vec(),
        }
    }

    pub fn into_stack(self) -> Result<NnStack> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("not a checkpoint (format {:?})", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", self.version)));
        }
        let d = self.architecture.d;
        if self.masks.len() != d || self.masks.iter().any(|r| r.len() != d) {
            return Err(Error::Parse("checkpoint masks must be d x d".into()));
        }
        if (0..d).any(|j| self.masks[j][j]) {
            return Err(Error::Parse("checkpoint masks enable a self-loop".into()));
        }
        let mut stack = NnStack::zeros(self.architecture);
        stack.set_params(&self.params)?;
        stack.set_masks_unchecked(self.masks);
        Ok(stack)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }
}

/// Writes `x` as headerless CSV using the shortest round-tripping decimal form.
pub fn write_matrix_csv<W: Write>(x: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in 0..x.nrows() {
        w.write_record((0..x.ncols()).map(|c| x[(r, c)].to_string()))
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut data = Vec::new();
    let mut ncols = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if *ncols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", line + 1, rec.len(), ncols.unwrap())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: {field:?} is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite value", line + 1)));
            }
            data.push(v);
        }
    }
    let ncols = ncols.ok_or_else(|| Error::Parse("empty data file".into()))?;
    Ok(DMatrix::from_row_slice(data.len() / ncols, ncols, &data))
}
