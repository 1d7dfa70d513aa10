//! Linear least-squares baseline trained under the trace-exponential
//! acyclicity constraint with the same augmented Lagrangian loop.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constraint::trace_exp_constraint;
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::optim::{run_auglag, Learner, Mode, OptimRecord, TrainConfig};
use crate::post::delete_until_acyclic;
use crate::simul::{Dataset, Rows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub l1_coeff: f64,
    /// Coefficients with magnitude below this are dropped after training.
    pub final_threshold: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            l1_coeff: 0.1,
            final_threshold: 0.3,
        }
    }
}

/// Coefficient matrix `u` (row-major, `u[i * d + j]` weighs `x_i` in the
/// equation of `x_j`) with a forced zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub d: usize,
    pub u: Vec<f64>,
    pub l1_coeff: f64,
}

impl LinearModel {
    pub fn zeros(d: usize, l1_coeff: f64) -> Self {
        LinearModel {
            d,
            u: vec![0.0; d * d],
            l1_coeff,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.d + j]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.u)
    }
}

/// Score `-(1/2n) |X - XU|_F^2 - l1 |U|_1` over the rows of `x`, and its
/// gradient with respect to `u` (row-major). The L1 subgradient is 0 at 0.
pub fn linear_score(u: &[f64], x: &Rows, l1_coeff: f64) -> Result<(f64, Vec<f64>)> {
    let idx: Vec<usize> = (0..x.n).collect();
    let d = x.d;
    if u.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: u.len(),
        });
    }
    let mut grad = vec![0.0; d * d];
    let loss = least_squares_loss(u, x, &idx, l1_coeff, Some(&mut grad))?;
    grad.iter_mut().for_each(|g| *g = -*g);
    Ok((-loss, grad))
}

fn least_squares_loss(u: &[f64], x: &Rows, rows: &[usize], l1: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    let d = x.d;
    if rows.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = rows.len() as f64;
    let mut resid = vec![0.0; d];
    let mut sq = 0.0;
    let mut g_acc = grad.as_ref().map(|_| vec![0.0; d * d]);
    for &r in rows {
        let xr = x.row(r);
        for j in 0..d {
            let pred: f64 = (0..d).map(|i| xr[i] * u[i * d + j]).sum();
            resid[j] = xr[j] - pred;
            sq += resid[j] * resid[j];
        }
        if let Some(g) = g_acc.as_mut() {
            for i in 0..d {
                for j in 0..d {
                    g[i * d + j] -= xr[i] * resid[j];
                }
            }
        }
    }
    let l1_term: f64 = u.iter().map(|v| v.abs()).sum::<f64>() * l1;
    if let (Some(out), Some(g)) = (grad, g_acc) {
        for i in 0..d {
            for j in 0..d {
                let k = i * d + j;
                out[k] += if i == j { 0.0 } else { g[k] / n + l1 * sign(u[k]) };
            }
        }
    }
    let loss = sq / (2.0 * n) + l1_term;
    if !loss.is_finite() {
        return Err(Error::numeric(None, "non-finite least-squares loss"));
    }
    Ok(loss)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `h = tr exp(U o U) - d` and its gradient `2 exp(U o U)^T o U` (row-major).
pub fn linear_constraint(u: &[f64], d: usize) -> Result<(f64, Vec<f64>)> {
    if u.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: u.len(),
        });
    }
    let sq = DMatrix::from_fn(d, d, |i, j| u[i * d + j] * u[i * d + j]);
    let (h, e) = trace_exp_constraint(&sq)?;
    let grad = (0..d * d).map(|k| 2.0 * e[(k % d, k / d)] * u[k]).collect();
    Ok((h, grad))
}

impl Learner for LinearModel {
    fn params(&self) -> &[f64] {
        &self.u
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    fn data_loss(&self, data: &Rows, rows: &[usize], grad: Option<&mut [f64]>) -> Result<f64> {
        if data.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: data.d,
            });
        }
        least_squares_loss(&self.u, data, rows, self.l1_coeff, grad)
    }

    fn acyclicity(&self, grad: Option<(f64, &mut [f64])>) -> Result<f64> {
        let (h, g) = linear_constraint(&self.u, self.d)?;
        if let Some((scale, out)) = grad {
            out.iter_mut().zip(&g).for_each(|(o, v)| *o += scale * v);
        }
        Ok(h)
    }

    fn threshold(&mut self, _eps: f64) -> Vec<(usize, usize)> {
        Vec::new()
    }

    fn support_edges(&self) -> usize {
        self.u.iter().filter(|&&v| v != 0.0).count()
    }
}

#[derive(Clone, Debug)]
pub struct LinearOutcome {
    pub model: LinearModel,
    pub dag: Dag,
    pub record: OptimRecord,
}

/// Final graph from coefficients: drop `|u| < omega`, then delete remaining
/// edges in ascending `|u|` order until acyclic.
pub fn threshold_linear(model: &LinearModel, omega: f64) -> Dag {
    let d = model.d;
    let kept: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && model.get(i, j).abs() >= omega)
        .collect();
    delete_until_acyclic(d, &kept, |i, j| model.get(i, j).abs())
}

pub fn train_linear(ds: &Dataset, cfg: &TrainConfig, lin: &LinearConfig) -> Result<LinearOutcome> {
    if lin.l1_coeff < 0.0 || !(lin.final_threshold > 0.0) {
        return Err(Error::invalid("l1_coeff must be nonnegative and final_threshold positive"));
    }
    let mut model = LinearModel::zeros(ds.d(), lin.l1_coeff);
    let record = run_auglag(&mut model, ds, cfg, Mode::Constrained)?;
    let dag = threshold_linear(&model, lin.final_threshold);
    Ok(LinearOutcome { model, dag, record })
}

/// Refits each equation by ordinary least squares on the training rows with
/// the parent sets of `g`, and returns the held-out score without the L1 term,
/// `-(1/2n) |X_h - X_h U|_F^2`.
pub fn linear_retrain_heldout_score(g: &Dag, ds: &Dataset) -> Result<f64> {
    let d = ds.d();
    if g.d() != d {
        return Err(Error::DimensionMismatch { expected: d, found: g.d() });
    }
    let mut u = vec![0.0; d * d];
    for j in 0..d {
        let pa = g.parents(j);
        if pa.is_empty() {
            continue;
        }
        let n = ds.train.n;
        let design = DMatrix::from_fn(n, pa.len(), |r, c| ds.train.row(r)[pa[c]]);
        let y = nalgebra::DVector::from_fn(n, |r, _| ds.train.row(r)[j]);
        let gram = design.transpose() * &design;
        let rhs = design.transpose() * y;
        let coef = match gram.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => {
                let ridge = 1e-8 * gram.diagonal().max().max(1.0);
                let reg = gram + DMatrix::identity(pa.len(), pa.len()) * ridge;
                reg.cholesky()
                    .ok_or_else(|| Error::numeric(Some(j), "singular least-squares refit"))?
                    .solve(&rhs)
            }
        };
        for (c, &i) in pa.iter().enumerate() {
            u[i * d + j] = coef[c];
        }
    }
    let idx: Vec<usize> = (0..ds.heldout.n).collect();
    Ok(-least_squares_loss(&u, &ds.heldout, &idx, 0.0, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(seed: u64, n: usize, d: usize) -> Rows {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Rows {
            n,
            d,
            data: (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_coefficients_score_is_half_mean_square() {
        let x = rows(1, 7, 3);
        let (s, _) = linear_score(&[0.0; 9], &x, 0.4).unwrap();
        let want = -x.data.iter().map(|v| v * v).sum::<f64>() / 14.0;
        assert!((s - want).abs() < 1e-15);
    }

    #[test]
    fn stationary_point_is_the_ols_solution() {
        // normal equations for the single equation x_1 ~ x_0
        let x = rows(2, 20, 2);
        let (sxy, sxx) = (0..20).fold((0.0, 0.0), |(a, b), r| {
            let (x0, x1) = (x.data[r * 2], x.data[r * 2 + 1]);
            (a + x0 * x1, b + x0 * x0)
        });
        let u = [0.0, sxy / sxx, 0.0, 0.0];
        let (s, g) = linear_score(&u, &x, 0.0).unwrap();
        assert!(g[1].abs() < 1e-14);
        let ss0: f64 = (0..20).map(|r| x.data[r * 2].powi(2)).sum();
        let ss1: f64 = (0..20).map(|r| (x.data[r * 2 + 1] - u[1] * x.data[r * 2]).powi(2)).sum();
        assert!((s + (ss0 + ss1) / 40.0).abs() < 1e-14);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..10 {
            let x = rows(seed, 12, 3);
            let mut u: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..3).for_each(|k| u[k * 4] = 0.0);
            let (_, g) = linear_score(&u, &x, 0.1).unwrap();
            for k in (0..9).filter(|k| k % 4 != 0) {
                let mut p = u.clone();
                p[k] += 1e-6;
                let up = linear_score(&p, &x, 0.1).unwrap().0;
                p[k] -= 2e-6;
                let dn = linear_score(&p, &x, 0.1).unwrap().0;
                let fd = (up - dn) / 2e-6;
                assert!((fd - g[k]).abs() / fd.abs().max(1e-3) < 1e-6, "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn constraint_values() {
        assert_eq!(linear_constraint(&[0.0; 4], 2).unwrap().0, 0.0);
        let upper = [0.0, 2.0, -1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0];
        assert!(linear_constraint(&upper, 3).unwrap().0.abs() < 1e-14);
        let (h, g) = linear_constraint(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        assert!((h - (2.0 * 1f64.cosh() - 2.0)).abs() < 1e-13);
        // d/du01 of tr exp = 2 u01 * exp(A)_10 = 2 sinh(1)
        assert!((g[1] - 2.0 * 1f64.sinh()).abs() < 1e-13);
    }

    #[test]
    fn constraint_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u: Vec<f64> = (0..16).map(|k| if k % 5 == 0 { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
        let (_, g) = linear_constraint(&u, 4).unwrap();
        for k in 0..16 {
            let mut p = u.clone();
            p[k] += 1e-6;
            let up = linear_constraint(&p, 4).unwrap().0;
            p[k] -= 2e-6;
            let dn = linear_constraint(&p, 4).unwrap().0;
            let fd = (up - dn) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn final_threshold_and_acyclicity() {
        let mut m = LinearModel::zeros(3, 0.1);
        m.u = vec![0.0, 0.9, 0.0, 0.5, 0.0, 0.7, 0.1, 0.0, 0.0];
        let g = threshold_linear(&m, 0.3);
        // 1 -> 0 (0.5) closes a cycle with 0 -> 1 (0.9) and is the weakest edge on it
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(threshold_linear(&m, 5.0).n_edges(), 0);
    }

    #[test]
    fn recovers_a_low_noise_chain() {
        let n = 600;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = DMatrix::zeros(n, 3);
        for r in 0..n {
            x[(r, 0)] = rng.random_range(-1.0..1.0);
            x[(r, 1)] = 1.5 * x[(r, 0)] + 0.1 * rng.random_range(-1.0..1.0);
            x[(r, 2)] = -1.5 * x[(r, 1)] + 0.1 * rng.random_range(-1.0..1.0);
        }
        let ds = crate::simul::split_and_standardize(&x, 0.8, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = TrainConfig {
            eval_period: 200,
            ..TrainConfig::default()
        };
        let out = train_linear(&ds, &cfg, &LinearConfig::default()).unwrap();
        assert!(out.record.final_h <= 1e-8);
        assert!(out.dag.has_edge(0, 1) && out.dag.has_edge(1, 2), "{:?}", out.dag.edges());
    }

    #[test]
    fn retrain_score_is_the_unpenalized_ols_fit() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = DMatrix::zeros(n, 2);
        for r in 0..n {
            x[(r, 0)] = rng.random_range(-1.0..1.0);
            x[(r, 1)] = 0.7 * x[(r, 0)] + 0.3 * rng.random_range(-1.0..1.0);
        }
        let ds = crate::simul::split_and_standardize(&x, 0.8, false, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = Dag::from_edges(2, &[(0, 1)]).unwrap();
        let got = linear_retrain_heldout_score(&g, &ds).unwrap();
        // oracle: slope from the univariate normal equations on the train rows
        let (sxy, sxx) = ds.train.iter().fold((0.0, 0.0), |(a, b), r| (a + r[0] * r[1], b + r[0] * r[0]));
        let w = sxy / sxx;
        let sq: f64 = ds.heldout.iter().map(|r| r[0] * r[0] + (r[1] - w * r[0]).powi(2)).sum();
        assert!((got + sq / (2.0 * ds.heldout.n as f64)).abs() < 1e-12);
        let empty = linear_retrain_heldout_score(&Dag::empty(2), &ds).unwrap();
        assert!(got > empty);
    }
}
