//! Weighted adjacency of an [`NnStack`], the matrix exponential, and the trace
//! exponential acyclicity function with its gradient.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::nn::{GradBundle, NnStack};

/// Nonnegative `d x d` matrix with zero diagonal. `a[(i, j)] > 0` means network
/// `j` can depend on variable `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedAdj(pub DMatrix<f64>);

impl WeightedAdj {
    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Binary support `a > 0`, row-major adjacency convention.
    pub fn support(&self) -> Vec<Vec<bool>> {
        let d = self.d();
        (0..d).map(|i| (0..d).map(|j| self.0[(i, j)] > 0.0).collect()).collect()
    }
}

/// `A[i][j] = sum_k C_j[k][i]` for `i != j`.
pub fn weighted_adjacency(stack: &NnStack) -> WeightedAdj {
    let d = stack.d();
    let mut a = DMatrix::zeros(d, d);
    for j in 0..d {
        let c = stack.connectivity_flat(j);
        for row in c.chunks(d) {
            for (i, &v) in row.iter().enumerate() {
                if i != j {
                    a[(i, j)] += v;
                }
            }
        }
    }
    WeightedAdj(a)
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the degree-13 Padé approximant is accurate to unit roundoff.
const THETA13: f64 = 5.371_920_351_148_152;

pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn matrix_exp(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::invalid("matrix exponential needs a square matrix"));
    }
    let n = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(None, "non-finite entry in matrix exponential input"));
    }
    let norm = one_norm(a);
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::numeric(None, format!("singular Padé denominator, ||A||_1 = {norm:e}")))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(None, format!("matrix exponential overflow, ||A||_1 = {norm:e}")));
    }
    Ok(r)
}

/// `h = tr(exp(A)) - d` together with `exp(A)` for reuse in gradients.
pub fn trace_exp_constraint(a: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let e = matrix_exp(a)?;
    Ok((e.trace() - a.nrows() as f64, e))
}

/// Acyclicity function of the stack and its gradient with respect to every
/// parameter (biases and log-variances receive zero).
pub fn h_and_grad(stack: &NnStack) -> Result<(f64, GradBundle)> {
    let a = weighted_adjacency(stack);
    let (h, e) = trace_exp_constraint(&a.0)?;
    let mut grad = vec![0.0; stack.params().len()];
    accumulate_h_grad(stack, &e, 1.0, &mut grad);
    Ok((h, GradBundle { loss: h, grad }))
}

pub fn h_value(stack: &NnStack) -> Result<f64> {
    Ok(trace_exp_constraint(&weighted_adjacency(stack).0)?.0)
}

/// Adds `scale * dh/dparams` into `grad`, given `exp(A)` for the current stack.
/// Uses `d tr(exp A) / dA = exp(A)^T`.
pub(crate) fn accumulate_h_grad(stack: &NnStack, exp_a: &DMatrix<f64>, scale: f64, grad: &mut [f64]) {
    let d = stack.d();
    let m = stack.arch().output_dim();
    let mut upstream = vec![0.0; m * d];
    for j in 0..d {
        for k in 0..m {
            for i in 0..d {
                // dh/dA_ij = (exp A)^T_ij = exp(A)_ji
                upstream[k * d + i] = if i == j { 0.0 } else { scale * exp_a[(j, i)] };
            }
        }
        stack.connectivity_backward(j, &upstream, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::is_acyclic;
    use crate::nn::{Architecture, Head};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Truncated power series, independent of the Padé path.
    fn taylor_exp(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..terms {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    fn rel_err(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        (x - y).norm() / y.norm()
    }

    #[test]
    fn exp_of_zero_nilpotent_and_diagonal() {
        let z = DMatrix::zeros(3, 3);
        assert_eq!(matrix_exp(&z).unwrap(), DMatrix::identity(3, 3));
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = matrix_exp(&n).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!((e - want).abs().max() < 1e-14);
        let dg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let e = matrix_exp(&dg).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - 2f64.exp()).abs() < 1e-13);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_matches_taylor_for_moderate_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(1..7);
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
            let scale = rng.random_range(0.1..5.0) / one_norm(&a);
            a *= scale;
            assert!(rel_err(&matrix_exp(&a).unwrap(), &taylor_exp(&a, 60)) < 1e-10);
        }
        // exercises the squaring phase
        let a = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 3.0 });
        assert!(rel_err(&matrix_exp(&a).unwrap(), &taylor_exp(&a, 120)) < 1e-10);
    }

    #[test]
    fn exp_rejects_non_finite_and_reports_overflow() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matrix_exp(&a).is_err());
        let a = DMatrix::from_row_slice(1, 1, &[1e6]);
        assert!(matches!(matrix_exp(&a), Err(Error::Numeric { .. })));
    }

    #[test]
    fn two_cycle_constraint_value() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (h, _) = trace_exp_constraint(&a).unwrap();
        assert!((h - (2.0 * 1f64.cosh() - 2.0)).abs() < 1e-13);
        assert!((h - 1.086161).abs() < 1e-6);
    }

    #[test]
    fn weighted_adjacency_uses_column_sums_of_connectivity() {
        let mut s = NnStack::zeros(Architecture::new(2, vec![2], Head::MeanOnly));
        s.weights_mut(1, 0).copy_from_slice(&[1.0, -2.0, 0.0, 3.0]);
        s.weights_mut(1, 1).copy_from_slice(&[1.0, 1.0]);
        let a = weighted_adjacency(&s);
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.get(1, 1), 0.0);
        s.mask_out(1, 0);
        assert_eq!(weighted_adjacency(&s).get(0, 1), 0.0);
        let z = NnStack::zeros(Architecture::new(3, vec![2], Head::MeanOnly));
        assert_eq!(weighted_adjacency(&z).0, DMatrix::zeros(3, 3));
    }

    fn random_masked_stack(seed: u64) -> NnStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..6);
        let mut s = NnStack::new(Architecture::new(d, vec![3, 2], Head::MeanOnly), &mut rng);
        for j in 0..d {
            for i in 0..d {
                if rng.random_bool(0.5) {
                    s.mask_out(j, i);
                }
            }
        }
        s
    }

    #[test]
    fn h_is_zero_exactly_on_acyclic_supports() {
        for seed in 0..100 {
            let s = random_masked_stack(seed);
            let a = weighted_adjacency(&s);
            let h = h_value(&s).unwrap();
            assert!(h >= -1e-15);
            if is_acyclic(&a.support()).unwrap() {
                assert!(h < 1e-12, "seed {seed}: h = {h}");
            } else {
                assert!(h > 0.0, "seed {seed}");
            }
        }
    }

    #[test]
    fn h_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let s = random_masked_stack(1000 + seed);
            let (_, g) = h_and_grad(&s).unwrap();
            let mut probe = s.clone();
            let step = 1e-6;
            for k in 0..s.params().len() {
                let x = probe.params()[k];
                probe.params_mut()[k] = x + step;
                let up = h_value(&probe).unwrap();
                probe.params_mut()[k] = x - step;
                let dn = h_value(&probe).unwrap();
                probe.params_mut()[k] = x;
                let fd = (up - dn) / (2.0 * step);
                let scale = fd.abs().max(g.grad[k].abs());
                if scale < 1e-8 {
                    continue;
                }
                assert!((fd - g.grad[k]).abs() / scale < 1e-5, "seed {seed} param {k}: {fd} vs {}", g.grad[k]);
            }
        }
    }
}
