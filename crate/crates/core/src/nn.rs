//! Per-variable masked MLPs.
//!
//! Network `j` reads the full input row multiplied by its binary mask
//! `masks[j]` (with `masks[j][j] == false` always) and emits the parameters of
//! a Gaussian conditional for variable `j`. All weights of all networks live in
//! one flat parameter vector so optimizers and gradients can treat the stack as
//! a single point in parameter space.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Smallest variance the likelihood will use; smaller values are clamped.
pub const MIN_VARIANCE: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Distribution parameters produced by each network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Network outputs the mean; the log-variance is a free per-node parameter.
    MeanOnly,
    /// Network outputs both the mean and the log-variance.
    MeanLogVariance,
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::MeanOnly => 1,
            Head::MeanLogVariance => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub d: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
    pub leaky_slope: f64,
}

impl Architecture {
    pub fn new(d: usize, hidden: Vec<usize>, head: Head) -> Self {
        Architecture {
            d,
            hidden,
            head,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// `(fan_in, fan_out)` of every affine layer, input first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.d;
        for &h in &self.hidden {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim()));
        dims
    }

    pub fn node_param_len(&self) -> usize {
        let affine: usize = self.layer_dims().iter().map(|(i, o)| i * o + o).sum();
        affine + usize::from(self.head == Head::MeanOnly)
    }

    fn max_width(&self) -> usize {
        self.hidden.iter().copied().chain([self.d, self.output_dim()]).max().unwrap_or(1)
    }
}

/// Offsets of one affine layer inside a node's parameter slice.
#[derive(Clone, Copy, Debug)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Parameters and masks of all `d` networks.
#[derive(Clone, Debug)]
pub struct NnStack {
    arch: Architecture,
    slots: Vec<LayerSlot>,
    node_len: usize,
    params: Vec<f64>,
    /// `masks[j][i]`: whether input `i` feeds network `j`.
    masks: Vec<Vec<bool>>,
}

/// Loss value together with a gradient congruent with [`NnStack::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Scratch buffers for one forward/backward pass through a single network.
#[derive(Clone, Debug)]
pub(crate) struct Workspace {
    /// Pre-activations per layer.
    z: Vec<Vec<f64>>,
    /// Activations per layer; `a[0]` is the masked input.
    a: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(arch: &Architecture) -> Self {
        let dims = arch.layer_dims();
        let mut a = vec![vec![0.0; arch.d]];
        let mut z = Vec::new();
        for &(_, o) in &dims {
            z.push(vec![0.0; o]);
            a.push(vec![0.0; o]);
        }
        let w = arch.max_width();
        Workspace {
            z,
            a,
            delta: vec![0.0; w],
            delta_prev: vec![0.0; w],
        }
    }
}

/// Per-sample result of [`NnStack::node_nll`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct NodeNll {
    pub value: f64,
    pub clamped: bool,
}

impl NnStack {
    /// Glorot-uniform weights, zero biases, zero log-variances, and masks that
    /// allow every input except the node itself.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut stack = NnStack::zeros(arch);
        for j in 0..stack.arch.d {
            for s in stack.slots.clone() {
                let limit = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
                let base = j * stack.node_len + s.w;
                for p in &mut stack.params[base..base + s.fan_in * s.fan_out] {
                    *p = rng.random_range(-limit..limit);
                }
            }
        }
        stack
    }

    pub fn zeros(arch: Architecture) -> Self {
        let mut slots = Vec::new();
        let mut off = 0;
        for (fan_in, fan_out) in arch.layer_dims() {
            slots.push(LayerSlot {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
            });
            off += fan_in * fan_out + fan_out;
        }
        let node_len = arch.node_param_len();
        let d = arch.d;
        let masks = (0..d).map(|j| (0..d).map(|i| i != j).collect()).collect();
        NnStack {
            params: vec![0.0; node_len * d],
            arch,
            slots,
            node_len,
            masks,
        }
    }

    pub fn d(&self) -> usize {
        self.arch.d
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn head(&self) -> Head {
        self.arch.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.slots.len()
    }

    /// Range of node `j`'s parameters inside [`NnStack::params`].
    pub fn node_range(&self, j: usize) -> std::ops::Range<usize> {
        j * self.node_len..(j + 1) * self.node_len
    }

    /// Weight matrix `layer` (0-based) of network `j`, row-major `fan_out x fan_in`.
    pub fn weights(&self, j: usize, layer: usize) -> &[f64] {
        let s = self.slots[layer];
        let base = j * self.node_len + s.w;
        &self.params[base..base + s.fan_in * s.fan_out]
    }

    pub fn weights_mut(&mut self, j: usize, layer: usize) -> &mut [f64] {
        let s = self.slots[layer];
        let base = j * self.node_len + s.w;
        &mut self.params[base..base + s.fan_in * s.fan_out]
    }

    pub fn bias(&self, j: usize, layer: usize) -> &[f64] {
        let s = self.slots[layer];
        let base = j * self.node_len + s.b;
        &self.params[base..base + s.fan_out]
    }

    pub fn bias_mut(&mut self, j: usize, layer: usize) -> &mut [f64] {
        let s = self.slots[layer];
        let base = j * self.node_len + s.b;
        &mut self.params[base..base + s.fan_out]
    }

    /// Index of the free log-variance of node `j` for mean-only heads.
    pub fn log_var_index(&self, j: usize) -> Option<usize> {
        (self.arch.head == Head::MeanOnly).then(|| (j + 1) * self.node_len - 1)
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn mask(&self, j: usize, i: usize) -> bool {
        self.masks[j][i]
    }

    /// Clears input `i` of network `j`. Masked inputs are never re-enabled.
    pub fn mask_out(&mut self, j: usize, i: usize) {
        self.masks[j][i] = false;
    }

    /// Replaces all masks; entries may only go from enabled to disabled.
    pub fn restrict_masks(&mut self, allowed: &[Vec<bool>]) -> Result<()> {
        let d = self.d();
        if allowed.len() != d || allowed.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("mask matrix must be d x d"));
        }
        for j in 0..d {
            for i in 0..d {
                if !allowed[j][i] {
                    self.masks[j][i] = false;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn set_masks_unchecked(&mut self, masks: Vec<Vec<bool>>) {
        self.masks = masks;
    }

    /// Count of enabled `(i, j)` inputs, i.e. the support of the mask graph.
    pub fn n_active_inputs(&self) -> usize {
        self.masks.iter().flatten().filter(|&&m| m).count()
    }

    fn activate(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.arch.leaky_slope * z
        }
    }

    fn activate_grad(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else if z < 0.0 {
            self.arch.leaky_slope
        } else {
            0.0
        }
    }

    /// Runs network `j` on `x_row`, leaving activations in `ws`.
    fn forward_ws(&self, j: usize, x_row: &[f64], ws: &mut Workspace) {
        let node = &self.params[self.node_range(j)];
        for (i, (dst, &x)) in ws.a[0].iter_mut().zip(x_row).enumerate() {
            *dst = if self.masks[j][i] { x } else { 0.0 };
        }
        let last = self.slots.len() - 1;
        for (l, s) in self.slots.iter().enumerate() {
            let (head, tail) = ws.a.split_at_mut(l + 1);
            let input = &head[l];
            let w = &node[s.w..s.w + s.fan_in * s.fan_out];
            let b = &node[s.b..s.b + s.fan_out];
            for o in 0..s.fan_out {
                let row = &w[o * s.fan_in..(o + 1) * s.fan_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    acc += wi * xi;
                }
                ws.z[l][o] = acc;
                tail[0][o] = if l == last { acc } else { self.activate(acc) };
            }
        }
    }

    /// Distribution parameters `theta_j` for one input row.
    pub fn forward(&self, j: usize, x_row: &[f64]) -> Result<Vec<f64>> {
        self.check_row(x_row)?;
        let mut ws = Workspace::new(&self.arch);
        self.forward_ws(j, x_row, &mut ws);
        let out = ws.a.last().cloned().unwrap_or_default();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(Some(j), "non-finite network output"));
        }
        Ok(out)
    }

    fn check_row(&self, x_row: &[f64]) -> Result<()> {
        if x_row.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: x_row.len(),
            });
        }
        Ok(())
    }

    /// Gaussian negative log-density of `x_row[j]` under network `j`.
    ///
    /// When `param_grad` is given, `scale * d nll / d params` is added into it
    /// (a slice over node `j`'s parameters only). When `input_grad` is given,
    /// `scale * d nll / d x` through the network is added into it; the direct
    /// dependence on `x_row[j]` is not included.
    pub(crate) fn node_nll(
        &self,
        j: usize,
        x_row: &[f64],
        ws: &mut Workspace,
        scale: f64,
        param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) -> NodeNll {
        self.forward_ws(j, x_row, ws);
        let node = &self.params[self.node_range(j)];
        let out = ws.a.last().expect("output layer");
        let mu = out[0];
        let raw_log_var = match self.arch.head {
            Head::MeanOnly => node[self.node_len - 1],
            Head::MeanLogVariance => out[1],
        };
        let floor = MIN_VARIANCE.ln();
        let clamped = raw_log_var < floor;
        let log_var = raw_log_var.max(floor);
        let var = log_var.exp();
        let r = x_row[j] - mu;
        let value = HALF_LN_2PI + 0.5 * log_var + r * r / (2.0 * var);

        if param_grad.is_none() && input_grad.is_none() {
            return NodeNll { value, clamped };
        }

        let d_mu = -r / var;
        let d_log_var = if clamped { 0.0 } else { 0.5 - r * r / (2.0 * var) };
        let m = self.arch.output_dim();
        ws.delta[0] = d_mu * scale;
        if m == 2 {
            ws.delta[1] = d_log_var * scale;
        }
        let mut param_grad = param_grad;
        if let (Some(g), Head::MeanOnly) = (param_grad.as_deref_mut(), self.arch.head) {
            g[self.node_len - 1] += d_log_var * scale;
        }

        for l in (0..self.slots.len()).rev() {
            let s = self.slots[l];
            let input = &ws.a[l];
            let w = &node[s.w..s.w + s.fan_in * s.fan_out];
            if let Some(g) = param_grad.as_deref_mut() {
                for o in 0..s.fan_out {
                    let dz = ws.delta[o];
                    if dz == 0.0 {
                        continue;
                    }
                    g[s.b + o] += dz;
                    let grow = &mut g[s.w + o * s.fan_in..s.w + (o + 1) * s.fan_in];
                    for (gi, xi) in grow.iter_mut().zip(input) {
                        *gi += dz * xi;
                    }
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            ws.delta_prev[..s.fan_in].iter_mut().for_each(|v| *v = 0.0);
            for o in 0..s.fan_out {
                let dz = ws.delta[o];
                if dz == 0.0 {
                    continue;
                }
                let row = &w[o * s.fan_in..(o + 1) * s.fan_in];
                for (dp, wi) in ws.delta_prev[..s.fan_in].iter_mut().zip(row) {
                    *dp += dz * wi;
                }
            }
            if l > 0 {
                for k in 0..s.fan_in {
                    ws.delta_prev[k] *= self.activate_grad(ws.z[l - 1][k]);
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
        if let Some(ig) = input_grad {
            for (i, g) in ig.iter_mut().enumerate() {
                if self.masks[j][i] {
                    *g += ws.delta_prev[i];
                }
            }
        }
        NodeNll { value, clamped }
    }

    /// Negative log-likelihood of `x_row[j]` and, on request, its gradient with
    /// respect to every stack parameter.
    pub fn nll(&self, j: usize, x_row: &[f64], with_grad: bool) -> Result<GradBundle> {
        self.check_row(x_row)?;
        let mut ws = Workspace::new(&self.arch);
        let mut grad = vec![0.0; if with_grad { self.params.len() } else { 0 }];
        let range = self.node_range(j);
        let out = self.node_nll(
            j,
            x_row,
            &mut ws,
            1.0,
            with_grad.then(|| &mut grad[range]),
            None,
        );
        if !out.value.is_finite() {
            return Err(Error::numeric(Some(j), "non-finite negative log-likelihood"));
        }
        Ok(GradBundle {
            loss: out.value,
            grad,
        })
    }

    /// Gradient of network `j`'s negative log-likelihood with respect to the input row.
    pub fn nll_input_grad(&self, j: usize, x_row: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_row(x_row)?;
        let mut ws = Workspace::new(&self.arch);
        let mut g = vec![0.0; self.d()];
        let out = self.node_nll(j, x_row, &mut ws, 1.0, None, Some(&mut g));
        Ok((out.value, g))
    }

    /// Connectivity matrix `C_j = |W_L+1| ... |W_1| diag(M_j)`, shape `m x d`,
    /// row-major. Entry `(k, i)` sums all path products from input `i` to output `k`.
    pub fn connectivity(&self, j: usize) -> Vec<Vec<f64>> {
        let d = self.d();
        let flat = self.connectivity_flat(j);
        flat.chunks(d).map(<[f64]>::to_vec).collect()
    }

    pub(crate) fn connectivity_flat(&self, j: usize) -> Vec<f64> {
        let d = self.d();
        // right product R = |W_1| diag(M_j), then left-multiply by each |W_l|
        let mut right: Vec<f64> = {
            let s = self.slots[0];
            let w = self.weights(j, 0);
            let mut r = vec![0.0; s.fan_out * d];
            for o in 0..s.fan_out {
                for i in 0..d {
                    if self.masks[j][i] {
                        r[o * d + i] = w[o * d + i].abs();
                    }
                }
            }
            r
        };
        for l in 1..self.slots.len() {
            right = abs_matmul(self.weights(j, l), self.slots[l].fan_out, self.slots[l].fan_in, &right, d);
        }
        right
    }

    /// Adds `d <G, C_j> / d params` into `grad` (a full-stack gradient), where
    /// `upstream` is an `m x d` row-major matrix of partials with respect to `C_j`.
    /// Subgradient of `|w|` at zero is taken as zero.
    pub(crate) fn connectivity_backward(&self, j: usize, upstream: &[f64], grad: &mut [f64]) {
        let d = self.d();
        let m = self.arch.output_dim();
        let n = self.slots.len();
        // rights[l] = |W_l| ... |W_1| diag(M), shape fan_out_l x d; rights[0] is diag(M) implicit
        let mut rights: Vec<Vec<f64>> = Vec::with_capacity(n);
        {
            let s = self.slots[0];
            let w = self.weights(j, 0);
            let mut r = vec![0.0; s.fan_out * d];
            for o in 0..s.fan_out {
                for i in 0..d {
                    if self.masks[j][i] {
                        r[o * d + i] = w[o * d + i].abs();
                    }
                }
            }
            rights.push(r);
        }
        for l in 1..n - 1 {
            let r = abs_matmul(self.weights(j, l), self.slots[l].fan_out, self.slots[l].fan_in, &rights[l - 1], d);
            rights.push(r);
        }
        // Walk layers from the output: left = |W_L+1| ... |W_l+1|, shape m x fan_out_l.
        // upstream_l = left^T * upstream, shape fan_out_l x d.
        let mut up_l = upstream.to_vec(); // fan_out_{n-1} = m rows
        let mut rows = m;
        let base = j * self.node_len;
        for l in (0..n).rev() {
            let s = self.slots[l];
            debug_assert_eq!(rows, s.fan_out);
            let w = self.weights(j, l);
            let gw = &mut grad[base + s.w..base + s.w + s.fan_in * s.fan_out];
            // dP_l = up_l * right_{l-1}^T  (fan_out x fan_in)
            for o in 0..s.fan_out {
                let u = &up_l[o * d..(o + 1) * d];
                for k in 0..s.fan_in {
                    let dp = if l == 0 {
                        if self.masks[j][k] {
                            u[k]
                        } else {
                            0.0
                        }
                    } else {
                        let r = &rights[l - 1][k * d..(k + 1) * d];
                        u.iter().zip(r).map(|(a, b)| a * b).sum()
                    };
                    let wv = w[o * s.fan_in + k];
                    if wv > 0.0 {
                        gw[o * s.fan_in + k] += dp;
                    } else if wv < 0.0 {
                        gw[o * s.fan_in + k] -= dp;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // up_{l-1} = |W_l|^T up_l
            let mut next = vec![0.0; s.fan_in * d];
            for o in 0..s.fan_out {
                let u = &up_l[o * d..(o + 1) * d];
                for k in 0..s.fan_in {
                    let a = w[o * s.fan_in + k].abs();
                    if a == 0.0 {
                        continue;
                    }
                    let dst = &mut next[k * d..(k + 1) * d];
                    for (x, y) in dst.iter_mut().zip(u) {
                        *x += a * y;
                    }
                }
            }
            up_l = next;
            rows = s.fan_in;
        }
    }
}

/// `|W| * B` where `W` is `rows x inner` and `B` is `inner x cols`.
fn abs_matmul(w: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let dst = &mut out[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let a = w[r * inner + k].abs();
            if a == 0.0 {
                continue;
            }
            for (x, y) in dst.iter_mut().zip(&b[k * cols..(k + 1) * cols]) {
                *x += a * y;
            }
        }
    }
    out
}

/// Negative log-density of `N(mu, var)` at `x`.
pub fn gaussian_nll(x: f64, mu: f64, var: f64) -> f64 {
    0.5 * (2.0 * PI * var).ln() + (x - mu) * (x - mu) / (2.0 * var)
}
