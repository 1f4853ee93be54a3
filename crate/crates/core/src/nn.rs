//! Truncated feed-forward ReLU networks and their training loop.
//!
//! An [`Mlp`] maps `x ∈ R^d` through `L` ReLU hidden layers to a scalar, then
//! clips the result to `[-M, M]` when a truncation bound is set. Parameters are
//! kept in one flat vector (per layer: row-major weights `out × in`, then
//! biases), which is also the serialization layout.
//!
//! Training is mini-batch Adam with a held-out validation split; the parameter
//! snapshot with the lowest validation loss is returned. Several networks can
//! be trained jointly against one [`Objective`], which is how the non-crossing
//! stacks are fitted.
//!
//! Subgradient conventions: `relu'(0) = 0`; the truncation derivative is 1 for
//! `|h| <= M` and 0 beyond.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::losses::LossSpec;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    n_in: usize,
    n_out: usize,
    w_off: usize,
    b_off: usize,
}

/// A fully connected ReLU network with scalar output and optional output clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
    bound: Option<f64>,
    layers: Vec<LayerShape>,
}

fn layout(widths: &[usize]) -> (Vec<LayerShape>, usize) {
    let mut layers = Vec::with_capacity(widths.len() - 1);
    let mut off = 0;
    for w in widths.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        layers.push(LayerShape {
            n_in,
            n_out,
            w_off: off,
            b_off: off + n_in * n_out,
        });
        off += n_in * n_out + n_out;
    }
    (layers, off)
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(invalid("layer_widths", "need at least input and output widths"));
    }
    if widths.contains(&0) {
        return Err(invalid("layer_widths", "widths must be positive"));
    }
    if *widths.last().unwrap() != 1 {
        return Err(invalid("layer_widths", "output width must be 1"));
    }
    Ok(())
}

fn validate_bound(bound: Option<f64>) -> Result<()> {
    match bound {
        Some(m) if !(m > 0.0 && m.is_finite()) => {
            Err(invalid("truncation_bound", format!("{m} must be positive and finite")))
        }
        _ => Ok(()),
    }
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(widths: &[usize], bound: Option<f64>) -> Result<Self> {
        validate_widths(widths)?;
        validate_bound(bound)?;
        let (layers, n) = layout(widths);
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; n],
            bound,
            layers,
        })
    }

    /// Kaiming-uniform initialization as used by common deep-learning defaults:
    /// weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(widths: &[usize], bound: Option<f64>, rng: &mut StreamRng) -> Result<Self> {
        let mut net = Self::zeros(widths, bound)?;
        for l in &net.layers {
            let a = 1.0 / (l.n_in as f64).sqrt();
            for p in &mut net.params[l.w_off..l.b_off + l.n_out] {
                *p = rng.random_range(-a..a);
            }
        }
        Ok(net)
    }

    /// Network from explicit parameters in the flat layout.
    pub fn from_params(widths: &[usize], bound: Option<f64>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(widths, bound)?;
        if params.len() != net.params.len() {
            return Err(Error::Dimension {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("params", "parameters must be finite"));
        }
        net.params = params;
        Ok(net)
    }

    /// Network from per-layer weights (row-major `out × in`) and biases.
    pub fn from_layers(
        widths: &[usize],
        bound: Option<f64>,
        weights: &[Vec<f64>],
        biases: &[Vec<f64>],
    ) -> Result<Self> {
        let mut net = Self::zeros(widths, bound)?;
        if weights.len() != net.layers.len() || biases.len() != net.layers.len() {
            return Err(Error::Dimension {
                expected: net.layers.len(),
                got: weights.len().min(biases.len()),
            });
        }
        for (l, (w, b)) in net.layers.clone().iter().zip(weights.iter().zip(biases)) {
            if w.len() != l.n_in * l.n_out {
                return Err(Error::Dimension {
                    expected: l.n_in * l.n_out,
                    got: w.len(),
                });
            }
            if b.len() != l.n_out {
                return Err(Error::Dimension {
                    expected: l.n_out,
                    got: b.len(),
                });
            }
            net.params[l.w_off..l.b_off].copy_from_slice(w);
            net.params[l.b_off..l.b_off + l.n_out].copy_from_slice(b);
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("params", "parameters must be finite"));
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Row-major weights of layer `l` (0-based, `out × in`).
    pub fn weights(&self, l: usize) -> &[f64] {
        let s = self.layers[l];
        &self.params[s.w_off..s.b_off]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let s = self.layers[l];
        &self.params[s.b_off..s.b_off + s.n_out]
    }

    /// Mutable view for in-place edits, e.g. zeroing a feature's input weights.
    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layers[l];
        &mut self.params[s.w_off..s.b_off]
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    #[inline]
    fn truncate(&self, h: f64) -> f64 {
        match self.bound {
            Some(m) => h.clamp(-m, m),
            None => h,
        }
    }

    /// Output at a single point.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        // same kernel as the batched path, so single-point and batch outputs agree bitwise
        let mut ws = Workspace::new(&self.widths, 1);
        ws.input.copy_from_slice(x);
        self.forward_batch(&mut ws, 1)?;
        Ok(ws.output[0])
    }

    /// Outputs at many points given as a row-major `n × d` matrix.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim();
        if !x.len().is_multiple_of(d) {
            return Err(Error::Dimension {
                expected: d,
                got: x.len() % d,
            });
        }
        let n = x.len() / d;
        let mut out = vec![0.0; n];
        let mut ws = Workspace::new(&self.widths, PREDICT_CHUNK.min(n.max(1)));
        for (start, chunk) in (0..n).step_by(PREDICT_CHUNK).zip(out.chunks_mut(PREDICT_CHUNK)) {
            let rows = chunk.len();
            ws.input[..rows * d].copy_from_slice(&x[start * d..(start + rows) * d]);
            self.forward_batch(&mut ws, rows)?;
            chunk.copy_from_slice(&ws.output[..rows]);
        }
        Ok(out)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.dim() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: data.dim(),
            });
        }
        self.predict(data.x())
    }

    /// Batched forward pass over `rows` rows of `ws.input`, keeping activations.
    fn forward_batch(&self, ws: &mut Workspace, rows: usize) -> Result<()> {
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(li + 1);
            let input: &[f64] = if li == 0 { &ws.input } else { &before[li] };
            let z = &mut after[0];
            let bias = &self.params[l.b_off..l.b_off + l.n_out];
            for r in 0..rows {
                z[r * l.n_out..(r + 1) * l.n_out].copy_from_slice(bias);
            }
            // Z = A · Wᵀ + b
            gemm(
                rows,
                l.n_in,
                l.n_out,
                &input[..rows * l.n_in],
                (l.n_in, 1),
                &self.params[l.w_off..l.b_off],
                (1, l.n_in),
                1.0,
                &mut z[..rows * l.n_out],
                (l.n_out, 1),
            );
            if z[..rows * l.n_out].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: li });
            }
            if li < last {
                for v in z[..rows * l.n_out].iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        let raw = &ws.acts[last + 1];
        for r in 0..rows {
            ws.output[r] = self.truncate(raw[r]);
        }
        Ok(())
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`
    /// for the batch last passed through [`forward_batch`].
    fn backward_batch(&self, ws: &mut Workspace, rows: usize, d_out: &[f64], grad: &mut [f64]) -> Result<()> {
        let last = self.layers.len() - 1;
        let raw = &ws.acts[last + 1];
        let delta = &mut ws.deltas[last];
        for r in 0..rows {
            let pass = match self.bound {
                Some(m) => raw[r].abs() <= m,
                None => true,
            };
            delta[r] = if pass { d_out[r] } else { 0.0 };
        }
        for li in (0..=last).rev() {
            let l = self.layers[li];
            let input: &[f64] = if li == 0 { &ws.input } else { &ws.acts[li] };
            let (dlo, dhi) = ws.deltas.split_at_mut(li);
            let delta = &dhi[0][..rows * l.n_out];
            // dW = δᵀ · A
            gemm(
                l.n_out,
                rows,
                l.n_in,
                delta,
                (1, l.n_out),
                &input[..rows * l.n_in],
                (l.n_in, 1),
                0.0,
                &mut grad[l.w_off..l.b_off],
                (l.n_in, 1),
            );
            let gb = &mut grad[l.b_off..l.b_off + l.n_out];
            gb.iter_mut().for_each(|g| *g = 0.0);
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(&delta[r * l.n_out..(r + 1) * l.n_out]) {
                    *g += d;
                }
            }
            if li > 0 {
                // δ_{l-1} = (δ_l · W) ⊙ relu'(Z_{l-1}); stored activations are post-ReLU,
                // and relu'(0) = 0 matches "activation > 0".
                let prev = &mut dlo[li - 1][..rows * l.n_in];
                gemm(
                    rows,
                    l.n_out,
                    l.n_in,
                    delta,
                    (l.n_out, 1),
                    &self.params[l.w_off..l.b_off],
                    (l.n_in, 1),
                    0.0,
                    prev,
                    (l.n_in, 1),
                );
                for (p, a) in prev.iter_mut().zip(&input[..rows * l.n_in]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
        if let Some(li) = self
            .layers
            .iter()
            .position(|l| grad[l.w_off..l.b_off + l.n_out].iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFinite { layer: li });
        }
        Ok(())
    }
}

const PREDICT_CHUNK: usize = 1024;

/// C = A·B + beta·C with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Reusable activation/delta buffers for one network at a fixed batch capacity.
struct Workspace {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Workspace {
    fn new(widths: &[usize], cap: usize) -> Self {
        Self {
            input: vec![0.0; cap * widths[0]],
            // acts[0] is unused (input lives in `input`); acts[l+1] holds layer l output
            acts: std::iter::once(Vec::new())
                .chain(widths[1..].iter().map(|&w| vec![0.0; cap * w]))
                .collect(),
            deltas: widths[1..].iter().map(|&w| vec![0.0; cap * w]).collect(),
            output: vec![0.0; cap],
        }
    }
}

/// A training objective over the outputs of one or more networks.
///
/// `rows` index into the full dataset; `outputs[j][b]` is network `j`'s output
/// at `rows[b]`. Implementations return the mean loss over `rows` and, when
/// `grads` is given, write `d(mean loss)/d(outputs[j][b])` into `grads[j][b]`.
pub trait Objective {
    fn n_nets(&self) -> usize;
    fn evaluate(&self, rows: &[usize], outputs: &[Vec<f64>], grads: Option<&mut [Vec<f64>]>) -> f64;
}

/// Single-network objective `mean loss(target_i - scale · f(x_i))`.
#[derive(Debug, Clone)]
pub struct ResidualObjective<'a> {
    pub targets: &'a [f64],
    pub loss: LossSpec,
    pub scale: f64,
}

impl Objective for ResidualObjective<'_> {
    fn n_nets(&self) -> usize {
        1
    }

    fn evaluate(&self, rows: &[usize], outputs: &[Vec<f64>], grads: Option<&mut [Vec<f64>]>) -> f64 {
        let inv = 1.0 / rows.len() as f64;
        let out = &outputs[0];
        let mut total = 0.0;
        match grads {
            Some(g) => {
                let g = &mut g[0];
                for (b, &r) in rows.iter().enumerate() {
                    let u = self.targets[r] - self.scale * out[b];
                    total += self.loss.value(u);
                    g[b] = -self.scale * self.loss.derivative(u) * inv;
                }
            }
            None => {
                for (b, &r) in rows.iter().enumerate() {
                    total += self.loss.value(self.targets[r] - self.scale * out[b]);
                }
            }
        }
        total * inv
    }
}

/// Optimizer and training-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Hidden layer widths, e.g. `[64, 128, 128, 64]`.
    pub hidden: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    #[serde(default)]
    pub truncation: Truncation,
}

/// How the output bound `M` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum Truncation {
    /// `M = 2 · max|Y|` over the training responses.
    #[default]
    Auto,
    Fixed(f64),
    None,
}

impl Truncation {
    pub fn resolve(&self, max_abs_response: f64) -> Option<f64> {
        match *self {
            Truncation::Auto if max_abs_response > 0.0 && max_abs_response.is_finite() => {
                Some(2.0 * max_abs_response)
            }
            Truncation::Auto => None,
            Truncation::Fixed(m) => Some(m),
            Truncation::None => None,
        }
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            max_epochs: 200,
            validation_fraction: 0.2,
            seed: 0,
            hidden: hidden_plan(64),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            truncation: Truncation::Auto,
        }
    }
}

/// Hidden widths `h, 2h, 2h, h`.
pub fn hidden_plan(h: usize) -> Vec<usize> {
    vec![h, 2 * h, 2 * h, h]
}

impl FitConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn widths(&self, d: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(d);
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(invalid("max_epochs", "must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(invalid("validation_fraction", "must lie in (0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden", "widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(invalid("adam_beta", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(invalid("adam_eps", "must be positive"));
        }
        if let Truncation::Fixed(m) = self.truncation {
            validate_bound(Some(m))?;
        }
        Ok(())
    }

    /// Validation and training row counts for `n` observations.
    pub fn split_sizes(&self, n: usize) -> Result<(usize, usize)> {
        let n_val = (self.validation_fraction * n as f64).round() as usize;
        if n_val < 1 || n_val >= n {
            return Err(invalid(
                "validation_fraction",
                format!("leaves {n_val} validation rows out of {n}"),
            ));
        }
        let n_train = n - n_val;
        if self.batch_size > n_train {
            return Err(invalid(
                "batch_size",
                format!("{} exceeds the {n_train} training rows", self.batch_size),
            ));
        }
        Ok((n_val, n_train))
    }
}

/// Per-epoch losses and the selected snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 0-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// FNV-1a digest of the kept parameters' bit patterns.
    pub snapshot_id: String,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch]
    }
}

pub fn params_digest<'a>(nets: impl IntoIterator<Item = &'a Mlp>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for net in nets {
        for p in &net.params {
            for b in p.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &FitConfig, t: i32) {
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let step = cfg.learning_rate / c1;
        let c2_sqrt = c2.sqrt();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() / c2_sqrt + cfg.adam_eps);
        }
    }
}

/// Seeded validation split: `(train_rows, val_rows)`, each sorted ascending.
pub fn split_rows(n: usize, cfg: &FitConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let (n_val, _) = cfg.split_sizes(n)?;
    let mut rng = rng::stream(rng::labelled_seed(cfg.seed, "validation-split"));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Seeded initial networks for a joint fit: `count` networks on input dimension `d`.
pub fn init_nets(d: usize, count: usize, bound: Option<f64>, cfg: &FitConfig) -> Result<Vec<Mlp>> {
    let widths = cfg.widths(d);
    (0..count)
        .map(|j| {
            let mut rng = rng::stream(rng::sub_seed(rng::labelled_seed(cfg.seed, "init"), j as u64));
            Mlp::init(&widths, bound, &mut rng)
        })
        .collect()
}

/// Trains `nets` jointly on `objective` over the rows of `x` (row-major, `d` columns).
///
/// Runs `max_epochs` full passes of shuffled mini-batches (the last short batch
/// is kept) and returns the snapshot with the smallest validation loss.
pub fn train(
    mut nets: Vec<Mlp>,
    x: &[f64],
    d: usize,
    objective: &dyn Objective,
    cfg: &FitConfig,
) -> Result<(Vec<Mlp>, TrainReport)> {
    cfg.validate()?;
    if nets.len() != objective.n_nets() || nets.is_empty() {
        return Err(invalid("nets", "network count does not match the objective"));
    }
    if nets.iter().any(|n| n.input_dim() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: nets[0].input_dim(),
        });
    }
    if d == 0 || !x.len().is_multiple_of(d) || x.is_empty() {
        return Err(Error::Data("empty or ragged covariate matrix".into()));
    }
    let n = x.len() / d;
    let (train_rows, val_rows) = split_rows(n, cfg)?;
    let bs = cfg.batch_size;

    let mut workspaces: Vec<Workspace> = nets.iter().map(|m| Workspace::new(&m.widths, bs)).collect();
    let mut val_ws: Vec<Workspace> = nets
        .iter()
        .map(|m| Workspace::new(&m.widths, PREDICT_CHUNK.min(val_rows.len())))
        .collect();
    let mut grads: Vec<Vec<f64>> = nets.iter().map(|m| vec![0.0; m.n_params()]).collect();
    let mut adams: Vec<Adam> = nets.iter().map(|m| Adam::new(m.n_params())).collect();
    let mut outputs: Vec<Vec<f64>> = vec![Vec::with_capacity(bs); nets.len()];
    let mut d_outs: Vec<Vec<f64>> = vec![Vec::with_capacity(bs); nets.len()];

    let mut order = train_rows.clone();
    let mut rng = rng::stream(rng::labelled_seed(cfg.seed, "batches"));
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.max_epochs),
        val_loss: Vec::with_capacity(cfg.max_epochs),
        best_epoch: 0,
        snapshot_id: String::new(),
    };
    let mut best: Option<Vec<Mlp>> = None;
    let mut t = 0i32;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(bs) {
            let rows = batch.len();
            for (o, g) in outputs.iter_mut().zip(d_outs.iter_mut()) {
                o.resize(rows, 0.0);
                g.resize(rows, 0.0);
            }
            for (j, net) in nets.iter().enumerate() {
                let ws = &mut workspaces[j];
                for (b, &r) in batch.iter().enumerate() {
                    ws.input[b * d..(b + 1) * d].copy_from_slice(&x[r * d..(r + 1) * d]);
                }
                net.forward_batch(ws, rows)?;
                outputs[j].copy_from_slice(&ws.output[..rows]);
            }
            let loss = objective.evaluate(batch, &outputs, Some(&mut d_outs));
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    layer: nets[0].n_layers(),
                });
            }
            epoch_loss += loss * rows as f64;
            t += 1;
            for (j, net) in nets.iter_mut().enumerate() {
                net.backward_batch(&mut workspaces[j], rows, &d_outs[j], &mut grads[j])?;
                adams[j].step(&mut net.params, &grads[j], cfg, t);
            }
        }
        report.train_loss.push(epoch_loss / train_rows.len() as f64);

        let val_outputs = predict_rows(&nets, &mut val_ws, x, d, &val_rows)?;
        let val = objective.evaluate(&val_rows, &val_outputs, None);
        if !val.is_finite() {
            return Err(Error::NonFinite {
                layer: nets[0].n_layers(),
            });
        }
        report.val_loss.push(val);
        if best.is_none() || val < report.val_loss[report.best_epoch] {
            report.best_epoch = epoch;
            best = Some(nets.clone());
        }
    }
    let best = best.expect("at least one epoch ran");
    report.snapshot_id = params_digest(&best);
    Ok((best, report))
}

fn predict_rows(
    nets: &[Mlp],
    workspaces: &mut [Workspace],
    x: &[f64],
    d: usize,
    rows: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; rows.len()]; nets.len()];
    for (j, net) in nets.iter().enumerate() {
        let ws = &mut workspaces[j];
        for (start, chunk) in (0..rows.len()).step_by(PREDICT_CHUNK).zip(rows.chunks(PREDICT_CHUNK)) {
            for (b, &r) in chunk.iter().enumerate() {
                ws.input[b * d..(b + 1) * d].copy_from_slice(&x[r * d..(r + 1) * d]);
            }
            net.forward_batch(ws, chunk.len())?;
            out[j][start..start + chunk.len()].copy_from_slice(&ws.output[..chunk.len()]);
        }
    }
    Ok(out)
}

/// Fits one network minimizing `mean loss(y_i - f(x_i))`, with the output
/// bound taken from `cfg.truncation`.
pub fn fit(data: &Dataset, loss: LossSpec, cfg: &FitConfig) -> Result<(Mlp, TrainReport)> {
    let bound = cfg.truncation.resolve(data.max_abs_response());
    fit_targets(data, data.y(), loss, 1.0, bound, cfg)
}

/// Fits one network minimizing `mean loss(target_i - scale · f(x_i))`.
pub fn fit_targets(
    data: &Dataset,
    targets: &[f64],
    loss: LossSpec,
    scale: f64,
    bound: Option<f64>,
    cfg: &FitConfig,
) -> Result<(Mlp, TrainReport)> {
    loss.validate()?;
    if data.len() < 5 {
        return Err(Error::Data(format!("need at least 5 rows, got {}", data.len())));
    }
    if targets.len() != data.len() {
        return Err(Error::Dimension {
            expected: data.len(),
            got: targets.len(),
        });
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Data("non-finite training target".into()));
    }
    let nets = init_nets(data.dim(), 1, bound, cfg)?;
    let objective = ResidualObjective {
        targets,
        loss,
        scale,
    };
    let (mut nets, report) = train(nets, data.x(), data.dim(), &objective, cfg)?;
    Ok((nets.pop().unwrap(), report))
}

/// Gradient of the mean batch loss `mean loss(y_i - f(x_i))` in the flat parameter layout.
pub fn grad(net: &Mlp, batch: &Dataset, loss: LossSpec) -> Result<Vec<f64>> {
    loss.validate()?;
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if batch.dim() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: batch.dim(),
        });
    }
    let rows = batch.len();
    let mut ws = Workspace::new(&net.widths, rows);
    ws.input.copy_from_slice(batch.x());
    net.forward_batch(&mut ws, rows)?;
    let inv = 1.0 / rows as f64;
    let d_out: Vec<f64> = batch
        .y()
        .iter()
        .zip(&ws.output)
        .map(|(y, o)| -loss.derivative(y - o) * inv)
        .collect();
    let mut g = vec![0.0; net.n_params()];
    net.backward_batch(&mut ws, rows, &d_out, &mut g)?;
    Ok(g)
}

/// Mean loss `mean loss(y_i - f(x_i))` over a dataset.
pub fn mean_loss(net: &Mlp, data: &Dataset, loss: LossSpec) -> Result<f64> {
    let pred = net.predict_dataset(data)?;
    Ok(data
        .y()
        .iter()
        .zip(&pred)
        .map(|(y, p)| loss.value(y - p))
        .sum::<f64>()
        / data.len() as f64)
}

/// Serialized network: widths, bound, flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub layer_widths: Vec<usize>,
    pub truncation_bound: Option<f64>,
    /// Per layer: row-major weights, then biases.
    pub params: Vec<f64>,
}

impl From<&Mlp> for MlpRecord {
    fn from(net: &Mlp) -> Self {
        Self {
            layer_widths: net.widths.clone(),
            truncation_bound: net.bound,
            params: net.params.clone(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(r: MlpRecord) -> Result<Self> {
        Mlp::from_params(&r.layer_widths, r.truncation_bound, r.params)
    }
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = MlpRecord::deserialize(d)?;
        Mlp::try_from(rec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_oracle(net: &Mlp, x: &[f64]) -> f64 {
        // plain nested loops over explicit weight matrices
        let mut a = x.to_vec();
        for l in 0..net.n_layers() {
            let w = net.weights(l);
            let b = net.biases(l);
            let n_out = b.len();
            let n_in = a.len();
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let mut s = b[o];
                for i in 0..n_in {
                    s += w[o * n_in + i] * a[i];
                }
                z[o] = if l + 1 < net.n_layers() { s.max(0.0) } else { s };
            }
            a = z;
        }
        match net.bound() {
            Some(m) => a[0].max(-m).min(m),
            None => a[0],
        }
    }

    #[test]
    fn affine_identity_sum() {
        let net = Mlp::from_layers(&[2, 1], None, &[vec![1.0, 1.0]], &[vec![0.0]]).unwrap();
        assert_eq!(net.forward(&[0.3, 0.7]).unwrap(), 1.0);
    }

    #[test]
    fn truncation_clips_output() {
        let net = Mlp::from_layers(&[1, 1], Some(1.0), &[vec![1.0]], &[vec![0.0]]).unwrap();
        assert_eq!(net.forward(&[2.5]).unwrap(), 1.0);
        assert_eq!(net.forward(&[-0.3]).unwrap(), -0.3);
        assert_eq!(net.forward(&[-7.0]).unwrap(), -1.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::zeros(&[3, 4, 1], None).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Dimension { .. })));
        assert!(Mlp::zeros(&[3, 4, 2], None).is_err());
        assert!(Mlp::zeros(&[3, 0, 1], None).is_err());
        assert!(Mlp::zeros(&[3, 1], Some(0.0)).is_err());
    }

    #[test]
    fn batched_forward_matches_dense_oracle() {
        let mut rng = rng::stream(5);
        let net = Mlp::init(&[5, 7, 6, 1], None, &mut rng).unwrap();
        let xs: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batched = net.predict(&xs).unwrap();
        for (i, row) in xs.chunks(5).enumerate() {
            let o = dense_oracle(&net, row);
            assert!((batched[i] - o).abs() < 1e-12);
            assert!((net.forward(row).unwrap() - o).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_net_squared_loss_bias_gradient_is_minus_mean_response() {
        let net = Mlp::zeros(&[2, 3, 1], None).unwrap();
        let data = Dataset::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![1.0, 2.0, 6.0], 2).unwrap();
        let g = grad(&net, &data, LossSpec::Squared).unwrap();
        let last_bias = *g.last().unwrap();
        assert!((last_bias + 3.0).abs() < 1e-15);
    }

    #[test]
    fn train_selects_minimum_validation_epoch() {
        let mut rng = rng::stream(9);
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.1 * rng.random::<f64>()).collect();
        let data = Dataset::new(x, y, 1).unwrap();
        let cfg = FitConfig {
            batch_size: 32,
            max_epochs: 30,
            learning_rate: 1e-3,
            hidden: vec![8, 8],
            ..FitConfig::default()
        };
        let (net, rep) = fit(&data, LossSpec::Squared, &cfg).unwrap();
        let min = rep.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(rep.best_val_loss(), min);
        assert_eq!(rep.snapshot_id, params_digest([&net]));
        assert_eq!(rep.train_loss.len(), 30);
    }

    #[test]
    fn config_validation() {
        let cfg = FitConfig::default();
        assert!(cfg.split_sizes(100).is_err(), "batch 128 > 80 training rows");
        assert!(FitConfig { batch_size: 10, ..cfg.clone() }.split_sizes(100).is_ok());
        assert!(FitConfig { validation_fraction: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(FitConfig { learning_rate: -1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn fit_rejects_tiny_data() {
        let data = Dataset::new(vec![0.0; 4], vec![0.0; 4], 1).unwrap();
        assert!(fit(&data, LossSpec::Squared, &FitConfig::default()).is_err());
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let mut rng = rng::stream(3);
        let net = Mlp::init(&[4, 6, 1], Some(3.25), &mut rng).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&s).unwrap();
        assert_eq!(
            net.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
            back.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.bound(), Some(3.25));
        assert_eq!(back.widths(), net.widths());
    }
}
