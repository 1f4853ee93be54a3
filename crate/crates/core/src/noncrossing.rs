//! Non-crossing multi-level quantile and ES estimation.
//!
//! A stack at levels `α₁ < … < α_K` consists of a mean network `v` and gap
//! networks `w₁ … w_K`. Level `k` evaluates to
//!
//! ```text
//! f_k = v − w̄ + Σ_{j≤k} ι(w_j),   w̄ = K⁻¹ Σ_k (K+1−k) ι(w_k)
//! ```
//!
//! so `f_{k+1} − f_k = ι(w_{k+1}) > 0` and the level average of `f_k` is `v`.
//! The ES stack has the same shape; its outputs are finally clamped to
//! `min(g̃_k, f̂_k)`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::estimators::{stage_configs, surrogate_from, tau_format};
use crate::losses::{validate_alpha, validate_tau, LossSpec};
use crate::nn::{self, FitConfig, Mlp, Objective, TrainReport};
use crate::tuning::TauRule;

/// Positive gap activation: `u + 1` for `u ≥ 0`, `e^u` for `u < 0`.
pub fn gap_activation(u: f64) -> f64 {
    if u >= 0.0 {
        u + 1.0
    } else {
        u.exp()
    }
}

fn gap_activation_deriv(u: f64) -> f64 {
    if u >= 0.0 {
        1.0
    } else {
        u.exp()
    }
}

/// Combines one row of network outputs into the `K` level values.
fn combine(v: f64, w: &[f64], out: &mut [f64]) {
    let k = w.len();
    let kf = k as f64;
    let mut wbar = 0.0;
    for (j, &wj) in w.iter().enumerate() {
        wbar += (k - j) as f64 * gap_activation(wj);
    }
    wbar /= kf;
    let base = v - wbar;
    let mut prefix = 0.0;
    for (o, &wj) in out.iter_mut().zip(w) {
        prefix += gap_activation(wj);
        *o = base + prefix;
    }
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(invalid("levels", "need at least one level"));
    }
    for &a in levels {
        validate_alpha(a)?;
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("levels", "must be strictly increasing"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackKind {
    Quantile,
    Es,
}

/// A mean network plus one gap network per level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcStack {
    levels: Vec<f64>,
    kind: StackKind,
    mean_net: Mlp,
    gap_nets: Vec<Mlp>,
}

impl NcStack {
    pub fn new(levels: Vec<f64>, kind: StackKind, mean_net: Mlp, gap_nets: Vec<Mlp>) -> Result<Self> {
        validate_levels(&levels)?;
        if gap_nets.len() != levels.len() {
            return Err(Error::Dimension {
                expected: levels.len(),
                got: gap_nets.len(),
            });
        }
        let d = mean_net.input_dim();
        if let Some(bad) = gap_nets.iter().find(|n| n.input_dim() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: bad.input_dim(),
            });
        }
        Ok(Self {
            levels,
            kind,
            mean_net,
            gap_nets,
        })
    }

    fn from_nets(levels: &[f64], kind: StackKind, mut nets: Vec<Mlp>) -> Result<Self> {
        let gaps = nets.split_off(1);
        Self::new(levels.to_vec(), kind, nets.pop().unwrap(), gaps)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn kind(&self) -> StackKind {
        self.kind
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn gap_nets(&self) -> &[Mlp] {
        &self.gap_nets
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    /// Level values `(f₁(x), …, f_K(x))`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.mean_net.forward(x)?;
        let w = self.gap_nets.iter().map(|n| n.forward(x)).collect::<Result<Vec<_>>>()?;
        let mut out = vec![0.0; self.n_levels()];
        combine(v, &w, &mut out);
        Ok(out)
    }

    /// Level values on every row, level-major: `out[k][i]`.
    pub fn eval_batch(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        let v = self.mean_net.predict_dataset(data)?;
        let w = self
            .gap_nets
            .iter()
            .map(|n| n.predict_dataset(data))
            .collect::<Result<Vec<_>>>()?;
        let k = self.n_levels();
        let mut out = vec![vec![0.0; data.len()]; k];
        let mut wi = vec![0.0; k];
        let mut row = vec![0.0; k];
        for i in 0..data.len() {
            for j in 0..k {
                wi[j] = w[j][i];
            }
            combine(v[i], &wi, &mut row);
            for j in 0..k {
                out[j][i] = row[j];
            }
        }
        Ok(out)
    }
}

pub fn stack_eval(stack: &NcStack, x: &[f64]) -> Result<Vec<f64>> {
    stack.eval(x)
}

#[derive(Deserialize)]
struct NcStackRecord {
    levels: Vec<f64>,
    kind: StackKind,
    mean_net: Mlp,
    gap_nets: Vec<Mlp>,
}

impl<'de> Deserialize<'de> for NcStack {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = NcStackRecord::deserialize(d)?;
        NcStack::new(r.levels, r.kind, r.mean_net, r.gap_nets).map_err(serde::de::Error::custom)
    }
}

/// Averaged multi-level objective `K⁻¹ Σ_k loss_k(target_k − scale_k · f_k)`
/// over a stack's networks (mean network first, then the gaps).
struct StackObjective {
    targets: Vec<Vec<f64>>,
    losses: Vec<LossSpec>,
    scales: Vec<f64>,
}

impl Objective for StackObjective {
    fn n_nets(&self) -> usize {
        self.losses.len() + 1
    }

    fn evaluate(&self, rows: &[usize], outputs: &[Vec<f64>], mut grads: Option<&mut [Vec<f64>]>) -> f64 {
        let k = self.losses.len();
        let kf = k as f64;
        let inv = 1.0 / (rows.len() as f64 * kf);
        let mut w = vec![0.0; k];
        let mut f = vec![0.0; k];
        let mut g = vec![0.0; k];
        let mut total = 0.0;
        for (b, &r) in rows.iter().enumerate() {
            for j in 0..k {
                w[j] = outputs[j + 1][b];
            }
            combine(outputs[0][b], &w, &mut f);
            for j in 0..k {
                let u = self.targets[j][r] - self.scales[j] * f[j];
                total += self.losses[j].value(u);
                g[j] = -self.scales[j] * self.losses[j].derivative(u) * inv;
            }
            if let Some(grads) = grads.as_deref_mut() {
                // d f_k / d v = 1;  d f_k / d w_j = ι'(w_j) (1[j ≤ k] − (K − j)/K), j 0-based
                let sum_g: f64 = g.iter().sum();
                grads[0][b] = sum_g;
                let mut tail = sum_g;
                for j in 0..k {
                    grads[j + 1][b] = gap_activation_deriv(w[j]) * (tail - (k - j) as f64 / kf * sum_g);
                    tail -= g[j];
                }
            }
        }
        total * inv
    }
}

/// Jointly fits a quantile stack on the averaged check loss over `levels`.
pub fn fit_nc_dqr(data: &Dataset, levels: &[f64], cfg: &FitConfig) -> Result<(NcStack, TrainReport)> {
    validate_levels(levels)?;
    let k = levels.len();
    let objective = StackObjective {
        targets: vec![data.y().to_vec(); k],
        losses: levels.iter().map(|&a| LossSpec::Check { alpha: a }).collect(),
        scales: vec![1.0; k],
    };
    let bound = cfg.truncation.resolve(data.max_abs_response());
    let nets = nn::init_nets(data.dim(), k + 1, bound, cfg)?;
    let (nets, report) = nn::train(nets, data.x(), data.dim(), &objective, cfg)?;
    Ok((NcStack::from_nets(levels, StackKind::Quantile, nets)?, report))
}

/// Fitted non-crossing quantile and ES stacks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcEsModel {
    pub quantile_stack: NcStack,
    pub es_stack: NcStack,
    #[serde(with = "tau_format::vec")]
    pub taus: Vec<f64>,
    pub clamped: bool,
}

#[derive(Deserialize)]
struct NcEsRecord {
    quantile_stack: NcStack,
    es_stack: NcStack,
    #[serde(with = "tau_format::vec")]
    taus: Vec<f64>,
    clamped: bool,
}

impl<'de> Deserialize<'de> for NcEsModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = NcEsRecord::deserialize(d)?;
        if r.quantile_stack.levels != r.es_stack.levels || r.taus.len() != r.es_stack.n_levels() {
            return Err(D::Error::custom("stacks and taus disagree on levels"));
        }
        if r.quantile_stack.dim() != r.es_stack.dim() {
            return Err(D::Error::custom("stacks differ in input dimension"));
        }
        Ok(NcEsModel {
            quantile_stack: r.quantile_stack,
            es_stack: r.es_stack,
            taus: r.taus,
            clamped: r.clamped,
        })
    }
}

impl NcEsModel {
    pub fn levels(&self) -> &[f64] {
        self.quantile_stack.levels()
    }

    /// `(f̂_k, ĝ_k)` per level at `x`, clamped when the model says so.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        let f = self.quantile_stack.eval(x)?;
        let g = self.es_stack.eval(x)?;
        Ok(f.into_iter()
            .zip(g)
            .map(|(f, g)| (f, if self.clamped { g.min(f) } else { g }))
            .collect())
    }

    /// Level-major batch predictions `(f[k][i], g[k][i])`.
    pub fn predict_batch(&self, data: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let f = self.quantile_stack.eval_batch(data)?;
        let mut g = self.es_stack.eval_batch(data)?;
        if self.clamped {
            for (gk, fk) in g.iter_mut().zip(&f) {
                for (gi, fi) in gk.iter_mut().zip(fk) {
                    *gi = gi.min(*fi);
                }
            }
        }
        Ok((f, g))
    }
}

pub fn nc_predict(model: &NcEsModel, x: &[f64]) -> Result<Vec<(f64, f64)>> {
    model.predict(x)
}

/// Per-level τ from the level-k residuals of a quantile stack.
pub fn nc_taus(data: &Dataset, qstack: &NcStack, rule: TauRule) -> Result<Vec<f64>> {
    qstack
        .eval_batch(data)?
        .iter()
        .map(|fk| rule.resolve_with(data.y(), fk))
        .collect()
}

/// Fits the ES stack on per-level surrogates built from `qstack`, then clamps.
pub fn fit_nc_dres(data: &Dataset, qstack: &NcStack, taus: &[f64], cfg: &FitConfig) -> Result<(NcEsModel, TrainReport)> {
    let k = qstack.n_levels();
    if taus.len() != k {
        return Err(Error::Dimension {
            expected: k,
            got: taus.len(),
        });
    }
    for &t in taus {
        validate_tau(t)?;
    }
    if qstack.kind() != StackKind::Quantile {
        return Err(invalid("qstack", "expected a quantile stack"));
    }
    if qstack.dim() != data.dim() {
        return Err(Error::Dimension {
            expected: qstack.dim(),
            got: data.dim(),
        });
    }
    let levels = qstack.levels();
    let fx = qstack.eval_batch(data)?;
    let targets = fx
        .iter()
        .zip(levels)
        .map(|(fk, &a)| surrogate_from(data.y(), fk, a))
        .collect::<Result<Vec<_>>>()?;
    let objective = StackObjective {
        targets,
        losses: taus.iter().map(|&tau| LossSpec::Huber { tau }).collect(),
        scales: levels.to_vec(),
    };
    let bound = cfg.truncation.resolve(data.max_abs_response());
    let nets = nn::init_nets(data.dim(), k + 1, bound, cfg)?;
    let (nets, report) = nn::train(nets, data.x(), data.dim(), &objective, cfg)?;
    let model = NcEsModel {
        quantile_stack: qstack.clone(),
        es_stack: NcStack::from_nets(levels, StackKind::Es, nets)?,
        taus: taus.to_vec(),
        clamped: true,
    };
    Ok((model, report))
}

/// A complete non-crossing fit with its training histories.
#[derive(Debug, Clone)]
pub struct NcFit {
    pub model: NcEsModel,
    pub quantile_report: TrainReport,
    pub es_report: TrainReport,
}

/// NC-DQR, per-level τ from `rule`, then NC-DRES.
pub fn fit_nc_two_step(data: &Dataset, levels: &[f64], rule: TauRule, cfg: &FitConfig) -> Result<NcFit> {
    let (q_cfg, e_cfg) = stage_configs(cfg);
    let (qstack, quantile_report) = fit_nc_dqr(data, levels, &q_cfg)?;
    let taus = nc_taus(data, &qstack, rule)?;
    let (model, es_report) = fit_nc_dres(data, &qstack, &taus, &e_cfg)?;
    Ok(NcFit {
        model,
        quantile_report,
        es_report,
    })
}
