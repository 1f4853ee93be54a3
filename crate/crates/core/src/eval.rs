//! Out-of-sample error, replication summaries, permutation importance, and
//! the population Huber-bias check.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::estimators::{surrogate_from, EsModel, Tail};
use crate::losses::{huber_score, validate_alpha};
use crate::nn::Mlp;
use crate::quad;
use crate::rng;
use crate::simgen::{DistKind, ErrorDist};

/// Mean squared difference between predictions and truth.
pub fn mspe(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Data("mspe of zero points".into()));
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

/// Mean and spread of one estimator's MSPE over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MspeSummary {
    pub estimator: String,
    pub alpha: f64,
    pub n: usize,
    pub mean_mspe: f64,
    /// Sample standard deviation (n−1); 0 for a single replication.
    pub sd_mspe: f64,
    pub n_reps: usize,
    pub per_rep: Vec<f64>,
}

/// Returns `(mean, sd)` with the n−1 denominator and `sd = 0` when `n = 1`.
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Data("cannot summarize zero replications".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

pub fn aggregate(estimator: &str, alpha: f64, n: usize, reps: &[f64]) -> Result<MspeSummary> {
    let (mean_mspe, sd_mspe) = mean_sd(reps)?;
    Ok(MspeSummary {
        estimator: estimator.to_string(),
        alpha,
        n,
        mean_mspe,
        sd_mspe,
        n_reps: reps.len(),
        per_rep: reps.to_vec(),
    })
}

/// Table with one row per α and one `"mean (sd)"` column per estimator, in
/// first-appearance order. Missing cells are left empty.
pub fn summary_table_csv(summaries: &[MspeSummary]) -> String {
    let mut estimators: Vec<&str> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    for s in summaries {
        if !estimators.contains(&s.estimator.as_str()) {
            estimators.push(&s.estimator);
        }
        if !alphas.contains(&s.alpha) {
            alphas.push(s.alpha);
        }
    }
    let mut out = String::from("alpha");
    for e in &estimators {
        out.push(',');
        out.push_str(e);
    }
    out.push('\n');
    for a in &alphas {
        write!(out, "{a}").unwrap();
        for e in &estimators {
            out.push(',');
            if let Some(s) = summaries.iter().find(|s| s.alpha == *a && s.estimator == *e) {
                write!(out, "{:.3} ({:.3})", s.mean_mspe, s.sd_mspe).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// What the permutation loss is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VpiTarget {
    /// MSE against the observed response.
    Response,
    /// MSE of `Ẑ − α ĝ(X)` where `Ẑ` is built from the model's own quantile stage.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVpi {
    pub name: String,
    pub permuted_losses: Vec<f64>,
    /// `permuted / base − 1`, one per repeat.
    pub relative_increases: Vec<f64>,
    pub mean_relative_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpiReport {
    pub loss_kind: String,
    pub base_loss: f64,
    pub seed: u64,
    pub repeats: usize,
    pub features: Vec<FeatureVpi>,
}

impl VpiReport {
    /// Features by descending mean relative increase (stable for ties).
    pub fn ranked(&self) -> Vec<&FeatureVpi> {
        let mut v: Vec<&FeatureVpi> = self.features.iter().collect();
        v.sort_by(|a, b| b.mean_relative_increase.total_cmp(&a.mean_relative_increase));
        v
    }

    /// CSV with features ranked, one column per repeat.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,mean_vpi");
        for r in 0..self.repeats {
            write!(out, ",vpi_{}", r + 1).unwrap();
        }
        out.push('\n');
        for f in self.ranked() {
            write!(out, "{},{}", f.name, f.mean_relative_increase).unwrap();
            for v in &f.relative_increases {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn mse_scaled(targets: &[f64], pred: &[f64], scale: f64) -> f64 {
    let s: f64 = targets
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            let r = t - scale * p;
            r * r
        })
        .sum();
    s / targets.len() as f64
}

/// Permutation importance for any row-wise predictor.
///
/// Loss is `mean (target_i − scale · predict(X)_i)²`; each feature's column
/// is permuted `repeats` times with seeded permutations.
#[allow(clippy::too_many_arguments)]
pub fn vpi_with<P>(
    predict: P,
    data: &Dataset,
    targets: &[f64],
    scale: f64,
    names: &[String],
    seed: u64,
    repeats: usize,
    loss_kind: &str,
) -> Result<VpiReport>
where
    P: Fn(&Dataset) -> Result<Vec<f64>>,
{
    if data.len() < 2 {
        return Err(Error::Data("permutation importance needs at least 2 rows".into()));
    }
    if repeats == 0 {
        return Err(invalid("repeats", "must be at least 1"));
    }
    if names.len() != data.dim() {
        return Err(Error::Dimension {
            expected: data.dim(),
            got: names.len(),
        });
    }
    if targets.len() != data.len() {
        return Err(Error::Dimension {
            expected: data.len(),
            got: targets.len(),
        });
    }
    let base_loss = mse_scaled(targets, &predict(data)?, scale);
    if !(base_loss > 0.0) {
        return Err(Error::Numerical("base loss is zero; relative increases undefined".into()));
    }
    let root = rng::labelled_seed(seed, "vpi");
    let mut features = Vec::with_capacity(data.dim());
    for (j, name) in names.iter().enumerate() {
        let mut permuted_losses = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut perm: Vec<usize> = (0..data.len()).collect();
            perm.shuffle(&mut rng::stream(rng::sub_seed(rng::sub_seed(root, j as u64), r as u64)));
            let shuffled = data.with_permuted_column(j, &perm);
            permuted_losses.push(mse_scaled(targets, &predict(&shuffled)?, scale));
        }
        let relative_increases: Vec<f64> = permuted_losses.iter().map(|l| l / base_loss - 1.0).collect();
        let mean_relative_increase = relative_increases.iter().sum::<f64>() / repeats as f64;
        features.push(FeatureVpi {
            name: name.clone(),
            permuted_losses,
            relative_increases,
            mean_relative_increase,
        });
    }
    Ok(VpiReport {
        loss_kind: loss_kind.to_string(),
        base_loss,
        seed,
        repeats,
        features,
    })
}

/// Permutation importance of an ES model.
pub fn vpi(
    model: &EsModel,
    data: &Dataset,
    target: VpiTarget,
    names: &[String],
    seed: u64,
    repeats: usize,
) -> Result<VpiReport> {
    if data.dim() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: data.dim(),
        });
    }
    match target {
        VpiTarget::Response => vpi_with(
            |d| model.predict_es_batch(d),
            data,
            data.y(),
            1.0,
            names,
            seed,
            repeats,
            "mse_response",
        ),
        VpiTarget::Surrogate => {
            let qnet = model
                .quantile_net
                .as_ref()
                .ok_or_else(|| Error::Data("surrogate importance needs a fitted quantile stage".into()))?;
            // work on the scale the networks were trained on
            let y: Vec<f64> = match model.tail {
                Tail::Lower => data.y().to_vec(),
                Tail::Upper => data.y().iter().map(|v| -v).collect(),
            };
            let z = surrogate_from(&y, &qnet.predict_dataset(data)?, model.alpha)?;
            vpi_with(
                |d| model.es_net.predict_dataset(d),
                data,
                &z,
                model.alpha,
                names,
                seed,
                repeats,
                "mse_surrogate",
            )
        }
    }
}

/// Permutation importance of a mean-regression network against the response.
pub fn vpi_mean_net(net: &Mlp, data: &Dataset, names: &[String], seed: u64, repeats: usize) -> Result<VpiReport> {
    vpi_with(|d| net.predict_dataset(d), data, data.y(), 1.0, names, seed, repeats, "mse_response")
}

/// One τ of the population Huber-bias check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    #[serde(with = "crate::estimators::tau_format")]
    pub tau: f64,
    /// `|a_τ − g₀|`.
    pub deviation: f64,
    /// `α |a_τ − g₀|`.
    pub scaled_deviation: f64,
    /// `2 ν_p τ^{1−p}`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCheck {
    pub alpha: f64,
    pub p: f64,
    pub nu_p: f64,
    pub nu_2: Option<f64>,
    /// Smallest τ the bound applies to.
    pub tau_min: f64,
    /// The ES `g₀ = e_α(η)` of the noise.
    pub g0: f64,
    pub rows: Vec<BiasRow>,
}

/// Integration accuracy for the bias check.
const BIAS_TOL: f64 = 1e-11;

/// Scalar location model `Y = η`: the centered negative part
/// `ω = min(η − q_α, 0) − E min(η − q_α, 0)`, integrated over the quantile
/// scale `u` with `u = α s⁸` on the tail piece `(0, α)`.
struct TailPart<'a> {
    dist: &'a ErrorDist,
    alpha: f64,
    q_alpha: f64,
    mean: f64,
}

impl TailPart<'_> {
    fn new<'a>(dist: &'a ErrorDist, alpha: f64) -> Result<TailPart<'a>> {
        let q_alpha = dist.quantile(alpha)?;
        let e = dist.expected_shortfall(alpha)?;
        Ok(TailPart {
            dist,
            alpha,
            q_alpha,
            mean: alpha * (e - q_alpha),
        })
    }

    /// `E h(ω)` for `h` evaluated on the tail piece and at the constant piece `ω = −mean`.
    fn expect<H: Fn(f64) -> f64>(&self, h: H) -> Result<f64> {
        let failed = std::cell::Cell::new(None);
        let integrand = |s: f64| {
            if s <= 0.0 {
                return 0.0;
            }
            let s7 = s.powi(7);
            match self.dist.quantile(self.alpha * s7 * s) {
                Ok(q) => 8.0 * self.alpha * s7 * h(q - self.q_alpha - self.mean),
                Err(e) => {
                    failed.set(Some(e.to_string()));
                    0.0
                }
            }
        };
        let tail = quad::integrate(integrand, 0.0, 1.0, BIAS_TOL)?;
        if let Some(msg) = failed.take() {
            return Err(Error::Numerical(msg));
        }
        Ok(tail + (1.0 - self.alpha) * h(-self.mean))
    }
}

fn has_moment(dist: &ErrorDist, p: f64) -> bool {
    match dist.kind {
        DistKind::ScaledT { df, .. } => p < df,
        // remaining kinds have light or bounded lower tails
        _ => true,
    }
}

/// Checks `α |a_τ − g₀| ≤ 2 ν_p τ^{1−p}` on `tau_grid` for the scalar model
/// `Y = η`, where `a_τ` minimizes the population Huber risk of the surrogate.
///
/// `a_τ` is found as the root of the (monotone) expected Huber score.
/// `τ = ∞` entries are allowed and give the least-squares minimizer `g₀`.
pub fn huber_bias_check(dist: &ErrorDist, alpha: f64, p: f64, tau_grid: &[f64]) -> Result<BiasCheck> {
    validate_alpha(alpha)?;
    dist.validate()?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid("p", "must be finite and greater than 1"));
    }
    if tau_grid.is_empty() {
        return Err(invalid("tau_grid", "must be nonempty"));
    }
    if !has_moment(dist, p) || !has_moment(dist, 2.0f64.min(p)) {
        return Err(Error::Numerical(format!("moment of order {p} is infinite for this distribution")));
    }
    let part = TailPart::new(dist, alpha)?;
    let nu_p = part.expect(|w| w.abs().powf(p))?;
    let (nu_2, tau_min) = if p < 2.0 {
        (None, (4.0 * nu_p).powf(1.0 / p))
    } else {
        let nu_2 = part.expect(|w| w * w)?;
        (Some(nu_2), (4.0 * nu_2).sqrt())
    };
    let g0 = dist.expected_shortfall(alpha)?;
    let mut rows = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        if !(tau >= tau_min) {
            return Err(invalid("tau_grid", format!("tau {tau} is below the admissible minimum {tau_min}")));
        }
        let c = huber_shift(&part, tau)?;
        let bound = 2.0 * nu_p * tau.powf(1.0 - p);
        rows.push(BiasRow {
            tau,
            deviation: c.abs() / alpha,
            scaled_deviation: c.abs(),
            bound,
            holds: c.abs() <= bound,
        });
    }
    Ok(BiasCheck {
        alpha,
        p,
        nu_p,
        nu_2,
        tau_min,
        g0,
        rows,
    })
}

/// Root `c` of `E ψ_τ(ω − c) = 0`, i.e. `α (a_τ − g₀)`.
fn huber_shift(part: &TailPart<'_>, tau: f64) -> Result<f64> {
    if tau.is_infinite() {
        return Ok(0.0);
    }
    let score = |c: f64| part.expect(|w| huber_score(w - c, tau).unwrap_or(f64::NAN));
    let s0 = score(0.0)?;
    if s0 == 0.0 {
        return Ok(0.0);
    }
    // the score is nonincreasing in c; step outward until the sign flips
    let dir = s0.signum();
    let mut step = tau;
    let mut far = dir * step;
    let mut guard = 0;
    while score(far)?.signum() == dir {
        step *= 2.0;
        far = dir * step;
        guard += 1;
        if guard > 60 {
            return Err(Error::Numerical("could not bracket the Huber score root".into()));
        }
    }
    let failed = std::cell::Cell::new(None);
    let f = |c: f64| match score(c) {
        Ok(v) => v,
        Err(e) => {
            failed.set(Some(e.to_string()));
            0.0
        }
    };
    let (lo, hi) = if dir > 0.0 { (0.0, far) } else { (far, 0.0) };
    let root = quad::brent(f, lo, hi, 1e-14)?;
    if let Some(msg) = failed.take() {
        return Err(Error::Numerical(msg));
    }
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::huber_loss;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn mspe_basics() {
        assert_eq!(mspe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mspe(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(mspe(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mspe(&[], &[]).is_err());
    }

    #[test]
    fn mspe_matches_two_pass_oracle() {
        let mut r = rng::stream(1);
        let a: Vec<f64> = (0..10_000).map(|_| r.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..10_000).map(|_| r.random_range(-3.0..3.0)).collect();
        // difference vector first, then Kahan-compensated mean of squares
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for d in &diff {
            let y = d * d - comp;
            let t = s + y;
            comp = (t - s) - y;
            s = t;
        }
        assert!((mspe(&a, &b).unwrap() - s / 10_000.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mspe_scales_quadratically(
            v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50),
            c in -4.0f64..4.0,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let base = mspe(&p, &t).unwrap();
            let ps: Vec<f64> = p.iter().map(|x| c * x).collect();
            let ts: Vec<f64> = t.iter().map(|x| c * x).collect();
            prop_assert!((mspe(&ps, &ts).unwrap() - c * c * base).abs() <= 1e-10 * (1.0 + base));
            let mut pr = p.clone();
            let mut tr = t.clone();
            pr.reverse();
            tr.reverse();
            prop_assert!((mspe(&pr, &tr).unwrap() - base).abs() <= 1e-12 * (1.0 + base));
        }
    }

    #[test]
    fn aggregate_conventions() {
        let s = aggregate("DRES", 0.1, 4096, &[0.5]).unwrap();
        assert_eq!((s.mean_mspe, s.sd_mspe, s.n_reps), (0.5, 0.0, 1));
        let s = aggregate("DRES", 0.1, 4096, &[1.0, 3.0]).unwrap();
        assert_eq!(s.mean_mspe, 2.0);
        assert!((s.sd_mspe - 2f64.sqrt()).abs() < 1e-15);
        let s = aggregate("DES", 0.1, 4096, &[0.25; 200]).unwrap();
        assert_eq!(s.sd_mspe, 0.0);
        assert!(aggregate("DES", 0.1, 1, &[]).is_err());
    }

    #[test]
    fn table_layout() {
        let s = vec![
            aggregate("DES", 0.05, 10, &[0.4, 0.5]).unwrap(),
            aggregate("DRES", 0.05, 10, &[0.2]).unwrap(),
            aggregate("DES", 0.1, 10, &[0.1]).unwrap(),
        ];
        let t = summary_table_csv(&s);
        assert_eq!(t, "alpha,DES,DRES\n0.05,0.450 (0.071),0.200 (0.000)\n0.1,0.100 (0.000),\n");
    }

    fn linear_net(w: &[f64], b: f64) -> Mlp {
        let mut p = w.to_vec();
        p.push(b);
        Mlp::from_params(&[w.len(), 1], None, p).unwrap()
    }

    fn dominant_data(n: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed);
        let x: Vec<f64> = (0..n * 3).map(|_| r.random::<f64>()).collect();
        let y = (0..n).map(|i| 5.0 * x[3 * i] + 0.5 * x[3 * i + 1] + r.random::<f64>() - 0.5).collect();
        Dataset::new(x, y, 3).unwrap()
    }

    #[test]
    fn zero_weight_feature_has_zero_importance() {
        let data = dominant_data(500, 3);
        let net = linear_net(&[5.0, 0.5, 0.0], 0.0);
        let rep = vpi_mean_net(&net, &data, &data.default_names(), 7, 3).unwrap();
        assert_eq!(rep.features[2].mean_relative_increase, 0.0);
        assert!(rep.features[2].relative_increases.iter().all(|&v| v == 0.0));
        let ranked = rep.ranked();
        assert_eq!(ranked[0].name, "x1");
        assert_eq!(ranked[2].name, "x3");
        assert_eq!(rep.features[0].relative_increases.len(), 3);
        let again = vpi_mean_net(&net, &data, &data.default_names(), 7, 3).unwrap();
        assert_eq!(again.to_csv(), rep.to_csv());
    }

    #[test]
    fn surrogate_importance_for_es_model() {
        let data = dominant_data(400, 5);
        let model = EsModel {
            alpha: 0.1,
            quantile_net: Some(linear_net(&[5.0, 0.5, 0.0], -0.4)),
            es_net: linear_net(&[5.0, 0.5, 0.0], -0.45),
            tau_used: 2.0,
            tail: Tail::Lower,
        };
        let names = data.default_names();
        let rep = vpi(&model, &data, VpiTarget::Surrogate, &names, 1, 2).unwrap();
        assert_eq!(rep.loss_kind, "mse_surrogate");
        assert_eq!(rep.features[2].mean_relative_increase, 0.0);
        assert_eq!(rep.ranked()[0].name, "x1");
        let oracle = EsModel { quantile_net: None, ..model };
        assert!(vpi(&oracle, &data, VpiTarget::Surrogate, &names, 1, 2).is_err());
        assert!(vpi(&oracle, &data, VpiTarget::Response, &names, 1, 2).is_ok());
    }

    // independent oracle: golden-section minimization of the Huber risk
    // E ℓ_τ(ω − c), with expectations by composite Simpson in s on u = α s⁸
    fn golden_oracle(dist: &ErrorDist, alpha: f64, tau: f64) -> f64 {
        let q_a = dist.quantile(alpha).unwrap();
        let e = dist.expected_shortfall(alpha).unwrap();
        let m = alpha * (e - q_a);
        let n = 20_000;
        let h = 1.0 / n as f64;
        let pts: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let s = i as f64 * h;
                let wgt = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                if s == 0.0 {
                    return (0.0, 0.0);
                }
                let w = dist.quantile(alpha * s.powi(8)).unwrap() - q_a - m;
                (w, wgt * h / 3.0 * 8.0 * alpha * s.powi(7))
            })
            .collect();
        let risk = |c: f64| {
            pts.iter().map(|(w, k)| k * huber_loss(w - c, tau).unwrap()).sum::<f64>()
                + (1.0 - alpha) * huber_loss(-m - c, tau).unwrap()
        };
        let (mut a, mut b) = (-2.0, 2.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c1 = b - g * (b - a);
            let c2 = a + g * (b - a);
            if risk(c1) < risk(c2) {
                b = c2;
            } else {
                a = c1;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn two_point_noise_has_no_bias() {
        let d = ErrorDist::new(DistKind::TwoPoint, false).unwrap();
        let c = huber_bias_check(&d, 0.1, 2.0, &[1.0, 2.0, f64::INFINITY]).unwrap();
        assert!(c.rows.iter().all(|r| r.deviation == 0.0 && r.holds));
    }

    #[test]
    fn pareto_bias_within_bound() {
        let d = ErrorDist::new(DistKind::Pareto { k: 2.5, s_min: 1.0 }, true).unwrap();
        let c = huber_bias_check(&d, 0.1, 2.0, &[5.0, 10.0, 20.0, f64::INFINITY]).unwrap();
        for w in c.rows.windows(2) {
            assert!(w[1].deviation <= w[0].deviation);
        }
        assert!(c.rows.iter().all(|r| r.holds));
        assert!(c.rows[3].deviation < 1e-6);
    }

    #[test]
    fn t_noise_bias_shrinks_and_matches_oracle() {
        let d = ErrorDist::scaled_t();
        let grid = [2.0, 4.0, 8.0, 16.0];
        let c = huber_bias_check(&d, 0.1, 2.0, &grid).unwrap();
        assert!(c.rows[0].deviation > 1e-4, "{c:?}");
        for w in c.rows.windows(2) {
            assert!(w[1].deviation < w[0].deviation);
        }
        assert!(c.rows.iter().all(|r| r.holds));
        for r in &c.rows {
            let oracle = golden_oracle(&d, 0.1, r.tau).abs();
            assert!((oracle - r.scaled_deviation).abs() < 1e-6, "tau {}: {oracle} vs {}", r.tau, r.scaled_deviation);
        }
    }

    #[test]
    fn bias_check_preconditions() {
        let d = ErrorDist::scaled_t();
        assert!(huber_bias_check(&d, 0.1, 3.0, &[10.0]).is_err());
        assert!(huber_bias_check(&d, 0.1, 2.0, &[0.01]).is_err());
        assert!(huber_bias_check(&d, 0.1, 2.0, &[]).is_err());
        assert!(huber_bias_check(&d, 0.1, 1.0, &[5.0]).is_err());
    }
}
