//! The two-step ES pipeline: a quantile (DQR) first stage, the surrogate
//! response, and a least-squares (DES) or Huber (DRES) second stage.
//!
//! The second stage regresses `Z = min(Y − f(X), 0) + α f(X)` on `X` with loss
//! `ℓ_τ(Z − α g(X))`; `τ = ∞` is plain least squares. Upper-tail ES is obtained
//! by fitting the lower tail of `−Y` and negating predictions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{validate_alpha, validate_tau, LossSpec};
use crate::nn::{self, FitConfig, Mlp, TrainReport};
use crate::rng;
use crate::tuning::TauRule;

/// Which tail the ES refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    #[default]
    Lower,
    Upper,
}

/// A known function of the covariates, shareable across threads.
pub type CovariateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A first-stage quantile function: a fitted network or a known truth.
#[derive(Clone)]
pub enum QuantileFn {
    Net(Mlp),
    Oracle(CovariateFn),
}

impl fmt::Debug for QuantileFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantileFn::Net(net) => f.debug_tuple("Net").field(&net.widths()).finish(),
            QuantileFn::Oracle(_) => f.write_str("Oracle"),
        }
    }
}

impl QuantileFn {
    pub fn eval_point(&self, x: &[f64]) -> Result<f64> {
        let v = match self {
            QuantileFn::Net(net) => net.forward(x)?,
            QuantileFn::Oracle(f) => f(x),
        };
        if !v.is_finite() {
            return Err(Error::Numerical("non-finite quantile value".into()));
        }
        Ok(v)
    }

    pub fn eval(&self, data: &Dataset) -> Result<Vec<f64>> {
        match self {
            QuantileFn::Net(net) => net.predict_dataset(data),
            QuantileFn::Oracle(_) => (0..data.len()).map(|i| self.eval_point(data.row(i))).collect(),
        }
    }

    pub fn net(&self) -> Option<&Mlp> {
        match self {
            QuantileFn::Net(net) => Some(net),
            QuantileFn::Oracle(_) => None,
        }
    }
}

/// Fitted quantile and ES networks at one level.
///
/// `quantile_net` is absent for oracle fits, whose first stage was a known
/// function rather than a network.
#[derive(Debug, Clone, PartialEq)]
pub struct EsModel {
    pub alpha: f64,
    pub quantile_net: Option<Mlp>,
    pub es_net: Mlp,
    pub tau_used: f64,
    pub tail: Tail,
}

impl EsModel {
    fn sign(&self) -> f64 {
        match self.tail {
            Tail::Lower => 1.0,
            Tail::Upper => -1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.es_net.input_dim()
    }

    /// `(quantile, es)` at `x`, on the original response scale.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let q = self.quantile_stage()?.forward(x)?;
        let g = self.es_net.forward(x)?;
        Ok((self.sign() * q, self.sign() * g))
    }

    pub fn predict_es(&self, x: &[f64]) -> Result<f64> {
        Ok(self.sign() * self.es_net.forward(x)?)
    }

    /// Row-wise `(quantile, es)`; identical to calling [`predict`](Self::predict) per row.
    pub fn predict_batch(&self, data: &Dataset) -> Result<Vec<(f64, f64)>> {
        let q = self.quantile_stage()?.predict_dataset(data)?;
        let g = self.es_net.predict_dataset(data)?;
        let s = self.sign();
        Ok(q.into_iter().zip(g).map(|(q, g)| (s * q, s * g)).collect())
    }

    pub fn predict_es_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        let s = self.sign();
        Ok(self.es_net.predict_dataset(data)?.into_iter().map(|g| s * g).collect())
    }

    fn quantile_stage(&self) -> Result<&Mlp> {
        self.quantile_net
            .as_ref()
            .ok_or_else(|| Error::Data("model has no fitted quantile stage (oracle fit)".into()))
    }
}

/// Serialized form of [`EsModel`]; `tau_used` is written as `"inf"` for DES fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EsModelRecord {
    alpha: f64,
    #[serde(with = "tau_format")]
    tau_used: f64,
    tail: Tail,
    quantile_net: Option<Mlp>,
    es_net: Mlp,
}

impl Serialize for EsModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EsModelRecord {
            alpha: self.alpha,
            tau_used: self.tau_used,
            tail: self.tail,
            quantile_net: self.quantile_net.clone(),
            es_net: self.es_net.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EsModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = EsModelRecord::deserialize(d)?;
        validate_alpha(r.alpha).map_err(D::Error::custom)?;
        validate_tau(r.tau_used).map_err(D::Error::custom)?;
        if let Some(q) = &r.quantile_net {
            if q.input_dim() != r.es_net.input_dim() {
                return Err(D::Error::custom("quantile and ES networks differ in input dimension"));
            }
        }
        Ok(EsModel {
            alpha: r.alpha,
            quantile_net: r.quantile_net,
            es_net: r.es_net,
            tau_used: r.tau_used,
            tail: r.tail,
        })
    }
}

/// Serde adapter for a τ value that may be `+∞` (written as the string `"inf"`).
pub(crate) mod tau_format {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if tau.is_infinite() && *tau > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*tau)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid tau {t:?}"))),
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(tau: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match tau {
                Some(t) => super::serialize(t, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct One(#[serde(with = "super")] f64);
            Ok(Option::<One>::deserialize(d)?.map(|o| o.0))
        }
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(taus: &[f64], s: S) -> Result<S::Ok, S::Error> {
            struct One(f64);
            impl serde::Serialize for One {
                fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                    super::serialize(&self.0, s)
                }
            }
            let mut seq = s.serialize_seq(Some(taus.len()))?;
            for &t in taus {
                seq.serialize_element(&One(t))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            #[derive(Deserialize)]
            struct One(#[serde(with = "super")] f64);
            Ok(Vec::<One>::deserialize(d)?.into_iter().map(|o| o.0).collect())
        }
    }
}

/// Deep quantile regression at level `alpha`.
pub fn fit_dqr(data: &Dataset, alpha: f64, cfg: &FitConfig) -> Result<(Mlp, TrainReport)> {
    nn::fit(data, LossSpec::check(alpha)?, cfg)
}

/// Surrogate responses `min(Y_i − f(X_i), 0) + α f(X_i)` from precomputed `f(X_i)`.
pub fn surrogate_from(y: &[f64], fx: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if y.len() != fx.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: fx.len(),
        });
    }
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite quantile value".into()));
    }
    Ok(y.iter().zip(fx).map(|(y, f)| (y - f).min(0.0) + alpha * f).collect())
}

pub fn build_surrogate(data: &Dataset, f: &QuantileFn, alpha: f64) -> Result<Vec<f64>> {
    validate_alpha(alpha)?;
    surrogate_from(data.y(), &f.eval(data)?, alpha)
}

/// Second stage: fits `g` minimizing `mean ℓ_τ(Z_i − α g(X_i))`.
///
/// With a fitted network `f` this is the two-step estimator; with an oracle `f`
/// it is the oracle variant. The truncation bound comes from `cfg` and the raw
/// responses, as in the first stage.
pub fn fit_es(data: &Dataset, f: &QuantileFn, alpha: f64, tau: f64, cfg: &FitConfig) -> Result<(EsModel, TrainReport)> {
    validate_alpha(alpha)?;
    validate_tau(tau)?;
    let z = build_surrogate(data, f, alpha)?;
    let bound = cfg.truncation.resolve(data.max_abs_response());
    let (es_net, report) = nn::fit_targets(data, &z, LossSpec::Huber { tau }, alpha, bound, cfg)?;
    let model = EsModel {
        alpha,
        quantile_net: f.net().cloned(),
        es_net,
        tau_used: tau,
        tail: Tail::Lower,
    };
    Ok((model, report))
}

/// A complete two-step fit with its training histories.
#[derive(Debug, Clone)]
pub struct TwoStepFit {
    pub model: EsModel,
    pub quantile_report: TrainReport,
    pub es_report: TrainReport,
}

/// Per-stage configurations derived from one seed, so the two networks start
/// from independent initializations and validation splits.
pub fn stage_configs(cfg: &FitConfig) -> (FitConfig, FitConfig) {
    (
        cfg.with_seed(rng::labelled_seed(cfg.seed, "quantile-stage")),
        cfg.with_seed(rng::labelled_seed(cfg.seed, "es-stage")),
    )
}

/// DQR followed by the ES stage with τ chosen by `rule` from the fitted quantile.
pub fn fit_two_step(data: &Dataset, alpha: f64, rule: TauRule, cfg: &FitConfig) -> Result<TwoStepFit> {
    let (q_cfg, e_cfg) = stage_configs(cfg);
    let (qnet, quantile_report) = fit_dqr(data, alpha, &q_cfg)?;
    let f = QuantileFn::Net(qnet);
    let tau = rule.resolve(data, &f)?;
    let (model, es_report) = fit_es(data, &f, alpha, tau, &e_cfg)?;
    Ok(TwoStepFit {
        model,
        quantile_report,
        es_report,
    })
}

/// Upper-tail ES: the lower-tail fit of `−Y`, with predictions negated.
pub fn fit_upper(data: &Dataset, alpha: f64, rule: TauRule, cfg: &FitConfig) -> Result<TwoStepFit> {
    let mut fit = fit_two_step(&data.negated(), alpha, rule, cfg)?;
    fit.model.tail = Tail::Upper;
    Ok(fit)
}
