//! Robustification parameter: the residual-variance proxy, the τ rule and the
//! sensitivity sweep.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::estimators::{fit_es, EsModel, QuantileFn};
use crate::nn::FitConfig;

/// Rate exponent applied to `n / ln n`.
pub const RATE_EXPONENT: f64 = 0.3;
/// Multiplier used in place of `sqrt(ν̂₂)` when the negative residuals are degenerate.
pub const NU2_FLOOR_SCALE: f64 = 1e-6;

/// How the Huber parameter of the ES stage is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TauRule {
    /// `τ = tau_const · sqrt(ν̂₂) · (n / ln n)^0.3`.
    Rule { tau_const: f64 },
    Fixed { value: f64 },
    /// Least squares (DES).
    Infinite,
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Rule { tau_const: 1.0 }
    }
}

impl TauRule {
    pub fn rule(tau_const: f64) -> Result<Self> {
        let r = TauRule::Rule { tau_const };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TauRule::Rule { tau_const } if !(tau_const > 0.0 && tau_const.is_finite()) => {
                Err(invalid("tau_const", "must be positive and finite"))
            }
            TauRule::Fixed { value } if !(value > 0.0) => Err(invalid("tau", "must be positive")),
            _ => Ok(()),
        }
    }

    /// Resolves τ for training on `data` with first-stage quantile `f`.
    pub fn resolve(&self, data: &Dataset, f: &QuantileFn) -> Result<f64> {
        self.validate()?;
        match *self {
            TauRule::Rule { tau_const } => tau_hat(nu2_hat(data, f)?, data.len(), tau_const),
            TauRule::Fixed { value } => Ok(value),
            TauRule::Infinite => Ok(f64::INFINITY),
        }
    }

    /// Same as [`resolve`](Self::resolve) given precomputed quantile values at the rows.
    pub fn resolve_with(&self, y: &[f64], fx: &[f64]) -> Result<f64> {
        self.validate()?;
        match *self {
            TauRule::Rule { tau_const } => tau_hat(nu2_from_residuals(y, fx)?, y.len(), tau_const),
            TauRule::Fixed { value } => Ok(value),
            TauRule::Infinite => Ok(f64::INFINITY),
        }
    }
}

/// Sample variance (denominator n−1) of `min(y_i − f_i, 0)`.
pub fn nu2_from_residuals(y: &[f64], fx: &[f64]) -> Result<f64> {
    if y.len() != fx.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: fx.len(),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 rows, got {n}")));
    }
    let neg: Vec<f64> = y.iter().zip(fx).map(|(y, f)| (y - f).min(0.0)).collect();
    if neg.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite residual".into()));
    }
    let mean = neg.iter().sum::<f64>() / n as f64;
    Ok(neg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
}

/// Residual-variance proxy ν̂₂ for quantile function `f` on `data`.
pub fn nu2_hat(data: &Dataset, f: &QuantileFn) -> Result<f64> {
    nu2_from_residuals(data.y(), &f.eval(data)?)
}

/// `tau_const · sqrt(nu2) · (n / ln n)^0.3`, with a floor when `nu2 = 0`.
pub fn tau_hat(nu2: f64, n: usize, tau_const: f64) -> Result<f64> {
    if n < 3 {
        return Err(invalid("n", "must be at least 3"));
    }
    if !(nu2 >= 0.0 && nu2.is_finite()) {
        return Err(invalid("nu2", "must be finite and nonnegative"));
    }
    if !(tau_const > 0.0 && tau_const.is_finite()) {
        return Err(invalid("tau_const", "must be positive and finite"));
    }
    let nf = n as f64;
    let rate = (nf / nf.ln()).powf(RATE_EXPONENT);
    let scale = if nu2 > 0.0 { nu2.sqrt() } else { NU2_FLOOR_SCALE };
    Ok(tau_const * scale * rate)
}

/// One grid point of a τ sweep on a single dataset.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub tau_const: f64,
    pub tau: f64,
    pub model: EsModel,
    pub score: f64,
}

/// Fits DRES at each `tau_const` in `grid` under the same seed and scores each
/// fit with `score` (e.g. MSPE against a known truth).
pub fn tau_sweep<S>(
    data: &Dataset,
    f: &QuantileFn,
    alpha: f64,
    grid: &[f64],
    cfg: &FitConfig,
    score: S,
) -> Result<Vec<SweepPoint>>
where
    S: Fn(&EsModel) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(invalid("grid", "must be nonempty"));
    }
    let fx = f.eval(data)?;
    let nu2 = nu2_from_residuals(data.y(), &fx)?;
    grid.iter()
        .map(|&c| {
            let tau = tau_hat(nu2, data.len(), c)?;
            let (model, _) = fit_es(data, f, alpha, tau, cfg)?;
            let score = score(&model)?;
            Ok(SweepPoint {
                tau_const: c,
                tau,
                model,
                score,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_variance() {
        assert_eq!(nu2_from_residuals(&[-1.0, -3.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(nu2_from_residuals(&[1.0, 2.0, 5.0], &[0.0, 1.0, 5.0]).unwrap(), 0.0);
        assert!(nu2_from_residuals(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn rule_value() {
        // (4096 / (12 ln 2))^0.3, evaluated independently in extended precision
        let expect = 6.422_527_496_399_834;
        assert!((tau_hat(1.0, 4096, 1.0).unwrap() - expect).abs() < 1e-10);
        assert_eq!(tau_hat(4.0, 4096, 1.0).unwrap(), 2.0 * tau_hat(1.0, 4096, 1.0).unwrap());
        assert_eq!(tau_hat(1.0, 4096, 0.5).unwrap(), 0.5 * tau_hat(1.0, 4096, 1.0).unwrap());
        assert!(tau_hat(1.0, 2, 1.0).is_err());
    }

    #[test]
    fn zero_variance_floor() {
        let t = tau_hat(0.0, 4096, 1.0).unwrap();
        assert!(t > 0.0);
        assert!((t - 1e-6 * tau_hat(1.0, 4096, 1.0).unwrap()).abs() < 1e-18);
    }

    #[test]
    fn rule_modes() {
        let y = [0.0, -2.0, 1.0];
        let f = [0.0, 0.0, 0.0];
        assert_eq!(TauRule::Infinite.resolve_with(&y, &f).unwrap(), f64::INFINITY);
        assert_eq!(TauRule::Fixed { value: 3.0 }.resolve_with(&y, &f).unwrap(), 3.0);
        assert!(TauRule::Fixed { value: 0.0 }.validate().is_err());
        assert!(TauRule::rule(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn homogeneous_in_scale(
            r in proptest::collection::vec(-5.0f64..5.0, 3..40),
            c in 0.1f64..10.0,
        ) {
            let zeros = vec![0.0; r.len()];
            let scaled: Vec<f64> = r.iter().map(|v| c * v).collect();
            let a = tau_hat(nu2_from_residuals(&r, &zeros).unwrap(), r.len(), 1.0).unwrap();
            let b = tau_hat(nu2_from_residuals(&scaled, &zeros).unwrap(), r.len(), 1.0).unwrap();
            if a > 1e-3 {
                prop_assert!((b / a - c).abs() < 1e-9 * c);
            }
        }

        #[test]
        fn monotone_in_n(n in 3usize..100_000, nu2 in 0.01f64..10.0) {
            prop_assert!(tau_hat(nu2, n + 1, 1.0).unwrap() > tau_hat(nu2, n, 1.0).unwrap());
        }

        #[test]
        fn permutation_invariant(r in proptest::collection::vec(-5.0f64..5.0, 2..40), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let zeros = vec![0.0; r.len()];
            let mut p = r.clone();
            p.shuffle(&mut crate::rng::stream(seed));
            let a = nu2_from_residuals(&r, &zeros).unwrap();
            let b = nu2_from_residuals(&p, &zeros).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }
}
