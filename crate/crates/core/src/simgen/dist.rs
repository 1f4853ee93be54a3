//! Error distributions for the location-scale generators: sampling, quantile
//! functions, and tail expectations.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::losses::validate_alpha;
use crate::quad;

/// Shape of the noise `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistKind {
    Normal,
    /// Student t with `df` degrees of freedom, multiplied by `scale`.
    ScaledT { df: f64, scale: f64 },
    /// Pareto type I: `P(η > s) = (s_min / s)^k` for `s >= s_min`.
    Pareto { k: f64, s_min: f64 },
    /// Fréchet: `P(η <= s) = exp(-s^-k)` for `s > 0`.
    Frechet { k: f64 },
    /// Burr type XII: density `k1 k2 x^(k1-1) / (1 + x^k1)^(k2+1)` for `x > 0`.
    Burr { k1: f64, k2: f64 },
    Uniform { lo: f64, hi: f64 },
    /// `±1` with probability 1/2 each.
    TwoPoint,
}

/// Noise distribution, optionally standardized to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDist {
    #[serde(flatten)]
    pub kind: DistKind,
    pub standardized: bool,
}

impl ErrorDist {
    pub fn new(kind: DistKind, standardized: bool) -> Result<Self> {
        let d = Self { kind, standardized };
        d.validate()?;
        Ok(d)
    }

    pub fn normal() -> Self {
        Self {
            kind: DistKind::Normal,
            standardized: true,
        }
    }

    /// `t_{2.25} / 3`, which already has zero mean and unit variance.
    pub fn scaled_t() -> Self {
        Self {
            kind: DistKind::ScaledT {
                df: 2.25,
                scale: 1.0 / 3.0,
            },
            standardized: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64, min: f64| {
            if v > min && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} must exceed {min}")))
            }
        };
        match self.kind {
            DistKind::Normal | DistKind::TwoPoint => {}
            DistKind::ScaledT { df, scale } => {
                pos("df", df, 1.0)?;
                pos("scale", scale, 0.0)?;
            }
            DistKind::Pareto { k, s_min } => {
                pos("k", k, 1.0)?;
                pos("s_min", s_min, 0.0)?;
            }
            DistKind::Frechet { k } => pos("k", k, 1.0)?,
            DistKind::Burr { k1, k2 } => {
                pos("k1", k1, 1.0)?;
                pos("k2", k2, 1.0)?;
            }
            DistKind::Uniform { lo, hi } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(invalid("uniform", format!("need lo < hi, got [{lo}, {hi}]")));
                }
            }
        }
        if self.standardized {
            self.raw_moments()?;
        }
        Ok(())
    }

    /// Mean and standard deviation of the unstandardized distribution.
    pub fn raw_moments(&self) -> Result<(f64, f64)> {
        let need_var = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid("standardized", format!("{what} has infinite variance")))
            }
        };
        Ok(match self.kind {
            DistKind::Normal => (0.0, 1.0),
            DistKind::TwoPoint => (0.0, 1.0),
            DistKind::ScaledT { df, scale } => {
                need_var(df > 2.0, "t distribution with df <= 2")?;
                (0.0, scale * (df / (df - 2.0)).sqrt())
            }
            DistKind::Pareto { k, s_min } => {
                need_var(k > 2.0, "Pareto with k <= 2")?;
                let mean = k * s_min / (k - 1.0);
                let var = s_min * s_min * k / ((k - 1.0).powi(2) * (k - 2.0));
                (mean, var.sqrt())
            }
            DistKind::Frechet { k } => {
                need_var(k > 2.0, "Fréchet with k <= 2")?;
                let m1 = gamma(1.0 - 1.0 / k);
                let m2 = gamma(1.0 - 2.0 / k);
                (m1, (m2 - m1 * m1).sqrt())
            }
            DistKind::Burr { k1, k2 } => {
                need_var(k1 * k2 > 2.0, "Burr with k1·k2 <= 2")?;
                // E X^r = k2 · B(k2 - r/k1, 1 + r/k1)
                let moment = |r: f64| {
                    let a = k2 - r / k1;
                    let b = 1.0 + r / k1;
                    k2 * (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
                };
                let m1 = moment(1.0);
                let m2 = moment(2.0);
                (m1, (m2 - m1 * m1).sqrt())
            }
            DistKind::Uniform { lo, hi } => (0.5 * (lo + hi), (hi - lo) / 12f64.sqrt()),
        })
    }

    fn affine(&self) -> (f64, f64) {
        if self.standardized {
            self.raw_moments().expect("validated on construction")
        } else {
            (0.0, 1.0)
        }
    }

    /// Quantile of the unstandardized distribution.
    pub fn raw_quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(invalid("u", format!("{u} is not in (0, 1)")));
        }
        Ok(match self.kind {
            DistKind::Normal => normal_quantile(u),
            DistKind::ScaledT { df, scale } => scale * t_quantile(u, df)?,
            DistKind::Pareto { k, s_min } => s_min * (1.0 - u).powf(-1.0 / k),
            DistKind::Frechet { k } => (-u.ln()).powf(-1.0 / k),
            DistKind::Burr { k1, k2 } => ((1.0 - u).powf(-1.0 / k2) - 1.0).powf(1.0 / k1),
            DistKind::Uniform { lo, hi } => lo + u * (hi - lo),
            DistKind::TwoPoint => {
                if u <= 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
        })
    }

    /// Quantile `q_u(η)` (standardized when flagged).
    pub fn quantile(&self, u: f64) -> Result<f64> {
        let (m, s) = self.affine();
        Ok((self.raw_quantile(u)? - m) / s)
    }

    /// Lower-tail expected shortfall `e_α(η) = α⁻¹ ∫₀^α q_u du`.
    ///
    /// Integrated in `t` with `u = α t²`, which flattens the quantile
    /// function's blow-up near `u = 0` for heavy lower tails.
    pub fn expected_shortfall(&self, alpha: f64) -> Result<f64> {
        validate_alpha(alpha)?;
        let (m, s) = self.affine();
        let raw = self.raw_tail_mean(alpha)?;
        Ok((raw - m) / s)
    }

    /// Upper-tail mean `α⁻¹ ∫_{1-α}^1 q_u du` (standardized when flagged).
    pub fn upper_expected_shortfall(&self, alpha: f64) -> Result<f64> {
        validate_alpha(alpha)?;
        let (m, s) = self.affine();
        let raw = if let DistKind::TwoPoint = self.kind {
            let upper = alpha.min(0.5);
            (upper - (alpha - upper)) / alpha
        } else {
            let failed = std::cell::Cell::new(None);
            let integrand = |t: f64| {
                let u = 1.0 - alpha * t * t;
                if t <= 0.0 || u >= 1.0 {
                    return 0.0;
                }
                match self.raw_quantile(u) {
                    Ok(q) => 2.0 * t * q,
                    Err(e) => {
                        failed.set(Some(e.to_string()));
                        0.0
                    }
                }
            };
            let v = quad::integrate(integrand, 0.0, 1.0, 1e-10)?;
            if let Some(msg) = failed.take() {
                return Err(Error::Numerical(msg));
            }
            v
        };
        Ok((raw - m) / s)
    }

    fn raw_tail_mean(&self, alpha: f64) -> Result<f64> {
        if let DistKind::TwoPoint = self.kind {
            // piecewise constant quantile function; integrate exactly
            let lower = alpha.min(0.5);
            return Ok((-lower + (alpha - lower)) / alpha);
        }
        let failed = std::cell::Cell::new(None);
        let integrand = |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            match self.raw_quantile(alpha * t * t) {
                Ok(q) => 2.0 * t * q,
                Err(e) => {
                    failed.set(Some(e.to_string()));
                    0.0
                }
            }
        };
        let v = quad::integrate(integrand, 0.0, 1.0, 1e-10)?;
        if let Some(msg) = failed.take() {
            return Err(Error::Numerical(msg));
        }
        Ok(v)
    }

    /// One draw of `η`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (m, s) = self.affine();
        let raw = match self.kind {
            DistKind::Normal => rng.sample(StandardNormal),
            DistKind::ScaledT { df, scale } => {
                let z: f64 = rng.sample(StandardNormal);
                let chi = ChiSquared::new(df).expect("df validated").sample(rng);
                scale * z / (chi / df).sqrt()
            }
            _ => {
                let u: f64 = rng.sample(Open01);
                self.raw_quantile(u).expect("u in (0, 1)")
            }
        };
        (raw - m) / s
    }
}

/// Standard normal quantile (Wichura's AS 241, about 1e-16 relative accuracy).
pub fn normal_quantile(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128) * r
                + 67265.770_927_008_7)
                * r
                + 45921.953_931_549_871)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_4)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_6)
            / (((((((r * 5226.495_278_852_545_9 + 28729.085_735_721_943) * r
                + 39307.895_800_092_71)
                * r
                + 21213.794_301_586_596)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_6)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_6)
            / (((((((r * 1.050_750_071_644_416_8e-9 + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_07)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_8)
            / (((((((r * 2.044_263_103_389_939_8e-15 + 1.421_511_758_316_445_9e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_887_9)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Student t CDF via the regularized incomplete beta function.
pub fn t_cdf(x: f64, df: f64) -> f64 {
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x * x));
    if x <= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Student t quantile by Brent root finding on the log lower-tail probability.
pub fn t_quantile(u: f64, df: f64) -> Result<f64> {
    if u == 0.5 {
        return Ok(0.0);
    }
    if u > 0.5 {
        return t_quantile(1.0 - u, df).map(|q| -q);
    }
    let log_tail = |x: f64| (0.5 * beta_reg(0.5 * df, 0.5, df / (df + x * x))).ln();
    let target = u.ln();
    let mut lo = -1.0;
    while log_tail(lo) > target {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::Numerical(format!("t quantile at {u} out of range")));
        }
    }
    quad::brent(|x| log_tail(x) - target, lo, 0.0, 1e-15 * lo.abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erfc;

    fn normal_cdf(x: f64) -> f64 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn normal_quantile_matches_bisection_oracle() {
        for &p in &[1e-12, 1e-6, 0.001, 0.05, 0.1, 0.3, 0.5, 0.77, 0.975, 0.999_999] {
            let oracle = bisect(|x| normal_cdf(x) - p, -10.0, 10.0);
            assert!((normal_quantile(p) - oracle).abs() < 1e-9, "p={p}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn normal_es_matches_closed_form() {
        let alpha = 0.1;
        let z = normal_quantile(alpha);
        let closed = -normal_pdf(z) / alpha;
        let es = ErrorDist::normal().expected_shortfall(alpha).unwrap();
        assert!((es - closed).abs() < 1e-7);
        assert!((es - -1.754_983).abs() < 1e-6, "{es}");
    }

    #[test]
    fn uniform_es_is_half_alpha() {
        let d = ErrorDist::new(DistKind::Uniform { lo: 0.0, hi: 1.0 }, false).unwrap();
        assert!((d.expected_shortfall(0.2).unwrap() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn pareto_quantile_closed_form() {
        let d = ErrorDist::new(DistKind::Pareto { k: 2.0, s_min: 1.0 }, false).unwrap();
        assert!((d.quantile(0.75).unwrap() - 2.0).abs() < 1e-15);
    }

    /// Test-only t CDF by composite Simpson integration of the density.
    fn t_cdf_simpson(x: f64, df: f64) -> f64 {
        let c = (ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df)).exp() / (df * PI).sqrt();
        let dens = |t: f64| c * (1.0 + t * t / df).powf(-0.5 * (df + 1.0));
        // P(T <= x) for x < 0 equals ∫_0^{1/|x|} dens(1/s) / s² ds
        let b = 1.0 / x.abs();
        let g = |s: f64| if s <= 0.0 { 0.0 } else { dens(1.0 / s) / (s * s) };
        let m = 20_000;
        let h = b / m as f64;
        let mut acc = g(0.0) + g(b);
        for i in 1..m {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn scaled_t_quantile_matches_quadrature_bisection_oracle() {
        let df = 2.25;
        let alpha = 0.1;
        let raw = bisect(|x| t_cdf_simpson(x, df) - alpha, -50.0, -1e-3);
        let oracle = raw / 3.0;
        let q = ErrorDist::scaled_t().quantile(alpha).unwrap();
        assert!((q - oracle).abs() < 1e-6, "q={q} oracle={oracle}");
    }

    #[test]
    fn t_es_matches_closed_form() {
        // e_α(t_ν) = -(ν + t_α²)/(ν - 1) · f(t_α) / α
        let df: f64 = 2.25;
        let alpha = 0.1;
        let ta = t_quantile(alpha, df).unwrap();
        let c = (ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df)).exp() / (df * PI).sqrt();
        let dens = c * (1.0 + ta * ta / df).powf(-0.5 * (df + 1.0));
        let closed = -(df + ta * ta) / (df - 1.0) * dens / alpha / 3.0;
        let es = ErrorDist::scaled_t().expected_shortfall(alpha).unwrap();
        assert!((es - closed).abs() < 1e-7, "es={es} closed={closed}");
    }

    #[test]
    fn scaled_t_is_already_unit_variance() {
        let (m, s) = ErrorDist::scaled_t().raw_moments().unwrap();
        assert_eq!(m, 0.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_moments_match_quadrature() {
        let dists = [
            DistKind::Pareto { k: 2.5, s_min: 1.0 },
            DistKind::Frechet { k: 4.0 },
            DistKind::Burr { k1: 2.0, k2: 3.0 },
        ];
        for kind in dists {
            let d = ErrorDist::new(kind, false).unwrap();
            // E X^r = ∫₀¹ q(u)^r du, split at 1/2 and substituted toward both ends
            let mom = |r: i32| {
                let lower = quad::integrate(
                    |t| {
                        if t <= 0.0 {
                            0.0
                        } else {
                            2.0 * t * d.raw_quantile(0.5 * t * t).unwrap().powi(r) * 0.5
                        }
                    },
                    0.0,
                    1.0,
                    1e-9,
                )
                .unwrap();
                let upper = quad::integrate(
                    |s| {
                        // upper-tail probability p = 1 - u = 0.5 s^8, kept exact
                        let p = 0.5 * s.powi(8);
                        if p <= 0.0 {
                            return 0.0;
                        }
                        let q = match kind {
                            DistKind::Pareto { k, s_min } => s_min * p.powf(-1.0 / k),
                            DistKind::Frechet { k } => (-(-p).ln_1p()).powf(-1.0 / k),
                            DistKind::Burr { k1, k2 } => (p.powf(-1.0 / k2) - 1.0).powf(1.0 / k1),
                            _ => unreachable!(),
                        };
                        4.0 * s.powi(7) * q.powi(r)
                    },
                    0.0,
                    1.0,
                    1e-9,
                )
                .unwrap();
                lower + upper
            };
            let (m, s) = d.raw_moments().unwrap();
            let m1 = mom(1);
            let m2 = mom(2);
            assert!((m1 - m).abs() < 1e-6, "{kind:?} mean {m1} vs {m}");
            assert!(((m2 - m1 * m1).sqrt() - s).abs() < 1e-5, "{kind:?} sd");
        }
    }

    #[test]
    fn es_below_quantile_and_monotone_in_alpha() {
        let dists = [
            ErrorDist::normal(),
            ErrorDist::scaled_t(),
            ErrorDist::new(DistKind::Pareto { k: 2.5, s_min: 1.0 }, true).unwrap(),
            ErrorDist::new(DistKind::Frechet { k: 3.0 }, true).unwrap(),
            ErrorDist::new(DistKind::Burr { k1: 2.0, k2: 2.0 }, true).unwrap(),
        ];
        for d in dists {
            let mut prev = f64::NEG_INFINITY;
            for &a in &[0.01, 0.05, 0.1, 0.25, 0.5, 0.9] {
                let e = d.expected_shortfall(a).unwrap();
                assert!(e <= d.quantile(a).unwrap(), "{d:?} at {a}");
                assert!(e >= prev, "{d:?} not monotone at {a}");
                prev = e;
            }
        }
    }

    #[test]
    fn upper_tail_mirrors_lower_for_symmetric_noise() {
        for d in [ErrorDist::normal(), ErrorDist::scaled_t()] {
            let lo = d.expected_shortfall(0.1).unwrap();
            let hi = d.upper_expected_shortfall(0.1).unwrap();
            assert!((lo + hi).abs() < 1e-7, "{d:?}: {lo} {hi}");
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ErrorDist::new(DistKind::Pareto { k: 1.0, s_min: 1.0 }, false).is_err());
        assert!(ErrorDist::new(DistKind::Pareto { k: 1.5, s_min: 1.0 }, true).is_err());
        assert!(ErrorDist::new(DistKind::Burr { k1: 0.5, k2: 2.0 }, false).is_err());
        assert!(ErrorDist::new(DistKind::Frechet { k: 1.0 }, false).is_err());
        assert!(ErrorDist::normal().quantile(1.0).is_err());
    }

    #[test]
    fn standardized_normal_variance_from_draws() {
        let mut rng = crate::rng::stream(17);
        let d = ErrorDist::normal();
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn standardized_pareto_draws_have_unit_scale() {
        let mut rng = crate::rng::stream(5);
        let d = ErrorDist::new(DistKind::Pareto { k: 5.0, s_min: 1.0 }, true).unwrap();
        let n = 400_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }
}
