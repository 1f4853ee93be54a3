//! Pointwise losses: check (pinball), Huber and squared.
//!
//! Every loss is a function of a residual `u`. The Huber loss with an infinite
//! robustification parameter is the squared loss `u²/2`, so least-squares ES
//! regression is Huber ES regression with `tau = +inf`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Check (pinball) loss `{alpha - 1(u < 0)} u`.
pub fn check_loss(u: f64, alpha: f64) -> Result<f64> {
    validate_alpha(alpha)?;
    Ok(check_value(u, alpha))
}

/// Huber loss: quadratic for `|u| <= tau`, linear beyond.
pub fn huber_loss(u: f64, tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    Ok(huber_value(u, tau))
}

/// Derivative of the Huber loss, `clamp(u, -tau, tau)`.
pub fn huber_score(u: f64, tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    Ok(huber_derivative(u, tau))
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid("alpha", format!("{alpha} is not in (0, 1)")))
    }
}

pub(crate) fn validate_tau(tau: f64) -> Result<()> {
    // +inf is allowed; NaN and non-positive values are not
    if tau > 0.0 {
        Ok(())
    } else {
        Err(invalid("tau", format!("{tau} must be positive")))
    }
}

#[inline]
fn check_value(u: f64, alpha: f64) -> f64 {
    if u < 0.0 {
        (alpha - 1.0) * u
    } else {
        alpha * u
    }
}

#[inline]
fn check_derivative(u: f64, alpha: f64) -> f64 {
    if u < 0.0 {
        alpha - 1.0
    } else {
        alpha
    }
}

#[inline]
fn huber_value(u: f64, tau: f64) -> f64 {
    let a = u.abs();
    if a <= tau {
        0.5 * u * u
    } else {
        tau * a - 0.5 * tau * tau
    }
}

#[inline]
fn huber_derivative(u: f64, tau: f64) -> f64 {
    u.clamp(-tau, tau)
}

/// A validated loss choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossSpec {
    Check { alpha: f64 },
    Huber { tau: f64 },
    Squared,
}

impl LossSpec {
    pub fn check(alpha: f64) -> Result<Self> {
        validate_alpha(alpha)?;
        Ok(LossSpec::Check { alpha })
    }

    pub fn huber(tau: f64) -> Result<Self> {
        validate_tau(tau)?;
        Ok(LossSpec::Huber { tau })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Check { alpha } => validate_alpha(alpha),
            LossSpec::Huber { tau } => validate_tau(tau),
            LossSpec::Squared => Ok(()),
        }
    }

    /// Loss at residual `u`. The squared variant is `u²/2`, matching Huber at `tau = inf`.
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            LossSpec::Check { alpha } => check_value(u, alpha),
            LossSpec::Huber { tau } => huber_value(u, tau),
            LossSpec::Squared => 0.5 * u * u,
        }
    }

    /// Derivative with respect to the residual. At `u = 0` the check loss uses `alpha`.
    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            LossSpec::Check { alpha } => check_derivative(u, alpha),
            LossSpec::Huber { tau } => huber_derivative(u, tau),
            LossSpec::Squared => u,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn check_hand_cases() {
        assert_eq!(check_loss(0.0, 0.3).unwrap(), 0.0);
        assert!((check_loss(-2.0, 0.1).unwrap() - 1.8).abs() < 1e-15);
        assert!((check_loss(3.0, 0.1).unwrap() - 0.3).abs() < 1e-15);
        assert!(check_loss(1.0, 0.0).is_err());
        assert!(check_loss(1.0, 1.0).is_err());
        assert!(check_loss(1.0, f64::NAN).is_err());
    }

    #[test]
    fn huber_hand_cases() {
        assert_eq!(huber_loss(1.0, 2.0).unwrap(), 0.5);
        assert_eq!(huber_loss(3.0, 2.0).unwrap(), 4.0);
        assert_eq!(huber_loss(-3.0, 2.0).unwrap(), 4.0);
        // both branches agree at the knot
        let tau = 1.7;
        assert_eq!(huber_value(tau, tau), 0.5 * tau * tau);
        assert!((tau * tau - 0.5 * tau * tau - 0.5 * tau * tau).abs() < 1e-15);
        assert!(huber_loss(1.0, 0.0).is_err());
        assert!(huber_loss(1.0, -1.0).is_err());
        assert_eq!(huber_loss(3.0, f64::INFINITY).unwrap(), 4.5);
    }

    #[test]
    fn huber_score_cases() {
        assert_eq!(huber_score(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(huber_score(-5.0, 1.0).unwrap(), -1.0);
        assert_eq!(huber_score(5.0, 1.0).unwrap(), 1.0);
        assert!(huber_score(0.5, 0.0).is_err());
    }

    #[test]
    fn huber_score_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        let tau = 1.3;
        let mut checked = 0;
        while checked < 100 {
            let u: f64 = rng.random_range(-4.0..4.0);
            if ((u - h).abs() - tau).signum() != ((u + h).abs() - tau).signum() {
                continue;
            }
            let fd = (huber_value(u + h, tau) - huber_value(u - h, tau)) / (2.0 * h);
            let an = huber_derivative(u, tau);
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                "u={u} fd={fd} an={an}"
            );
            checked += 1;
        }
    }

    #[test]
    fn check_derivative_at_zero_is_alpha() {
        let l = LossSpec::check(0.25).unwrap();
        assert_eq!(l.derivative(0.0), 0.25);
        assert_eq!(l.derivative(-1e-300), -0.75);
    }

    #[test]
    fn infinite_tau_is_squared_bitwise() {
        let hub = LossSpec::huber(f64::INFINITY).unwrap();
        let sq = LossSpec::Squared;
        for &u in &[0.0, 1e-300, -3.3, 1e150, 7.123456789, -0.1] {
            assert_eq!(hub.value(u).to_bits(), sq.value(u).to_bits());
            assert_eq!(hub.derivative(u).to_bits(), sq.derivative(u).to_bits());
        }
    }

    proptest! {
        #[test]
        fn huber_bounded_by_half_square(u in -1e3f64..1e3, tau in 1e-3f64..1e2) {
            let l = huber_value(u, tau);
            prop_assert!(l >= 0.0);
            prop_assert!(l <= 0.5 * u * u * (1.0 + 1e-12));
            if u.abs() <= tau {
                prop_assert_eq!(l, 0.5 * u * u);
            } else {
                prop_assert!(l < 0.5 * u * u);
            }
        }

        #[test]
        fn huber_monotone_in_tau(u in -1e3f64..1e3, t1 in 1e-3f64..1e2, dt in 0.0f64..1e2) {
            prop_assert!(huber_value(u, t1) <= huber_value(u, t1 + dt) * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn check_is_positively_homogeneous(u in -1e3f64..1e3, c in 1e-3f64..1e3, alpha in 0.01f64..0.99) {
            let lhs = check_value(c * u, alpha);
            let rhs = c * check_value(u, alpha);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
            prop_assert!(check_value(u, alpha) >= 0.0);
        }

        #[test]
        fn check_is_convex(a in -1e2f64..1e2, b in -1e2f64..1e2, t in 0.0f64..1.0, alpha in 0.01f64..0.99) {
            let mid = check_value(t * a + (1.0 - t) * b, alpha);
            let chord = t * check_value(a, alpha) + (1.0 - t) * check_value(b, alpha);
            prop_assert!(mid <= chord + 1e-9);
        }
    }
}
