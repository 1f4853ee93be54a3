//! Regression functions of the location-scale generators `Y = h₁(X) + h₂(X)·η`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    /// Eight covariates, heteroscedastic.
    C1,
    /// Ten covariates, heteroscedastic.
    C2,
    /// Twelve covariates, exponential mean. Its `h₂` is negative on part of
    /// the cube, where the lower conditional tail comes from the upper tail of `η`.
    C3,
    /// `h₁` of the base model with `h₂ ≡ 1`.
    Homoscedastic { base: Box<Model> },
    /// `h₁(x) = Σ coef_j x_j`, `h₂ ≡ 1`.
    Linear { coef: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    H1,
    H2,
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::C1 => 8,
            Model::C2 => 10,
            Model::C3 => 12,
            Model::Homoscedastic { base } => base.dim(),
            Model::Linear { coef } => coef.len(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Model::C1 => "C1".into(),
            Model::C2 => "C2".into(),
            Model::C3 => "C3".into(),
            Model::Homoscedastic { base } => format!("{}-homoscedastic", base.name()),
            Model::Linear { .. } => "linear".into(),
        }
    }

    /// `h₁(x)` or `h₂(x)`.
    pub fn eval(&self, which: Component, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(match which {
            Component::H1 => self.h1(x),
            Component::H2 => self.h2(x),
        })
    }

    /// Unchecked `h₁`; `x` must have length [`Model::dim`].
    pub fn h1(&self, x: &[f64]) -> f64 {
        match self {
            Model::C1 => {
                (2.0 * PI * x[0]).cos()
                    + 1.0 / (1.0 + (-x[1] - x[2]).exp())
                    + 1.0 / (1.0 + x[3] + x[4]).powi(3)
                    + 1.0 / (x[5] + (x[6] * x[7]).exp())
            }
            Model::C2 => {
                let s = x[6] + x[7] + x[8] + x[9];
                1.0 / (1.0 + (-x[0] - x[1]).exp())
                    + (1.0 + x[2] + x[3]) / (1.0 + x[2] + x[3]).powi(2)
                    + (2.0 * PI * (x[4] + x[5])).sin()
                    + s / (2.0 * (1.0 + s.exp()))
            }
            Model::C3 => {
                let alt: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(j, v)| if j % 2 == 0 { *v } else { -*v })
                    .sum();
                alt.exp()
            }
            Model::Homoscedastic { base } => base.h1(x),
            Model::Linear { coef } => coef.iter().zip(x).map(|(c, v)| c * v).sum(),
        }
    }

    /// Unchecked `h₂`; `x` must have length [`Model::dim`].
    pub fn h2(&self, x: &[f64]) -> f64 {
        match self {
            Model::C1 => {
                (PI * (x[0] + x[1]) / 2.0).sin()
                    + (1.0 + (x[2] * x[3] * x[4]).powi(2)).ln()
                    + x[7] / (1.0 + (-x[5] - x[6]).exp())
            }
            Model::C2 => {
                0.1 + (PI / 3.0 * (x[0] + x[1] + x[2])).sin() + (1.0 + (x[8] * x[9]).powi(2)).ln()
            }
            Model::C3 => {
                let s = -x[0] + x[2] - x[4] + x[6] - x[8] + x[10];
                0.1 + (PI / 12.0 * s).sin()
            }
            Model::Homoscedastic { .. } | Model::Linear { .. } => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn c1_at_origin() {
        let x = [0.0; 8];
        assert!((Model::C1.eval(Component::H1, &x).unwrap() - 3.5).abs() < 1e-15);
        assert_eq!(Model::C1.eval(Component::H2, &x).unwrap(), 0.0);
    }

    #[test]
    fn c3_alternating_exponent() {
        let x: Vec<f64> = (0..12).map(|j| if j % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let v = Model::C3.eval(Component::H1, &x).unwrap();
        assert!((v - 6f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn wrong_dimension() {
        assert!(Model::C2.eval(Component::H1, &[0.0; 8]).is_err());
    }

    #[test]
    fn c3_scale_changes_sign() {
        // 0.1 + sin(π/12 · s) with s = -3 when x1 = x5 = x9 = 1, rest 0
        let mut x = [0.0; 12];
        x[0] = 1.0;
        x[4] = 1.0;
        x[8] = 1.0;
        let v = Model::C3.h2(&x);
        assert!((v - (0.1 - (PI / 4.0).sin())).abs() < 1e-15);
        assert!(v < 0.0);
    }

    #[test]
    fn h2_nonnegative_on_random_grid() {
        let mut rng = crate::rng::stream(1);
        for m in [Model::C1, Model::C2] {
            let d = m.dim();
            let mut x = vec![0.0; d];
            for _ in 0..100_000 {
                x.iter_mut().for_each(|v| *v = rng.random());
                assert!(m.h2(&x) >= 0.0, "{m:?} at {x:?}");
            }
        }
    }
}
