//! Synthetic data-generating processes with known quantile and ES functions.
//!
//! Data follow `Y = h₁(X) + h₂(X)·η` with `X` uniform on `[0,1]^d`. Where
//! `h₂ >= 0` the conditional α-quantile and α-ES are `h₁ + q_α(η)h₂` and
//! `h₁ + e_α(η)h₂`; where `h₂ < 0` the lower tail of `Y` is the upper tail of
//! `η`, giving `h₁ + q_{1-α}(η)h₂` and `h₁ + e⁺_α(η)h₂`.

pub mod dist;
pub mod models;

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dist::{DistKind, ErrorDist};
pub use models::{Component, Model};

use crate::estimators::CovariateFn;
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::rng;

/// A fully specified simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub model: Model,
    pub error: ErrorDist,
    pub n_train: usize,
    pub n_test: usize,
    /// Irrelevant uniform covariates appended after the model's own columns.
    #[serde(default)]
    pub noise_columns: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(model: Model, error: ErrorDist, n_train: usize, seed: u64) -> Self {
        Self {
            model,
            error,
            n_train,
            n_test: 100_000,
            noise_columns: 0,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.model.dim() + self.noise_columns
    }

    pub fn validate(&self) -> Result<()> {
        self.error.validate()?;
        if self.n_train < 64 {
            return Err(invalid("n_train", format!("{} < 64", self.n_train)));
        }
        if self.n_test < 1 {
            return Err(invalid("n_test", "must be positive"));
        }
        if self.model.dim() == 0 {
            return Err(invalid("model", "zero-dimensional model"));
        }
        Ok(())
    }
}

/// True conditional quantile and ES functions at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueFns {
    pub model: Model,
    pub alpha: f64,
    pub q_eta: f64,
    pub e_eta: f64,
    /// `q_{1-α}(η)`, used where `h₂ < 0`.
    pub q_eta_upper: f64,
    /// Upper-tail mean of `η` beyond `q_{1-α}`, used where `h₂ < 0`.
    pub e_eta_upper: f64,
    /// Trailing covariates the functions ignore.
    pub noise_columns: usize,
}

impl TrueFns {
    pub fn new(model: &Model, error: &ErrorDist, alpha: f64, noise_columns: usize) -> Result<Self> {
        let q_eta = error.quantile(alpha)?;
        let e_eta = error.expected_shortfall(alpha)?;
        let q_eta_upper = error.quantile(1.0 - alpha)?;
        let e_eta_upper = error.upper_expected_shortfall(alpha)?;
        Ok(Self {
            model: model.clone(),
            alpha,
            q_eta,
            e_eta,
            q_eta_upper,
            e_eta_upper,
            noise_columns,
        })
    }

    pub fn for_spec(spec: &DgpSpec, alpha: f64) -> Result<Self> {
        Self::new(&spec.model, &spec.error, alpha, spec.noise_columns)
    }

    pub fn dim(&self) -> usize {
        self.model.dim() + self.noise_columns
    }

    fn core<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..self.model.dim()]
    }

    /// Conditional α-quantile of `Y` given `x`.
    pub fn f0(&self, x: &[f64]) -> f64 {
        let c = self.core(x);
        let h2 = self.model.h2(c);
        let q = if h2 >= 0.0 { self.q_eta } else { self.q_eta_upper };
        self.model.h1(c) + q * h2
    }

    /// Conditional α-level expected shortfall of `Y` given `x`.
    pub fn g0(&self, x: &[f64]) -> f64 {
        let c = self.core(x);
        let h2 = self.model.h2(c);
        let e = if h2 >= 0.0 { self.e_eta } else { self.e_eta_upper };
        self.model.h1(c) + e * h2
    }

    pub fn g0_on(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len()).map(|i| self.g0(data.row(i))).collect()
    }

    pub fn f0_on(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len()).map(|i| self.f0(data.row(i))).collect()
    }

    /// The true quantile function as a shareable callable.
    pub fn quantile_fn(&self) -> CovariateFn {
        let t = self.clone();
        Arc::new(move |x: &[f64]| t.f0(x))
    }

    /// Writes `x1..xd,f0,g0` at the rows of `points`.
    pub fn write_grid<W: Write>(&self, out: W, points: &Dataset) -> Result<()> {
        if points.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: points.dim(),
            });
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = points.default_names();
        header.push("f0".into());
        header.push("g0".into());
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for i in 0..points.len() {
            let x = points.row(i);
            let mut rec: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", self.f0(x)));
            rec.push(format!("{}", self.g0(x)));
            w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One simulated replication: training and test samples.
#[derive(Debug, Clone)]
pub struct SimData {
    pub train: Dataset,
    pub test: Dataset,
}

fn draw(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    let mut r = rng::stream(seed);
    let d = spec.dim();
    let m = spec.model.dim();
    let mut x = vec![0.0; n * d];
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = &mut x[i * d..(i + 1) * d];
        row.iter_mut().for_each(|v| *v = r.random());
        let eta = spec.error.sample(&mut r);
        y[i] = spec.model.h1(&row[..m]) + spec.model.h2(&row[..m]) * eta;
    }
    Dataset::new(x, y, d)
}

/// Seeded training and test samples; the two use independent streams.
pub fn generate(spec: &DgpSpec) -> Result<SimData> {
    spec.validate()?;
    Ok(SimData {
        train: draw(spec, spec.n_train, rng::labelled_seed(spec.seed, "train"))?,
        test: draw(spec, spec.n_test, rng::labelled_seed(spec.seed, "test"))?,
    })
}

/// `n` covariate rows uniform on `[0,1]^d`, with zero responses.
pub fn uniform_points(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    let mut r = rng::stream(seed);
    let x: Vec<f64> = (0..n * d).map(|_| r.random()).collect();
    Dataset::new(x, vec![0.0; n], d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let spec = DgpSpec {
            n_test: 500,
            ..DgpSpec::new(Model::C1, ErrorDist::scaled_t(), 256, 42)
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_ne!(a.train.y()[..10], a.test.y()[..10]);
        let c = generate(&DgpSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn truth_gap_is_nonnegative() {
        let spec = DgpSpec::new(Model::C2, ErrorDist::normal(), 64, 1);
        let t = TrueFns::for_spec(&spec, 0.1).unwrap();
        assert!(t.e_eta <= t.q_eta);
        let pts = uniform_points(10, 2000, 3).unwrap();
        for i in 0..pts.len() {
            assert!(t.f0(pts.row(i)) - t.g0(pts.row(i)) >= 0.0);
        }
    }

    #[test]
    fn noise_columns_are_ignored_by_truth() {
        let spec = DgpSpec {
            noise_columns: 2,
            n_test: 10,
            ..DgpSpec::new(Model::C1, ErrorDist::normal(), 64, 1)
        };
        let sim = generate(&spec).unwrap();
        assert_eq!(sim.train.dim(), 10);
        let t = TrueFns::for_spec(&spec, 0.2).unwrap();
        let mut row = sim.test.row(0).to_vec();
        let before = t.g0(&row);
        row[9] = 0.123;
        assert_eq!(t.g0(&row), before);
    }

    #[test]
    fn c3_truth_matches_empirical_conditional_quantile() {
        // fixed x with h₂ < 0: the empirical α-quantile of Y | x tracks f0
        let spec = DgpSpec::new(Model::C3, ErrorDist::normal(), 64, 1);
        let t = TrueFns::for_spec(&spec, 0.1).unwrap();
        let mut x = [0.0; 12];
        x[0] = 1.0;
        x[4] = 1.0;
        x[8] = 1.0;
        let (h1, h2) = (Model::C3.h1(&x), Model::C3.h2(&x));
        assert!(h2 < 0.0);
        let mut r = rng::stream(2);
        let mut ys: Vec<f64> = (0..200_000).map(|_| h1 + h2 * spec.error.sample(&mut r)).collect();
        ys.sort_by(f64::total_cmp);
        let k = (0.1 * ys.len() as f64) as usize;
        assert!((ys[k] - t.f0(&x)).abs() < 0.01, "{} vs {}", ys[k], t.f0(&x));
        let tail = ys[..k].iter().sum::<f64>() / k as f64;
        assert!((tail - t.g0(&x)).abs() < 0.01, "{tail} vs {}", t.g0(&x));
    }

    #[test]
    fn rejects_tiny_training_sets() {
        let spec = DgpSpec::new(Model::C1, ErrorDist::normal(), 10, 1);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn grid_export_has_truth_columns() {
        let t = TrueFns::new(&Model::C1, &ErrorDist::normal(), 0.1, 0).unwrap();
        let pts = uniform_points(8, 3, 9).unwrap();
        let mut buf = Vec::new();
        t.write_grid(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,x6,x7,x8,f0,g0\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
