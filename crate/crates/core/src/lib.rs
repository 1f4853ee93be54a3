pub mod data;
pub mod error;
pub mod losses;
pub mod nn;
pub mod rng;

pub use data::Dataset;
pub use error::{Error, Result};
pub use losses::LossSpec;
pub use nn::{FitConfig, Mlp, TrainReport};
pub mod quad;
pub mod simgen;
pub mod estimators;
pub mod eval;
pub mod experiment;
pub mod noncrossing;
pub mod tuning;
