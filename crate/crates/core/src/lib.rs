//! Knowledge-distillation lab.
//!
//! Trains small ReLU networks as teachers under cross-entropy or squared
//! error (Brier) loss on a synthetic Gaussian task whose Bayes posterior is
//! known exactly, distills students from their outputs (or from perturbed
//! copies of the true posterior), and measures how the student's accuracy
//! tracks the supervision's distance to the true posterior.
//!
//! The numeric core ([`tensor`], [`nn`], [`losses`]) is generic over
//! [`Scalar`] (`f32`/`f64`); the experiment pipeline runs in `f64` through
//! the aliases below.

pub mod cli;
pub mod error;
pub mod lab;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use losses::LossKind;
pub use rng::RngState;
pub use scalar::Scalar;

pub type Matrix = tensor::Matrix<f64>;
pub type ProbVector = tensor::ProbVector<f64>;
pub type MlpModel = nn::Mlp<f64>;
pub type Gradients = nn::Gradients<f64>;
pub type ForwardCache = nn::ForwardCache<f64>;
pub type TargetDistribution = losses::TargetDistribution<f64>;
pub type Target = losses::Target<f64>;
