//! Meta-learned amortized posterior inference for few-shot prediction.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a deterministic tape-based reverse-mode engine.
//! - [`distributions`]: diagonal Gaussians, reparameterized sampling and
//!   local reparameterization of linear-classifier logits.
//! - [`nets`]: parameter stores, the feature extractor, the set-input
//!   amortization networks and the predictive heads.
//! - [`objectives`]: the predictive-likelihood training objective, the
//!   amortized and per-task VI free energies, and evaluation metrics.
//! - [`adaptation`]: prototypical, one-step-gradient and amortized-MAP
//!   adaptation behind the same interface as the amortized posterior.
//! - [`tasks`]: seeded episodic task generators.
//! - [`oracle`]: closed-form ground truth for the conjugate toy model and a
//!   Bayes-optimal classifier for the cluster tasks.
//! - [`optim`]: Adam with bias correction.
//! - [`train`]: the episodic training loop, checkpoints and the experiment
//!   drivers used by the CLI.

pub mod adaptation;
pub mod autodiff;
pub mod distributions;
pub mod error;
pub mod nets;
pub mod objectives;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
