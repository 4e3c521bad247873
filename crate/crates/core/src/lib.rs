//! Score-based diffusion on small synthetic datasets, with the machinery to
//! check Wasserstein upper bounds empirically: exact optimal transport, KDE
//! score estimates, one-sided Lipschitz grid search and bound assembly.

pub mod boundlab;
pub mod error;
pub mod estimators;
pub mod model;
pub mod ot;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod scorenet;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
