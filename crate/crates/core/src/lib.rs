//! Cross-silo federated training: FedAvg with a global learning rate and
//! client-adaptive training with per-client affine canonicalizing transforms,
//! on synthetic non-iid clients with known skews.

pub mod baselines;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod model;
pub mod numkit;
pub mod transform;
pub mod transport;

pub use error::{Error, Result};
