//! Synchronous FedAvg server and clients, with optional client-adaptive
//! transforms.

mod client;
mod config;
mod run;
mod server;

pub use client::{caft_client_round, client_round, ClientState, ClientUpdate};
pub use config::{derive_weights, Mode, TrainingConfig, WeightStrategy};
pub use run::{
    evaluate, initial_params, model_spec_for, run_training, run_training_from, RoundReport, TrainingOutcome,
    ROUND_TIMEOUT,
};
pub use server::{fedavg_update, Server};
