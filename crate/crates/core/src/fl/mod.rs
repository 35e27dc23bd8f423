//! Federated state machines: server-side loss-powered aggregation with an
//! adaptive power, client-side global/personalization/discriminator training,
//! baselines, and round orchestration.

mod client;
mod config;
mod server;
mod sim;

pub use client::{client_update, training_loss, ClientState, ClientUpdate};
pub use config::{ModelConfig, StrategyConfig, StrategyKind};
pub use server::{
    adapt_q, aggregate, aggregation_weights, select_clients, selection_size, ServerState,
    LOSS_FLOOR,
};
pub use sim::{derive_seed, RoundReport, Simulation, CHECKPOINT_SCHEMA_VERSION};
