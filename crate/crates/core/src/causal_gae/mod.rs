//! Causal structure learning with a graph autoencoder under a continuous
//! acyclicity constraint.

mod adjacency;
mod discover;
mod expm;
mod lagrangian;
mod network;

pub use adjacency::{acyclicity, acyclicity_gradient, binarize_adjacency, WeightedAdjacency};
pub use discover::{
    read_matrix_csv, standalone_discover, write_matrix_csv, DiscoverConfig, DiscoveryRecord, DiscoveryRun,
};
pub use expm::matrix_exponential;
pub use lagrangian::{lagrangian_update, LagrangianState};
pub use network::{block_mask, gae_forward, gae_loss, GaeConfig, GaeNetwork, GaeStep, GaeTape};
