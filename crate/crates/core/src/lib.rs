//! Deterministic simulator for sparse federated learning over lossy links,
//! with similarity-based substitution of missing client updates.

pub mod analysis;
pub mod channel;
pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod objective;
pub mod rng;
pub mod runner;
pub mod server;
pub mod sim;
pub mod sparsity;

pub use channel::{ActiveSet, Channel, LinkSchedule};
pub use client::{ClientState, LocalResult, LocalTraining};
pub use config::ExperimentConfig;
pub use data::{Dataset, PartitionPlan};
pub use error::{Result, SafariError};
pub use model::{ModelSpec, ParamVector};
pub use objective::{MlpObjective, Objective, QuadraticObjective};
pub use server::{AggregationMode, Server, SimilarityMatrix};
pub use sim::{RoundObservation, Simulation};
pub use sparsity::{Mask, MaskAlgorithm};
