//! Bridge matching and augmented bridge matching on toy couplings.
//!
//! The crate trains a small MLP endpoint predictor on Brownian bridges between
//! paired samples, integrates the resulting SDE, and scores the generated
//! couplings. Closed-form Gaussian results and an entropic optimal transport
//! solver provide the reference values.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod checkpoint;
pub mod cli;
pub mod couplings;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod sampling;
pub mod training;

pub use bridge::{bridge_drift, bridge_score, sample_bridge_pair, sample_bridge_point, BridgeSpec};
pub use checkpoint::Checkpoint;
pub use couplings::{sinkhorn, CouplingSampler, DiscretePlan, Marginal, MixturePairing, SinkhornOptions};
pub use error::{Error, Result};
pub use gaussian::{alpha_star, f_alpha, kappa, posterior_mean, prop4_residual, GaussianCouplingSpec};
pub use linalg::{Matrix, Points};
pub use metrics::{empirical_cov, endpoint_mse, energy_distance, pairing_accuracy, CouplingReport};
pub use nets::{Activation, AdamConfig, Architecture, CondMode, MlpModel};
pub use rng::RngStream;
pub use sampling::{integrate_path, sample_endpoints, sample_trajectories, Integrator, SamplerConfig, Trajectory};
pub use training::{train, PairedBatch, TrainConfig, TrainRun};
