//! Network architecture, parameters and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod params;

pub use checkpoint::{load_weights, read_header, save_weights, Checkpoint, CheckpointHeader, TrainProgress};
pub use config::{DenseBlockSpec, ModelConfig, ParamKind, ParamSpec, DECODERS, ENCODERS};
pub use network::{QuickTumorNet, Tape};
pub use params::{Gradients, Parameters};

use crate::tensor::Scalar;
use crate::Result;

/// Builds a freshly initialised network (see [`Parameters::init`]).
pub fn build_model<T: Scalar>(config: ModelConfig, seed: u64) -> Result<QuickTumorNet<T>> {
    QuickTumorNet::build(config, seed)
}
