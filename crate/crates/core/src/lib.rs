//! QuickTumorNet: a QuickNAT-style 2D encoder/decoder network for four-class
//! brain-tumor slice segmentation, written from scratch on CPU.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernels`]: differentiable operations with hand-written backward passes.
//! - [`model`]: the network graph, parameter initialisation and checkpoints.
//! - [`loss`]: the adaptive false-positive/false-negative weighted cross entropy.
//! - [`trainer`]: Adam, the epoch loop and the learning-curve log.
//! - [`data`]: slice files, manifests, patient-wise splits and a synthetic generator.
//! - [`metrics`]: Dice, confusion matrix, ROC/AUC and the evaluation report.

mod codec;
pub mod data;
pub mod error;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, FormatError, Result};
pub use tensor::{DType, Precision, Scalar, Shape, Tensor};

pub use data::{ClassId, Manifest, Plane, SliceSample, Split, NUM_CLASSES};
pub use loss::{LossConfig, LossTerms};
pub use metrics::EvalReport;
pub use model::{Checkpoint, ModelConfig, Parameters, QuickTumorNet};
pub use trainer::{AdamState, EpochRecord, TrainConfig};
