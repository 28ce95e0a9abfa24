//! Minimal dense kernel with reverse-mode differentiation: matrices,
//! an operation tape, attention built from tape primitives, parameter
//! sets with Adam, checkpoints, and a finite-difference gradient
//! checker.

mod encoder;
mod params;
mod tape;
mod tensor;

pub use encoder::encode;
pub use params::{
    load_checkpoint, read_checkpoint, save_checkpoint, section, write_checkpoint, AdamState,
    CheckpointSection, ModelConfig, ParamSet, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use tape::{grad_check, BoundParams, Gradients, NodeId, Tape};
pub use tensor::Tensor;
