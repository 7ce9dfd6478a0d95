//! Dense numeric core: sequence tensors, a small set of differentiable
//! layers, AdamW and the cosine learning-rate schedule.
//!
//! Everything runs in `f64`; only the serialized model file narrows to `f32`.

mod modelfile;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use modelfile::{model_to_bytes, read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use optim::{adamw_step, OptimizerConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, softmax_in_place, softmax_rows, ConvSpec, NodeId, Tape};
pub use tensor::SeqTensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a recorded forward pass")]
    NoTape,
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
