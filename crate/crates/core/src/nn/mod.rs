//! Minimal dense network engine shared by the experts and the gate.

mod mlp;
mod optim;
mod serial;

pub use mlp::{
    argmax2, cross_entropy, softmax_rows, Activation, ForwardCache, Gradients, MlpModel, PROB_EPS,
};
pub use optim::{sgd_step, Adam, Optimizer, OptimizerKind, TrainConfig};
pub use serial::{
    model_from_bytes, model_to_bytes, read_model, write_model, MAGIC, MODEL_FORMAT_VERSION,
};
pub(crate) use serial::{read_magic_version, read_u32};
