//! Small deterministic CNN-LSTM engine: layers with hand-written backward
//! passes, the preset architectures, Adam training and checkpoints.
//!
//! Activations are stored channel-major (`[C, B, T, W]`) so that every
//! per-sample convolution writes straight into its output block.

mod arch;
mod checkpoint;
mod layers;
mod model;
mod tensor;
mod train;

pub use arch::{
    conv_axis, ArchitectureSpec, LayerSpec, Padding, Preset, PresetWidths, Shape, ShapeTrace, LEAKY_SLOPE,
};
pub use checkpoint::{load_model, read_model, save_model, write_model};
pub use model::{argmax, softmax_cross_entropy, softmax_rows, Model};
pub use tensor::Tensor;
pub use train::{train, Adam, Example, TrainConfig, TrainedModel};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at layer {layer}: {reason}")]
    ShapeMismatch { layer: usize, reason: String },
    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training samples")]
    NoSamples,
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<NnError>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
