//! Mid-price movement prediction from limit order book data: ITCH 5.0
//! decoding, book reconstruction, feature standardization, labeling, a
//! CNN-LSTM classifier with hand-written gradients, accuracy decomposition,
//! synthetic markets with planted structure, and the rolling per-day
//! evaluation protocol.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod book;
pub mod features;
pub mod itch;
pub mod labeling;
pub mod metrics;
pub mod naive;
pub mod nn;
pub mod runner;
pub mod synth;

pub use book::{BookSnapshot, Level, OrderBook};
pub use features::{DaySnapshots, Scaler, Variant};
pub use itch::{ItchMessage, MessageBody};
pub use labeling::{Label, LabeledSample, LabelingPolicy, TargetKind};
pub use metrics::{AggregateReport, ConfusionMatrix, DirectionalBasis, EvaluationReport};
pub use nn::{ArchitectureSpec, Model, Preset, PresetWidths, TrainConfig};
pub use runner::{DataSource, ExperimentConfig, ModelChoice};
pub use synth::SynthConfig;
