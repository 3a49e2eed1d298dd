//! The compact EEG CNN: configuration, parameters, hand-written forward and
//! backward passes, losses, Adam and the training/evaluation loops.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod loss;
pub mod model;
pub mod network;
pub mod params;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use config::{AdaptationDepth, ModelConfig};
pub use loss::{cross_entropy, CrossEntropy, Objective};
pub use model::{init_model, BnStats, Model, QuantState};
pub use network::{backward, forward, forward_eval, Batch, ForwardCache, Mode, Output};
pub use params::Params;
pub use train::{evaluate, five_fold_cv, train, ConfusionMatrix, CvConfig, CvResult, Evaluation, TrainConfig, TrainReport};
