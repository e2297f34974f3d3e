//! WaveCNN and WaveRNN: a shared frame-wise convolutional front end with a
//! convolutional or LSTM back end, built at full scale or desk scale.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use config::{Activation, ModelConfig};
pub use model::{
    argmax, build_wavecnn, build_wavernn, frame, param_count, Model, ModelGraph, ModelKind,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {detail}")]
    InvalidConfig { detail: String },
    #[error("{stage} block {block} yields a zero-length feature map")]
    EmptyFeatureMap { stage: &'static str, block: usize },
    #[error("bad input: {detail}")]
    WrongInput { detail: String },
    #[error("unknown label '{label}' (known: {known})")]
    UnknownLabel { label: String, known: String },
    #[error("checkpoint error: {detail}")]
    Checkpoint { detail: String },
    #[error(transparent)]
    Grad(#[from] crate::autodiff::GradError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
