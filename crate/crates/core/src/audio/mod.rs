//! WAV I/O, the fixed preprocessing protocol, and deterministic synthetic
//! proxy datasets with the 75/5/20 hold-out split.

mod manifest;
mod synth;
mod wav;
mod waveform;

pub use manifest::{
    load_dataset, manifest_to_string, parse_manifest, save_manifest, split, synth_dataset,
    Dataset, DatasetManifest, Entry, Source, Split, Splits, HOLDOUT_FRACTIONS,
};
pub use synth::{
    example_seed, synth_waveform, SynthConfig, Task, MODULATION_BANDS, PITCH_BANDS,
    SPEAKER_RESONATORS,
};
pub use wav::{load_wav, save_wav};
pub use waveform::{preprocess, Waveform, SILENCE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid waveform: {detail}")]
    InvalidWaveform { detail: String },
    #[error("sample rate {got} Hz does not match the required {expected} Hz (resample first)")]
    SampleRateMismatch { got: u32, expected: u32 },
    #[error("unsupported WAV format in {path}: field '{field}': {detail}")]
    UnsupportedFormat {
        path: String,
        field: String,
        detail: String,
    },
    #[error("unknown task '{0}' (expected gender_proxy, emotion_proxy, or speaker_proxy)")]
    UnknownTask(String),
    #[error("manifest error: {detail}")]
    ManifestParse { detail: String },
    #[error("class '{label}' has only {count} examples; at least 3 are required to split")]
    ClassTooSmall { label: String, count: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
