//! Network geometry, initialization and inference.

mod config;
mod net;

pub use config::{standard_layout, ModelConfig, SectionKind, SectionSpec, CHANNELS, INPUT_LEN, SAMPLE_RATE};
pub use net::{DenseHead, Inference, ModelReport, ParamKind, Section, SectionRow, WaweNet};
