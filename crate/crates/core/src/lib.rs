pub mod analysis;
pub mod dsp;
pub mod error;
pub mod impairment;
pub mod io;
pub mod model;
pub mod preprocess;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod waveform;

pub use error::{Error, Result};
pub use waveform::Waveform;
