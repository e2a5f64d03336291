//! Level measurement and normalization, segmentation, polarity augmentation
//! and target scaling.

mod level;
mod segment;
mod targets;

pub use level::{active_level, LevelMeter, LevelReport};
pub use segment::{extract_segments, ipa, normalize_level, Normalized, SegmentRecord, HOP, MIN_SAF, TARGET_LEVEL_DBOV};
pub use targets::{
    scale_target, Direction, TargetSpec, ESTOI, LOSS_FRACTION, MOS, PEMO, PESQ, POLQA, PROXY_TARGETS,
    QUALITY_TARGETS, SCORE10, SEG_SNR, SIIB_GAUSS, SPECTRAL_DISTORTION, STOI, VISQOL,
};
