//! Point-cloud completion pipeline: geometry, multiview depth rendering,
//! a reverse-mode tensor engine, the proxy-transformer completion network
//! with optional cross-view fusion, score-based denoising, the geometric
//! metric suite, and a synthetic corpus generator with defect ablation.

pub mod completion;
pub mod denoise;
pub mod fusion;
pub mod geom;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod synth;
pub mod tensor;
