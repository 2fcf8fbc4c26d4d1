pub mod annotate;
pub mod formats;
pub mod geometry;
pub mod metrics;
pub mod synth;
