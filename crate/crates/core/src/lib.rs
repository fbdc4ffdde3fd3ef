//! Scale-bar analysis for micrographs: synthetic dataset generation, bar
//! detection, label recognition and parsing, evaluation, and verification.

pub mod adapter;
pub mod agent;
pub mod autodg;
pub mod detect;
pub mod extract;
pub mod glyphs;
pub mod imaging;
pub mod metrics;
pub mod ocr;

pub use imaging::{BoundingBox, RasterImage};
