//! Toy anchor-free head detector with a Gaussian-heatmap auxiliary branch
//! (conv blocks fused by an LSTM) and a noise-calibrated distribution focal loss.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod objective;
pub mod pgm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{center_of, heatmap_sigma, render_heatmap, BBox, GridSpec, HeatmapTarget};
pub use tensor::Tensor3;
