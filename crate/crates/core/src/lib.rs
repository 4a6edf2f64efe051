//! Long-range depth from a three-camera rig: affine pseudo-rectification,
//! dense stereo, and disparity-offset disambiguation with a back view.

pub mod features;
pub mod geometry;
pub mod raster;
pub mod synth;
pub mod rectify;
pub mod seed;
pub mod stereo;
pub mod disambig;
pub mod sfm;
pub mod metrics;
pub mod io;
pub mod config;
pub mod pipeline;
