//! File formats, codecs, benchmarks and the `volsplat` command line for the
//! Gaussian ellipsoid renderer in `volsplat-core`.
//!
//! - JSON scene, camera and attribute files carry `"version": 1`.
//! - Images go out as 8-bit PNG for viewing and PFM for exact floats.
//! - Meshes come in from OBJ (with optional per-vertex colours) and PLY.
//!
//! Every file is written through a temporary file and renamed into place.

pub mod atomic;
pub mod bench;
pub mod cli;
pub mod config;
mod error;
pub mod image_io;
pub mod mesh_io;
pub mod report;
pub mod scene_file;

pub use error::{Error, Result};
pub use volsplat_core as core;
