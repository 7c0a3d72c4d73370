//! Fully-streaming 3D Gaussian Splatting.
//!
//! The scene is cut into voxels. For every 16x16 tile, the voxels hit by the
//! tile's pixel rays are put into one front-to-back order and streamed one at a
//! time through a cheap coarse filter, a vector-quantized second-half fetch, an
//! exact fine filter, an on-chip depth sort and alpha blending. Pixel state is
//! carried across voxels, so nothing but the final pixels leaves the pipeline.
//!
//! A classic tile-centric renderer is included as the correctness oracle and
//! as the traffic baseline, and both pipelines charge a shared byte/MAC ledger.

pub mod blend;
pub mod error;
pub mod filter;
mod math;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod schedule;
pub mod traffic;
pub mod voxel;
pub mod vq;

pub use error::{Error, Result};
pub use math::{quat_to_matrix, sym2_max_eigenvalue};

// Compiles and runs every snippet of the guide and the README under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/voxels.md")]
    mod voxels {}
    #[doc = include_str!("../../../book/src/filtering.md")]
    mod filtering {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    mod scheduling {}
    #[doc = include_str!("../../../book/src/streaming.md")]
    mod streaming {}
    #[doc = include_str!("../../../book/src/vq.md")]
    mod vq {}
    #[doc = include_str!("../../../book/src/traffic.md")]
    mod traffic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
