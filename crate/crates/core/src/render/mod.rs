//! The memory-centric streaming renderer and the tile-centric reference renderer.

mod reference;
mod stream;

pub use reference::{render_frame_reference, sort_passes, ReferenceFrame};
pub use stream::{render_frame_streaming, render_tile_streaming, StreamingFrame, TileResult, TileTrace, TraceEntry};

use serde::{Deserialize, Serialize};

use crate::filter::Tile;

/// Default bound on sorted survivors held on chip for one voxel.
pub const DEFAULT_VOXEL_CAPACITY: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub background: [f32; 3],
    /// Per-pixel `T < 1e-4` cutoff; whole voxels are skipped once a tile saturates.
    pub early_exit: bool,
    pub voxel_capacity: usize,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
    /// Record the blend order of this tile (streaming renderer only).
    pub trace_tile: Option<Tile>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            early_exit: true,
            voxel_capacity: DEFAULT_VOXEL_CAPACITY,
            threads: None,
            trace_tile: None,
        }
    }
}

pub(crate) fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}
