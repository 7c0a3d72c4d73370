//! Off-chip traffic accounting shared by both pipelines, the analytical
//! throughput model, and the comparison between the two.

mod compare;
mod ledger;
mod perf;

pub use compare::{compare_pipelines, traffic_breakdown, ComparisonReport, StageShare, TrafficBreakdown};
pub use ledger::*;
pub use perf::{estimate, PerfConfig, PipelineEstimate, StageEstimate, WorkCounts};

use sha2::{Digest, Sha256};

use crate::scene::{Camera, CameraFile};

/// Identity of a (scene, camera) pair: hashes Gaussian ids and positions in id
/// order plus the camera. Positions are stored verbatim in both the raw scene and
/// the first half of every voxel record, so both pipelines agree on it.
pub fn fingerprint(positions: impl IntoIterator<Item = (u32, [f32; 3])>, camera: &Camera) -> u64 {
    let mut items: Vec<(u32, [f32; 3])> = positions.into_iter().collect();
    items.sort_by_key(|(id, _)| *id);
    let mut h = Sha256::new();
    for (id, p) in items {
        h.update(id.to_le_bytes());
        for v in p {
            h.update(v.to_le_bytes());
        }
    }
    let cam = serde_json::to_vec(&CameraFile::from(camera)).expect("camera serializes");
    h.update(&cam);
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
