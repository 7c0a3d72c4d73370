//! Tile-centric baseline: project every Gaussian once, duplicate it into each
//! tile it touches, sort every tile list by depth, then blend. All the
//! intermediate data goes through off-chip memory and is charged as such.

use rayon::prelude::*;

use super::{with_threads, RenderOptions};
use crate::blend::{FrameBuffer, TileBlender, TILE_PIXELS};
use crate::error::Result;
use crate::filter::{disc_overlaps_tile, project, FilterStats, ProjectedGaussian, Projection, Tile};
use crate::scene::{Camera, Scene, TILE_SIZE};
use crate::traffic::{
    fingerprint, Stage, TrafficLedger, COARSE_MACS, FINE_MACS, PIXEL_BYTES, PROJECTED_RECORD_BYTES,
    RAW_GAUSSIAN_BYTES, SORT_RECORD_BYTES,
};

#[derive(Clone, Debug)]
pub struct ReferenceFrame {
    pub frame: FrameBuffer,
    pub ledger: TrafficLedger,
    pub stats: FilterStats,
    /// Sum of all per-tile list lengths.
    pub tile_entries: u64,
    pub fragments: u64,
}

/// Merge passes a binary merge sort needs for `n` records.
pub fn sort_passes(n: u64) -> u64 {
    if n < 2 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

fn overlapped_tiles(pg: &ProjectedGaussian, camera: &Camera) -> Vec<usize> {
    let ts = TILE_SIZE as f32;
    let (tx, ty) = (camera.tiles_x() as i64, camera.tiles_y() as i64);
    let lo_x = (((pg.mean2d[0] - pg.radius) / ts).floor() as i64).max(0);
    let hi_x = (((pg.mean2d[0] + pg.radius) / ts).floor() as i64).min(tx - 1);
    let lo_y = (((pg.mean2d[1] - pg.radius) / ts).floor() as i64).max(0);
    let hi_y = (((pg.mean2d[1] + pg.radius) / ts).floor() as i64).min(ty - 1);
    let mut out = Vec::new();
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            if disc_overlaps_tile(pg.mean2d, pg.radius, Tile::new(x as u32, y as u32)) {
                out.push((y * tx + x) as usize);
            }
        }
    }
    out
}

pub fn render_frame_reference(camera: &Camera, scene: &Scene, opts: &RenderOptions) -> Result<ReferenceFrame> {
    camera.validate()?;
    let positions = scene.gaussians.iter().map(|g| (g.id, g.position));
    let mut ledger = TrafficLedger::new(fingerprint(positions, camera));
    let mut stats = FilterStats::default();

    let n = scene.len() as u64;
    let projected: Vec<Projection> =
        with_threads(opts.threads, || scene.gaussians.par_iter().map(|g| project(g, camera)).collect());
    ledger.charge(Stage::Projection, n * RAW_GAUSSIAN_BYTES, n);
    ledger.macs_coarse += n * COARSE_MACS;
    ledger.macs_fine += n * FINE_MACS;
    stats.loaded = n;
    stats.coarse_survivors = n;
    stats.macs_coarse = n * COARSE_MACS;
    stats.macs_fine = n * FINE_MACS;

    let mut buckets: Vec<Vec<ProjectedGaussian>> = vec![Vec::new(); camera.tile_count()];
    for p in &projected {
        match p {
            Projection::Visible(pg) => {
                let tiles = overlapped_tiles(pg, camera);
                if tiles.is_empty() {
                    continue;
                }
                stats.fine_survivors += 1;
                let dup = tiles.len() as u64;
                ledger.charge(
                    Stage::ProjectionWriteback,
                    PROJECTED_RECORD_BYTES + dup * SORT_RECORD_BYTES,
                    1,
                );
                for t in tiles {
                    buckets[t].push(*pg);
                }
            }
            Projection::Degenerate => stats.degenerate += 1,
            Projection::BehindCamera => {}
        }
    }

    let tiles: Vec<Tile> = Tile::all(camera).collect();
    let per_tile: Vec<(Tile, TileBlender, TrafficLedger)> = with_threads(opts.threads, || {
        tiles
            .par_iter()
            .zip(buckets.into_par_iter())
            .map(|(&tile, mut list)| {
                let mut ledger = TrafficLedger::default();
                let len = list.len() as u64;
                list.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
                // Each merge pass reads and writes every (key, payload) record once.
                ledger.charge(Stage::SortSpill, sort_passes(len) * len * 2 * SORT_RECORD_BYTES, len);

                let mut blender = TileBlender::new(tile, opts.early_exit);
                for pg in &list {
                    if blender.saturated() {
                        break;
                    }
                    ledger.charge(Stage::RenderLoad, PROJECTED_RECORD_BYTES, 1);
                    blender.blend(pg);
                }
                ledger.charge(Stage::PixelWriteback, TILE_PIXELS as u64 * PIXEL_BYTES, TILE_PIXELS as u64);
                (tile, blender, ledger)
            })
            .collect()
    });

    let mut frame = FrameBuffer::new(camera.width, camera.height);
    let mut tile_entries = 0;
    let mut fragments = 0;
    for (tile, blender, tile_ledger) in per_tile {
        frame.write_tile(tile, blender.pixels(), opts.background);
        tile_entries += tile_ledger.stage(Stage::SortSpill).records;
        fragments += blender.fragments;
        ledger.merge(&tile_ledger);
    }
    Ok(ReferenceFrame {
        frame,
        ledger,
        stats,
        tile_entries,
        fragments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_sort_pass_counts() {
        assert_eq!(sort_passes(0), 0);
        assert_eq!(sort_passes(1), 0);
        assert_eq!(sort_passes(2), 1);
        assert_eq!(sort_passes(3), 2);
        assert_eq!(sort_passes(1024), 10);
        assert_eq!(sort_passes(1025), 11);
    }
}
