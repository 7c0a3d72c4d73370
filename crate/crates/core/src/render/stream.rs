use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{with_threads, RenderOptions};
use crate::blend::{FrameBuffer, PixelState, TileBlender, TILE_PIXELS};
use crate::error::Result;
use crate::filter::{coarse_filter, fine_filter, FilterStats, FineResult, ProjectedGaussian, Tile};
use crate::scene::Camera;
use crate::schedule::{schedule, traverse, Schedule};
use crate::traffic::{fingerprint, Stage, TrafficLedger, PIXEL_BYTES};
use crate::voxel::{stream_coarse, stream_fine, VoxelStore};
use crate::vq::CodebookSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub id: u32,
    pub voxel: u32,
    pub depth: f32,
    pub max_scale: f32,
}

/// Blend order observed in one tile.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TileTrace {
    pub tile: Option<Tile>,
    /// Every fine survivor, in the order it was blended.
    pub tile_order: Vec<TraceEntry>,
    /// Per pixel, indices into `tile_order` of the Gaussians that contributed.
    pub pixel_orders: Vec<Vec<u32>>,
}

#[derive(Clone, Debug)]
pub struct TileResult {
    pub tile: Tile,
    pub pixels: Vec<PixelState>,
    pub stats: FilterStats,
    pub schedule: Schedule,
    /// Scheduled voxels never streamed because the tile saturated first.
    pub skipped_voxels: u64,
    /// Voxels whose survivors exceeded the on-chip capacity and were blended in several batches.
    pub batch_splits: u64,
    pub fragments: u64,
    pub trace: Option<TileTrace>,
}

fn voxel_depth(store: &VoxelStore, camera: &Camera, vid_r: u32) -> f32 {
    camera.to_camera(store.grid.voxel_center(vid_r)).z
}

/// Streams the tile's voxels in scheduled order through coarse filtering,
/// second-half loading, fine filtering, per-voxel depth sort and blending.
pub fn render_tile_streaming(
    tile: Tile,
    camera: &Camera,
    store: &VoxelStore,
    books: Option<&CodebookSet>,
    opts: &RenderOptions,
    ledger: &mut TrafficLedger,
) -> Result<TileResult> {
    let table = traverse(tile, camera, &store.grid);
    let sched = schedule(&table, |v| voxel_depth(store, camera, v));

    let mut blender = TileBlender::new(tile, opts.early_exit);
    let mut stats = FilterStats::default();
    let mut skipped = 0u64;
    let mut batch_splits = 0u64;
    let mut trace = (opts.trace_tile == Some(tile)).then(|| TileTrace {
        tile: Some(tile),
        tile_order: Vec::new(),
        pixel_orders: vec![Vec::new(); TILE_PIXELS],
    });
    let capacity = opts.voxel_capacity.max(1);

    for (pos, &vid_r) in sched.order.iter().enumerate() {
        if blender.saturated() {
            skipped = (sched.order.len() - pos) as u64;
            break;
        }
        let record = &store.records[vid_r as usize];
        let coarse = stream_coarse(record, ledger);
        let survivors: Vec<usize> = coarse
            .iter()
            .enumerate()
            .filter(|(_, c)| coarse_filter(c.position, c.max_scale, camera, tile).pass)
            .map(|(i, _)| i)
            .collect();
        stats.record_coarse(coarse.len() as u64, survivors.len() as u64);

        let decoded = stream_fine(record, &survivors, books, ledger)?;
        let mut visible: Vec<ProjectedGaussian> = Vec::with_capacity(decoded.len());
        for g in &decoded {
            match fine_filter(g, camera, tile) {
                FineResult::Pass(pg) => visible.push(pg),
                FineResult::Degenerate => stats.degenerate += 1,
                FineResult::Reject => {}
            }
        }
        stats.fine_survivors += visible.len() as u64;
        stats.finish_voxel(coarse.len() as u64, visible.len() as u64);
        ledger.on_chip_sorted += visible.len() as u64;

        visible.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
        if visible.len() > capacity {
            batch_splits += 1;
        }
        for batch in visible.chunks(capacity) {
            for pg in batch {
                match trace.as_mut() {
                    Some(t) => {
                        let idx = t.tile_order.len() as u32;
                        t.tile_order.push(TraceEntry {
                            id: pg.id,
                            voxel: vid_r,
                            depth: pg.depth,
                            max_scale: pg.max_scale,
                        });
                        let orders = &mut t.pixel_orders;
                        blender.blend_with(pg, |px| orders[px].push(idx));
                    }
                    None => blender.blend(pg),
                }
            }
        }
        debug_assert!(stats.is_monotone());
    }
    ledger.macs_coarse += stats.macs_coarse;
    ledger.macs_fine += stats.macs_fine;
    ledger.charge(Stage::PixelWriteback, TILE_PIXELS as u64 * PIXEL_BYTES, TILE_PIXELS as u64);

    Ok(TileResult {
        tile,
        pixels: blender.pixels().to_vec(),
        stats,
        schedule: sched,
        skipped_voxels: skipped,
        batch_splits,
        fragments: blender.fragments,
        trace,
    })
}

#[derive(Clone, Debug)]
pub struct StreamingFrame {
    pub frame: FrameBuffer,
    pub ledger: TrafficLedger,
    pub stats: FilterStats,
    pub cycles_broken: u64,
    /// Tiles that stopped streaming early because every pixel saturated.
    pub early_exit_tiles: u64,
    pub skipped_voxels: u64,
    pub batch_splits: u64,
    pub fragments: u64,
    pub trace: Option<TileTrace>,
}

/// Renders every tile. Tiles run in parallel; results are merged in tile order,
/// so the frame does not depend on the worker count.
pub fn render_frame_streaming(
    camera: &Camera,
    store: &VoxelStore,
    books: Option<&CodebookSet>,
    opts: &RenderOptions,
) -> Result<StreamingFrame> {
    camera.validate()?;
    let tiles: Vec<Tile> = Tile::all(camera).collect();
    let results: Vec<(TileResult, TrafficLedger)> = with_threads(opts.threads, || {
        tiles
            .par_iter()
            .map(|&tile| {
                let mut ledger = TrafficLedger::default();
                render_tile_streaming(tile, camera, store, books, opts, &mut ledger).map(|r| (r, ledger))
            })
            .collect::<Result<_>>()
    })?;

    let mut out = StreamingFrame {
        frame: FrameBuffer::new(camera.width, camera.height),
        ledger: TrafficLedger::new(fingerprint(store.positions(), camera)),
        stats: FilterStats::default(),
        cycles_broken: 0,
        early_exit_tiles: 0,
        skipped_voxels: 0,
        batch_splits: 0,
        fragments: 0,
        trace: None,
    };
    for (r, ledger) in results {
        out.frame.write_tile(r.tile, &r.pixels, opts.background);
        out.ledger.merge(&ledger);
        out.stats.merge(&r.stats);
        out.cycles_broken += r.schedule.cycles_broken as u64;
        out.early_exit_tiles += (r.skipped_voxels > 0) as u64;
        out.skipped_voxels += r.skipped_voxels;
        out.batch_splits += r.batch_splits;
        out.fragments += r.fragments;
        if r.trace.is_some() {
            out.trace = r.trace;
        }
    }
    Ok(out)
}
