//! Image quality and cross-voxel ordering diagnostics.

use serde::{Deserialize, Serialize};

use crate::blend::FrameBuffer;
use crate::error::{Error, Result};
use crate::render::TileTrace;
use crate::scene::generate::three_sigma_half_extents;
use crate::scene::Scene;
use crate::voxel::VoxelGrid;

/// Default weight of the cross-boundary penalty in the combined loss.
pub const CBP_BETA: f64 = 0.05;

/// `10 log10(1 / MSE)` over all channels; identical images give `+inf`.
pub fn psnr(a: &FrameBuffer, b: &FrameBuffer) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = (*x as f64) - (*y as f64);
            d * d
        })
        .sum();
    let mse = sse / a.data.len().max(1) as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelCrossing {
    pub vid_r: u32,
    pub total: usize,
    pub crossing: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossBoundaryStats {
    pub ratio: f64,
    pub crossing: usize,
    pub total: usize,
    pub per_voxel: Vec<VoxelCrossing>,
}

/// A Gaussian crosses a boundary when the axis-aligned box around its 3-sigma
/// ellipsoid leaves the voxel holding its center.
pub fn cross_boundary_stats(scene: &Scene, grid: &VoxelGrid) -> CrossBoundaryStats {
    let mut per_voxel: Vec<VoxelCrossing> = (0..grid.occupied_count() as u32)
        .map(|vid_r| VoxelCrossing {
            vid_r,
            total: 0,
            crossing: 0,
        })
        .collect();
    let mut crossing = 0;
    for g in &scene.gaussians {
        let cell = grid.cell_of(g.position);
        let b = grid.cell_aabb(cell);
        let h = three_sigma_half_extents(g.scale, g.rotation);
        let crosses = (0..3).any(|i| g.position[i] - h[i] < b.min[i] || g.position[i] + h[i] > b.max[i]);
        crossing += crosses as usize;
        if let Some(v) = grid.rename(grid.linear_id(cell)).and_then(|r| per_voxel.get_mut(r as usize)) {
            v.total += 1;
            v.crossing += crosses as usize;
        }
    }
    let total = scene.len();
    CrossBoundaryStats {
        ratio: if total == 0 { 0.0 } else { crossing as f64 / total as f64 },
        crossing,
        total,
        per_voxel,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CbpLoss {
    /// Mean over the order of `max_scale * [depth < max of earlier depths]`.
    pub l_cbp: f64,
    /// `beta * l_cbp`, the penalty's share of the combined fine-tuning loss.
    pub weighted: f64,
    /// Gaussians blended after something deeper.
    pub violations: usize,
    /// `violations / len`.
    pub incorrect_order_ratio: f64,
}

/// Cross-boundary penalty of a blend order given as `(depth, max_scale)` pairs.
pub fn cbp_loss(order: &[(f32, f32)]) -> CbpLoss {
    if order.is_empty() {
        return CbpLoss::default();
    }
    let mut deepest = f32::NEG_INFINITY;
    let mut sum = 0.0f64;
    let mut violations = 0;
    for &(depth, s) in order {
        if depth < deepest {
            sum += s as f64;
            violations += 1;
        }
        deepest = deepest.max(depth);
    }
    let n = order.len() as f64;
    let l = sum / n;
    CbpLoss {
        l_cbp: l,
        weighted: CBP_BETA * l,
        violations,
        incorrect_order_ratio: violations as f64 / n,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceOrdering {
    /// Penalty over the tile's whole blend sequence.
    pub per_tile: CbpLoss,
    /// Penalty averaged over pixels that received at least one Gaussian.
    pub per_pixel_mean: CbpLoss,
    pub pixels: usize,
}

pub fn trace_ordering(trace: &TileTrace) -> TraceOrdering {
    let pairs: Vec<(f32, f32)> = trace.tile_order.iter().map(|e| (e.depth, e.max_scale)).collect();
    let mut acc = CbpLoss::default();
    let mut pixels = 0;
    for order in trace.pixel_orders.iter().filter(|o| !o.is_empty()) {
        let seq: Vec<(f32, f32)> = order.iter().map(|i| pairs[*i as usize]).collect();
        let l = cbp_loss(&seq);
        acc.l_cbp += l.l_cbp;
        acc.weighted += l.weighted;
        acc.violations += l.violations;
        acc.incorrect_order_ratio += l.incorrect_order_ratio;
        pixels += 1;
    }
    if pixels > 0 {
        let n = pixels as f64;
        acc.l_cbp /= n;
        acc.weighted /= n;
        acc.incorrect_order_ratio /= n;
    }
    TraceOrdering {
        per_tile: cbp_loss(&pairs),
        per_pixel_mean: acc,
        pixels,
    }
}
