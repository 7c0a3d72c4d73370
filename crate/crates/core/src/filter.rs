//! Two-phase filtering of voxel Gaussians against one image tile.
//!
//! The coarse phase reads only position and maximum scale and bounds the
//! screen-space footprint from above. The fine phase runs the full EWA
//! projection (covariance, conic, radius, color) on coarse survivors. Both
//! pipelines use [`project`] so their per-Gaussian results are bit-identical.

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::math::{quat_to_matrix, sym2_max_eigenvalue};
use crate::scene::{evaluate_sh, Camera, Gaussian, TILE_SIZE};
use crate::traffic::{COARSE_MACS, FINE_MACS};

/// Low-pass dilation added to both diagonal entries of the 2D covariance.
pub const COVARIANCE_DILATION: f32 = 0.3;
/// Safety factor applied to the coarse radius bound.
pub const COARSE_INFLATION: f32 = 1.1;
/// 2D covariances with determinant at or below this are rejected.
pub const DEGENERATE_DET: f32 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tile {
    pub x: u32,
    pub y: u32,
}

impl Tile {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Pixel rectangle `[x0, x1] x [y0, y1]` in continuous image coordinates.
    pub fn rect(&self) -> [f32; 4] {
        let x0 = (self.x * TILE_SIZE) as f32;
        let y0 = (self.y * TILE_SIZE) as f32;
        [x0, y0, x0 + TILE_SIZE as f32, y0 + TILE_SIZE as f32]
    }

    pub fn all(camera: &Camera) -> impl Iterator<Item = Tile> {
        let tx = camera.tiles_x();
        (0..camera.tiles_y()).flat_map(move |y| (0..tx).map(move |x| Tile::new(x, y)))
    }
}

/// Whether the disc of `radius` around `center` touches the tile rectangle.
pub fn disc_overlaps_tile(center: [f32; 2], radius: f32, tile: Tile) -> bool {
    let [x0, y0, x1, y1] = tile.rect();
    let dx = (x0 - center[0]).max(0.0).max(center[0] - x1);
    let dy = (y0 - center[1]).max(0.0).max(center[1] - y1);
    dx * dx + dy * dy <= radius * radius
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedGaussian {
    pub mean2d: [f32; 2],
    /// Inverse 2D covariance `(a, b, c)` of `[[a, b], [b, c]]`.
    pub conic: [f32; 3],
    pub radius: f32,
    pub depth: f32,
    pub rgb: [f32; 3],
    pub opacity: f32,
    pub id: u32,
    /// Largest scale of the source Gaussian, kept for ordering diagnostics.
    pub max_scale: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Visible(ProjectedGaussian),
    BehindCamera,
    Degenerate,
}

fn jacobian(camera: &Camera, p: &Vector3<f32>) -> Matrix2x3<f32> {
    let inv_z = 1.0 / p.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(
        camera.fx * inv_z,
        0.0,
        -camera.fx * p.x * inv_z2,
        0.0,
        camera.fy * inv_z,
        -camera.fy * p.y * inv_z2,
    )
}

fn project_point(camera: &Camera, p: &Vector3<f32>) -> [f32; 2] {
    [camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy]
}

/// Full projection of one Gaussian, independent of any tile. The covariance
/// chain runs in f64: the determinant of a thin footprint cancels badly in f32.
pub fn project(g: &Gaussian, camera: &Camera) -> Projection {
    let p = camera.to_camera(g.position);
    if p.z <= camera.near {
        return Projection::BehindCamera;
    }
    let r = quat_to_matrix(g.rotation).cast::<f64>();
    let m = r * Matrix3::from_diagonal(&Vector3::from(g.scale).cast::<f64>());
    let cov3 = m * m.transpose();
    let t = jacobian(camera, &p).cast::<f64>() * camera.rotation.cast::<f64>();
    let cov2 = t * cov3 * t.transpose();

    let dilation = COVARIANCE_DILATION as f64;
    let a = cov2[(0, 0)] + dilation;
    let b = cov2[(0, 1)];
    let c = cov2[(1, 1)] + dilation;
    let det = a * c - b * b;
    if !(det > DEGENERATE_DET as f64) {
        return Projection::Degenerate;
    }
    let inv_det = 1.0 / det;
    let mid = 0.5 * (a + c);
    let lambda = mid + (mid * mid - det).max(0.0).sqrt();

    let dir = (Vector3::from(g.position) - camera.center()).normalize();
    Projection::Visible(ProjectedGaussian {
        mean2d: project_point(camera, &p),
        conic: [(c * inv_det) as f32, (-b * inv_det) as f32, (a * inv_det) as f32],
        radius: (3.0 * lambda.sqrt()) as f32,
        depth: p.z,
        rgb: evaluate_sh(&g.sh, [dir.x, dir.y, dir.z]),
        opacity: g.opacity,
        id: g.id,
        max_scale: g.max_scale(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseResult {
    pub pass: bool,
    pub center2d: [f32; 2],
    pub radius: f32,
}

/// Conservative tile test from the 4 first-half parameters.
///
/// The radius bounds the fine-phase radius for every rotation and scale ratio:
/// the projected covariance is at most `max_scale^2 * ||J W||^2` in its largest
/// eigenvalue, where `||J W|| = ||J||` is the spectral norm of the perspective
/// Jacobian, so `3 * sqrt(max_scale^2 * ||J||^2 + dilation)` dominates the fine
/// radius; [`COARSE_INFLATION`] absorbs rounding.
pub fn coarse_filter(position: [f32; 3], max_scale: f32, camera: &Camera, tile: Tile) -> CoarseResult {
    let p = camera.to_camera(position);
    if p.z <= camera.near {
        return CoarseResult {
            pass: false,
            center2d: [f32::NAN; 2],
            radius: 0.0,
        };
    }
    let center2d = project_point(camera, &p);
    let inv_z = 1.0 / p.z;
    let (u, v) = (p.x * inv_z, p.y * inv_z);
    let (fx, fy) = (camera.fx * inv_z, camera.fy * inv_z);
    // J J^T = [[fx^2 (1 + u^2), fx fy u v], [fx fy u v, fy^2 (1 + v^2)]]
    let jj_max = sym2_max_eigenvalue(fx * fx * (1.0 + u * u), fx * fy * u * v, fy * fy * (1.0 + v * v));
    let radius = COARSE_INFLATION * 3.0 * (max_scale * max_scale * jj_max + COVARIANCE_DILATION).sqrt();
    CoarseResult {
        pass: disc_overlaps_tile(center2d, radius, tile),
        center2d,
        radius,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FineResult {
    Pass(ProjectedGaussian),
    Reject,
    Degenerate,
}

/// Exact projection and tile test for a coarse survivor.
pub fn fine_filter(g: &Gaussian, camera: &Camera, tile: Tile) -> FineResult {
    match project(g, camera) {
        Projection::Visible(pg) if disc_overlaps_tile(pg.mean2d, pg.radius, tile) => FineResult::Pass(pg),
        Projection::Degenerate => FineResult::Degenerate,
        _ => FineResult::Reject,
    }
}

/// Per-voxel filtering counters. `fine_survivors <= coarse_survivors <= loaded`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub loaded: u64,
    pub coarse_survivors: u64,
    pub fine_survivors: u64,
    pub degenerate: u64,
    pub macs_coarse: u64,
    pub macs_fine: u64,
    /// Voxels streamed (one per voxel per tile).
    pub voxels: u64,
    /// Sum over streamed voxels of that voxel's `fine survivors / loaded`.
    pub voxel_fraction_sum: f64,
}

impl FilterStats {
    pub fn record_coarse(&mut self, loaded: u64, survivors: u64) {
        self.loaded += loaded;
        self.coarse_survivors += survivors;
        self.macs_coarse += loaded * COARSE_MACS;
        self.macs_fine += survivors * FINE_MACS;
    }

    pub fn merge(&mut self, o: &FilterStats) {
        self.loaded += o.loaded;
        self.coarse_survivors += o.coarse_survivors;
        self.fine_survivors += o.fine_survivors;
        self.degenerate += o.degenerate;
        self.macs_coarse += o.macs_coarse;
        self.macs_fine += o.macs_fine;
        self.voxels += o.voxels;
        self.voxel_fraction_sum += o.voxel_fraction_sum;
    }

    /// Closes one streamed voxel after its fine filter has run.
    pub fn finish_voxel(&mut self, loaded: u64, fine_survivors: u64) {
        self.voxels += 1;
        if loaded > 0 {
            self.voxel_fraction_sum += fine_survivors as f64 / loaded as f64;
        }
    }

    /// Mean over streamed voxels of `fine survivors / loaded`.
    pub fn mean_voxel_survivor_fraction(&self) -> f64 {
        if self.voxels == 0 {
            0.0
        } else {
            self.voxel_fraction_sum / self.voxels as f64
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.fine_survivors <= self.coarse_survivors && self.coarse_survivors <= self.loaded
    }

    /// Fraction of loaded Gaussians that reach sorting.
    pub fn survivor_fraction(&self) -> f64 {
        if self.loaded == 0 {
            0.0
        } else {
            self.fine_survivors as f64 / self.loaded as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SH_COEFFS;

    fn camera() -> Camera {
        Camera::look_at([0.0, 0.0, -6.0], [0.0; 3], [0.0, -1.0, 0.0], 128, 128, 60.0).unwrap()
    }

    fn gaussian(position: [f32; 3], scale: [f32; 3]) -> Gaussian {
        Gaussian {
            id: 0,
            position,
            scale,
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 0.8,
            sh: [[0.0; 3]; SH_COEFFS],
        }
    }

    #[test]
    fn behind_camera_rejected() {
        let cam = camera();
        let r = coarse_filter([0.0, 0.0, -7.0], 1.0, &cam, Tile::new(4, 4));
        assert!(!r.pass);
        assert_eq!(fine_filter(&gaussian([0.0, 0.0, -7.0], [1.0; 3]), &cam, Tile::new(4, 4)), FineResult::Reject);
    }

    #[test]
    fn tile_center_always_passes() {
        let cam = camera();
        // World origin projects to pixel (64, 64), the corner shared by tiles (3..4, 3..4).
        for s in [1e-6, 0.01, 1.0, 100.0] {
            assert!(coarse_filter([0.0; 3], s, &cam, Tile::new(4, 4)).pass);
        }
    }

    #[test]
    fn isotropic_conic_is_diagonal() {
        let cam = camera();
        let FineResult::Pass(pg) = fine_filter(&gaussian([0.0; 3], [0.2; 3]), &cam, Tile::new(4, 4)) else {
            panic!("expected pass");
        };
        assert!(pg.conic[1].abs() < 1e-5);
        assert!((pg.conic[0] - pg.conic[2]).abs() / pg.conic[0] < 1e-5);
        assert!((pg.depth - 6.0).abs() < 1e-5);
    }

    #[test]
    fn far_tile_rejected() {
        let cam = camera();
        let g = gaussian([0.0; 3], [0.01; 3]);
        assert!(!coarse_filter(g.position, 0.01, &cam, Tile::new(0, 0)).pass);
        assert_eq!(fine_filter(&g, &cam, Tile::new(0, 0)), FineResult::Reject);
    }

    #[test]
    fn stats_merge_and_macs() {
        let mut s = FilterStats::default();
        s.record_coarse(10, 4);
        s.fine_survivors += 2;
        assert_eq!(s.macs_coarse, 550);
        assert_eq!(s.macs_fine, 4 * 372);
        assert!(s.is_monotone());
        let mut t = FilterStats::default();
        t.merge(&s);
        assert_eq!(t, s);
    }
}
