//! Scene and camera types, PLY ingestion and procedural scene generation.

mod camera;
pub(crate) mod generate;
pub mod ply;
mod sh;

pub use camera::{Camera, CameraFile, TILE_SIZE};
pub use generate::{generate_scene, SceneSpec};
pub use sh::{evaluate_sh, SH_C0, SH_C1, SH_C2, SH_C3};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spherical-harmonic coefficients per color channel (degree 3).
pub const SH_COEFFS: usize = 16;

/// Parameters stored per Gaussian: position, scale, rotation, opacity, SH colors.
pub const PARAMS_PER_GAUSSIAN: usize = 3 + 3 + 4 + 1 + 3 * SH_COEFFS;

const _: () = assert!(PARAMS_PER_GAUSSIAN == 59);

/// One splat. Scales are linear (not log) and opacity is already activated.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub id: u32,
    pub position: [f32; 3],
    pub scale: [f32; 3],
    /// Unit quaternion, `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub opacity: f32,
    /// `sh[k][c]` is coefficient `k` of color channel `c`; `k = 0` is the DC term.
    pub sh: [[f32; 3]; SH_COEFFS],
}

impl Gaussian {
    pub fn max_scale(&self) -> f32 {
        self.scale[0].max(self.scale[1]).max(self.scale[2])
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.rotation.iter().map(|q| q * q).sum::<f32>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Precondition(format!(
                "gaussian {}: quaternion norm {norm} is not 1",
                self.id
            )));
        }
        if !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::Precondition(format!(
                "gaussian {}: non-positive scale {:?}",
                self.id, self.scale
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Precondition(format!(
                "gaussian {}: opacity {} outside [0, 1]",
                self.id, self.opacity
            )));
        }
        Ok(())
    }
}

/// Normalizes a `(w, x, y, z)` quaternion. A zero quaternion becomes the identity.
pub fn normalize_quat(q: [f32; 4]) -> [f32; 4] {
    let n = q.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q.map(|v| (v as f64 / n) as f32)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn new(min: [f32; 3], max: [f32; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    fn from_points<'a>(points: impl IntoIterator<Item = &'a [f32; 3]>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb::new(first, first);
        for p in it {
            for i in 0..3 {
                b.min[i] = b.min[i].min(p[i]);
                b.max[i] = b.max[i].max(p[i]);
            }
        }
        Some(b)
    }
}

/// An immutable collection of Gaussians with the bounding box of their centers.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub bounds: Aabb,
}

impl Scene {
    /// Builds a scene, computing tight bounds over the Gaussian centers.
    /// An empty scene gets a degenerate box at the origin.
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        let bounds = Aabb::from_points(gaussians.iter().map(|g| &g.position))
            .unwrap_or(Aabb::new([0.0; 3], [0.0; 3]));
        Self { gaussians, bounds }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}
