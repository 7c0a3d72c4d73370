use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_quat, Aabb, Gaussian, Scene, SH_COEFFS};
use crate::error::{Error, Result};
use crate::math::quat_to_matrix;

/// Parameters for a procedural test scene.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub count: usize,
    pub bounds: Aabb,
    pub seed: u64,
    /// Upper bound on each Gaussian's 3-sigma extent (`3 * max_scale`) as a
    /// fraction of half the voxel edge. Must lie in `(0, 1]`.
    pub max_extent_fraction: f32,
    pub voxel_edge: f32,
    /// Place every Gaussian so its 3-sigma bounding box lies inside one voxel of
    /// the `voxel_edge` lattice.
    pub constrained: bool,
    /// Extra clearance kept between a constrained Gaussian's box and the voxel
    /// faces, in world units. Blending stays visible slightly past 3 sigma and the
    /// screen-space dilation widens footprints further, so a small margin keeps
    /// the rendered footprint inside the voxel's silhouette.
    pub cell_margin: f32,
    pub opacity_range: (f32, f32),
    /// Half-width of the uniform distribution for the degree > 0 SH coefficients.
    pub sh_rest_amplitude: f32,
}

impl SceneSpec {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            bounds: Aabb::new([-4.0; 3], [4.0; 3]),
            seed,
            max_extent_fraction: 0.4,
            voxel_edge: 2.0,
            constrained: false,
            cell_margin: 0.0,
            opacity_range: (0.3, 0.95),
            sh_rest_amplitude: 0.1,
        }
    }

    pub fn constrained(mut self) -> Self {
        self.constrained = true;
        self
    }

    pub fn with_margin(mut self, margin: f32) -> Self {
        self.cell_margin = margin;
        self
    }
}

/// Uniformly distributed unit quaternion.
pub(crate) fn random_rotation<R: Rng>(rng: &mut R) -> [f32; 4] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = [
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    ];
    normalize_quat(q.map(|v| v as f32))
}

/// Half extents of the axis-aligned box enclosing the 3-sigma ellipsoid.
pub(crate) fn three_sigma_half_extents(scale: [f32; 3], rotation: [f32; 4]) -> [f32; 3] {
    let r = quat_to_matrix(rotation);
    let mut h = [0.0f32; 3];
    for (i, hi) in h.iter_mut().enumerate() {
        let s2: f32 = (0..3).map(|j| (r[(i, j)] * scale[j]).powi(2)).sum();
        *hi = 3.0 * s2.sqrt();
    }
    h
}

/// Deterministic random scene.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.count == 0 {
        return Err(Error::Precondition("generate_scene: count must be positive".into()));
    }
    if !(spec.max_extent_fraction > 0.0 && spec.max_extent_fraction <= 1.0) {
        return Err(Error::Precondition(format!(
            "max_extent_fraction {} outside (0, 1]",
            spec.max_extent_fraction
        )));
    }
    if !(spec.voxel_edge > 0.0) {
        return Err(Error::Precondition("voxel_edge must be positive".into()));
    }
    let b = spec.bounds;
    if (0..3).any(|i| b.max[i] < b.min[i]) {
        return Err(Error::Precondition("bounds are inverted".into()));
    }

    let edge = spec.voxel_edge;
    // Lattice cells that lie completely inside the bounds.
    let cell_lo: [i64; 3] = std::array::from_fn(|i| (b.min[i] / edge).ceil() as i64);
    let cell_hi: [i64; 3] = std::array::from_fn(|i| (b.max[i] / edge).floor() as i64);
    if spec.constrained && (0..3).any(|i| cell_hi[i] <= cell_lo[i]) {
        return Err(Error::Precondition("bounds contain no whole voxel for constrained placement".into()));
    }
    if !(spec.cell_margin >= 0.0) || spec.max_extent_fraction * edge / 2.0 + spec.cell_margin >= edge / 2.0 {
        return Err(Error::Precondition(format!(
            "cell_margin {} leaves no room inside a voxel",
            spec.cell_margin
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale_limit = spec.max_extent_fraction * edge / 6.0;
    let (op_lo, op_hi) = spec.opacity_range;

    let gaussians = (0..spec.count)
        .map(|id| {
            let s_max = scale_limit * rng.gen_range(0.3f32..0.999);
            let mut scale = [0.0f32; 3];
            let big = rng.gen_range(0..3);
            for (i, s) in scale.iter_mut().enumerate() {
                *s = if i == big { s_max } else { s_max * rng.gen_range(0.4f32..1.0) };
            }
            let rotation = random_rotation(&mut rng);

            let position: [f32; 3] = if spec.constrained {
                let h = three_sigma_half_extents(scale, rotation);
                std::array::from_fn(|i| {
                    let cell = rng.gen_range(cell_lo[i]..cell_hi[i]) as f32;
                    let lo = cell * edge + h[i] + spec.cell_margin;
                    let hi = (cell + 1.0) * edge - h[i] - spec.cell_margin;
                    rng.gen_range(lo..hi)
                })
            } else {
                std::array::from_fn(|i| {
                    if b.max[i] > b.min[i] {
                        rng.gen_range(b.min[i]..=b.max[i])
                    } else {
                        b.min[i]
                    }
                })
            };

            let mut sh = [[0.0f32; 3]; SH_COEFFS];
            for c in 0..3 {
                sh[0][c] = rng.gen_range(-1.5f32..1.5);
            }
            let amp = spec.sh_rest_amplitude;
            if amp > 0.0 {
                for coeff in sh.iter_mut().skip(1) {
                    for v in coeff.iter_mut() {
                        *v = rng.gen_range(-amp..amp);
                    }
                }
            }

            Gaussian {
                id: id as u32,
                position,
                scale,
                rotation,
                opacity: rng.gen_range(op_lo..=op_hi),
                sh,
            }
        })
        .collect();
    Ok(Scene::new(gaussians))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let spec = SceneSpec::new(1, 7);
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        let other = SceneSpec::new(1, 8);
        assert_ne!(generate_scene(&spec).unwrap(), generate_scene(&other).unwrap());
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(generate_scene(&SceneSpec::new(0, 1)), Err(Error::Precondition(_))));
    }

    #[test]
    fn extent_bound_holds_for_every_gaussian() {
        let scene = generate_scene(&SceneSpec::new(1000, 3)).unwrap();
        for g in &scene.gaussians {
            assert!(3.0 * g.max_scale() < 0.4 * 2.0 / 2.0);
            assert!(SceneSpec::new(1, 0).bounds.contains(g.position));
            g.validate().unwrap();
        }
    }

    #[test]
    fn constrained_boxes_stay_inside_one_voxel() {
        let scene = generate_scene(&SceneSpec::new(1000, 11).constrained()).unwrap();
        for g in &scene.gaussians {
            let h = three_sigma_half_extents(g.scale, g.rotation);
            for i in 0..3 {
                let cell = (g.position[i] / 2.0).floor();
                assert!(g.position[i] - h[i] >= cell * 2.0);
                assert!(g.position[i] + h[i] <= (cell + 1.0) * 2.0);
            }
        }
    }
}
