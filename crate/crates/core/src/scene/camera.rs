use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge length of a square pixel tile.
pub const TILE_SIZE: u32 = 16;

/// Pinhole camera in the OpenCV convention: camera-space `+x` right, `+y` down,
/// `+z` forward. Pixel `(px, py)` has its center at `(px + 0.5, py + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f32>,
    /// World-to-camera translation.
    pub translation: Vector3<f32>,
    pub near: f32,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: u32,
        height: u32,
        fx: f32,
        fy: f32,
        cx: f32,
        cy: f32,
        rotation: Matrix3<f32>,
        translation: Vector3<f32>,
        near: f32,
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            near,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with a symmetric vertical field of view.
    pub fn look_at(
        eye: [f32; 3],
        target: [f32; 3],
        up: [f32; 3],
        width: u32,
        height: u32,
        fov_y_deg: f32,
    ) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up));
        if right.norm() < 1e-6 {
            return Err(Error::Precondition("look_at: up is parallel to view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let fy = 0.5 * height as f32 / (0.5 * fov_y_deg.to_radians()).tan();
        Self::new(
            width,
            height,
            fy,
            fy,
            0.5 * width as f32,
            0.5 * height as f32,
            rotation,
            translation,
            0.01,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % TILE_SIZE != 0 || self.height % TILE_SIZE != 0 {
            return Err(Error::Precondition(format!(
                "image {}x{} is not a non-zero multiple of the {TILE_SIZE}-pixel tile",
                self.width, self.height
            )));
        }
        if !(self.near > 0.0) {
            return Err(Error::Precondition(format!("near plane {} must be positive", self.near)));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Precondition("focal lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn tiles_x(&self) -> u32 {
        self.width / TILE_SIZE
    }

    pub fn tiles_y(&self) -> u32 {
        self.height / TILE_SIZE
    }

    pub fn tile_count(&self) -> usize {
        (self.tiles_x() * self.tiles_y()) as usize
    }

    pub fn to_camera(&self, p: [f32; 3]) -> Vector3<f32> {
        self.rotation * Vector3::from(p) + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f32> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space ray through the center of pixel `(px, py)`; the direction is unit length.
    pub fn pixel_ray(&self, px: u32, py: u32) -> (Vector3<f32>, Vector3<f32>) {
        let u = (px as f32 + 0.5 - self.cx) / self.fx;
        let v = (py as f32 + 0.5 - self.cy) / self.fy;
        let dir_cam = Vector3::new(u, v, 1.0);
        let dir = (self.rotation.transpose() * dir_cam).normalize();
        (self.center(), dir)
    }

    /// Returns an identical camera with every image-plane quantity multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        let f = factor as f32;
        Self {
            width: self.width * factor,
            height: self.height * factor,
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            ..self.clone()
        }
    }
}

/// JSON interchange form of [`Camera`]. `rotation` is row-major world-to-camera.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraFile {
    pub width: u32,
    pub height: u32,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub rotation: [[f32; 3]; 3],
    pub translation: [f32; 3],
    #[serde(default = "default_near")]
    pub near: f32,
}

fn default_near() -> f32 {
    0.01
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
            near: c.near,
        }
    }
}

impl TryFrom<CameraFile> for Camera {
    type Error = Error;

    fn try_from(f: CameraFile) -> Result<Self> {
        let r = f.rotation;
        Camera::new(
            f.width,
            f.height,
            f.fx,
            f.fy,
            f.cx,
            f.cy,
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(f.translation),
            f.near,
        )
    }
}

impl Camera {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CameraFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CameraFile::from(self)).expect("camera serializes")
    }
}
