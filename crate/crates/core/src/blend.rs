//! Front-to-back alpha blending shared by the streaming and reference renderers,
//! and the frame buffer they write into.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{ProjectedGaussian, Tile};
use crate::scene::TILE_SIZE;

pub const ALPHA_MAX: f32 = 0.99;
pub const ALPHA_MIN: f32 = 1.0 / 255.0;
/// A pixel whose transmittance drops below this stops accepting Gaussians.
pub const TRANSMITTANCE_EPS: f32 = 1e-4;

pub const TILE_PIXELS: usize = (TILE_SIZE * TILE_SIZE) as usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelState {
    pub color: [f32; 3],
    pub transmittance: f32,
}

impl Default for PixelState {
    fn default() -> Self {
        Self {
            color: [0.0; 3],
            transmittance: 1.0,
        }
    }
}

/// Opacity of `g` at the pixel center `(x, y)`, or `None` when it is below
/// [`ALPHA_MIN`] or outside the Gaussian's support.
#[inline]
pub fn alpha_at(g: &ProjectedGaussian, x: f32, y: f32) -> Option<f32> {
    let dx = g.mean2d[0] - x;
    let dy = g.mean2d[1] - y;
    let [a, b, c] = g.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power > 0.0 {
        return None;
    }
    let alpha = ALPHA_MAX.min(g.opacity * power.exp());
    (alpha >= ALPHA_MIN).then_some(alpha)
}

/// Per-pixel state for one tile, carried across every batch of Gaussians blended into it.
#[derive(Clone, Debug)]
pub struct TileBlender {
    tile: Tile,
    pixels: Vec<PixelState>,
    stop_below: f32,
    live: usize,
    /// Gaussian-pixel pairs evaluated.
    pub fragments: u64,
}

impl TileBlender {
    /// `early_exit` enables the per-pixel `T < 1e-4` cutoff.
    pub fn new(tile: Tile, early_exit: bool) -> Self {
        Self {
            tile,
            pixels: vec![PixelState::default(); TILE_PIXELS],
            stop_below: if early_exit { TRANSMITTANCE_EPS } else { 0.0 },
            live: TILE_PIXELS,
            fragments: 0,
        }
    }

    /// Blends `g` behind everything blended so far. Returns the pixel indices
    /// (row-major within the tile) it contributed to, via `on_contribution`.
    pub fn blend_with(&mut self, g: &ProjectedGaussian, mut on_contribution: impl FnMut(usize)) {
        let x0 = self.tile.x * TILE_SIZE;
        let y0 = self.tile.y * TILE_SIZE;
        for (i, px) in self.pixels.iter_mut().enumerate() {
            if px.transmittance < self.stop_below {
                continue;
            }
            self.fragments += 1;
            let x = (x0 + i as u32 % TILE_SIZE) as f32 + 0.5;
            let y = (y0 + i as u32 / TILE_SIZE) as f32 + 0.5;
            let Some(alpha) = alpha_at(g, x, y) else {
                continue;
            };
            let w = px.transmittance * alpha;
            for c in 0..3 {
                px.color[c] += w * g.rgb[c];
            }
            px.transmittance *= 1.0 - alpha;
            if px.transmittance < self.stop_below {
                self.live -= 1;
            }
            on_contribution(i);
        }
    }

    pub fn blend(&mut self, g: &ProjectedGaussian) {
        self.blend_with(g, |_| {});
    }

    /// True once every pixel has hit the transmittance cutoff.
    pub fn saturated(&self) -> bool {
        self.live == 0
    }

    pub fn pixels(&self) -> &[PixelState] {
        &self.pixels
    }

    pub fn tile(&self) -> Tile {
        self.tile
    }
}

/// Row-major RGB image of 32-bit floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl FrameBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height * 3) as usize],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes the tile's pixels, compositing `background` behind the remaining transmittance.
    pub fn write_tile(&mut self, tile: Tile, pixels: &[PixelState], background: [f32; 3]) {
        for (i, px) in pixels.iter().enumerate() {
            let x = tile.x * TILE_SIZE + i as u32 % TILE_SIZE;
            let y = tile.y * TILE_SIZE + i as u32 / TILE_SIZE;
            let o = ((y * self.width + x) * 3) as usize;
            for c in 0..3 {
                self.data[o + c] = px.color[c] + px.transmittance * background[c];
            }
        }
    }

    pub fn max_abs_diff(&self, other: &FrameBuffer) -> Result<f32> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Averages `factor x factor` pixel blocks.
    pub fn downsample(&self, factor: u32) -> FrameBuffer {
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = FrameBuffer::new(w, h);
        let norm = 1.0 / (factor * factor) as f32;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for sy in 0..factor {
                    for sx in 0..factor {
                        let p = self.pixel(x * factor + sx, y * factor + sy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                let o = ((y * w + x) * 3) as usize;
                for c in 0..3 {
                    out.data[o + c] = acc[c] * norm;
                }
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.to_rgb8())?;
        Ok(())
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Saves as PPM when the extension is `.ppm`, PNG otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ppm") => self.save_ppm(path),
            _ => self.save_png(path),
        }
    }
}
