//! Orthographic z-buffer rasterizer with flat Lambertian shading.
//!
//! The camera looks down the −z axis from the front. Model `x` maps to image
//! columns left to right, so the subject's left side (positive `x`) lands in
//! the right half of the image; model `y` maps to rows bottom to top.
//! Rasterization runs in image-centered coordinates and resolves depth ties
//! by color, so a mirror-symmetric mesh renders to a mirror-symmetric image.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::Vec3;

/// Surface color source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlbedoMode {
    /// One RGB color in [0, 1] for every triangle.
    Flat([f64; 3]),
    /// Per-vertex colors supplied with the mesh (falls back to flat gray
    /// when none are given).
    PerVertex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub width: u32,
    pub height: u32,
    /// Model units between the image center and the nearer image border.
    pub view_half_extent: f64,
    /// Unit vector pointing from the surface towards the light.
    pub light_direction: [f64; 3],
    pub ambient: f64,
    pub background: [u8; 3],
    pub albedo: AlbedoMode,
}

pub const DEFAULT_GRAY: [f64; 3] = [0.7, 0.7, 0.7];

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 224,
            height: 224,
            view_half_extent: 1.4,
            light_direction: [0.0, 0.0, 1.0],
            ambient: 0.3,
            background: [210, 210, 210],
            albedo: AlbedoMode::PerVertex,
        }
    }
}

impl RenderSettings {
    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image width and height must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return Err(Error::Config(format!("ambient {} outside [0, 1]", self.ambient)));
        }
        let l = self.light_direction;
        let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        if !((norm - 1.0).abs() <= 1e-9) {
            return Err(Error::Config(format!("light direction has norm {norm}, expected 1")));
        }
        if !(self.view_half_extent > 0.0 && self.view_half_extent.is_finite()) {
            return Err(Error::Config("view extent must be positive".into()));
        }
        if let AlbedoMode::Flat(c) = self.albedo {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("flat albedo must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// RGB8 image, row-major, top row first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "{} bytes do not form a {width}×{height} RGB8 image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let pixels = color.iter().copied().cycle().take(3 * width as usize * height as usize).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }
    pub fn into_bytes(self) -> Vec<u8> {
        self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&c);
    }

    /// Rec. 601 luma in [0, 1].
    pub fn luminance(&self, x: u32, y: u32) -> f64 {
        let [r, g, b] = self.pixel(x, y);
        (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
    }

    /// Horizontal mirror (column `x` ↔ `width − 1 − x`).
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    /// Nearest-neighbor resize; pixel centers map onto the source grid.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Image::filled(width, height, [0; 3]);
        for y in 0..height {
            let sy = ((f64::from(y) + 0.5) * f64::from(self.height) / f64::from(height)) as u32;
            for x in 0..width {
                let sx = ((f64::from(x) + 0.5) * f64::from(self.width) / f64::from(width)) as u32;
                out.set_pixel(x, y, self.pixel(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(path, &self.pixels, self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::Render(e.to_string()))
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (p[0] - a[0]) * (b[1] - a[1]) - (p[1] - a[1]) * (b[0] - a[0])
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Sum three values in ascending order so the result does not depend on
/// the triangle's vertex order.
fn sorted_mean(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    (v[0] + v[1] + v[2]) / 3.0
}

fn triangle_color(colors: Option<&[Vec3]>, settings: &RenderSettings, tri: [usize; 3]) -> [f64; 3] {
    match (settings.albedo, colors) {
        (AlbedoMode::Flat(c), _) => c,
        (AlbedoMode::PerVertex, Some(cols)) => {
            std::array::from_fn(|ch| sorted_mean([cols[tri[0]][ch], cols[tri[1]][ch], cols[tri[2]][ch]]))
        }
        (AlbedoMode::PerVertex, None) => DEFAULT_GRAY,
    }
}

/// Render a triangle mesh.
///
/// `vertex_colors` is used when the settings ask for per-vertex albedo.
/// Identical inputs always produce identical bytes.
pub fn render(vertices: &[Vec3], faces: &[[u32; 3]], vertex_colors: Option<&[Vec3]>, settings: &RenderSettings) -> Result<Image> {
    settings.validate()?;
    if vertices.is_empty() || faces.is_empty() {
        return Err(Error::Render("empty mesh".into()));
    }
    if vertices.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Render("mesh contains a non-finite vertex".into()));
    }
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= vertices.len())) {
        return Err(Error::Render(format!("face {f:?} indexes past {} vertices", vertices.len())));
    }
    if let Some(c) = vertex_colors {
        if c.len() != vertices.len() {
            return Err(Error::Render("vertex color count differs from vertex count".into()));
        }
    }

    let (w, h) = (settings.width as usize, settings.height as usize);
    let half_w = w as f64 / 2.0;
    let half_h = h as f64 / 2.0;
    let scale = half_w.min(half_h) / settings.view_half_extent;
    let projected: Vec<[f64; 2]> = vertices.iter().map(|v| [v[0] * scale, -(v[1] * scale)]).collect();

    let mut depth = vec![f64::NEG_INFINITY; w * h];
    let mut color = vec![[0u8; 3]; w * h];
    let light = settings.light_direction;

    for face in faces {
        let tri = face.map(|i| i as usize);
        let [p0, p1, p2] = tri.map(|i| projected[i]);
        let area = edge(p0, p1, p2);
        if area == 0.0 {
            continue;
        }

        let [a, b, c] = tri.map(|i| vertices[i]);
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let mut n = [e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len == 0.0 {
            continue;
        }
        if n[2] < 0.0 {
            n = n.map(|v| -v);
        }
        let lambert = ((n[0] * light[0] + n[1] * light[1] + n[2] * light[2]) / len).max(0.0);
        let intensity = settings.ambient + (1.0 - settings.ambient) * lambert;
        let albedo = triangle_color(vertex_colors, settings, tri);
        let rgb = albedo.map(|ch| to_u8(ch * intensity));

        let min_x = p0[0].min(p1[0]).min(p2[0]);
        let max_x = p0[0].max(p1[0]).max(p2[0]);
        let min_y = p0[1].min(p1[1]).min(p2[1]);
        let max_y = p0[1].max(p1[1]).max(p2[1]);
        // pixel c has center c + 0.5 − w/2 in centered coordinates
        let c_lo = (min_x + half_w - 0.5).ceil().max(0.0);
        let c_hi = (max_x + half_w - 0.5).floor().min(w as f64 - 1.0);
        let r_lo = (min_y + half_h - 0.5).ceil().max(0.0);
        let r_hi = (max_y + half_h - 0.5).floor().min(h as f64 - 1.0);
        if c_lo > c_hi || r_lo > r_hi {
            continue;
        }

        for r in r_lo as usize..=r_hi as usize {
            let py = r as f64 + 0.5 - half_h;
            for col in c_lo as usize..=c_hi as usize {
                let p = [col as f64 + 0.5 - half_w, py];
                let w0 = edge(p1, p2, p);
                let w1 = edge(p2, p0, p);
                let w2 = edge(p0, p1, p);
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                let z = (w0 / area) * a[2] + (w1 / area) * b[2] + (w2 / area) * c[2];
                let idx = r * w + col;
                if z > depth[idx] || (z == depth[idx] && rgb < color[idx]) {
                    depth[idx] = z;
                    color[idx] = rgb;
                }
            }
        }
    }

    let mut pixels = Vec::with_capacity(3 * w * h);
    for (d, c) in depth.iter().zip(&color) {
        if d.is_finite() {
            pixels.extend_from_slice(c);
        } else {
            pixels.extend_from_slice(&settings.background);
        }
    }
    Image::new(settings.width, settings.height, pixels)
}
