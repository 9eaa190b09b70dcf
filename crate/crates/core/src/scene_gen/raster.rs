//! Software rasterization of camera-frame triangle meshes into silhouette or
//! depth images.

use super::{AnnotatedFrame, PerspectiveCamera};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Triangles closer than this to the camera plane are skipped.
const NEAR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreviewMode {
    Silhouette,
    Depth,
}

/// Row-major single-channel image. Silhouettes hold 0 or 1; depth images hold
/// camera-space z with `f64::INFINITY` as background.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Binary PGM. Silhouettes map to 0/255; depth maps to 16-bit millimeters
    /// with 65535 for background.
    pub fn write_pgm<W: Write>(&self, mut out: W, mode: PreviewMode) -> std::io::Result<()> {
        match mode {
            PreviewMode::Silhouette => {
                write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
                let bytes: Vec<u8> = self.data.iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
                out.write_all(&bytes)
            }
            PreviewMode::Depth => {
                write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
                let mut bytes = Vec::with_capacity(2 * self.data.len());
                for &d in &self.data {
                    let mm = if d.is_finite() { (d * 1000.0).round().clamp(0.0, 65534.0) as u16 } else { u16::MAX };
                    bytes.extend_from_slice(&mm.to_be_bytes());
                }
                out.write_all(&bytes)
            }
        }
    }
}

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Rasterizes camera-frame triangles with a z-buffer; pixel centers are sampled.
pub fn rasterize(camera: &PerspectiveCamera, meshes: &[(&[Vector3<f64>], &[[usize; 3]])], mode: PreviewMode) -> Image {
    let (w, h) = (camera.resolution[0] as usize, camera.resolution[1] as usize);
    let mut depth = vec![f64::INFINITY; w * h];
    let f = camera.focal_px();
    let c = camera.principal_point();
    for (vertices, faces) in meshes {
        for tri in faces.iter() {
            let p = tri.map(|i| vertices[i]);
            if p.iter().any(|v| v.z < NEAR) {
                continue;
            }
            let s = p.map(|v| Vector2::new(f * v.x / v.z + c.x, f * v.y / v.z + c.y));
            let area = edge(&s[0], &s[1], &s[2]);
            if area.abs() < 1e-12 {
                continue;
            }
            let x0 = s.iter().map(|q| q.x).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let y0 = s.iter().map(|q| q.y).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let x1 = (s.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max).ceil()).min(w as f64);
            let y1 = (s.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max).ceil()).min(h as f64);
            if x1 <= 0.0 || y1 <= 0.0 {
                continue;
            }
            for y in y0..y1 as usize {
                for x in x0..x1 as usize {
                    let q = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let b = [edge(&s[1], &s[2], &q) / area, edge(&s[2], &s[0], &q) / area, edge(&s[0], &s[1], &q) / area];
                    if b.iter().any(|&v| v < 0.0) {
                        continue;
                    }
                    // perspective-correct depth: 1/z is affine in screen space
                    let inv_z = b[0] / p[0].z + b[1] / p[1].z + b[2] / p[2].z;
                    let z = 1.0 / inv_z;
                    let slot = &mut depth[y * w + x];
                    if z < *slot {
                        *slot = z;
                    }
                }
            }
        }
    }
    let data = match mode {
        PreviewMode::Depth => depth,
        PreviewMode::Silhouette => depth.iter().map(|d| if d.is_finite() { 1.0 } else { 0.0 }).collect(),
    };
    Image { width: w, height: h, data }
}

/// Preview of the body (and cloth, when present) at `size` pixels, keeping the
/// frame camera's field of view.
pub fn rasterize_preview(
    frame: &AnnotatedFrame,
    body_faces: &[[usize; 3]],
    cloth_faces: &[[usize; 3]],
    mode: PreviewMode,
    size: [u32; 2],
) -> Image {
    let camera = frame.camera.with_resolution(size);
    let mut meshes: Vec<(&[Vector3<f64>], &[[usize; 3]])> = vec![(&frame.body_vertices, body_faces)];
    if let Some(cloth) = &frame.cloth_vertices {
        meshes.push((cloth, cloth_faces));
    }
    rasterize(&camera, &meshes, mode)
}
