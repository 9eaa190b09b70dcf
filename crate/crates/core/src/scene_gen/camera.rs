use super::{Result, SceneConfig, SceneError, Viewpoint};
use crate::body_model::Keypoints2D;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Pinhole camera. Camera axes: x right, y down, z forward; pixel (0, 0) is
/// the top-left corner of the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveCamera {
    pub position: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub focal_mm: f64,
    pub sensor_mm: f64,
    /// (width, height) in pixels.
    pub resolution: [u32; 2],
}

impl PerspectiveCamera {
    pub fn new(position: Vector3<f64>, look_at: Vector3<f64>, focal_mm: f64, sensor_mm: f64, resolution: [u32; 2]) -> Result<Self> {
        let cam = Self {
            position,
            look_at,
            focal_mm,
            sensor_mm,
            resolution,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !((self.look_at - self.position).norm() > 1e-9) {
            return Err(SceneError::Camera("position coincides with look_at".into()));
        }
        if !(self.focal_mm > 0.0 && self.sensor_mm > 0.0) || self.resolution.contains(&0) {
            return Err(SceneError::Camera("focal length, sensor size and resolution must be positive".into()));
        }
        Ok(())
    }

    /// Focal length in pixels; the sensor size spans the image width.
    pub fn focal_px(&self) -> f64 {
        self.focal_mm / self.sensor_mm * self.resolution[0] as f64
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.resolution[0] as f64 / 2.0, self.resolution[1] as f64 / 2.0)
    }

    /// World-to-camera rotation, rows = (right, down, forward).
    pub fn rotation(&self) -> Matrix3<f64> {
        let forward = (self.look_at - self.position).normalize();
        let mut right = forward.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            // looking straight up or down
            right = forward.cross(&Vector3::y());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * (p - self.position)
    }

    /// Same camera rendering at a different resolution (same field of view).
    pub fn with_resolution(&self, resolution: [u32; 2]) -> Self {
        Self {
            resolution,
            ..self.clone()
        }
    }

    /// Projects camera-frame points.
    pub fn project_camera_points(&self, points: &[Vector3<f64>]) -> Result<Keypoints2D> {
        let f = self.focal_px();
        let c = self.principal_point();
        let (w, h) = (self.resolution[0] as f64, self.resolution[1] as f64);
        let mut out = Keypoints2D {
            points: Vec::with_capacity(points.len()),
            visibility: Vec::with_capacity(points.len()),
        };
        for (k, p) in points.iter().enumerate() {
            if p.z.abs() < 1e-12 {
                return Err(SceneError::Camera(format!("point {k} lies in the camera's focal plane")));
            }
            let px = Vector2::new(f * p.x / p.z + c.x, f * p.y / p.z + c.y);
            let visible = p.z > 0.0 && (0.0..w).contains(&px.x) && (0.0..h).contains(&px.y);
            out.points.push(px);
            out.visibility.push(visible);
        }
        Ok(out)
    }
}

/// Pinhole projection of world points. Points behind the camera are marked invisible.
pub fn perspective_project(camera: &PerspectiveCamera, points: &[Vector3<f64>]) -> Result<Keypoints2D> {
    let cam: Vec<Vector3<f64>> = points.iter().map(|p| camera.to_camera(p)).collect();
    camera.project_camera_points(&cam)
}

/// Cameras for every frame and viewpoint, indexed `[view][frame]`.
pub fn place_camera_rig(pelvis_track: &[Vector3<f64>], cfg: &SceneConfig) -> Result<Vec<Vec<PerspectiveCamera>>> {
    if pelvis_track.is_empty() {
        return Err(SceneError::Config("empty pelvis track".into()));
    }
    cfg.viewpoints
        .iter()
        .map(|view| {
            pelvis_track
                .iter()
                .map(|p| PerspectiveCamera::new(p + view.direction() * cfg.camera_distance, *p, cfg.focal_mm, cfg.sensor_mm, cfg.resolution))
                .collect()
        })
        .collect()
}

impl Viewpoint {
    /// Unit vector from the subject towards the camera.
    pub fn direction(self) -> Vector3<f64> {
        match self {
            Viewpoint::E => Vector3::x(),
            Viewpoint::W => -Vector3::x(),
            Viewpoint::N => Vector3::y(),
            Viewpoint::S => -Vector3::y(),
        }
    }
}
