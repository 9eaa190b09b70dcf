use super::{BodyModelError, Joints3D, Keypoints2D, Result};
use nalgebra::{Matrix3, Vector2};
use serde::{Deserialize, Serialize};

const ORTHONORMAL_TOL: f64 = 1e-8;

/// Scaled orthographic camera: `x₂ = s·Ψ(R·X) + t`, Ψ dropping the third coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspectiveCamera {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector2<f64>,
}

impl WeakPerspectiveCamera {
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector2<f64>) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(BodyModelError::Camera(format!("scale must be positive, got {scale}")));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(BodyModelError::Camera("rotation is not a proper orthonormal matrix".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(BodyModelError::Camera("translation is not finite".into()));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector2<f64> {
        &self.translation
    }
}

pub fn project_weak_perspective(joints: &Joints3D, cam: &WeakPerspectiveCamera) -> Keypoints2D {
    let points = joints
        .0
        .iter()
        .map(|j| {
            let r = cam.rotation * j;
            Vector2::new(r.x, r.y) * cam.scale + cam.translation
        })
        .collect::<Vec<_>>();
    let visibility = vec![true; points.len()];
    Keypoints2D { points, visibility }
}
