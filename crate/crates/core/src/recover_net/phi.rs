use super::{RecoverError, Result};
use crate::body_model::{rodrigues, BodyPose, BodyShape, SHAPE_DIM, THETA_DIM};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub const PHI_DIM: usize = THETA_DIM + SHAPE_DIM + 3 + 2 + 1;
pub const BETA_OFFSET: usize = THETA_DIM;
pub const ROTATION_OFFSET: usize = BETA_OFFSET + SHAPE_DIM;
pub const TRANSLATION_OFFSET: usize = ROTATION_OFFSET + 3;
pub const SCALE_OFFSET: usize = TRANSLATION_OFFSET + 2;

/// Per-frame recovery parameters: pose, shape and a weak-perspective camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryVector {
    pub theta: Vec<f64>,
    pub beta: [f64; SHAPE_DIM],
    /// Axis-angle camera rotation.
    pub global_rotation: Vector3<f64>,
    /// Pixels.
    pub translation: Vector2<f64>,
    pub scale: f64,
}

impl RecoveryVector {
    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != THETA_DIM {
            return Err(RecoverError::Shape(format!("theta has {} values, expected {THETA_DIM}", self.theta.len())));
        }
        if !(self.scale > 0.0) {
            return Err(RecoverError::Shape(format!("scale {} is not positive", self.scale)));
        }
        if !self.to_flat().iter().all(|v| v.is_finite()) {
            return Err(RecoverError::NonFinite("recovery vector".into()));
        }
        Ok(())
    }

    /// `[θ, β, R, t, s]`, 88 values.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(PHI_DIM);
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.beta);
        out.extend(self.global_rotation.iter());
        out.extend(self.translation.iter());
        out.push(self.scale);
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != PHI_DIM {
            return Err(RecoverError::Shape(format!("phi has {} values, expected {PHI_DIM}", v.len())));
        }
        let phi = Self {
            theta: v[..THETA_DIM].to_vec(),
            beta: std::array::from_fn(|k| v[BETA_OFFSET + k]),
            global_rotation: Vector3::from_column_slice(&v[ROTATION_OFFSET..TRANSLATION_OFFSET]),
            translation: Vector2::from_column_slice(&v[TRANSLATION_OFFSET..SCALE_OFFSET]),
            scale: v[SCALE_OFFSET],
        };
        phi.validate()?;
        Ok(phi)
    }

    /// Regression coordinates: as [`to_flat`](Self::to_flat) with `ln s` in the scale slot.
    pub fn to_raw(&self) -> Vec<f64> {
        let mut v = self.to_flat();
        v[SCALE_OFFSET] = self.scale.ln();
        v
    }

    /// Inverse of [`to_raw`](Self::to_raw); the scale slot goes through `exp`.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        let mut v = raw.to_vec();
        if v.len() == PHI_DIM {
            v[SCALE_OFFSET] = v[SCALE_OFFSET].exp();
        }
        Self::from_flat(&v)
    }

    pub fn pose(&self) -> BodyPose {
        BodyPose::from_theta(&self.theta).expect("validated theta length")
    }

    pub fn shape(&self) -> BodyShape {
        BodyShape::new(self.beta)
    }

    /// `s·(R·X)_xy + t` for each point.
    pub fn project(&self, points: &[Vector3<f64>]) -> Vec<Vector2<f64>> {
        let r = rodrigues(&self.global_rotation);
        points
            .iter()
            .map(|p| {
                let q = r * p;
                Vector2::new(q.x, q.y) * self.scale + self.translation
            })
            .collect()
    }
}

/// Element-wise mean of the regression coordinates, so the scale is averaged
/// in log space.
pub fn mean_phi(phis: &[RecoveryVector]) -> Result<RecoveryVector> {
    if phis.is_empty() {
        return Err(RecoverError::Shape("mean of no recovery vectors".into()));
    }
    let mut acc = vec![0.0; PHI_DIM];
    for p in phis {
        for (a, v) in acc.iter_mut().zip(p.to_raw()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= phis.len() as f64);
    RecoveryVector::from_raw(&acc)
}
