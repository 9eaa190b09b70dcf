use super::{ClothError, ClothState, Result, SimConfig};
use crate::body_model::{posed_joints, BodyPose, BodyShape, BodyTemplate};
use crate::body_model::procedural::{bone_radius, GIRTH_SCALE};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !a.iter().chain(b.iter()).all(|c| c.is_finite()) {
            return Err(ClothError::Config(format!("invalid capsule radius {radius} or endpoints")));
        }
        Ok(Self { a, b, radius })
    }

    /// Closest point on the axis segment.
    pub fn closest_axis_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 { ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        self.a + ab * t
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.closest_axis_point(p)).norm() - self.radius
    }

    /// Outward unit normal at the surface point closest to `p`.
    fn normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.closest_axis_point(p);
        let len = d.norm();
        if len > 1e-12 {
            return d / len;
        }
        // on the axis: any direction perpendicular to it
        let axis = self.b - self.a;
        let helper = if axis.x.abs() < 0.9 * axis.norm() { Vector3::x() } else { Vector3::y() };
        let n = axis.cross(&helper);
        if n.norm() > 0.0 {
            n.normalize()
        } else {
            Vector3::z()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CapsuleSet {
    pub capsules: Vec<Capsule>,
}

impl CapsuleSet {
    pub fn min_signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.capsules.iter().map(|c| c.signed_distance(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn is_empty(&self) -> bool {
        self.capsules.is_empty()
    }
}

/// Passes over the capsule list; overlapping capsules can push a particle
/// from one into another.
const COLLISION_PASSES: usize = 8;

/// Projects unpinned particles closer than `collision_epsilon` onto the
/// offset surface, removes their normal velocity and applies friction.
pub fn resolve_collisions(state: &mut ClothState, colliders: &CapsuleSet, cfg: &SimConfig) {
    if colliders.is_empty() {
        return;
    }
    let pinned = state.is_pinned();
    let eps = cfg.collision_epsilon;
    for p in 0..state.particle_count() {
        if pinned[p] {
            continue;
        }
        for _ in 0..COLLISION_PASSES {
            let mut moved = false;
            for c in &colliders.capsules {
                let x = state.positions[p];
                if c.signed_distance(&x) >= eps {
                    continue;
                }
                let n = c.normal(&x);
                state.positions[p] = c.closest_axis_point(&x) + n * (c.radius + eps);
                let v = state.velocities[p];
                let tangential = v - n * v.dot(&n);
                state.velocities[p] = tangential * (1.0 - cfg.friction);
                moved = true;
            }
            if !moved {
                break;
            }
        }
    }
}

/// One capsule per bone of the posed, shaped skeleton. Radii grow with the
/// girth coefficient.
pub fn body_colliders(template: &BodyTemplate, pose: &BodyPose, shape: &BodyShape) -> Result<CapsuleSet> {
    let joints = posed_joints(template, shape, pose).map_err(|e| ClothError::State(e.to_string()))?;
    let girth = (1.0 + GIRTH_SCALE * shape.coefficients()[1]).max(0.1);
    let capsules = template
        .parents
        .iter()
        .enumerate()
        .filter(|&(j, &p)| p != j)
        .map(|(j, &p)| Capsule {
            a: joints[p],
            b: joints[j],
            radius: bone_radius(j) * girth,
        })
        .collect();
    Ok(CapsuleSet { capsules })
}
