//! Seeded random poses and keyframed sequences, used where no motion capture
//! data is at hand.

use super::{PoseSequence, Result};
use crate::body_model::{BodyPose, BodyShape, SMPL_JOINT_COUNT};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest joint angle per SMPL joint, radians. Root yaw is drawn separately.
const AMPLITUDE: [f64; SMPL_JOINT_COUNT] = [
    0.15, // pelvis tilt
    0.6, 0.6, 0.2, // hips, spine1
    0.8, 0.8, 0.15, // knees, spine2
    0.2, 0.2, 0.15, // ankles, spine3
    0.0, 0.0, 0.3, // feet, neck
    0.2, 0.2, 0.3, // collars, head
    0.8, 0.8, // shoulders
    0.9, 0.9, // elbows
    0.3, 0.3, // wrists
    0.0, 0.0, // hands
];

fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Vector3<f64> {
    if max_angle == 0.0 {
        return Vector3::zeros();
    }
    let axis = loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    axis * rng.gen_range(0.0..max_angle)
}

/// A random SMPL pose; `yaw_range` bounds the heading about the vertical axis.
pub fn random_pose(rng: &mut impl Rng, yaw_range: f64) -> BodyPose {
    let yaw = if yaw_range > 0.0 { rng.gen_range(-yaw_range..yaw_range) } else { 0.0 };
    let tilt = random_rotation(rng, AMPLITUDE[0]);
    let root = crate::body_model::rotation::normalize_axis_angle(&(Vector3::z() * yaw + tilt));
    let joints = (1..SMPL_JOINT_COUNT).map(|j| random_rotation(rng, AMPLITUDE[j])).collect();
    BodyPose::new(root, joints)
}

/// Linear interpolation through `keyframes + 1` random poses, `frames` long in total.
pub fn synthetic_sequence(seed: u64, frames: usize, keyframes: usize, shape: &BodyShape, fps: f64) -> Result<PoseSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<BodyPose> = (0..=keyframes.max(1)).map(|_| random_pose(&mut rng, std::f64::consts::PI)).collect();
    let segments = keys.len() - 1;
    let mut poses = Vec::with_capacity(frames);
    for f in 0..frames {
        let u = if frames > 1 { f as f64 / (frames - 1) as f64 * segments as f64 } else { 0.0 };
        let seg = (u.floor() as usize).min(segments - 1);
        let local = u - seg as f64;
        poses.push(blend(&keys[seg], &keys[seg + 1], local));
    }
    PoseSequence::from_poses(poses, shape, fps)
}

fn blend(a: &BodyPose, b: &BodyPose, w: f64) -> BodyPose {
    if w == 0.0 {
        return a.clone();
    }
    let lerp = |x: &Vector3<f64>, y: &Vector3<f64>| x + (y - x) * w;
    BodyPose::new(
        lerp(a.root_rotation(), b.root_rotation()),
        a.joint_rotations().iter().zip(b.joint_rotations()).map(|(x, y)| lerp(x, y)).collect(),
    )
}
