//! Capsule-limbed humanoid standing in for licensed template data.
//!
//! T-pose, z up, facing −y, pelvis joint at the origin, about 1.7 m tall.
//! The skeleton follows the SMPL 24-joint layout.

use super::{BodyTemplate, SHAPE_DIM, SMPL_JOINT_COUNT};
use nalgebra::{DMatrix, Vector3};
use std::f64::consts::TAU;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Detail {
    Low,
    Medium,
}

impl Detail {
    fn resolution(self) -> (usize, usize) {
        // (vertices around, rings along)
        match self {
            Detail::Low => (8, 4),
            Detail::Medium => (16, 8),
        }
    }
}

pub const SMPL_PARENTS: [usize; SMPL_JOINT_COUNT] = [
    0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// Joint rest positions in meters, SMPL order.
const JOINTS: [[f64; 3]; SMPL_JOINT_COUNT] = [
    [0.0, 0.0, 0.0],       // pelvis
    [0.09, 0.0, -0.08],    // left hip
    [-0.09, 0.0, -0.08],   // right hip
    [0.0, 0.0, 0.10],      // spine1
    [0.09, 0.0, -0.50],    // left knee
    [-0.09, 0.0, -0.50],   // right knee
    [0.0, 0.0, 0.22],      // spine2
    [0.09, 0.0, -0.86],    // left ankle
    [-0.09, 0.0, -0.86],   // right ankle
    [0.0, 0.0, 0.34],      // spine3
    [0.09, -0.10, -0.90],  // left foot
    [-0.09, -0.10, -0.90], // right foot
    [0.0, 0.0, 0.52],      // neck
    [0.07, 0.0, 0.46],     // left collar
    [-0.07, 0.0, 0.46],    // right collar
    [0.0, 0.0, 0.60],      // head
    [0.18, 0.0, 0.46],     // left shoulder
    [-0.18, 0.0, 0.46],    // right shoulder
    [0.45, 0.0, 0.46],     // left elbow
    [-0.45, 0.0, 0.46],    // right elbow
    [0.70, 0.0, 0.46],     // left wrist
    [-0.70, 0.0, 0.46],    // right wrist
    [0.78, 0.0, 0.46],     // left hand
    [-0.78, 0.0, 0.46],    // right hand
];

/// LSP-style 14-joint evaluation skeleton.
const METRIC_JOINTS: [usize; 14] = [8, 5, 2, 1, 4, 7, 21, 19, 17, 16, 18, 20, 12, 15];

/// Shape basis magnitudes per unit coefficient.
const HEIGHT_SCALE: f64 = 0.06;
pub(crate) const GIRTH_SCALE: f64 = 0.15;
const LIMB_SCALE: f64 = 0.08;
const LOCAL_SCALE: f64 = 0.10;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Region {
    Torso,
    Head,
    Arm,
    Leg,
    Neck,
}

/// A tube from `start` to `end`, skinned to `joint` and blending into `child` near the end.
struct Segment {
    start: Vector3<f64>,
    end: Vector3<f64>,
    radius: (f64, f64),
    joint: usize,
    child: Option<usize>,
    region: Region,
    cap_start: bool,
    cap_end: bool,
}

fn j(i: usize) -> Vector3<f64> {
    Vector3::from(JOINTS[i])
}

fn segments() -> Vec<Segment> {
    let seg = |start: Vector3<f64>, end: Vector3<f64>, radius: (f64, f64), joint, child, region| Segment {
        start,
        end,
        radius,
        joint,
        child,
        region,
        cap_start: false,
        cap_end: false,
    };
    let mut s = vec![
        Segment {
            cap_start: true,
            ..seg(Vector3::new(0.0, 0.0, -0.14), j(0), (0.13, 0.15), 0, None, Region::Torso)
        },
        seg(j(0), j(3), (0.15, 0.14), 0, Some(3), Region::Torso),
        seg(j(3), j(6), (0.14, 0.14), 3, Some(6), Region::Torso),
        seg(j(6), j(9), (0.14, 0.16), 6, Some(9), Region::Torso),
        Segment {
            cap_end: true,
            ..seg(j(9), Vector3::new(0.0, 0.0, 0.50), (0.16, 0.08), 9, Some(12), Region::Torso)
        },
        Segment {
            cap_start: true,
            cap_end: true,
            ..seg(j(12), j(15), (0.05, 0.05), 12, Some(15), Region::Neck)
        },
        Segment {
            cap_start: true,
            cap_end: true,
            ..seg(j(15), Vector3::new(0.0, 0.0, 0.76), (0.09, 0.06), 15, None, Region::Head)
        },
    ];
    for side in 0..2 {
        let o = side; // left = 0 offset, right = 1 offset in SMPL pairs
        let (hip, knee, ankle, foot) = (1 + o, 4 + o, 7 + o, 10 + o);
        let (collar, shoulder, elbow, wrist, hand) = (13 + o, 16 + o, 18 + o, 20 + o, 22 + o);
        let sign = if side == 0 { 1.0 } else { -1.0 };
        let capped = |mut sg: Segment| {
            sg.cap_start = true;
            sg.cap_end = true;
            sg
        };
        s.push(capped(seg(j(hip), j(knee), (0.075, 0.06), hip, Some(knee), Region::Leg)));
        s.push(capped(seg(j(knee), j(ankle), (0.055, 0.045), knee, Some(ankle), Region::Leg)));
        s.push(capped(seg(j(ankle), j(foot), (0.045, 0.04), ankle, Some(foot), Region::Leg)));
        s.push(capped(seg(
            j(foot),
            j(foot) + Vector3::new(0.0, -0.07, 0.0),
            (0.035, 0.03),
            foot,
            None,
            Region::Leg,
        )));
        s.push(capped(seg(j(collar), j(shoulder), (0.05, 0.05), collar, Some(shoulder), Region::Arm)));
        s.push(capped(seg(j(shoulder), j(elbow), (0.045, 0.04), shoulder, Some(elbow), Region::Arm)));
        s.push(capped(seg(j(elbow), j(wrist), (0.038, 0.032), elbow, Some(wrist), Region::Arm)));
        s.push(capped(seg(j(wrist), j(hand), (0.032, 0.03), wrist, Some(hand), Region::Arm)));
        s.push(capped(seg(
            j(hand),
            j(hand) + Vector3::new(sign * 0.08, 0.0, 0.0),
            (0.03, 0.02),
            hand,
            None,
            Region::Arm,
        )));
    }
    s
}

fn orthonormal_frame(dir: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if dir.z.abs() < 0.9 { Vector3::z() } else { Vector3::y() };
    let u = dir.cross(&helper).normalize();
    let v = dir.cross(&u);
    (u, v)
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct VertexInfo {
    /// Closest point on the tube axis.
    axis_point: Vector3<f64>,
    segment: usize,
}

/// Builds the procedural template; all template invariants hold by construction.
pub fn procedural_template(detail: Detail) -> BodyTemplate {
    let (around, rings) = detail.resolution();
    let segs = segments();
    let mut verts: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut info: Vec<VertexInfo> = Vec::new();
    let mut weights: Vec<Vec<(usize, f64)>> = Vec::new();
    // ring of vertices centred on each joint, used by the regressor
    let mut joint_rings: Vec<Option<Vec<usize>>> = vec![None; SMPL_JOINT_COUNT];

    for (si, sg) in segs.iter().enumerate() {
        let axis = sg.end - sg.start;
        let dir = axis.normalize();
        let (u, v) = orthonormal_frame(&dir);
        let base = verts.len();
        for r in 0..=rings {
            let t = r as f64 / rings as f64;
            let center = sg.start + axis * t;
            let radius = sg.radius.0 + (sg.radius.1 - sg.radius.0) * t;
            let w_child = sg.child.map_or(0.0, |_| 0.5 * smoothstep(0.6, 1.0, t));
            for a in 0..around {
                let phi = TAU * a as f64 / around as f64;
                let p = center + (u * phi.cos() + v * phi.sin()) * radius;
                verts.push(p);
                info.push(VertexInfo {
                    axis_point: center,
                    segment: si,
                });
                let mut w = vec![(sg.joint, 1.0 - w_child)];
                if let Some(c) = sg.child {
                    if w_child > 0.0 {
                        w.push((c, w_child));
                    }
                }
                weights.push(w);
            }
        }
        let ring_start = |r: usize| base + r * around;
        if joint_rings[sg.joint].is_none() && (sg.start - j(sg.joint)).norm() < 1e-12 {
            joint_rings[sg.joint] = Some((0..around).map(|a| ring_start(0) + a).collect());
        }
        for r in 0..rings {
            for a in 0..around {
                let a1 = (a + 1) % around;
                let (p00, p01) = (ring_start(r) + a, ring_start(r) + a1);
                let (p10, p11) = (ring_start(r + 1) + a, ring_start(r + 1) + a1);
                faces.push([p00, p01, p11]);
                faces.push([p00, p11, p10]);
            }
        }
        for (is_end, enabled) in [(false, sg.cap_start), (true, sg.cap_end)] {
            if !enabled {
                continue;
            }
            let (center, r_idx, bulge) = if is_end {
                (sg.end, rings, dir * sg.radius.1 * 0.5)
            } else {
                (sg.start, 0, -dir * sg.radius.0 * 0.5)
            };
            let tip = verts.len();
            verts.push(center + bulge);
            info.push(VertexInfo {
                axis_point: center,
                segment: si,
            });
            let w_child = if is_end { sg.child.map_or(0.0, |_| 0.5) } else { 0.0 };
            let mut w = vec![(sg.joint, 1.0 - w_child)];
            if let (Some(c), true) = (sg.child, w_child > 0.0) {
                w.push((c, w_child));
            }
            weights.push(w);
            for a in 0..around {
                let a1 = (a + 1) % around;
                let (p0, p1) = (ring_start(r_idx) + a, ring_start(r_idx) + a1);
                if is_end {
                    faces.push([p0, p1, tip]);
                } else {
                    faces.push([p1, p0, tip]);
                }
            }
        }
    }

    let n = verts.len();
    let mut skinning = DMatrix::zeros(n, SMPL_JOINT_COUNT);
    for (i, w) in weights.iter().enumerate() {
        for &(k, x) in w {
            skinning[(i, k)] += x;
        }
    }

    let mut regressor = DMatrix::zeros(SMPL_JOINT_COUNT, n);
    for (k, ring) in joint_rings.iter().enumerate() {
        let ring = ring.as_ref().expect("every joint has a centred ring");
        let w = 1.0 / ring.len() as f64;
        for &i in ring {
            regressor[(k, i)] = w;
        }
    }

    let basis = shape_basis(&verts, &info, &segs);

    BodyTemplate {
        rest_vertices: verts,
        faces,
        parents: SMPL_PARENTS.to_vec(),
        skinning_weights: skinning,
        shape_basis: basis,
        joint_regressor: regressor,
        metric_joint_map: METRIC_JOINTS.to_vec(),
    }
}

/// Basis directions: 0 height, 1 girth, 2 limb length, 3–9 local scalings
/// (head size, shoulder width, hip width, torso depth, arm girth, leg girth, chest).
fn shape_basis(verts: &[Vector3<f64>], info: &[VertexInfo], segs: &[Segment]) -> DMatrix<f64> {
    let n = verts.len();
    let mut b = DMatrix::zeros(3 * n, SHAPE_DIM);
    let mut set = |i: usize, d: usize, v: Vector3<f64>| {
        for c in 0..3 {
            b[(3 * i + c, d)] = v[c];
        }
    };
    let shoulder_x = JOINTS[16][0];
    let hip_z = JOINTS[1][2];
    for (i, p) in verts.iter().enumerate() {
        let vi = &info[i];
        let sg = &segs[vi.segment];
        let radial = p - vi.axis_point;
        // 0: uniform vertical stretch about the pelvis
        set(i, 0, Vector3::new(0.0, 0.0, HEIGHT_SCALE * p.z));
        // 1: radial growth about each tube axis
        set(i, 1, radial * GIRTH_SCALE);
        // 2: limbs stretch away from their roots
        let limb = match sg.region {
            Region::Leg => Vector3::new(0.0, 0.0, LIMB_SCALE * (p.z - hip_z)),
            Region::Arm => Vector3::new(LIMB_SCALE * p.x.signum() * (p.x.abs() - shoulder_x).max(0.0), 0.0, 0.0),
            _ => Vector3::zeros(),
        };
        set(i, 2, limb);
        // 3: head size about the head joint
        if sg.region == Region::Head {
            set(i, 3, (p - j(15)) * LOCAL_SCALE);
        }
        // 4: shoulder width, arms shift outward
        if sg.region == Region::Arm {
            set(i, 4, Vector3::new(p.x.signum() * LOCAL_SCALE * 0.3, 0.0, 0.0));
        }
        // 5: hip width, legs shift outward
        if sg.region == Region::Leg {
            set(i, 5, Vector3::new(p.x.signum() * LOCAL_SCALE * 0.2, 0.0, 0.0));
        }
        if sg.region == Region::Torso {
            // 6: torso depth
            set(i, 6, Vector3::new(0.0, radial.y * LOCAL_SCALE * 2.0, 0.0));
            // 9: chest girth around spine2/spine3
            let chest = smoothstep(0.12, 0.24, p.z) * (1.0 - smoothstep(0.36, 0.46, p.z));
            set(i, 9, radial * (LOCAL_SCALE * chest));
        }
        // 7, 8: arm and leg girth
        if sg.region == Region::Arm {
            set(i, 7, radial * (LOCAL_SCALE * 2.0));
        }
        if sg.region == Region::Leg {
            set(i, 8, radial * (LOCAL_SCALE * 2.0));
        }
    }
    b
}

/// Per-bone capsule radius at β = 0, indexed by child joint.
pub(crate) fn bone_radius(child: usize) -> f64 {
    match child {
        3 | 6 | 9 => 0.14,
        12 => 0.06,
        15 => 0.05,
        1 | 2 => 0.10,
        4 | 5 => 0.065,
        7 | 8 => 0.05,
        10 | 11 => 0.04,
        13 | 14 => 0.05,
        16 | 17 => 0.05,
        18 | 19 => 0.042,
        20 | 21 => 0.035,
        _ => 0.03,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{rest_joints, skin, BodyPose, BodyShape};

    #[test]
    fn low_detail_is_valid() {
        let t = procedural_template(Detail::Low);
        t.validate().unwrap();
        assert!(t.vertex_count() >= 300);
        assert_eq!(t.joint_count(), 24);
        assert_eq!(t.metric_joint_map.len(), 14);
    }

    #[test]
    fn medium_detail_is_valid_and_larger() {
        let m = procedural_template(Detail::Medium);
        m.validate().unwrap();
        assert!(m.vertex_count() > procedural_template(Detail::Low).vertex_count());
    }

    #[test]
    fn regressed_joints_match_declared() {
        for d in [Detail::Low, Detail::Medium] {
            let t = procedural_template(d);
            let joints = rest_joints(&t, &BodyShape::default());
            for (a, b) in joints.iter().zip((0..SMPL_JOINT_COUNT).map(j)) {
                assert!((a - b).norm() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn height_is_about_1_7m() {
        let t = procedural_template(Detail::Low);
        let (lo, hi) = z_extent(&t.rest_vertices);
        assert!((hi - lo - 1.7).abs() < 0.05, "height {} {lo} {hi}", hi - lo);
    }

    fn z_extent(v: &[Vector3<f64>]) -> (f64, f64) {
        v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)))
    }

    #[test]
    fn height_coefficient_makes_body_taller() {
        let t = procedural_template(Detail::Low);
        let base = skin(&t, &BodyShape::default(), &BodyPose::zero(24)).unwrap();
        let tall = skin(&t, &BodyShape::unit(0), &BodyPose::zero(24)).unwrap();
        let (a0, a1) = z_extent(&base.vertices);
        let (b0, b1) = z_extent(&tall.vertices);
        assert!(b1 - b0 > a1 - a0);
    }

    #[test]
    fn pelvis_stays_at_origin_under_shape() {
        let t = procedural_template(Detail::Low);
        for d in 0..SHAPE_DIM {
            let joints = rest_joints(&t, &BodyShape::unit(d));
            assert!(joints[0].norm() < 1e-9, "dim {d} moves the pelvis");
        }
    }
}
