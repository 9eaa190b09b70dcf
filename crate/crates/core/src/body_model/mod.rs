//! Parametric skinned body model.
//!
//! A [`BodyTemplate`] holds a rest mesh, a kinematic tree, skinning weights,
//! a linear shape basis and a joint regressor. Posing is rest-pose-factored
//! linear blend skinning: each joint contributes `G_k = FK_k · FK_k(rest)⁻¹`,
//! so the rest pose is an exact fixed point. All lengths are meters.

mod io;
mod kinematics;
pub(crate) mod procedural;
mod projection;
pub mod rotation;

pub use io::{load_template, save_template, template_from_json, template_to_json, write_obj};
pub use kinematics::{forward_kinematics, posed_joints, regress_joints, rest_joints, skin, JointTransform};
pub use procedural::{procedural_template, Detail, SMPL_PARENTS};
pub use projection::{project_weak_perspective, WeakPerspectiveCamera};
pub use rotation::rodrigues;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of shape coefficients.
pub const SHAPE_DIM: usize = 10;
/// Joints of an SMPL-compatible skeleton, root included.
pub const SMPL_JOINT_COUNT: usize = 24;
/// Length of the flattened pose vector of an SMPL-compatible skeleton.
pub const THETA_DIM: usize = 3 * SMPL_JOINT_COUNT;
/// Joints used by the default evaluation protocol.
pub const METRIC_JOINT_COUNT: usize = 14;

#[derive(Debug, Error)]
pub enum BodyModelError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at vertex {vertex}")]
    NonFinite { vertex: usize },
    #[error("template invariant violated: {0}")]
    Validation(String),
    #[error("template parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BodyModelError>;

/// Shape coefficients β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BodyShape(pub [f64; SHAPE_DIM]);

impl Default for BodyShape {
    fn default() -> Self {
        Self([0.0; SHAPE_DIM])
    }
}

impl BodyShape {
    pub fn new(beta: [f64; SHAPE_DIM]) -> Self {
        Self(beta)
    }

    pub fn from_slice(beta: &[f64]) -> Result<Self> {
        let arr: [f64; SHAPE_DIM] = beta.try_into().map_err(|_| BodyModelError::Dimension {
            what: "shape coefficients",
            expected: SHAPE_DIM,
            found: beta.len(),
        })?;
        Ok(Self(arr))
    }

    /// Unit vector along one shape direction.
    pub fn unit(dim: usize) -> Self {
        let mut b = [0.0; SHAPE_DIM];
        b[dim] = 1.0;
        Self(b)
    }

    pub fn coefficients(&self) -> &[f64; SHAPE_DIM] {
        &self.0
    }
}

/// Pose θ: root rotation plus one axis-angle rotation per non-root joint.
///
/// Every rotation is stored with magnitude in `[0, π]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyPose {
    root_rotation: Vector3<f64>,
    joint_rotations: Vec<Vector3<f64>>,
}

impl BodyPose {
    pub fn new(root_rotation: Vector3<f64>, joint_rotations: Vec<Vector3<f64>>) -> Self {
        Self {
            root_rotation: rotation::normalize_axis_angle(&root_rotation),
            joint_rotations: joint_rotations
                .iter()
                .map(rotation::normalize_axis_angle)
                .collect(),
        }
    }

    /// All-zero pose for a skeleton with `joint_count` joints (root included).
    pub fn zero(joint_count: usize) -> Self {
        Self {
            root_rotation: Vector3::zeros(),
            joint_rotations: vec![Vector3::zeros(); joint_count.saturating_sub(1)],
        }
    }

    /// Builds a pose from a flat θ vector of length `3·joint_count`, root first.
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        if theta.is_empty() || theta.len() % 3 != 0 {
            return Err(BodyModelError::Dimension {
                what: "pose vector (multiple of 3)",
                expected: THETA_DIM,
                found: theta.len(),
            });
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(BodyModelError::Validation(format!("pose entry {i} is not finite")));
        }
        let mut rots = theta.chunks_exact(3).map(Vector3::from_column_slice);
        let root = rots.next().unwrap();
        Ok(Self::new(root, rots.collect()))
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.joint_count());
        out.extend_from_slice(self.root_rotation.as_slice());
        for r in &self.joint_rotations {
            out.extend_from_slice(r.as_slice());
        }
        out
    }

    /// Joint count including the root.
    pub fn joint_count(&self) -> usize {
        self.joint_rotations.len() + 1
    }

    pub fn root_rotation(&self) -> &Vector3<f64> {
        &self.root_rotation
    }

    pub fn joint_rotations(&self) -> &[Vector3<f64>] {
        &self.joint_rotations
    }

    /// Rotation of joint `j` in tree order (0 is the root).
    pub fn rotation(&self, j: usize) -> &Vector3<f64> {
        if j == 0 {
            &self.root_rotation
        } else {
            &self.joint_rotations[j - 1]
        }
    }

    pub fn with_root_rotation(&self, root: Vector3<f64>) -> Self {
        Self {
            root_rotation: rotation::normalize_axis_angle(&root),
            joint_rotations: self.joint_rotations.clone(),
        }
    }

    pub fn with_joint_rotation(&self, j: usize, r: Vector3<f64>) -> Self {
        let mut out = self.clone();
        if j == 0 {
            out.root_rotation = rotation::normalize_axis_angle(&r);
        } else {
            out.joint_rotations[j - 1] = rotation::normalize_axis_angle(&r);
        }
        out
    }
}

/// Rest mesh, skeleton and skinning data.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyTemplate {
    pub rest_vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Parent of each joint; the root is its own parent.
    pub parents: Vec<usize>,
    /// N × J skinning weights.
    pub skinning_weights: DMatrix<f64>,
    /// 3N × 10 displacement basis; rows `3i..3i+3` belong to vertex `i`.
    pub shape_basis: DMatrix<f64>,
    /// J × N joint regressor.
    pub joint_regressor: DMatrix<f64>,
    /// Template joint indices forming the evaluation skeleton.
    pub metric_joint_map: Vec<usize>,
}

const ROW_SUM_TOL: f64 = 1e-6;

impl BodyTemplate {
    pub fn vertex_count(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    /// Checks every structural invariant, naming the first one that fails.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertex_count();
        let j = self.joint_count();
        let fail = |msg: String| Err(BodyModelError::Validation(msg));
        if n == 0 {
            return fail("template has no vertices".into());
        }
        if j == 0 {
            return fail("kinematic tree is empty".into());
        }
        if let Some(i) = self.rest_vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return fail(format!("rest vertex {i} is not finite"));
        }
        if self.skinning_weights.shape() != (n, j) {
            return fail(format!(
                "skinning weights shape {:?} != ({n}, {j})",
                self.skinning_weights.shape()
            ));
        }
        if self.joint_regressor.shape() != (j, n) {
            return fail(format!(
                "joint regressor shape {:?} != ({j}, {n})",
                self.joint_regressor.shape()
            ));
        }
        if self.shape_basis.shape() != (3 * n, SHAPE_DIM) {
            return fail(format!(
                "shape basis shape {:?} != ({}, {SHAPE_DIM})",
                self.shape_basis.shape(),
                3 * n
            ));
        }
        if !self.shape_basis.iter().all(|v| v.is_finite()) {
            return fail("shape basis contains non-finite values".into());
        }
        for (name, m) in [("skinning weights", &self.skinning_weights), ("joint regressor", &self.joint_regressor)] {
            for (r, row) in m.row_iter().enumerate() {
                if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return fail(format!("{name} row {r} has a negative or non-finite entry"));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    return fail(format!("{name} row {r} sums to {s}, expected 1"));
                }
            }
        }
        // single root, acyclic
        let roots: Vec<usize> = (0..j).filter(|&k| self.parents[k] == k).collect();
        if roots.len() != 1 {
            return fail(format!("kinematic tree must have exactly one root, found {}", roots.len()));
        }
        for (k, &p) in self.parents.iter().enumerate() {
            if p >= j {
                return fail(format!("joint {k} has parent {p} outside the tree"));
            }
        }
        for start in 0..j {
            let mut cur = start;
            let mut hops = 0;
            while self.parents[cur] != cur {
                cur = self.parents[cur];
                hops += 1;
                if hops > j {
                    return fail(format!("kinematic tree has a cycle through joint {start}"));
                }
            }
        }
        if !self.is_topologically_ordered() {
            return fail("kinematic tree must list parents before children".into());
        }
        if let Some((f, _)) = self
            .faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&v| v >= n))
        {
            return fail(format!("face {f} indexes a vertex outside 0..{n}"));
        }
        if let Some(&m) = self.metric_joint_map.iter().find(|&&m| m >= j) {
            return fail(format!("metric joint map entry {m} outside the tree"));
        }
        Ok(())
    }

    fn is_topologically_ordered(&self) -> bool {
        self.parents
            .iter()
            .enumerate()
            .all(|(k, &p)| p == k && k == 0 || p < k)
    }

    /// Rest vertices displaced by the shape basis.
    pub fn shaped_vertices(&self, shape: &BodyShape) -> Vec<Vector3<f64>> {
        let beta = shape.coefficients();
        self.rest_vertices
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut d = Vector3::zeros();
                for (c, dc) in d.iter_mut().enumerate() {
                    let row = self.shape_basis.row(3 * i + c);
                    *dc = row.iter().zip(beta).map(|(b, x)| b * x).sum();
                }
                v + d
            })
            .collect()
    }
}

/// Posed surface.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl SkinnedMesh {
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| rotation * v + translation).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Skeleton joint positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Joints3D(pub Vec<Vector3<f64>>);

impl Joints3D {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Selects a subset of joints, e.g. the 14-joint evaluation skeleton.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }
}

/// 2D keypoints in pixels with per-joint visibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D {
    pub points: Vec<Vector2<f64>>,
    pub visibility: Vec<bool>,
}
