use super::rotation::rodrigues;
use super::{BodyModelError, BodyPose, BodyShape, BodyTemplate, Joints3D, Result, SkinnedMesh};
use nalgebra::{Matrix3, Vector3};

/// Rigid map `x ↦ rotation·x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl JointTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }
}

/// Joint locations of the shaped rest mesh.
pub fn rest_joints(template: &BodyTemplate, shape: &BodyShape) -> Vec<Vector3<f64>> {
    let shaped = template.shaped_vertices(shape);
    regress(&template.joint_regressor, &shaped)
}

fn regress(regressor: &nalgebra::DMatrix<f64>, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    regressor
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(vertices)
                .filter(|(w, _)| **w != 0.0)
                .fold(Vector3::zeros(), |acc, (w, v)| acc + v * *w)
        })
        .collect()
}

/// Rest-pose-factored global transforms `G_k = FK_k · FK_k(rest)⁻¹`.
///
/// `G_j = G_parent ∘ Rot(θ_j) about J_j`, so the all-zero pose yields exact
/// identities.
pub(crate) fn relative_transforms(
    parents: &[usize],
    joints: &[Vector3<f64>],
    pose: &BodyPose,
) -> Result<Vec<JointTransform>> {
    if pose.joint_count() != parents.len() {
        return Err(BodyModelError::Dimension {
            what: "pose joint count",
            expected: parents.len(),
            found: pose.joint_count(),
        });
    }
    let mut out: Vec<JointTransform> = Vec::with_capacity(parents.len());
    for (j, &p) in parents.iter().enumerate() {
        let local = rodrigues(pose.rotation(j));
        let pivot = joints[j] - local * joints[j];
        let t = if p == j {
            JointTransform {
                rotation: local,
                translation: pivot,
            }
        } else {
            let parent = out[p];
            JointTransform {
                rotation: parent.rotation * local,
                translation: parent.rotation * pivot + parent.translation,
            }
        };
        out.push(t);
    }
    Ok(out)
}

/// Forward kinematics of the mean-shape skeleton.
pub fn forward_kinematics(template: &BodyTemplate, pose: &BodyPose) -> Result<Vec<JointTransform>> {
    let joints = rest_joints(template, &BodyShape::default());
    relative_transforms(&template.parents, &joints, pose)
}

/// Skeleton joint positions of the shaped body in the given pose.
pub fn posed_joints(template: &BodyTemplate, shape: &BodyShape, pose: &BodyPose) -> Result<Vec<Vector3<f64>>> {
    let joints = rest_joints(template, shape);
    let transforms = relative_transforms(&template.parents, &joints, pose)?;
    Ok(joints.iter().zip(&transforms).map(|(j, g)| g.apply(j)).collect())
}

/// Linear blend skinning of the shaped rest mesh.
pub fn skin(template: &BodyTemplate, shape: &BodyShape, pose: &BodyPose) -> Result<SkinnedMesh> {
    let shaped = template.shaped_vertices(shape);
    let joints = regress(&template.joint_regressor, &shaped);
    let transforms = relative_transforms(&template.parents, &joints, pose)?;
    let identity = Matrix3::identity();
    let mut vertices = Vec::with_capacity(shaped.len());
    for (i, v) in shaped.iter().enumerate() {
        // Blend displacements rather than positions so identity transforms
        // reproduce v bit-for-bit.
        let mut disp = Vector3::zeros();
        for (k, w) in template.skinning_weights.row(i).iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let g = &transforms[k];
            disp += ((g.rotation - identity) * v + g.translation) * *w;
        }
        let out = v + disp;
        if !out.iter().all(|c| c.is_finite()) {
            return Err(BodyModelError::NonFinite { vertex: i });
        }
        vertices.push(out);
    }
    Ok(SkinnedMesh {
        vertices,
        faces: template.faces.clone(),
    })
}

/// Skeleton joints regressed from a mesh: `J = regressor · V`.
pub fn regress_joints(mesh: &SkinnedMesh, template: &BodyTemplate) -> Result<Joints3D> {
    if mesh.vertices.len() != template.vertex_count() {
        return Err(BodyModelError::Dimension {
            what: "mesh vertex count",
            expected: template.vertex_count(),
            found: mesh.vertices.len(),
        });
    }
    Ok(Joints3D(regress(&template.joint_regressor, &mesh.vertices)))
}
