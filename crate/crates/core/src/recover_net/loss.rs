use super::body::JointModel;
use super::phi::{BETA_OFFSET, ROTATION_OFFSET, SCALE_OFFSET, TRANSLATION_OFFSET};
use super::{RecoverError, RecoveryVector, Result, PHI_DIM};
use crate::body_model::rotation::rodrigues_backward;
use crate::body_model::{rodrigues, BodyTemplate, METRIC_JOINT_COUNT, SHAPE_DIM, THETA_DIM};
use crate::scene_gen::AnnotatedFrame;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Metric-joint slots of the two hips; their midpoint is the 3D loss origin.
const HIPS: [usize; 2] = [2, 3];

/// Supervision for one frame, in the camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTarget {
    pub keypoints: Vec<Vector2<f64>>,
    pub visibility: Vec<bool>,
    pub joints3d: Vec<Vector3<f64>>,
    pub theta: Vec<f64>,
    pub beta: [f64; SHAPE_DIM],
}

impl FrameTarget {
    pub fn from_frame(frame: &AnnotatedFrame) -> Result<Self> {
        let n = METRIC_JOINT_COUNT;
        if frame.joints3d.len() != n || frame.keypoints2d.len() != n || frame.visibility.len() != n {
            return Err(RecoverError::Shape(format!(
                "frame has {} joints, {} keypoints and {} visibility flags, expected {n} each",
                frame.joints3d.len(),
                frame.keypoints2d.len(),
                frame.visibility.len()
            )));
        }
        if frame.theta.len() != THETA_DIM {
            return Err(RecoverError::Shape(format!("frame theta has {} values", frame.theta.len())));
        }
        Ok(Self {
            keypoints: frame.keypoints2d.clone(),
            visibility: frame.visibility.clone(),
            joints3d: frame.joints3d.clone(),
            theta: frame.theta.clone(),
            beta: frame.beta,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub proj: f64,
    pub joint3d: f64,
    pub smpl: f64,
    pub shape: f64,
}

impl LossTerms {
    pub fn add(&mut self, other: &LossTerms) {
        self.proj += other.proj;
        self.joint3d += other.joint3d;
        self.smpl += other.smpl;
        self.shape += other.shape;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameLoss {
    pub total: f64,
    pub terms: LossTerms,
}

fn l1_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn hip_centered(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mid = (points[HIPS[0]] + points[HIPS[1]]) * 0.5;
    points.iter().map(|p| p - mid).collect()
}

/// Loss of one frame at raw regression coordinates; optionally the gradient
/// with respect to those coordinates.
pub(crate) fn frame_loss_raw(
    model: &JointModel,
    raw: &[f64],
    target: &FrameTarget,
    delta: bool,
    want_grad: bool,
) -> (FrameLoss, Option<Vec<f64>>) {
    let theta = &raw[..THETA_DIM];
    let beta: [f64; SHAPE_DIM] = std::array::from_fn(|k| raw[BETA_OFFSET + k]);
    let omega = Vector3::from_column_slice(&raw[ROTATION_OFFSET..TRANSLATION_OFFSET]);
    let t = Vector2::from_column_slice(&raw[TRANSLATION_OFFSET..SCALE_OFFSET]);
    let s = raw[SCALE_OFFSET].exp();

    let tape = model.forward(theta, &beta);
    let r = rodrigues(&omega);
    let x: Vec<Vector3<f64>> = tape.joints.iter().map(|j| r * j).collect();
    let mut g_x = vec![Vector3::zeros(); x.len()];
    let mut g_t = Vector2::zeros();
    let mut g_s = 0.0;
    let mut terms = LossTerms::default();

    for (q, p) in x.iter().enumerate() {
        if !target.visibility[q] {
            continue;
        }
        let d = Vector2::new(p.x, p.y) * s + t - target.keypoints[q];
        terms.proj += d.x.abs() + d.y.abs();
        let g = d.map(l1_sign);
        g_t += g;
        g_s += g.x * p.x + g.y * p.y;
        g_x[q].x += s * g.x;
        g_x[q].y += s * g.y;
    }

    let mut g_raw = vec![0.0; PHI_DIM];
    if delta {
        let ours = hip_centered(&x);
        let theirs = hip_centered(&target.joints3d);
        let mut sum = Vector3::zeros();
        for (q, (a, b)) in ours.iter().zip(&theirs).enumerate() {
            let d = a - b;
            terms.joint3d += d.norm_squared();
            g_x[q] += d * 2.0;
            sum += d;
        }
        for h in HIPS {
            g_x[h] -= sum;
        }
        for k in 0..THETA_DIM {
            let d = theta[k] - target.theta[k];
            terms.smpl += d * d;
            g_raw[k] += 2.0 * d;
        }
        for k in 0..SHAPE_DIM {
            let d = beta[k] - target.beta[k];
            terms.smpl += d * d;
            g_raw[BETA_OFFSET + k] += 2.0 * d;
        }
    }
    let total = terms.proj + if delta { terms.joint3d + terms.smpl } else { 0.0 };
    let loss = FrameLoss { total, terms };
    if !want_grad {
        return (loss, None);
    }

    let mut g_r = Matrix3::zeros();
    let g_joints: Vec<Vector3<f64>> = g_x
        .iter()
        .zip(&tape.joints)
        .map(|(g, j)| {
            g_r += g * j.transpose();
            r.transpose() * g
        })
        .collect();
    let (g_theta, g_beta) = model.backward(&tape, &g_joints);
    for (a, b) in g_raw.iter_mut().zip(&g_theta) {
        *a += b;
    }
    for k in 0..SHAPE_DIM {
        g_raw[BETA_OFFSET + k] += g_beta[k];
    }
    let g_omega = rodrigues_backward(&omega, &g_r);
    g_raw[ROTATION_OFFSET..TRANSLATION_OFFSET].copy_from_slice(g_omega.as_slice());
    g_raw[TRANSLATION_OFFSET] = g_t.x;
    g_raw[TRANSLATION_OFFSET + 1] = g_t.y;
    g_raw[SCALE_OFFSET] = g_s * s;
    (loss, Some(g_raw))
}

/// Loss of a clip at raw coordinates: `Σ_t λ·frame_t + Σ_t ‖β_{t+1} − β_t‖²`,
/// with per-frame gradients when requested.
pub(crate) fn clip_loss_raw(
    model: &JointModel,
    raws: &[Vec<f64>],
    targets: &[FrameTarget],
    lambda: f64,
    delta: bool,
    want_grad: bool,
) -> (f64, LossTerms, Vec<Vec<f64>>) {
    let mut total = 0.0;
    let mut terms = LossTerms::default();
    let mut grads = Vec::new();
    for (raw, target) in raws.iter().zip(targets) {
        let (l, g) = frame_loss_raw(model, raw, target, delta, want_grad);
        total += lambda * l.total;
        let scaled = LossTerms {
            proj: lambda * l.terms.proj,
            joint3d: lambda * l.terms.joint3d,
            smpl: lambda * l.terms.smpl,
            shape: 0.0,
        };
        terms.add(&scaled);
        if let Some(mut g) = g {
            g.iter_mut().for_each(|v| *v *= lambda);
            grads.push(g);
        }
    }
    for t in 1..raws.len() {
        for k in BETA_OFFSET..BETA_OFFSET + SHAPE_DIM {
            let d = raws[t][k] - raws[t - 1][k];
            terms.shape += d * d;
            if want_grad {
                grads[t][k] += 2.0 * d;
                grads[t - 1][k] -= 2.0 * d;
            }
        }
    }
    total += terms.shape;
    (total, terms, grads)
}

/// `L_proj + δ·(L_3Djoint + L_smpl)` for one frame. Projection uses the
/// weak-perspective camera in `phi`; the 3D term compares hip-centred joints.
pub fn frame_loss(phi: &RecoveryVector, frame: &AnnotatedFrame, template: &BodyTemplate, delta: bool) -> Result<FrameLoss> {
    phi.validate()?;
    let target = FrameTarget::from_frame(frame)?;
    if template.metric_joint_map.len() != target.joints3d.len() {
        return Err(RecoverError::Shape("template metric joints differ from the annotation".into()));
    }
    Ok(frame_loss_raw(&JointModel::new(template), &phi.to_raw(), &target, delta, false).0)
}

/// Clip objective with λ-weighted frame terms plus the shape smoothness term.
pub fn clip_loss(
    phis: &[RecoveryVector],
    frames: &[AnnotatedFrame],
    template: &BodyTemplate,
    lambda: f64,
    delta: bool,
) -> Result<(f64, LossTerms)> {
    if phis.is_empty() || phis.len() != frames.len() {
        return Err(RecoverError::Shape(format!("{} predictions for {} frames", phis.len(), frames.len())));
    }
    let targets = frames.iter().map(FrameTarget::from_frame).collect::<Result<Vec<_>>>()?;
    let raws = phis
        .iter()
        .map(|p| p.validate().map(|_| p.to_raw()))
        .collect::<Result<Vec<_>>>()?;
    let (total, terms, _) = clip_loss_raw(&JointModel::new(template), &raws, &targets, lambda, delta, false);
    Ok((total, terms))
}
