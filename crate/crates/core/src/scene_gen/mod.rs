//! Synthetic sequence generation: skinning, cloth, camera rig and annotations.

mod camera;
mod dataset;
mod raster;

pub use camera::{perspective_project, place_camera_rig, PerspectiveCamera};
pub use dataset::{export_dataset, import_dataset, DatasetManifest, ExportOptions, ManifestEntry, SCHEMA_VERSION};
pub use raster::{rasterize, rasterize_preview, Image, PreviewMode};

use crate::body_model::rotation::axis_angle_from_matrix;
use crate::body_model::{
    regress_joints, skin, BodyModelError, BodyPose, BodyShape, BodyTemplate, SHAPE_DIM,
};
use crate::cloth_sim::{body_colliders, build_garment, drape, step, ClothError, GarmentPattern, SimConfig};
use crate::pose_sequence::{prepend_leadin, PoseSequence, PoseSequenceError};
use crate::recover_net::{mean_phi, RecoveryVector};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("camera: {0}")]
    Camera(String),
    #[error("shape changes at frame {frame}; one avatar keeps one shape")]
    VaryingShape { frame: usize },
    #[error("frame {frame}: {message}")]
    Inconsistent { frame: usize, message: String },
    #[error(transparent)]
    Body(#[from] BodyModelError),
    #[error(transparent)]
    Cloth(#[from] ClothError),
    #[error(transparent)]
    Pose(#[from] PoseSequenceError),
    #[error("{file}:{line}: {message}")]
    Record { file: String, line: usize, message: String },
    #[error("dataset schema version {found}, expected {expected}")]
    Schema { found: u32, expected: u32 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SceneError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Viewpoint {
    E,
    W,
    S,
    N,
}

impl Viewpoint {
    pub const ALL: [Viewpoint; 4] = [Viewpoint::E, Viewpoint::W, Viewpoint::S, Viewpoint::N];

    pub fn name(self) -> &'static str {
        match self {
            Viewpoint::E => "E",
            Viewpoint::W => "W",
            Viewpoint::S => "S",
            Viewpoint::N => "N",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub viewpoints: Vec<Viewpoint>,
    /// (width, height) in pixels.
    pub resolution: [u32; 2],
    pub sensor_mm: f64,
    pub focal_mm: f64,
    /// Meters from the pelvis.
    pub camera_distance: f64,
    pub cloth: SimConfig,
    /// Rest-pose settling time before a garment follows the motion, seconds.
    pub garment_settle_seconds: f64,
    /// Frames blending from the rest pose into the first frame.
    pub garment_leadin_frames: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            viewpoints: Viewpoint::ALL.to_vec(),
            resolution: [250, 250],
            sensor_mm: 32.0,
            focal_mm: 180.0,
            // 1.7 m spans about 200 px at this distance with the default optics
            camera_distance: 12.0,
            cloth: SimConfig::default(),
            garment_settle_seconds: 1.0,
            garment_leadin_frames: 15,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.viewpoints.is_empty() {
            return Err(SceneError::Config("at least one viewpoint is required".into()));
        }
        let mut sorted = self.viewpoints.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.viewpoints.len() {
            return Err(SceneError::Config("viewpoints repeat".into()));
        }
        if self.resolution.contains(&0) {
            return Err(SceneError::Config("resolution must be positive".into()));
        }
        if !(self.sensor_mm > 0.0 && self.focal_mm > 0.0 && self.camera_distance > 0.0) {
            return Err(SceneError::Config("sensor, focal length and camera distance must be positive".into()));
        }
        if !(self.garment_settle_seconds >= 0.0) {
            return Err(SceneError::Config("garment_settle_seconds must be non-negative".into()));
        }
        self.cloth.validate()?;
        Ok(())
    }

    /// Relative light intensities in [0.3, 1.0], drawn from the seed.
    pub fn light_strengths(&self) -> [f64; 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        std::array::from_fn(|_| rng.gen_range(0.3..=1.0))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One rendered frame from one viewpoint. Geometry is in the camera frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedFrame {
    pub theta: Vec<f64>,
    pub beta: [f64; SHAPE_DIM],
    /// Evaluation joints, meters.
    pub joints3d: Vec<Vector3<f64>>,
    /// Pixels.
    pub keypoints2d: Vec<Vector2<f64>>,
    pub visibility: Vec<bool>,
    pub body_vertices: Vec<Vector3<f64>>,
    pub cloth_vertices: Option<Vec<Vector3<f64>>>,
    pub camera: PerspectiveCamera,
}

/// Tolerance of the keypoint/joint projection check, pixels.
pub const PROJECTION_TOLERANCE: f64 = 1e-6;

impl AnnotatedFrame {
    /// Checks that keypoints are the projection of the joints and visibility
    /// is the in-frame test.
    pub fn check_projection(&self) -> std::result::Result<(), String> {
        if self.keypoints2d.len() != self.joints3d.len() || self.visibility.len() != self.joints3d.len() {
            return Err("joint, keypoint and visibility counts differ".into());
        }
        let k = self.camera.project_camera_points(&self.joints3d).map_err(|e| e.to_string())?;
        for (q, (a, b)) in k.points.iter().zip(&self.keypoints2d).enumerate() {
            if (a - b).norm() > PROJECTION_TOLERANCE {
                return Err(format!("keypoint {q} is {} px from its joint's projection", (a - b).norm()));
            }
        }
        if k.visibility != self.visibility {
            return Err("visibility disagrees with the in-frame test".into());
        }
        Ok(())
    }

    /// Tracked pelvis in pixels.
    pub fn pelvis_pixel(&self) -> Result<Vector2<f64>> {
        let c = self.camera.to_camera(&self.camera.look_at);
        Ok(self.camera.project_camera_points(&[c])?.points[0])
    }

    /// Recovery vector reproducing this frame: pose and shape from the
    /// annotation, camera rotation as global rotation, weak-perspective scale
    /// and translation linearized at the pelvis.
    pub fn ground_truth_phi(&self) -> RecoveryVector {
        let r = self.camera.rotation();
        let depth = (self.camera.look_at - self.camera.position).norm();
        let scale = self.camera.focal_px() / depth;
        let pelvis = r * self.camera.look_at;
        let translation = self.camera.principal_point() - Vector2::new(pelvis.x, pelvis.y) * scale;
        RecoveryVector {
            theta: self.theta.clone(),
            beta: self.beta,
            global_rotation: axis_angle_from_matrix(&r),
            translation,
            scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceAnnotation {
    pub id: String,
    pub viewpoint: Viewpoint,
    pub fps: f64,
    pub seed: u64,
    pub config_hash: String,
    pub light_strengths: [f64; 4],
    pub frames: Vec<AnnotatedFrame>,
}

impl SequenceAnnotation {
    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or_else(|| SceneError::Config(format!("sequence {} is empty", self.id)))?;
        for (f, frame) in self.frames.iter().enumerate() {
            if frame.beta != first.beta {
                return Err(SceneError::VaryingShape { frame: f });
            }
            frame
                .check_projection()
                .map_err(|message| SceneError::Inconsistent { frame: f, message })?;
        }
        Ok(())
    }
}

/// World-space geometry of one animation frame, shared by all viewpoints.
struct WorldFrame {
    theta: Vec<f64>,
    body: Vec<Vector3<f64>>,
    joints: Vec<Vector3<f64>>,
    pelvis: Vector3<f64>,
    cloth: Option<Vec<Vector3<f64>>>,
}

fn shared_shape(poses: &PoseSequence) -> Result<BodyShape> {
    let shape = poses.frames()[0].shape.clone();
    if let Some(f) = poses.frames().iter().position(|fr| fr.shape != shape) {
        return Err(SceneError::VaryingShape { frame: f });
    }
    Ok(shape)
}

fn simulate(poses: &PoseSequence, template: &BodyTemplate, garment: Option<&GarmentPattern>, cfg: &SceneConfig) -> Result<Vec<WorldFrame>> {
    let shape = shared_shape(poses)?;
    let joint_body = |pose: &BodyPose| -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vector3<f64>)> {
        let mesh = skin(template, &shape, pose)?;
        let joints = regress_joints(&mesh, template)?;
        let pelvis = joints.0[0];
        Ok((mesh.vertices, joints.select(&template.metric_joint_map).0, pelvis))
    };

    let mut cloth_track: Vec<Option<Vec<Vector3<f64>>>> = vec![None; poses.len()];
    if let Some(pattern) = garment {
        let mut cloth = build_garment(pattern)?;
        let rest_pose = BodyPose::zero(template.joint_count());
        let rest_body = skin(template, &shape, &rest_pose)?;
        cloth.attach_pins(&rest_body.vertices);
        let colliders = body_colliders(template, &rest_pose, &shape)?;
        if cfg.garment_settle_seconds > 0.0 {
            drape(&mut cloth, &colliders, &cfg.cloth, cfg.garment_settle_seconds)?;
        }
        let lead = cfg.garment_leadin_frames;
        let driven = if lead > 0 { prepend_leadin(poses, &rest_pose, lead)? } else { poses.clone() };
        let skip = driven.len() - poses.len();
        let substeps = ((1.0 / (poses.fps() * cfg.cloth.timestep)).round() as usize).max(1);
        for (f, frame) in driven.frames().iter().enumerate() {
            let body = skin(template, &shape, &frame.pose)?;
            cloth.track_body(&body.vertices);
            let colliders = body_colliders(template, &frame.pose, &shape)?;
            for _ in 0..substeps {
                step(&mut cloth, &colliders, &cfg.cloth)?;
            }
            if f >= skip {
                cloth_track[f - skip] = Some(cloth.positions.clone());
            }
        }
    }

    poses
        .frames()
        .par_iter()
        .zip(cloth_track)
        .map(|(frame, cloth)| {
            let (body, joints, pelvis) = joint_body(&frame.pose)?;
            Ok(WorldFrame {
                theta: frame.pose.theta(),
                body,
                joints,
                pelvis,
                cloth,
            })
        })
        .collect()
}

/// Renders annotations for every configured viewpoint. Deterministic in
/// (inputs, config).
pub fn generate_sequence(
    id: &str,
    poses: &PoseSequence,
    template: &BodyTemplate,
    garment: Option<&GarmentPattern>,
    cfg: &SceneConfig,
) -> Result<Vec<SequenceAnnotation>> {
    cfg.validate()?;
    if poses.joint_count() != template.joint_count() {
        return Err(SceneError::Body(BodyModelError::Dimension {
            what: "pose joint count",
            expected: template.joint_count(),
            found: poses.joint_count(),
        }));
    }
    let shape = shared_shape(poses)?;
    let world = simulate(poses, template, garment, cfg)?;
    let track: Vec<Vector3<f64>> = world.iter().map(|w| w.pelvis).collect();
    let rig = place_camera_rig(&track, cfg)?;
    let (hash, lights) = (cfg.hash(), cfg.light_strengths());
    cfg.viewpoints
        .par_iter()
        .zip(rig)
        .map(|(&view, cameras)| {
            let frames = world
                .iter()
                .zip(cameras)
                .map(|(w, camera)| {
                    let to_cam = |pts: &[Vector3<f64>]| pts.iter().map(|p| camera.to_camera(p)).collect::<Vec<_>>();
                    let joints3d = to_cam(&w.joints);
                    let kp = camera.project_camera_points(&joints3d)?;
                    Ok(AnnotatedFrame {
                        theta: w.theta.clone(),
                        beta: *shape.coefficients(),
                        keypoints2d: kp.points,
                        visibility: kp.visibility,
                        joints3d,
                        body_vertices: to_cam(&w.body),
                        cloth_vertices: w.cloth.as_deref().map(to_cam),
                        camera,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SequenceAnnotation {
                id: id.to_string(),
                viewpoint: view,
                fps: poses.fps(),
                seed: cfg.seed,
                config_hash: hash.clone(),
                light_strengths: lights,
                frames,
            })
        })
        .collect()
}

/// Drives a new scene with recovered motion: θ per frame, β averaged over the clip.
pub fn transfer(
    id: &str,
    recovered: &[RecoveryVector],
    fps: f64,
    template: &BodyTemplate,
    garment: Option<&GarmentPattern>,
    cfg: &SceneConfig,
) -> Result<Vec<SequenceAnnotation>> {
    for phi in recovered {
        phi.validate().map_err(|e| SceneError::Config(e.to_string()))?;
    }
    let mean = mean_phi(recovered).map_err(|e| SceneError::Config(e.to_string()))?;
    let poses = recovered.iter().map(|phi| phi.pose()).collect();
    let seq = PoseSequence::from_poses(poses, &mean.shape(), fps)?;
    generate_sequence(id, &seq, template, garment, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{procedural_template, Detail};
    use crate::metrics::pa_mpjpe;
    use crate::pose_sequence::synthetic_sequence;

    fn clip(frames: usize) -> PoseSequence {
        synthetic_sequence(7, frames, 2, &BodyShape::unit(1), 30.0).unwrap()
    }

    #[test]
    fn static_tpose_gives_identical_frames() {
        let t = procedural_template(Detail::Low);
        let seq = PoseSequence::from_poses(vec![BodyPose::zero(24); 10], &BodyShape::default(), 30.0).unwrap();
        let out = generate_sequence("static", &seq, &t, None, &SceneConfig::default()).unwrap();
        assert_eq!(out.len(), 4);
        for s in &out {
            assert_eq!(s.frames.len(), 10);
            assert!(s.frames.iter().all(|f| *f == s.frames[0]));
        }
    }

    #[test]
    fn frames_are_consistent_and_centered() {
        let t = procedural_template(Detail::Low);
        let out = generate_sequence("c", &clip(6), &t, None, &SceneConfig::default()).unwrap();
        for s in &out {
            s.validate().unwrap();
            for f in &s.frames {
                assert!((f.pelvis_pixel().unwrap() - Vector2::new(125.0, 125.0)).norm() < 0.5);
                // the whole body stays in frame at the default distance
                assert!(f.visibility.iter().all(|v| *v));
            }
        }
    }

    #[test]
    fn ground_truth_phi_approximates_keypoints() {
        let t = procedural_template(Detail::Low);
        let out = generate_sequence("c", &clip(3), &t, None, &SceneConfig::default()).unwrap();
        for s in &out {
            for f in &s.frames {
                let phi = f.ground_truth_phi();
                let mesh = skin(&t, &phi.shape(), &phi.pose()).unwrap();
                let joints = regress_joints(&mesh, &t).unwrap().select(&t.metric_joint_map);
                let weak = phi.project(&joints.0);
                for (a, b) in weak.iter().zip(&f.keypoints2d) {
                    // perspective versus weak perspective at 12 m
                    assert!((a - b).norm() < 6.0, "{a} vs {b}");
                }
                // rotating the model joints reproduces the camera-frame joints up to translation
                let r = crate::body_model::rodrigues(&phi.global_rotation);
                let rel = |v: &[Vector3<f64>]| v.iter().map(|p| p - v[0]).collect::<Vec<_>>();
                let ours: Vec<_> = joints.0.iter().map(|p| r * p).collect();
                for (a, b) in rel(&ours).iter().zip(rel(&f.joints3d).iter()) {
                    assert!((a - b).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn seed_changes_lights_only() {
        let t = procedural_template(Detail::Low);
        let a = generate_sequence("c", &clip(3), &t, None, &SceneConfig::default()).unwrap();
        let cfg = SceneConfig {
            seed: 99,
            ..SceneConfig::default()
        };
        let b = generate_sequence("c", &clip(3), &t, None, &cfg).unwrap();
        assert_ne!(a[0].light_strengths, b[0].light_strengths);
        assert!(b[0].light_strengths.iter().all(|l| (0.3..=1.0).contains(l)));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.frames, y.frames);
        }
    }

    #[test]
    fn varying_shape_is_rejected() {
        let t = procedural_template(Detail::Low);
        let mut frames = clip(3).frames().to_vec();
        frames[2].shape = BodyShape::unit(0);
        let seq = PoseSequence::new(frames, 30.0).unwrap();
        assert!(matches!(
            generate_sequence("c", &seq, &t, None, &SceneConfig::default()),
            Err(SceneError::VaryingShape { frame: 2 })
        ));
    }

    #[test]
    fn transfer_round_trip() {
        let t = procedural_template(Detail::Low);
        let cfg = SceneConfig {
            viewpoints: vec![Viewpoint::S],
            ..SceneConfig::default()
        };
        let orig = generate_sequence("c", &clip(4), &t, None, &cfg).unwrap();
        let phis: Vec<_> = orig[0].frames.iter().map(|f| f.ground_truth_phi()).collect();
        let moved = transfer("t", &phis, 30.0, &t, None, &cfg).unwrap();
        let j = |s: &SequenceAnnotation| s.frames.iter().map(|f| f.joints3d.clone()).collect::<Vec<_>>();
        assert!(pa_mpjpe(&j(&moved[0]), &j(&orig[0])).unwrap() < 1e-6);
    }

    #[test]
    fn garment_changes_cloth_not_joints() {
        let t = procedural_template(Detail::Low);
        let cfg = SceneConfig {
            viewpoints: vec![Viewpoint::S],
            garment_settle_seconds: 0.2,
            garment_leadin_frames: 3,
            ..SceneConfig::default()
        };
        let seq = clip(3);
        let skirt = generate_sequence("c", &seq, &t, Some(&GarmentPattern::skirt()), &cfg).unwrap();
        let cape = generate_sequence("c", &seq, &t, Some(&GarmentPattern::cape()), &cfg).unwrap();
        let bare = generate_sequence("c", &seq, &t, None, &cfg).unwrap();
        for ((a, b), c) in skirt[0].frames.iter().zip(&cape[0].frames).zip(&bare[0].frames) {
            assert_eq!(a.joints3d, c.joints3d);
            assert_eq!(b.joints3d, c.joints3d);
            assert_ne!(a.cloth_vertices, b.cloth_vertices);
            assert!(c.cloth_vertices.is_none());
        }
    }

    #[test]
    fn preview_covers_keypoints() {
        let t = procedural_template(Detail::Low);
        let out = generate_sequence("c", &clip(2), &t, None, &SceneConfig::default()).unwrap();
        let f = &out[0].frames[0];
        let img = rasterize_preview(f, &t.faces, &[], PreviewMode::Silhouette, [250, 250]);
        let lit: Vec<(usize, usize)> = (0..250)
            .flat_map(|y| (0..250).map(move |x| (x, y)))
            .filter(|&(x, y)| img.get(x, y) > 0.5)
            .collect();
        assert!(!lit.is_empty());
        let (x0, x1) = (lit.iter().map(|p| p.0).min().unwrap(), lit.iter().map(|p| p.0).max().unwrap());
        let (y0, y1) = (lit.iter().map(|p| p.1).min().unwrap(), lit.iter().map(|p| p.1).max().unwrap());
        for k in &f.keypoints2d {
            assert!(k.x >= x0 as f64 - 1.0 && k.x <= x1 as f64 + 2.0);
            assert!(k.y >= y0 as f64 - 1.0 && k.y <= y1 as f64 + 2.0);
        }
        let depth = rasterize_preview(f, &t.faces, &[], PreviewMode::Depth, [250, 250]);
        let d = depth.get(125, 125);
        assert!((d - 12.0).abs() / 12.0 < 0.02, "{d}");
    }
}
