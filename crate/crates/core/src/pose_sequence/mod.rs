//! Pose sequences, pose distances, contrast-pair selection and linear
//! axis-angle interpolation.

mod file;
mod synthetic;

pub use file::{parse_sequence, read_sequence, sequence_to_string, write_sequence};
pub use synthetic::{random_pose, synthetic_sequence};

use crate::body_model::{BodyModelError, BodyPose, BodyShape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoseSequenceError {
    #[error("joint count mismatch: {left} vs {right}")]
    JointMismatch { left: usize, right: usize },
    #[error("interpolation needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("pose sequence is empty")]
    Empty,
    #[error("fps must be positive, got {0}")]
    InvalidFps(f64),
    #[error("distance matrix is empty")]
    EmptyMatrix,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Body(#[from] BodyModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PoseSequenceError>;

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PoseFrame {
    pub pose: BodyPose,
    pub shape: BodyShape,
}

/// Ordered, non-empty list of frames with a frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    frames: Vec<PoseFrame>,
    fps: f64,
}

impl PoseSequence {
    pub fn new(frames: Vec<PoseFrame>, fps: f64) -> Result<Self> {
        let first = frames.first().ok_or(PoseSequenceError::Empty)?;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(PoseSequenceError::InvalidFps(fps));
        }
        let jc = first.pose.joint_count();
        if let Some(f) = frames.iter().find(|f| f.pose.joint_count() != jc) {
            return Err(PoseSequenceError::JointMismatch {
                left: jc,
                right: f.pose.joint_count(),
            });
        }
        Ok(Self { frames, fps })
    }

    /// All frames share one shape.
    pub fn from_poses(poses: Vec<BodyPose>, shape: &BodyShape, fps: f64) -> Result<Self> {
        let frames = poses
            .into_iter()
            .map(|pose| PoseFrame {
                pose,
                shape: shape.clone(),
            })
            .collect();
        Self::new(frames, fps)
    }

    pub fn frames(&self) -> &[PoseFrame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].pose.joint_count()
    }

    pub fn poses(&self) -> impl Iterator<Item = &BodyPose> {
        self.frames.iter().map(|f| &f.pose)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceOptions {
    /// Whether the root rotation participates in the distance.
    pub include_root: bool,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self { include_root: true }
    }
}

/// Euclidean distance between flattened θ vectors, root included.
pub fn pose_distance(a: &BodyPose, b: &BodyPose) -> Result<f64> {
    pose_distance_with(a, b, &DistanceOptions::default())
}

pub fn pose_distance_with(a: &BodyPose, b: &BodyPose, opts: &DistanceOptions) -> Result<f64> {
    if a.joint_count() != b.joint_count() {
        return Err(PoseSequenceError::JointMismatch {
            left: a.joint_count(),
            right: b.joint_count(),
        });
    }
    let first = if opts.include_root { 0 } else { 1 };
    let sq: f64 = (first..a.joint_count())
        .map(|j| (a.rotation(j) - b.rotation(j)).norm_squared())
        .sum();
    Ok(sq.sqrt())
}

/// Row-major m × n matrix of pairwise pose distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged distance matrix");
        assert!(
            rows.iter().flatten().all(|v| v.is_finite() && *v >= 0.0),
            "distance entries must be finite and nonnegative"
        );
        Self {
            rows: r,
            cols: c,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }
}

pub fn distance_matrix(x: &PoseSequence, y: &PoseSequence) -> Result<DistanceMatrix> {
    distance_matrix_with(x, y, &DistanceOptions::default())
}

pub fn distance_matrix_with(x: &PoseSequence, y: &PoseSequence, opts: &DistanceOptions) -> Result<DistanceMatrix> {
    if x.joint_count() != y.joint_count() {
        return Err(PoseSequenceError::JointMismatch {
            left: x.joint_count(),
            right: y.joint_count(),
        });
    }
    let rows: Vec<Vec<f64>> = x
        .frames
        .par_iter()
        .map(|a| {
            y.frames
                .iter()
                .map(|b| pose_distance_with(&a.pose, &b.pose, opts))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DistanceMatrix {
        rows: x.len(),
        cols: y.len(),
        values: rows.into_iter().flatten().collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastPair {
    pub i: usize,
    pub j: usize,
    pub dist: f64,
}

/// Maximal entry of `d`; ties go to the smallest `i`, then the smallest `j`.
pub fn select_contrast_pair(d: &DistanceMatrix) -> Result<ContrastPair> {
    if d.values.is_empty() {
        return Err(PoseSequenceError::EmptyMatrix);
    }
    let mut best = ContrastPair {
        i: 0,
        j: 0,
        dist: d.values[0],
    };
    for (k, &v) in d.values.iter().enumerate() {
        if v > best.dist {
            best = ContrastPair {
                i: k / d.cols,
                j: k % d.cols,
                dist: v,
            };
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpConfig {
    pub radians_per_frame: f64,
    pub min_frames: usize,
    pub max_frames: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        Self {
            radians_per_frame: 0.05,
            min_frames: 10,
            max_frames: 300,
        }
    }
}

/// Frame count for an interpolated segment spanning pose distance `dist`.
pub fn frames_for_distance(dist: f64, cfg: &InterpConfig) -> usize {
    let raw = (dist / cfg.radians_per_frame).ceil();
    let raw = if raw.is_finite() { raw.max(0.0) as usize } else { cfg.max_frames };
    raw.clamp(cfg.min_frames, cfg.max_frames)
}

/// `k` poses linearly interpolated on raw axis-angle coordinates; the
/// endpoints are exact copies of `a` and `b`.
pub fn interpolate(a: &BodyPose, b: &BodyPose, k: usize) -> Result<Vec<BodyPose>> {
    if k < 2 {
        return Err(PoseSequenceError::TooFewFrames(k));
    }
    if a.joint_count() != b.joint_count() {
        return Err(PoseSequenceError::JointMismatch {
            left: a.joint_count(),
            right: b.joint_count(),
        });
    }
    let ta = a.theta();
    let tb = b.theta();
    let mut out = Vec::with_capacity(k);
    out.push(a.clone());
    for i in 1..k - 1 {
        let t = i as f64 / (k - 1) as f64;
        let theta: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| x + t * (y - x)).collect();
        out.push(BodyPose::from_theta(&theta)?);
    }
    out.push(b.clone());
    Ok(out)
}

/// Novel sequence between the most contrasting frames of `x` and `y`,
/// keeping the shape of the chosen `x` frame.
pub fn contrast_sequence(x: &PoseSequence, y: &PoseSequence, cfg: &InterpConfig) -> Result<PoseSequence> {
    let d = distance_matrix(x, y)?;
    let pair = select_contrast_pair(&d)?;
    let k = frames_for_distance(pair.dist, cfg).max(2);
    let start = &x.frames[pair.i];
    let poses = interpolate(&start.pose, &y.frames[pair.j].pose, k)?;
    PoseSequence::from_poses(poses, &start.shape, x.fps)
}

/// Prefixes `seq` with `n` frames moving from `start` to its first pose.
/// The first frame of `seq` is not duplicated, so the result has
/// `len + n − 1` frames for `n ≥ 2`.
pub fn prepend_leadin(seq: &PoseSequence, start: &BodyPose, n: usize) -> Result<PoseSequence> {
    if n == 0 {
        return Ok(seq.clone());
    }
    let first = &seq.frames[0];
    let lead = if n == 1 {
        vec![start.clone()]
    } else {
        let mut poses = interpolate(start, &first.pose, n)?;
        poses.pop();
        poses
    };
    let mut frames: Vec<PoseFrame> = lead
        .into_iter()
        .map(|pose| PoseFrame {
            pose,
            shape: first.shape.clone(),
        })
        .collect();
    frames.extend(seq.frames.iter().cloned());
    PoseSequence::new(frames, seq.fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng, joints: usize) -> BodyPose {
        let theta: Vec<f64> = (0..3 * joints).map(|_| rng.gen_range(-1.0..1.0)).collect();
        BodyPose::from_theta(&theta).unwrap()
    }

    fn random_seq(rng: &mut impl Rng, len: usize) -> PoseSequence {
        let poses = (0..len).map(|_| random_pose(rng, 24)).collect();
        PoseSequence::from_poses(poses, &BodyShape::default(), DEFAULT_FPS).unwrap()
    }

    #[test]
    fn distance_basics() {
        let a = BodyPose::zero(24);
        assert_eq!(pose_distance(&a, &a).unwrap(), 0.0);
        let b = a.with_joint_rotation(5, Vector3::new(0.3, 0.0, 0.0));
        assert_eq!(pose_distance(&a, &b).unwrap(), 0.3);
        assert!(pose_distance(&a, &BodyPose::zero(3)).is_err());
    }

    #[test]
    fn distance_matches_flatten_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_pose(&mut rng, 24);
            let b = random_pose(&mut rng, 24);
            let oracle = a.theta().iter().zip(b.theta()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!((pose_distance(&a, &b).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn root_exclusion() {
        let a = BodyPose::zero(24);
        let b = a.with_root_rotation(Vector3::new(0.0, 1.0, 0.0));
        let opts = DistanceOptions { include_root: false };
        assert_eq!(pose_distance_with(&a, &b, &opts).unwrap(), 0.0);
        assert_eq!(pose_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn matrix_diagonal_and_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_seq(&mut rng, 6);
        let y = random_seq(&mut rng, 4);
        let dxx = distance_matrix(&x, &x).unwrap();
        assert!((0..6).all(|i| dxx.get(i, i) == 0.0));
        assert_eq!(distance_matrix(&x, &y).unwrap(), distance_matrix(&y, &x).unwrap().transpose());
    }

    #[test]
    fn matrix_two_by_two_by_hand() {
        let z = BodyPose::zero(2);
        let p = |v: [f64; 3]| z.with_joint_rotation(1, Vector3::from(v));
        let x = PoseSequence::from_poses(vec![p([0.0; 3]), p([0.3, 0.4, 0.0])], &BodyShape::default(), 30.0).unwrap();
        let y = PoseSequence::from_poses(vec![p([0.0, 0.0, 1.0]), p([0.6, 0.8, 0.0])], &BodyShape::default(), 30.0)
            .unwrap();
        let d = distance_matrix(&x, &y).unwrap();
        // |(0,0,-1)| = 1, |(-0.6,-0.8,0)| = 1, |(0.3,0.4,-1)| = sqrt(1.25), |(-0.3,-0.4,0)| = 0.5
        assert!((d.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((d.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((d.get(1, 0) - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((d.get(1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn contrast_pair_examples() {
        let d = DistanceMatrix::from_rows(vec![vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert_eq!(select_contrast_pair(&d).unwrap(), ContrastPair { i: 1, j: 0, dist: 2.0 });
        let flat = DistanceMatrix::from_rows(vec![vec![0.7; 3]; 3]);
        assert_eq!(select_contrast_pair(&flat).unwrap(), ContrastPair { i: 0, j: 0, dist: 0.7 });
        assert!(matches!(
            select_contrast_pair(&DistanceMatrix::from_rows(vec![])),
            Err(PoseSequenceError::EmptyMatrix)
        ));
    }

    #[test]
    fn contrast_pair_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..40).map(|_| rng.gen::<f64>()).collect()).collect();
        let d = DistanceMatrix::from_rows(rows.clone());
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        let p = select_contrast_pair(&d).unwrap();
        assert_eq!((p.i, p.j, p.dist), best);
    }

    #[test]
    fn frame_counts() {
        let cfg = InterpConfig::default();
        assert_eq!(frames_for_distance(0.0, &cfg), 10);
        assert_eq!(frames_for_distance(1.0, &cfg), 20);
        assert_eq!(frames_for_distance(100.0, &cfg), 300);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_pose(&mut rng, 24);
        let b = random_pose(&mut rng, 24);
        assert_eq!(interpolate(&a, &b, 2).unwrap(), vec![a.clone(), b.clone()]);
        let three = interpolate(&a, &b, 3).unwrap();
        let mid: Vec<f64> = a.theta().iter().zip(b.theta()).map(|(x, y)| x + 0.5 * (y - x)).collect();
        assert_eq!(three[1].theta(), mid);
        for (m, (x, y)) in three[1].theta().iter().zip(a.theta().iter().zip(b.theta())) {
            assert!((m - (x + y) / 2.0).abs() < 1e-15);
        }
        assert!(matches!(interpolate(&a, &b, 1), Err(PoseSequenceError::TooFewFrames(1))));
    }

    #[test]
    fn interpolation_moves_monotonically_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_pose(&mut rng, 24);
        let b = random_pose(&mut rng, 24);
        let frames = interpolate(&a, &b, 25).unwrap();
        let d: Vec<f64> = frames.iter().map(|f| pose_distance(f, &a).unwrap()).collect();
        assert!(d.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn leadin_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let seq = random_seq(&mut rng, 7);
        let t = BodyPose::zero(24);
        assert_eq!(prepend_leadin(&seq, &t, 0).unwrap(), seq);
        let out = prepend_leadin(&seq, &t, 5).unwrap();
        assert_eq!(out.len(), seq.len() + 4);
        assert_eq!(out.frames()[0].pose, t);
        assert_eq!(out.frames()[4], seq.frames()[0]);
    }

    #[test]
    fn leadin_splice_is_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seq = random_seq(&mut rng, 3);
        let out = prepend_leadin(&seq, &BodyPose::zero(24), 12).unwrap();
        let step = |i: usize| pose_distance(&out.frames()[i].pose, &out.frames()[i + 1].pose).unwrap();
        let within = (0..10).map(step).fold(0.0, f64::max);
        assert!(step(10) <= within * 1.5);
    }

    #[test]
    fn contrast_sequence_spans_the_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_seq(&mut rng, 10);
        let y = random_seq(&mut rng, 12);
        let out = contrast_sequence(&x, &y, &InterpConfig::default()).unwrap();
        let pair = select_contrast_pair(&distance_matrix(&x, &y).unwrap()).unwrap();
        assert_eq!(out.frames()[0].pose, x.frames()[pair.i].pose);
        assert_eq!(out.frames().last().unwrap().pose, y.frames()[pair.j].pose);
        assert_eq!(out.len(), frames_for_distance(pair.dist, &InterpConfig::default()));
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pose(&mut rng, 24);
            let b = random_pose(&mut rng, 24);
            let c = random_pose(&mut rng, 24);
            let ab = pose_distance(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, pose_distance(&b, &a).unwrap());
            let ac = pose_distance(&a, &c).unwrap();
            let cb = pose_distance(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn self_contrast_is_global_max(seed in any::<u64>(), len in 1usize..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_seq(&mut rng, len);
            let d = distance_matrix(&x, &x).unwrap();
            let p = select_contrast_pair(&d).unwrap();
            let mut max = 0.0f64;
            for i in 0..len { for j in 0..len { max = max.max(d.get(i, j)); } }
            prop_assert_eq!(p.dist, max);
        }
    }
}
