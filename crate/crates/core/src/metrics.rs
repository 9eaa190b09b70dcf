//! Joint- and vertex-level evaluation metrics.
//!
//! Library functions are unit-agnostic; callers decide whether inputs are
//! meters or millimeters.

use crate::body_model::SHAPE_DIM;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("alignment increased the error in frame {frame} ({aligned} > {unaligned})")]
    AlignmentInvariant { frame: usize, aligned: f64, unaligned: f64 },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    fn of(self, v: &Vector3<f64>) -> f64 {
        match self {
            Norm::L1 => v.abs().sum(),
            Norm::L2 => v.norm(),
        }
    }
}

fn check_frames<T: AsRef<[Vector3<f64>]>>(pred: &[T], gt: &[T], what: &str) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Shape(format!(
            "{what}: {} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        let (p, g) = (p.as_ref(), g.as_ref());
        if p.len() != g.len() {
            return Err(MetricsError::Shape(format!(
                "{what}: frame {f} has {} predicted vs {} ground-truth points",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

fn ssd(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
}

fn mean_error(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

/// Mean over frames and joints of the Euclidean joint error.
pub fn mpjpe<T: AsRef<[Vector3<f64>]>>(pred: &[T], gt: &[T]) -> Result<f64> {
    check_frames(pred, gt, "mpjpe")?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let (p, g) = (p.as_ref(), g.as_ref());
        total += p.iter().zip(g).map(|(x, y)| (x - y).norm()).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Err(MetricsError::Shape("mpjpe: no joints".into()));
    }
    Ok(total / count as f64)
}

/// Similarity transform `x ↦ scale·rotation·x + translation` and the aligned points.
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub aligned: Vec<Vector3<f64>>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares similarity aligning `pred` onto `gt`, reflections excluded.
pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Shape(format!("{} vs {} points", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(MetricsError::Degenerate(format!("{} points, need at least 3", pred.len())));
    }
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (x, y) = (p - mu_p, g - mu_g);
        cov += y * x.transpose();
        var_p += x.norm_squared();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv = svd.singular_values;
    // nalgebra does not guarantee ordering
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if var_p <= 0.0 || sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(MetricsError::Degenerate("cross-covariance has rank < 2".into()));
    }
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * correction * v_t;
    // trace(D·S) = trace(Rᵀ·C) regardless of singular value order
    let scale = (rotation.transpose() * cov).trace() / var_p;
    let translation = mu_g - rotation * mu_p * scale;
    let aligned = pred.iter().map(|p| rotation * p * scale + translation).collect();
    Ok(Similarity {
        scale,
        rotation,
        translation,
        aligned,
    })
}

/// Per-frame Procrustes alignment followed by MPJPE, averaged over frames.
pub fn pa_mpjpe<T: AsRef<[Vector3<f64>]>>(pred: &[T], gt: &[T]) -> Result<f64> {
    check_frames(pred, gt, "pa_mpjpe")?;
    if pred.is_empty() {
        return Err(MetricsError::Shape("pa_mpjpe: no frames".into()));
    }
    let mut total = 0.0;
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        let (p, g) = (p.as_ref(), g.as_ref());
        let sim = procrustes_align(p, g)?;
        let aligned = ssd(&sim.aligned, g);
        let unaligned = ssd(p, g);
        if aligned > unaligned * (1.0 + 1e-12) + 1e-18 {
            return Err(MetricsError::AlignmentInvariant { frame: f, aligned, unaligned });
        }
        total += mean_error(&sim.aligned, g);
    }
    Ok(total / pred.len() as f64)
}

/// Mean per-vertex position error. With `normalized` the per-frame vertex sum
/// is also divided by the vertex count.
pub fn mpvpe<T: AsRef<[Vector3<f64>]>>(pred: &[T], gt: &[T], normalized: bool) -> Result<f64> {
    check_frames(pred, gt, "mpvpe")?;
    let m = pred.len();
    if m == 0 {
        return Err(MetricsError::TooFewFrames { needed: 1, got: 0 });
    }
    let n = pred[0].as_ref().len();
    if let Some(f) = pred.iter().position(|p| p.as_ref().len() != n) {
        return Err(MetricsError::Shape(format!("mpvpe: frame {f} vertex count differs from frame 0 ({n})")));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| p.as_ref().iter().zip(g.as_ref()).map(|(a, b)| (a - b).norm()).sum::<f64>())
        .sum();
    let raw = sum / m as f64;
    Ok(if normalized { raw / n as f64 } else { raw })
}

/// Mean running vertex position variation of a predicted sequence.
///
/// Sums the `M − 1` frame-to-frame terms and divides by `M`.
pub fn mrvpv<T: AsRef<[Vector3<f64>]>>(pred: &[T], norm: Norm) -> Result<f64> {
    let m = pred.len();
    if m < 2 {
        return Err(MetricsError::TooFewFrames { needed: 2, got: m });
    }
    let n = pred[0].as_ref().len();
    let mut total = 0.0;
    for (j, w) in pred.windows(2).enumerate() {
        let (a, b) = (w[0].as_ref(), w[1].as_ref());
        if a.len() != n || b.len() != n {
            return Err(MetricsError::Shape(format!("mrvpv: frame {} vertex count differs", j + 1)));
        }
        total += a.iter().zip(b).map(|(x, y)| norm.of(&(y - x))).sum::<f64>();
    }
    Ok(total / m as f64)
}

/// Mean running shape variation; `M − 1` terms divided by `M`.
pub fn mrsv(betas: &[[f64; SHAPE_DIM]], norm: Norm) -> Result<f64> {
    let m = betas.len();
    if m < 2 {
        return Err(MetricsError::TooFewFrames { needed: 2, got: m });
    }
    let total: f64 = betas
        .windows(2)
        .map(|w| {
            let d = w[1].iter().zip(&w[0]).map(|(a, b)| a - b);
            match norm {
                Norm::L1 => d.map(f64::abs).sum::<f64>(),
                Norm::L2 => d.map(|x| x * x).sum::<f64>().sqrt(),
            }
        })
        .sum();
    Ok(total / m as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpvpe: f64,
    pub mrvpv_l1: f64,
    pub mrvpv_l2: f64,
    pub mrsv_l1: f64,
    pub mrsv_l2: f64,
    pub frame_count: usize,
    pub joint_count: usize,
    pub vertex_count: usize,
}

/// Predicted and ground-truth data of one sequence.
pub struct SequenceEval<'a> {
    pub pred_joints: &'a [Vec<Vector3<f64>>],
    pub gt_joints: &'a [Vec<Vector3<f64>>],
    pub pred_vertices: &'a [Vec<Vector3<f64>>],
    pub gt_vertices: &'a [Vec<Vector3<f64>>],
    pub pred_betas: &'a [[f64; SHAPE_DIM]],
}

impl MetricReport {
    /// Evaluates one sequence. Running variations are zero for single-frame sequences.
    pub fn evaluate(s: &SequenceEval<'_>, normalized_mpvpe: bool) -> Result<Self> {
        let m = s.pred_joints.len();
        let running = |norm| if m >= 2 { mrvpv(s.pred_vertices, norm) } else { Ok(0.0) };
        let shape_running = |norm| if m >= 2 { mrsv(s.pred_betas, norm) } else { Ok(0.0) };
        Ok(Self {
            mpjpe: mpjpe(s.pred_joints, s.gt_joints)?,
            pa_mpjpe: pa_mpjpe(s.pred_joints, s.gt_joints)?,
            mpvpe: mpvpe(s.pred_vertices, s.gt_vertices, normalized_mpvpe)?,
            mrvpv_l1: running(Norm::L1)?,
            mrvpv_l2: running(Norm::L2)?,
            mrsv_l1: shape_running(Norm::L1)?,
            mrsv_l2: shape_running(Norm::L2)?,
            frame_count: m,
            joint_count: s.pred_joints.first().map_or(0, Vec::len),
            vertex_count: s.pred_vertices.first().map_or(0, Vec::len),
        })
    }

    /// Frame-weighted mean of several reports.
    pub fn mean(reports: &[MetricReport]) -> Option<Self> {
        let frames: usize = reports.iter().map(|r| r.frame_count).sum();
        if frames == 0 {
            return None;
        }
        let avg = |f: fn(&MetricReport) -> f64| {
            reports.iter().map(|r| f(r) * r.frame_count as f64).sum::<f64>() / frames as f64
        };
        Some(Self {
            mpjpe: avg(|r| r.mpjpe),
            pa_mpjpe: avg(|r| r.pa_mpjpe),
            mpvpe: avg(|r| r.mpvpe),
            mrvpv_l1: avg(|r| r.mrvpv_l1),
            mrvpv_l2: avg(|r| r.mrvpv_l2),
            mrsv_l1: avg(|r| r.mrsv_l1),
            mrsv_l2: avg(|r| r.mrsv_l2),
            frame_count: frames,
            joint_count: reports[0].joint_count,
            vertex_count: reports[0].vertex_count,
        })
    }

    /// Plain-text table: one row per named sequence plus a mean row.
    pub fn table(rows: &[(String, MetricReport)]) -> String {
        const HEADERS: [&str; 8] = ["Sequence", "MPJPE", "PA-MPJPE", "MPVPE", "MRVPV1", "MRVPV2", "MRSV1", "MRSV2"];
        let values = |r: &MetricReport| {
            [r.mpjpe, r.pa_mpjpe, r.mpvpe, r.mrvpv_l1, r.mrvpv_l2, r.mrsv_l1, r.mrsv_l2].map(|v| format!("{v:.1}"))
        };
        let mut body: Vec<(String, [String; 7])> = rows.iter().map(|(n, r)| (n.clone(), values(r))).collect();
        let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| r.clone()).collect();
        if let Some(mean) = MetricReport::mean(&reports) {
            body.push(("Mean".to_string(), values(&mean)));
        }
        let name_w = body.iter().map(|(n, _)| n.len()).chain([HEADERS[0].len()]).max().unwrap();
        let col_w: Vec<usize> = (0..7)
            .map(|c| body.iter().map(|(_, v)| v[c].len()).chain([HEADERS[c + 1].len()]).max().unwrap())
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", HEADERS[0]);
        for (h, w) in HEADERS[1..].iter().zip(&col_w) {
            let _ = write!(out, " | {h:>w$}");
        }
        out.push('\n');
        let total_w = name_w + col_w.iter().map(|w| w + 3).sum::<usize>();
        out.push_str(&"-".repeat(total_w));
        out.push('\n');
        for (name, vals) in &body {
            let _ = write!(out, "{name:<name_w$}");
            for (v, w) in vals.iter().zip(&col_w) {
                let _ = write!(out, " | {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}
