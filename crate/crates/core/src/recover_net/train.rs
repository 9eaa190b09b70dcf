use super::body::JointModel;
use super::loss::{clip_loss_raw, FrameTarget, LossTerms};
use super::network::{clip_backward, clip_forward};
use super::params::{ModelConfig, ModelParams};
use super::{mean_phi, RecoverError, RecoveryVector, Result};
use crate::body_model::{rodrigues, BodyTemplate};
use crate::metrics::pa_mpjpe;
use crate::scene_gen::{rasterize_preview, Image, PreviewMode, SequenceAnnotation};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// T: frames per clip.
    pub clip_length: usize,
    pub lambda: f64,
    /// Sequence ids supervised in 2D only (δ = 0).
    pub two_d_only: Vec<String>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            clip_length: 4,
            lambda: 1.0,
            two_d_only: Vec::new(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_steps: 5000,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RecoverError::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.clip_length == 0 {
            return bad("batch_size and clip_length must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return bad("Adam moments must lie in [0, 1) and epsilon must be positive");
        }
        self.model.validate()
    }
}

/// T consecutive silhouettes with their supervision.
#[derive(Clone, Debug)]
pub struct TrainingClip {
    pub id: String,
    pub images: Vec<Image>,
    pub targets: Vec<FrameTarget>,
    pub delta: bool,
}

/// Cuts each sequence into non-overlapping windows of `clip_length` frames
/// and renders body silhouettes at the model's input size.
pub fn prepare_clips(dataset: &[SequenceAnnotation], template: &BodyTemplate, cfg: &TrainConfig) -> Result<Vec<TrainingClip>> {
    cfg.validate()?;
    let t = cfg.clip_length;
    let size = cfg.model.image_size as u32;
    let mut clips = Vec::new();
    for seq in dataset {
        let delta = !cfg.two_d_only.contains(&seq.id);
        for (w, window) in seq.frames.chunks_exact(t).enumerate() {
            if window.iter().any(|f| f.body_vertices.len() != template.vertex_count()) {
                return Err(RecoverError::Data(format!(
                    "sequence {} has body meshes that do not match the template",
                    seq.id
                )));
            }
            clips.push(TrainingClip {
                id: format!("{}_{}_{}", seq.id, seq.viewpoint.name(), w * t),
                images: window
                    .iter()
                    .map(|f| rasterize_preview(f, &template.faces, &[], PreviewMode::Silhouette, [size, size]))
                    .collect(),
                targets: window.iter().map(FrameTarget::from_frame).collect::<Result<_>>()?,
                delta,
            });
        }
    }
    if clips.is_empty() {
        return Err(RecoverError::Data(format!("no sequence has {t} frames")));
    }
    Ok(clips)
}

/// Mean of the ground-truth φ over every annotated frame.
pub fn dataset_mean_phi(dataset: &[SequenceAnnotation]) -> Result<RecoveryVector> {
    let all: Vec<RecoveryVector> = dataset.iter().flat_map(|s| s.frames.iter().map(|f| f.ground_truth_phi())).collect();
    mean_phi(&all)
}

/// Loss on a clip and, optionally, its parameter gradient.
fn clip_objective(
    params: &ModelParams,
    joints: &JointModel,
    clip: &TrainingClip,
    lambda: f64,
    want_grad: bool,
) -> Result<(f64, LossTerms, Option<ModelParams>)> {
    let tape = clip_forward(&clip.images, params)?;
    let phis = tape.phis();
    let (total, terms, grads) = clip_loss_raw(joints, &phis, &clip.targets, lambda, clip.delta, want_grad);
    let grad = want_grad.then(|| clip_backward(params, &tape, &grads));
    Ok((total, terms, grad))
}

/// Batch-mean loss and gradient; reduction runs in clip order.
fn batch_objective(
    params: &ModelParams,
    joints: &JointModel,
    clips: &[&TrainingClip],
    lambda: f64,
    want_grad: bool,
) -> Result<(f64, LossTerms, Option<ModelParams>)> {
    let parts = clips
        .par_iter()
        .map(|c| clip_objective(params, joints, c, lambda, want_grad))
        .collect::<Result<Vec<_>>>()?;
    let k = 1.0 / clips.len() as f64;
    let mut total = 0.0;
    let mut terms = LossTerms::default();
    let mut grad = want_grad.then(|| params.zeros_like());
    for (l, t, g) in parts {
        total += l * k;
        terms.add(&LossTerms {
            proj: t.proj * k,
            joint3d: t.joint3d * k,
            smpl: t.smpl * k,
            shape: t.shape * k,
        });
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_scaled(&g, k);
        }
    }
    Ok((total, terms, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub terms: LossTerms,
}

/// Plain-text loss log, one line per step.
pub fn write_loss_log<W: Write>(mut out: W, curve: &[LossRecord], lambda: f64) -> std::io::Result<()> {
    writeln!(out, "# lambda {lambda}")?;
    writeln!(out, "# step total proj joint3d smpl shape")?;
    for r in curve {
        writeln!(
            out,
            "{} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
            r.step, r.total, r.terms.proj, r.terms.joint3d, r.terms.smpl, r.terms.shape
        )?;
    }
    Ok(())
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    fn new(p: &ModelParams) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grad: &ModelParams, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate;
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

/// Trains from a seeded initialization with `mean_phi` taken from the
/// dataset. Returns the parameters after `max_steps` updates and the batch
/// loss measured before each update.
pub fn train_toy(dataset: &[SequenceAnnotation], template: &BodyTemplate, cfg: &TrainConfig) -> Result<(ModelParams, Vec<LossRecord>)> {
    let clips = prepare_clips(dataset, template, cfg)?;
    let init = ModelParams::random(&cfg.model, dataset_mean_phi(dataset)?, cfg.seed)?;
    train_clips(init, &clips, template, cfg)
}

pub fn train_clips(
    mut params: ModelParams,
    clips: &[TrainingClip],
    template: &BodyTemplate,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<LossRecord>)> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(RecoverError::Data("no training clips".into()));
    }
    log::info!(
        "training {} clips, lambda {}, lr {}, batch {}, {} steps",
        clips.len(),
        cfg.lambda,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.max_steps
    );
    let joints = JointModel::new(template);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut cursor = clips.len();
    let mut adam = Adam::new(&params);
    let mut curve = Vec::with_capacity(cfg.max_steps);
    for step in 0..cfg.max_steps {
        let batch: Vec<&TrainingClip> = if cfg.batch_size >= clips.len() {
            clips.iter().collect()
        } else {
            (0..cfg.batch_size)
                .map(|_| {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    cursor += 1;
                    &clips[order[cursor - 1]]
                })
                .collect()
        };
        let (total, terms, grad) = match batch_objective(&params, &joints, &batch, cfg.lambda, true) {
            Err(RecoverError::NonFinite(_)) => return Err(RecoverError::Diverged { step, loss: f64::NAN }),
            r => r?,
        };
        if !total.is_finite() {
            return Err(RecoverError::Diverged { step, loss: total });
        }
        curve.push(LossRecord { step, total, terms });
        if step % 500 == 0 {
            log::debug!("step {step}: loss {total:.6}");
        }
        adam.step(&mut params, &grad.expect("gradient requested"), cfg);
        if !params.is_finite() {
            return Err(RecoverError::Diverged { step, loss: total });
        }
    }
    Ok((params, curve))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyEvaluation {
    /// Mean clip loss over all clips.
    pub loss: f64,
    pub terms: LossTerms,
    /// Mean over frames, meters.
    pub pa_mpjpe: f64,
    pub predictions: Vec<Vec<RecoveryVector>>,
}

/// Loss and PA-MPJPE of the camera-frame metric joints over every clip.
pub fn evaluate_clips(params: &ModelParams, clips: &[TrainingClip], template: &BodyTemplate, lambda: f64) -> Result<ToyEvaluation> {
    let joints = JointModel::new(template);
    let refs: Vec<&TrainingClip> = clips.iter().collect();
    let (loss, terms, _) = batch_objective(params, &joints, &refs, lambda, false)?;
    let mut errors = Vec::new();
    let mut predictions = Vec::with_capacity(clips.len());
    for clip in clips {
        let phis = clip_forward(&clip.images, params)?.phis();
        let mut out = Vec::with_capacity(phis.len());
        for (raw, target) in phis.iter().zip(&clip.targets) {
            let phi = RecoveryVector::from_raw(raw)?;
            let r = rodrigues(&phi.global_rotation);
            let pred: Vec<Vector3<f64>> = joints.forward(&phi.theta, &phi.beta).joints.iter().map(|j| r * j).collect();
            let e = pa_mpjpe(std::slice::from_ref(&pred), std::slice::from_ref(&target.joints3d))
                .map_err(|e| RecoverError::Data(e.to_string()))?;
            errors.push(e);
            out.push(phi);
        }
        predictions.push(out);
    }
    Ok(ToyEvaluation {
        loss,
        terms,
        pa_mpjpe: errors.iter().sum::<f64>() / errors.len() as f64,
        predictions,
    })
}

/// Maximum relative error between analytic and central-difference gradients
/// for each parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub groups: Vec<(String, f64)>,
    pub tolerance: f64,
    pub loss: f64,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Compares the analytic gradient of the batch-mean clip loss with central
/// differences. The relative error uses `max(|a|, |n|, 1e-5·max(1, |L|))` as
/// denominator: central differences of a loss of size |L| carry roundoff of
/// order 1e-7·|L| at this step, which would otherwise swamp tiny entries.
pub fn grad_check(params: &ModelParams, clips: &[TrainingClip], template: &BodyTemplate, lambda: f64, tolerance: f64) -> Result<GradReport> {
    grad_check_with(params, clips, template, lambda, tolerance, |_| {})
}

/// As [`grad_check`], with a hook that may alter the analytic gradient before
/// comparison.
pub fn grad_check_with(
    params: &ModelParams,
    clips: &[TrainingClip],
    template: &BodyTemplate,
    lambda: f64,
    tolerance: f64,
    corrupt: impl Fn(&mut ModelParams),
) -> Result<GradReport> {
    let joints = JointModel::new(template);
    let refs: Vec<&TrainingClip> = clips.iter().collect();
    let (loss, _, grad) = batch_objective(params, &joints, &refs, lambda, true)?;
    let mut grad = grad.expect("gradient requested");
    corrupt(&mut grad);
    let floor = GRAD_CHECK_FLOOR * loss.abs().max(1.0);
    let eval = |p: &ModelParams| -> Result<f64> {
        let mut total = 0.0;
        for c in &refs {
            total += clip_objective(p, &joints, c, lambda, false)?.0;
        }
        Ok(total / refs.len() as f64)
    };
    let analytic = grad.tensors();
    let mut groups = Vec::with_capacity(analytic.len());
    for (g, (name, values)) in analytic.iter().enumerate() {
        let errors = (0..values.len())
            .into_par_iter()
            .map(|k| {
                let mut p = params.clone();
                let orig = p.tensors()[g].1[k];
                p.tensors_mut()[g].1[k] = orig + GRAD_CHECK_STEP;
                let up = eval(&p)?;
                p.tensors_mut()[g].1[k] = orig - GRAD_CHECK_STEP;
                let down = eval(&p)?;
                let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
                let a = values[k];
                Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor))
            })
            .collect::<Result<Vec<f64>>>()?;
        groups.push((name.to_string(), errors.into_iter().fold(0.0, f64::max)));
    }
    Ok(GradReport { groups, tolerance, loss })
}

/// Analytic gradient of the batch-mean loss; exposed for diagnostics.
pub fn loss_gradient(params: &ModelParams, clips: &[TrainingClip], template: &BodyTemplate, lambda: f64) -> Result<(f64, ModelParams)> {
    let joints = JointModel::new(template);
    let refs: Vec<&TrainingClip> = clips.iter().collect();
    let (loss, _, grad) = batch_objective(params, &joints, &refs, lambda, true)?;
    Ok((loss, grad.expect("gradient requested")))
}
