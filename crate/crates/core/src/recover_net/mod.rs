//! Toy-scale recurrent recovery network with hand-written backpropagation.

mod body;
mod loss;
mod network;
mod params;
mod phi;
mod train;

pub use loss::{clip_loss, frame_loss, FrameLoss, FrameTarget, LossTerms};
pub use network::{attention, encode, init_states, lstm_step, recover_clip, regress_ief, EncodedFrame, RecurrentState};
pub use params::{phi_scale, Dense, ModelConfig, ModelParams, PARAMS_VERSION};
pub use phi::{mean_phi, RecoveryVector, PHI_DIM};
pub use train::{
    dataset_mean_phi, evaluate_clips, grad_check, grad_check_with, loss_gradient, prepare_clips, train_clips, train_toy,
    write_loss_log, GradReport, LossRecord, ToyEvaluation, TrainConfig, TrainingClip, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecoverError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RecoverError>;
