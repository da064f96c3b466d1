//! DDPM core: schedules, forward corruption, the text-conditioned attention
//! U-Net, training, ancestral sampling, the base + super-resolution cascade,
//! and checkpointing.

pub mod checkpoint;
pub mod sample;
pub mod schedule;
pub mod train;
pub mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadedCheckpoint};
pub use sample::{cascade_generate, image_to_signed, sample, signed_to_image, text_cond_for};
pub use schedule::{make_schedule, q_sample, timestep_embedding, NoiseSchedule, ScheduleKind};
pub use train::{
    batch_loss, step_seed, train_loop, DiffusionBatch, NoisePredictor, OptimizerKind, StepInfo,
    TrainItem, Trainer, TrainingSet,
};
pub use unet::{DenoiserConfig, DenoiserVariant, TextCond, UNet};

use crate::error::Result;
use crate::nn::Real;

/// Predict the noise in `x_t` given the text condition (base variant).
pub fn denoise<T: Real>(
    unet: &UNet<T>,
    x_t: &[T],
    t: usize,
    text: Option<&TextCond<T>>,
) -> Result<Vec<T>> {
    Ok(unet.forward(x_t, None, t, text)?.0)
}

/// Super-resolution noise prediction: `lowres` is upsampled and concatenated
/// at the input layer. `unconditioned` drops the text pathway even when text
/// is supplied.
pub fn sr_denoise<T: Real>(
    unet: &UNet<T>,
    x_t: &[T],
    lowres: &[T],
    t: usize,
    text: Option<&TextCond<T>>,
    unconditioned: bool,
) -> Result<Vec<T>> {
    let text = if unconditioned { None } else { text };
    Ok(unet.forward(x_t, Some(lowres), t, text)?.0)
}
