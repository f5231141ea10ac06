//! Diffusion machinery: noise schedule, deterministic DDIM inversion and
//! sampling, classifier-free guidance, the lossless latent codec, the
//! denoiser interface with a small trainable implementation, and one-shot
//! training.

mod codec;
mod conditioning;
mod ddim;
mod denoiser;
mod schedule;
mod toy;
mod train;

pub use codec::{decode, encode};
pub use conditioning::{
    build_conditioning, prompt_embedding, rasterize_pose, Conditioning, ConditioningVector,
    POSE_CHANNELS,
};
pub use ddim::{
    cfg_combine, ddim_inverse_step, ddim_invert, ddim_sample, ddim_sample_step, ddim_sample_with,
    guided_noise,
};
pub use denoiser::{ConstantDenoiser, Denoiser};
pub use schedule::{build_schedule, max_train_steps, NoiseSchedule, ScheduleConfig};
pub use toy::{ToyConfig, ToyDenoiser, ToyGradients};
pub use train::{
    denoising_loss, draw_noisy_batch, train_one_shot, training_loss, NoisyBatch, Optimizer,
    TrainConfig, TrainReport, TrainingBatch,
};
