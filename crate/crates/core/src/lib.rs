//! One-shot, pose-guided video generation around a pluggable denoiser.
//!
//! The crate covers the full inference path: pick the training frame whose
//! pose best matches the requested motion, invert it once with DDIM, warp the
//! inverted latent per target frame so face and hand regions follow the
//! target landmarks, prepend the reference pose as the attention key frame,
//! sample, and drop the inserted frame again.
//!
//! Pretrained networks are out of reach at this scale, so the denoiser is a
//! small [`ToyDenoiser`] (a linear backbone wrapped around key-frame and
//! temporal attention) and the autoencoder is a lossless space-to-depth
//! rearrangement. Every stage is nevertheless the real algorithm and can be
//! swapped for a heavier model through the [`Denoiser`] trait.

pub mod affine;
pub mod attention;
pub mod diffusion;
mod error;
pub mod formats;
pub mod latent;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod reference;
pub mod rng;
pub mod synthetic;
pub mod tensor;

pub use affine::{
    composite_region, edit_latent_for_pose, fit_affine, landmark_bbox, warp_latent, Affine2D,
    AffineFit, EditConfig, EditOutcome, FitKind, GroupEdit, GroupEditStatus, RegionBox,
};
pub use attention::{
    attention_backward, key_frame_attention, softmax_rows, temporal_attention, AttentionGrads,
    AttentionKind, AttentionWeights,
};
pub use diffusion::{
    build_schedule, cfg_combine, ddim_inverse_step, ddim_invert, ddim_sample, ddim_sample_step,
    decode, encode, max_train_steps, train_one_shot, training_loss, Conditioning,
    ConditioningVector, ConstantDenoiser, Denoiser, NoiseSchedule, ToyConfig, ToyDenoiser,
    TrainConfig, TrainReport,
};
pub use error::{Error, Result};
pub use latent::{LatentGrid, LatentVideo, Video};
pub use metrics::{mse_p, psnr, psnr_from_mse, video_sim};
pub use pipeline::{
    attribute_edit_inference, build_pseudo_reference, run_inference, PipelineConfig, PipelineError,
    PipelineReport,
};
pub use pose::{
    group_landmarks, parse_pose_file, pose_distance, serialize_pose_sequence, Landmark,
    LandmarkGroup, Pose, PoseLayout, PoseSequence,
};
pub use reference::{
    drop_inserted_frame, insert_reference_pose, select_reference_frame, InsertedSequence,
    ReferenceChoice,
};
pub use tensor::Tensor;
