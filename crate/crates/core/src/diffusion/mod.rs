//! Conditional denoising diffusion over 2-channel velocity signals.
//!
//! Steps are 1-based throughout (`t ∈ 1..=T`), matching the usual DDPM
//! notation; index 0 denotes clean data.

mod container;
mod denoiser;
mod loss;
mod process;
mod schedule;
mod train;

pub use container::{read_model, write_model, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use denoiser::{
    sinusoidal_time_embedding, Denoiser, ReferenceDenoiser, TensorSpec, HIDDEN_WIDTH, KERNEL_WIDTH,
    TIME_EMBEDDING_DIM,
};
pub use loss::{combined_loss, combined_loss_grad_eps_hat, noise_mse};
pub use process::{
    forward_noising, predict_x0, reverse_step, sample, Conditioning, NoiseTensor, NoisyState,
    VarianceMode,
};
pub use schedule::NoiseSchedule;
pub use train::{
    batch_loss, batch_loss_and_grad, train, DiffusionModel, TrainOutcome, TrainingConfig,
    TrainingDraw, TrainingExample,
};
