//! Toy sequence-VAE: config, parameters, synthetic data, loss, gradients and training.

mod adam;
mod config;
mod data;
mod model;
mod params;
mod train;

pub use adam::Adam;
pub use config::{Block, ModelConfig, Segment};
pub use data::{generate_dataset, split_sizes, templates, Dataset, SequenceDatum, NUM_TEMPLATES, RESAMPLE_PROB};
pub use model::{accumulate_grad, decode_latent, elbo_loss, encode_mean, grad_elbo, LatentNoise};
pub use params::{init_parameters, ParameterVector};
pub use train::{datum_nll, mean_loss, nll_noise_rng, pretrain, PretrainSettings, Pretrained};
