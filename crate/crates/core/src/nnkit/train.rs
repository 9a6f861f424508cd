use super::adam::Adam;
use super::config::ModelConfig;
use super::data::{epoch_order, Dataset, SequenceDatum};
use super::model::{accumulate_grad, elbo_loss, LatentNoise};
use super::params::{init_parameters, ParameterVector};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub theta: ParameterVector,
    /// Mean training loss of each epoch, as seen during the updates.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch Adam on the mean ELBO loss, starting from `init_parameters(config, seed)`.
pub fn pretrain(config: &ModelConfig, data: &Dataset, settings: &PretrainSettings) -> Result<Pretrained> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if settings.batch == 0 || !(settings.lr > 0.0) {
        return Err(Error::Config("pretrain.batch and pretrain.lr must be positive".into()));
    }
    let mut theta = init_parameters(config, settings.seed);
    let mut opt = Adam::new(settings.lr, theta.len());
    let mut grad = vec![0.0; theta.len()];
    let mut epoch_losses = Vec::with_capacity(settings.epochs);

    for epoch in 0..settings.epochs {
        let mut rng = rng_for(settings.seed, Stream::Pretrain, epoch as u64);
        let order = epoch_order(data.train.len(), &mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(settings.batch).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let noise = LatentNoise::draw(&mut rng, config.latent_dim);
                let loss = accumulate_grad(config, &theta, &data.train[i], &noise, scale, &mut grad)
                    .map_err(|e| Error::Training {
                        epoch,
                        batch: b,
                        detail: e.to_string(),
                    })?;
                batch_loss += loss;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    detail: format!("batch loss {batch_loss}"),
                });
            }
            total += batch_loss;
            opt.step(&mut theta.values, &grad);
        }
        epoch_losses.push(total / data.train.len() as f64);
    }
    Ok(Pretrained { theta, epoch_losses })
}

/// Monte Carlo negative ELBO of one datum with unit latent-KL weight, using
/// `latent_samples` noise draws from a stream seeded by `seed`.
pub fn datum_nll(
    config: &ModelConfig,
    theta: &ParameterVector,
    x: &SequenceDatum,
    latent_samples: usize,
    seed: u64,
) -> Result<f64> {
    if latent_samples == 0 {
        return Err(Error::Config("latent_samples must be >= 1".into()));
    }
    let unit = ModelConfig {
        kl_weight: 1.0,
        ..*config
    };
    let mut rng = nll_noise_rng(seed);
    let mut sum = 0.0;
    for _ in 0..latent_samples {
        let noise = LatentNoise::draw(&mut rng, config.latent_dim);
        sum += elbo_loss(&unit, theta, x, &noise)?;
    }
    Ok(sum / latent_samples as f64)
}

/// Noise stream used by [`datum_nll`].
pub fn nll_noise_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rng_for(seed, Stream::NllDatum, 0)
}

/// Mean of [`elbo_loss`] over `items` with one noise draw each from `seed`.
pub fn mean_loss(config: &ModelConfig, theta: &ParameterVector, items: &[SequenceDatum], seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, Stream::NllRun, 0);
    let mut sum = 0.0;
    for x in items {
        let noise = LatentNoise::draw(&mut rng, config.latent_dim);
        sum += elbo_loss(config, theta, x, &noise)?;
    }
    Ok(sum / items.len().max(1) as f64)
}
