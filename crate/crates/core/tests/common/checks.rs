//! Randomized check harnesses built on the oracles.

#![allow(dead_code)]

use asinfer::nnkit::{elbo_loss, generate_dataset, grad_elbo, LatentNoise, ModelConfig, ParameterVector, SequenceDatum};
use asinfer::partition::{build_partition, Selector};
use asinfer::subspace::{build_subspace, SubspaceSettings};
use asinfer::vi::{PriorConfig, VariationalPosterior, ViProblem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::oracles::{central_diff, rel_err};

pub const FD_STEP: f64 = 1e-5;

pub fn random_config<R: Rng>(rng: &mut R) -> ModelConfig {
    ModelConfig {
        alphabet_size: rng.random_range(2..=5),
        seq_len: rng.random_range(2..=8),
        latent_dim: rng.random_range(1..=6),
        enc_hidden: rng.random_range(3..=24),
        dec_hidden: rng.random_range(3..=24),
        kl_weight: rng.random_range(0.0..2.0),
    }
}

pub fn random_theta<R: Rng>(rng: &mut R, cfg: &ModelConfig, scale: f64) -> ParameterVector {
    let values = (0..cfg.num_params())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ParameterVector::from_values(cfg, values).unwrap()
}

pub fn random_datum<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> SequenceDatum {
    SequenceDatum {
        symbols: (0..cfg.seq_len).map(|_| rng.random_range(0..cfg.alphabet_size)).collect(),
    }
}

/// Relative errors of `grad_elbo` against central differences on `coords`
/// random coordinates of a random instance.
pub fn elbo_gradient_errors(seed: u64, coords: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = random_config(&mut rng);
    let theta = random_theta(&mut rng, &cfg, 0.4);
    let x = random_datum(&mut rng, &cfg);
    let noise = LatentNoise::draw(&mut rng, cfg.latent_dim);
    let g = grad_elbo(&cfg, &theta, &x, &noise).unwrap();
    (0..coords)
        .map(|_| {
            let i = rng.random_range(0..theta.len());
            let fd = central_diff(
                |v| {
                    let t = ParameterVector::from_values(&cfg, v.to_vec()).unwrap();
                    elbo_loss(&cfg, &t, &x, &noise).unwrap()
                },
                &theta.values,
                i,
                FD_STEP,
            );
            rel_err(g[i], fd)
        })
        .collect()
}

/// Relative errors of the VI objective gradient w.r.t. every `(μ, rho)`
/// coordinate, at fixed posterior noise and latent noise.
pub fn vi_gradient_errors(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = random_config(&mut rng);
    let data = generate_dataset(&cfg, 40, seed).unwrap();
    let theta0 = random_theta(&mut rng, &cfg, 0.4);
    let sel = Selector::ALL[rng.random_range(0..3)];
    let p = build_partition(&cfg, sel);
    let k = rng.random_range(1..=4usize);
    let settings = SubspaceSettings {
        n: 8,
        k,
        sigma0: 0.1,
        seed,
    };
    let s = build_subspace(&cfg, &theta0, &p, &data, &settings).unwrap();
    let prior = PriorConfig {
        mean: (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        std: rng.random_range(0.5..5.0),
    };
    let problem = ViProblem {
        config: &cfg,
        subspace: &s,
        partition: &p,
        theta0: &theta0,
        prior: &prior,
    };
    let mu: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
    let rho: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..0.5)).collect();
    let xi: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let batch: Vec<&SequenceDatum> = data.train[..4].iter().collect();
    let noises: Vec<LatentNoise> = (0..4).map(|_| LatentNoise::draw(&mut rng, cfg.latent_dim)).collect();
    let kl_scale = rng.random_range(0.01..1.0);

    let params: Vec<f64> = mu.iter().chain(&rho).copied().collect();
    let objective = |v: &[f64]| {
        let q = VariationalPosterior::new(v[..k].to_vec(), v[k..].to_vec()).unwrap();
        problem.objective(&q, &xi, &batch, &noises, kl_scale).unwrap().objective
    };
    let q = VariationalPosterior::new(mu.clone(), rho.clone()).unwrap();
    let eval = problem.objective(&q, &xi, &batch, &noises, kl_scale).unwrap();
    let analytic: Vec<f64> = eval.grad_mu.iter().chain(&eval.grad_rho).copied().collect();
    (0..2 * k)
        .map(|i| rel_err(analytic[i], central_diff(objective, &params, i, FD_STEP)))
        .collect()
}

/// A random `D_S x n` gradient-like matrix and a `k`, with `D_S <= 200`,
/// `n <= min(50, D_S)`, `k <= min(10, n)`.
pub fn random_gram_instance(seed: u64) -> (DMatrix<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_s = rng.random_range(12..=200usize);
    let n = rng.random_range(2..=50usize.min(d_s));
    let k = rng.random_range(1..=10usize.min(n));
    // anisotropic scales so the spectrum has clear gaps
    let scales: Vec<f64> = (0..d_s).map(|i| 1.0 / (1.0 + 0.1 * i as f64)).collect();
    let g = DMatrix::from_fn(d_s, n, |i, _| scales[i] * rng.sample::<f64, _>(StandardNormal));
    (g, k)
}

/// Mean |Δloss| for weight perturbations of norm `step` along the top active
/// direction and along `directions` random unit directions orthogonal to the
/// whole active subspace, each averaged over the first `items` validation data
/// with one fixed latent draw per datum.
pub fn direction_dominance(
    cfg: &ModelConfig,
    theta0: &ParameterVector,
    partition: &asinfer::partition::Partition,
    s: &asinfer::subspace::ActiveSubspace,
    items: &[SequenceDatum],
    directions: usize,
    step: f64,
    seed: u64,
) -> (f64, f64) {
    use asinfer::partition::assemble_full;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noises: Vec<LatentNoise> = items.iter().map(|_| LatentNoise::draw(&mut rng, cfg.latent_dim)).collect();
    let base: Vec<f64> = items
        .iter()
        .zip(&noises)
        .map(|(x, e)| elbo_loss(cfg, theta0, x, e).unwrap())
        .collect();
    let mean_change = |dir: &[f64]| -> f64 {
        let theta_s: Vec<f64> = s.anchor.iter().zip(dir).map(|(a, d)| a + step * d).collect();
        let theta = assemble_full(&theta_s, theta0, partition).unwrap();
        items
            .iter()
            .zip(&noises)
            .zip(&base)
            .map(|((x, e), b)| (elbo_loss(cfg, &theta, x, e).unwrap() - b).abs())
            .sum::<f64>()
            / items.len() as f64
    };
    let v1: Vec<f64> = s.projection.column(0).iter().copied().collect();
    let along_active = mean_change(&v1);
    let mut along_random = 0.0;
    for _ in 0..directions {
        let mut u: Vec<f64> = (0..s.dim()).map(|_| rng.sample(StandardNormal)).collect();
        // project out span(V1) twice for numerical cleanliness
        for _ in 0..2 {
            for c in 0..s.k {
                let col = s.projection.column(c);
                let dot: f64 = col.iter().zip(&u).map(|(a, b)| a * b).sum();
                u.iter_mut().zip(col.iter()).for_each(|(ui, ci)| *ui -= dot * ci);
            }
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        along_random += mean_change(&u) / directions as f64;
    }
    (along_active, along_random)
}
