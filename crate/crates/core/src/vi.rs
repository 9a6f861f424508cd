//! Mean-field Gaussian posterior over subspace coordinates, fit by
//! reparameterized variational inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nnkit::{accumulate_grad, Adam, Dataset, LatentNoise, ModelConfig, ParameterVector, SequenceDatum};
use crate::partition::{assemble_full, gather_slice, Partition};
use crate::seed::{rng_for, Stream};
use crate::subspace::{project_to_full, ActiveSubspace};

/// Initial posterior scale.
pub const INIT_SIGMA: f64 = 0.01;

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1)
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl PriorConfig {
    pub fn isotropic(k: usize, mean: f64, std: f64) -> Self {
        Self {
            mean: vec![mean; k],
            std,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if !(self.std.is_finite() && self.std > 0.0) {
            return Err(Error::Config(format!("prior std must be positive, got {}", self.std)));
        }
        if self.mean.len() != k {
            return Err(Error::Contract(format!(
                "prior mean has length {}, posterior has k = {k}",
                self.mean.len()
            )));
        }
        Ok(())
    }
}

/// Factorized Gaussian with scale `softplus(rho)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl VariationalPosterior {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::Contract(format!(
                "mu has length {} but rho has length {}",
                mu.len(),
                rho.len()
            )));
        }
        Ok(Self { mu, rho })
    }

    /// Zero mean, scale [`INIT_SIGMA`].
    pub fn initial(k: usize) -> Self {
        Self {
            mu: vec![0.0; k],
            rho: vec![softplus_inv(INIT_SIGMA); k],
        }
    }

    /// Builds the posterior with the given scales (each must be positive).
    pub fn from_sigma(mu: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        Self::new(mu, sigma.iter().map(|&s| softplus_inv(s)).collect())
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// `μ + σ ⊙ ξ`.
    pub fn reparameterize(&self, xi: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(xi)
            .map(|((m, r), x)| m + softplus(*r) * x)
            .collect()
    }
}

/// KL(q ‖ prior) between a diagonal Gaussian and an isotropic one.
pub fn gaussian_kl(q: &VariationalPosterior, prior: &PriorConfig) -> Result<f64> {
    prior.validate(q.k())?;
    let sp2 = prior.std * prior.std;
    let kl = q
        .mu
        .iter()
        .zip(q.sigma())
        .zip(&prior.mean)
        .map(|((m, s), pm)| (prior.std / s).ln() + (s * s + (m - pm) * (m - pm)) / (2.0 * sp2) - 0.5)
        .sum::<f64>();
    Ok(kl.max(0.0))
}

fn standard_normals<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

/// One reparameterized draw `ω = μ + σ ⊙ ξ`, `ξ` seeded by `seed`.
pub fn sample_omega(q: &VariationalPosterior, seed: u64) -> Vec<f64> {
    let xi = standard_normals(&mut ChaCha8Rng::seed_from_u64(seed), q.k());
    q.reparameterize(&xi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViHyper {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Weight on the prior KL; `None` means `1 / |train|`.
    pub kl_scale: Option<f64>,
    pub seed: u64,
    /// Initial posterior scale.
    pub init_sigma: f64,
    /// Keep `rho` at its initial value (point-estimate fine-tuning of `mu`).
    pub freeze_scale: bool,
}

impl Default for ViHyper {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 32,
            lr: 0.001,
            kl_scale: None,
            seed: 17,
            init_sigma: INIT_SIGMA,
            freeze_scale: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub objective: f64,
    pub data_term: f64,
    /// `kl_scale * KL(q ‖ prior)`.
    pub kl_term: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub objective: f64,
    pub kl_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViFit {
    pub posterior: VariationalPosterior,
    pub curve: Vec<CurvePoint>,
}

/// Everything held fixed while the posterior is optimized.
pub struct ViProblem<'a> {
    pub config: &'a ModelConfig,
    pub subspace: &'a ActiveSubspace,
    pub partition: &'a Partition,
    pub theta0: &'a ParameterVector,
    pub prior: &'a PriorConfig,
}

impl ViProblem<'_> {
    pub fn check(&self) -> Result<()> {
        self.theta0.check_matches(self.config)?;
        if self.subspace.dim() != self.partition.stochastic_len() {
            return Err(Error::Contract(format!(
                "subspace lives in {} dims, partition has {} stochastic coordinates",
                self.subspace.dim(),
                self.partition.stochastic_len()
            )));
        }
        if self.theta0.len() != self.partition.total_len() {
            return Err(Error::Contract("theta0 does not match the partition".into()));
        }
        self.prior.validate(self.subspace.k)
    }

    /// Full weights at subspace point `omega`.
    pub fn weights_at(&self, omega: &[f64]) -> Result<ParameterVector> {
        assemble_full(&project_to_full(self.subspace, omega)?, self.theta0, self.partition)
    }

    /// Batch-mean ELBO loss at `ω = μ + σ ⊙ ξ` plus `kl_scale · KL(q ‖ prior)`,
    /// with gradients w.r.t. `μ` and `rho` at fixed `ξ` and latent noise.
    pub fn objective(
        &self,
        q: &VariationalPosterior,
        xi: &[f64],
        batch: &[&SequenceDatum],
        noises: &[LatentNoise],
        kl_scale: f64,
    ) -> Result<ObjectiveEval> {
        let k = self.subspace.k;
        if q.k() != k || xi.len() != k {
            return Err(Error::Contract(format!(
                "posterior/noise dimension mismatch: q has {}, xi has {}, subspace has {k}",
                q.k(),
                xi.len()
            )));
        }
        if batch.is_empty() || batch.len() != noises.len() {
            return Err(Error::Contract("batch and latent noise lengths differ or are empty".into()));
        }
        let omega = q.reparameterize(xi);
        let theta = self.weights_at(&omega)?;
        let mut grad = vec![0.0; theta.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut data_term = 0.0;
        for (x, noise) in batch.iter().zip(noises) {
            data_term += scale * accumulate_grad(self.config, &theta, x, noise, scale, &mut grad)?;
        }
        let g_omega = self.subspace.pull_back(&gather_slice(&grad, self.partition)?)?;

        let kl = gaussian_kl(q, self.prior)?;
        let sp2 = self.prior.std * self.prior.std;
        let sigma = q.sigma();
        let mut grad_mu = Vec::with_capacity(k);
        let mut grad_rho = Vec::with_capacity(k);
        for i in 0..k {
            let dkl_dmu = (q.mu[i] - self.prior.mean[i]) / sp2;
            let dkl_dsigma = -1.0 / sigma[i] + sigma[i] / sp2;
            let dsigma_drho = sigmoid(q.rho[i]);
            grad_mu.push(g_omega[i] + kl_scale * dkl_dmu);
            grad_rho.push((g_omega[i] * xi[i] + kl_scale * dkl_dsigma) * dsigma_drho);
        }
        let kl_term = kl_scale * kl;
        Ok(ObjectiveEval {
            objective: data_term + kl_term,
            data_term,
            kl_term,
            grad_mu,
            grad_rho,
        })
    }
}

/// Adam on `(μ, rho)`, one posterior draw per mini-batch.
pub fn fit_posterior(problem: &ViProblem, data: &Dataset, hyper: &ViHyper) -> Result<ViFit> {
    problem.check()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if hyper.batch == 0 || !(hyper.lr > 0.0) {
        return Err(Error::Config("vi.batch and vi.lr must be positive".into()));
    }
    let kl_scale = hyper.kl_scale.unwrap_or(1.0 / data.train.len() as f64);
    if !(kl_scale.is_finite() && kl_scale >= 0.0) {
        return Err(Error::Config(format!("vi.kl_scale must be >= 0, got {kl_scale}")));
    }
    if !(hyper.init_sigma.is_finite() && hyper.init_sigma > 0.0) {
        return Err(Error::Config(format!("vi.init_sigma must be positive, got {}", hyper.init_sigma)));
    }
    let k = problem.subspace.k;
    let mut q = VariationalPosterior::from_sigma(vec![0.0; k], &vec![hyper.init_sigma; k])?;
    let mut params: Vec<f64> = q.mu.iter().chain(&q.rho).copied().collect();
    let mut opt = Adam::new(hyper.lr, 2 * k);
    let mut curve = Vec::with_capacity(hyper.epochs);
    let latent_dim = problem.config.latent_dim;

    for epoch in 0..hyper.epochs {
        let mut rng = rng_for(hyper.seed, Stream::Vi, epoch as u64);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let (mut obj_sum, mut kl_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(hyper.batch).enumerate() {
            let xi = standard_normals(&mut rng, k);
            let batch: Vec<&SequenceDatum> = chunk.iter().map(|&i| &data.train[i]).collect();
            let noises: Vec<LatentNoise> = chunk.iter().map(|_| LatentNoise::draw(&mut rng, latent_dim)).collect();
            let to_training = |e: Error| Error::Training {
                epoch,
                batch: b,
                detail: e.to_string(),
            };
            let eval = problem
                .objective(&q, &xi, &batch, &noises, kl_scale)
                .map_err(to_training)?;
            if !eval.objective.is_finite() {
                return Err(to_training(Error::Numerical {
                    layer: "vi objective".into(),
                    detail: format!("{}", eval.objective),
                }));
            }
            let mut grad: Vec<f64> = eval.grad_mu.iter().chain(&eval.grad_rho).copied().collect();
            if hyper.freeze_scale {
                grad[k..].iter_mut().for_each(|g| *g = 0.0);
            }
            opt.step(&mut params, &grad);
            if hyper.freeze_scale {
                params[k..].copy_from_slice(&q.rho);
            }
            q.mu.copy_from_slice(&params[..k]);
            q.rho.copy_from_slice(&params[k..]);
            obj_sum += eval.objective;
            kl_sum += eval.kl_term;
            batches += 1;
        }
        curve.push(CurvePoint {
            epoch,
            objective: obj_sum / batches as f64,
            kl_term: kl_sum / batches as f64,
        });
    }
    Ok(ViFit { posterior: q, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_round_trip() {
        for y in [1e-300, 1e-8, 0.01, 0.5, 1.0, 7.0, 25.0, 40.0, 300.0] {
            let x = softplus_inv(y);
            assert!((softplus(x) - y).abs() <= 1e-12 * y.max(1.0), "{y} -> {x} -> {}", softplus(x));
        }
        assert!(softplus(-800.0) == 0.0);
        assert!(softplus(-50.0) > 0.0);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let prior = PriorConfig::isotropic(3, 0.0, 5.0);
        let q = VariationalPosterior::from_sigma(vec![0.0; 3], &[5.0; 3]).unwrap();
        assert_eq!(gaussian_kl(&q, &prior).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_vs_diffuse_prior() {
        let prior = PriorConfig::isotropic(1, 0.0, 5.0);
        let q = VariationalPosterior::from_sigma(vec![0.0], &[1.0]).unwrap();
        let expect = 5f64.ln() - 0.5 + 1.0 / 50.0;
        assert!((expect - 1.12944).abs() < 1e-5);
        assert!((gaussian_kl(&q, &prior).unwrap() - expect).abs() < 1e-12);

        let prior4 = PriorConfig::isotropic(4, 0.0, 5.0);
        let q4 = VariationalPosterior::from_sigma(vec![0.0; 4], &[1.0; 4]).unwrap();
        assert!((gaussian_kl(&q4, &prior4).unwrap() - 4.0 * expect).abs() < 1e-12);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let prior = PriorConfig::isotropic(2, 0.0, 5.0);
        assert!(gaussian_kl(&VariationalPosterior::initial(3), &prior).is_err());
        assert!(gaussian_kl(&VariationalPosterior::initial(2), &PriorConfig::isotropic(2, 0.0, 0.0)).is_err());
    }

    #[test]
    fn omega_collapses_to_mean() {
        let q = VariationalPosterior::new(vec![1.0, -2.0], vec![-60.0, -60.0]).unwrap();
        let w = sample_omega(&q, 5);
        assert!((w[0] - 1.0).abs() < 1e-20 && (w[1] + 2.0).abs() < 1e-20);
        assert_eq!(sample_omega(&q, 5), w);
    }

    #[test]
    fn omega_law_of_large_numbers() {
        let q = VariationalPosterior::from_sigma(vec![0.3, -1.0, 2.0], &[0.5, 1.5, 0.05]).unwrap();
        let sigma = q.sigma();
        let n = 10_000;
        let mut mean = [0.0; 3];
        for s in 0..n {
            let w = sample_omega(&q, s as u64);
            for i in 0..3 {
                mean[i] += w[i] / n as f64;
            }
        }
        for i in 0..3 {
            assert!((mean[i] - q.mu[i]).abs() < 3.0 * sigma[i] / (n as f64).sqrt());
        }
    }

    #[test]
    fn initial_posterior() {
        let q = VariationalPosterior::initial(20);
        assert!(q.mu.iter().all(|&m| m == 0.0));
        assert!(q.sigma().iter().all(|s| (s - INIT_SIGMA).abs() < 1e-15));
    }
}
