//! Posterior ensembles and their evaluation: per-model nLL averaging (or a
//! mixture-density variant) and a latent-decoding diversity experiment.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nnkit::{datum_nll, decode_latent, ModelConfig, ParameterVector, SequenceDatum};
use crate::partition::{assemble_full, Partition};
use crate::seed::{derive_seed, rng_for, Stream};
use crate::subspace::{project_to_full, ActiveSubspace};
use crate::vi::{sample_omega, VariationalPosterior};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    pub omegas: Vec<Vec<f64>>,
    pub thetas: Vec<ParameterVector>,
    pub source: String,
}

impl PosteriorEnsemble {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// `M` independent draws `ω_m ~ q`, each mapped to full weights.
pub fn draw_ensemble(
    q: &VariationalPosterior,
    s: &ActiveSubspace,
    p: &Partition,
    theta0: &ParameterVector,
    m: usize,
    seed: u64,
) -> Result<PosteriorEnsemble> {
    if m == 0 {
        return Err(Error::Config("ensemble size M must be >= 1".into()));
    }
    if q.k() != s.k {
        return Err(Error::Contract(format!(
            "posterior has k = {}, subspace has k = {}",
            q.k(),
            s.k
        )));
    }
    let mut omegas = Vec::with_capacity(m);
    let mut thetas = Vec::with_capacity(m);
    for i in 0..m {
        let omega = sample_omega(q, derive_seed(seed, Stream::Ensemble, i as u64));
        thetas.push(assemble_full(&project_to_full(s, &omega)?, theta0, p)?);
        omegas.push(omega);
    }
    Ok(PosteriorEnsemble {
        omegas,
        thetas,
        source: format!("selector={},seed={seed}", p.selector),
    })
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllReport {
    pub mean: f64,
    pub std: f64,
    pub per_run: Vec<f64>,
    pub runs: usize,
}

impl NllReport {
    pub fn from_runs(per_run: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_run);
        Self {
            mean,
            std,
            runs: per_run.len(),
            per_run,
        }
    }
}

/// How an ensemble's nLL is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NllMode {
    /// Each model is evaluated separately; runs are pooled across models.
    #[default]
    PerModel,
    /// Per datum, `-log mean_m exp(-nll_m)` over the ensemble.
    Mixture,
}

fn dataset_nll(config: &ModelConfig, theta: &ParameterVector, data: &[SequenceDatum], latent_samples: usize, run_seed: u64) -> Result<f64> {
    let mut sum = 0.0;
    for (i, x) in data.iter().enumerate() {
        sum += datum_nll(config, theta, x, latent_samples, derive_seed(run_seed, Stream::NllDatum, i as u64))?;
    }
    Ok(sum / data.len() as f64)
}

fn check_eval_inputs(data: &[SequenceDatum], latent_samples: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    if latent_samples == 0 {
        return Err(Error::Config("eval.latent_samples must be >= 1".into()));
    }
    Ok(())
}

/// `runs` dataset-mean nLL evaluations of a single model with fresh latent noise.
pub fn evaluate_nll_pretrained(
    config: &ModelConfig,
    theta0: &ParameterVector,
    data: &[SequenceDatum],
    runs: usize,
    latent_samples: usize,
    seed: u64,
) -> Result<NllReport> {
    check_eval_inputs(data, latent_samples)?;
    if runs == 0 {
        return Err(Error::Config("eval.runs must be >= 1".into()));
    }
    let per_run = (0..runs)
        .into_par_iter()
        .map(|r| dataset_nll(config, theta0, data, latent_samples, derive_seed(seed, Stream::NllRun, r as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(NllReport::from_runs(per_run))
}

/// Per-model protocol: run `m * repeats + r` evaluates model `m`, and uses the
/// same run seed as run `m * repeats + r` of [`evaluate_nll_pretrained`].
pub fn evaluate_nll_ensemble(
    config: &ModelConfig,
    e: &PosteriorEnsemble,
    data: &[SequenceDatum],
    repeats_per_model: usize,
    latent_samples: usize,
    seed: u64,
) -> Result<NllReport> {
    check_eval_inputs(data, latent_samples)?;
    let total = e.len() * repeats_per_model;
    if total < 2 {
        return Err(Error::Config(format!(
            "M * repeats_per_model = {total} must be >= 2"
        )));
    }
    let per_run = (0..total)
        .into_par_iter()
        .map(|j| {
            let theta = &e.thetas[j / repeats_per_model];
            dataset_nll(config, theta, data, latent_samples, derive_seed(seed, Stream::NllRun, j as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NllReport::from_runs(per_run))
}

/// Mixture-density reading of model averaging: per datum the ensemble
/// likelihood is the mean of member likelihoods, all members sharing the
/// run's latent noise.
pub fn evaluate_nll_mixture(
    config: &ModelConfig,
    e: &PosteriorEnsemble,
    data: &[SequenceDatum],
    runs: usize,
    latent_samples: usize,
    seed: u64,
) -> Result<NllReport> {
    check_eval_inputs(data, latent_samples)?;
    if runs == 0 || e.is_empty() {
        return Err(Error::Config("mixture evaluation needs runs >= 1 and M >= 1".into()));
    }
    let ln_m = (e.len() as f64).ln();
    let per_run = (0..runs)
        .into_par_iter()
        .map(|r| {
            let run_seed = derive_seed(seed, Stream::NllRun, r as u64);
            let mut sum = 0.0;
            for (i, x) in data.iter().enumerate() {
                let s = derive_seed(run_seed, Stream::NllDatum, i as u64);
                let neg: Vec<f64> = e
                    .thetas
                    .iter()
                    .map(|t| datum_nll(config, t, x, latent_samples, s).map(|v| -v))
                    .collect::<Result<_>>()?;
                let top = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lme = top + neg.iter().map(|v| (v - top).exp()).sum::<f64>().ln() - ln_m;
                sum -= lme;
            }
            Ok(sum / data.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NllReport::from_runs(per_run))
}

const SYMBOL_WEIGHT: f64 = 0.5;
const REPEAT_BONUS: f64 = 1.0;

/// Synthetic property: `0.5 * symbol` per position plus 1 per adjacent equal pair.
pub fn sequence_property(x: &SequenceDatum) -> f64 {
    let base: f64 = x.symbols.iter().map(|&s| SYMBOL_WEIGHT * s as f64).sum();
    let pairs = x.symbols.windows(2).filter(|w| w[0] == w[1]).count();
    base + REPEAT_BONUS * pairs as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreOrder {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

/// What the "top 10%" is a tenth of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TopFraction {
    /// `ceil(num_points / 10)` best unique sequences.
    #[default]
    OfPoints,
    /// `ceil(unique_count / 10)` best unique sequences.
    OfUnique,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DiversityOptions {
    pub order: ScoreOrder,
    pub top_of: TopFraction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub top10_mean: f64,
    pub top10_std: f64,
    /// Largest per-repeat count of unique decoded sequences.
    pub unique_count: usize,
    pub repeats: usize,
    pub per_repeat_top10: Vec<f64>,
    pub per_repeat_unique: Vec<usize>,
    /// Mean score over all unique sequences of each repeat.
    pub per_repeat_unique_mean: Vec<f64>,
}

/// Standard-normal latent points for one repeat; shared by every caller using the same seed.
pub fn latent_points(latent_dim: usize, num_points: usize, seed: u64, repeat: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, Stream::Latents, repeat as u64);
    (0..num_points)
        .map(|_| (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Decodes the repeat's latent points, block `m` of `num_points / M` going to model `m`.
pub fn decode_points(config: &ModelConfig, models: &[ParameterVector], points: &[Vec<f64>]) -> Result<Vec<SequenceDatum>> {
    if models.is_empty() || !points.len().is_multiple_of(models.len()) {
        return Err(Error::Config(format!(
            "num_points = {} must be divisible by the number of models ({})",
            points.len(),
            models.len()
        )));
    }
    let per_model = points.len() / models.len();
    points
        .par_iter()
        .enumerate()
        .map(|(j, z)| decode_latent(config, &models[j / per_model], z))
        .collect()
}

pub fn diversity_eval(
    config: &ModelConfig,
    models: &[ParameterVector],
    num_points: usize,
    repeats: usize,
    seed: u64,
    opts: DiversityOptions,
) -> Result<DiversityReport> {
    diversity_eval_with(config, models, num_points, repeats, seed, opts, sequence_property)
}

pub fn diversity_eval_with<F>(
    config: &ModelConfig,
    models: &[ParameterVector],
    num_points: usize,
    repeats: usize,
    seed: u64,
    opts: DiversityOptions,
    score: F,
) -> Result<DiversityReport>
where
    F: Fn(&SequenceDatum) -> f64,
{
    if num_points == 0 || repeats == 0 {
        return Err(Error::Config("num_points and repeats must be >= 1".into()));
    }
    if models.is_empty() || !num_points.is_multiple_of(models.len()) {
        return Err(Error::Config(format!(
            "eval.num_points = {num_points} must be divisible by the number of models ({})",
            models.len()
        )));
    }
    let mut per_repeat_top10 = Vec::with_capacity(repeats);
    let mut per_repeat_unique = Vec::with_capacity(repeats);
    let mut per_repeat_unique_mean = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let points = latent_points(config.latent_dim, num_points, seed, r);
        let decoded = decode_points(config, models, &points)?;
        let unique: BTreeSet<SequenceDatum> = decoded.into_iter().collect();
        let mut scores: Vec<f64> = unique.iter().map(&score).collect();
        match opts.order {
            ScoreOrder::HigherIsBetter => scores.sort_by(|a, b| b.total_cmp(a)),
            ScoreOrder::LowerIsBetter => scores.sort_by(|a, b| a.total_cmp(b)),
        }
        let base = match opts.top_of {
            TopFraction::OfPoints => num_points,
            TopFraction::OfUnique => scores.len(),
        };
        let top = base.div_ceil(10).clamp(1, scores.len());
        per_repeat_top10.push(scores[..top].iter().sum::<f64>() / top as f64);
        per_repeat_unique_mean.push(scores.iter().sum::<f64>() / scores.len() as f64);
        per_repeat_unique.push(scores.len());
    }
    let (top10_mean, top10_std) = mean_std(&per_repeat_top10);
    Ok(DiversityReport {
        top10_mean,
        top10_std,
        unique_count: per_repeat_unique.iter().copied().max().unwrap_or(0),
        repeats,
        per_repeat_top10,
        per_repeat_unique,
        per_repeat_unique_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::init_parameters;
    use crate::partition::{build_partition, gather_stochastic, Selector};
    use nalgebra::DMatrix;

    #[test]
    fn property_examples() {
        let s = |v: Vec<usize>| sequence_property(&SequenceDatum { symbols: v });
        assert_eq!(s(vec![0; 8]), 7.0);
        assert_eq!(s(vec![0, 1, 0, 1, 0, 1, 0, 1]), 2.0);
        assert_eq!(s(vec![3; 8]), 19.0);
    }

    #[test]
    fn mean_std_consistency() {
        let r = NllReport::from_runs(vec![1.0, 2.0, 4.0]);
        assert_eq!(r.runs, 3);
        assert!((r.mean - 7.0 / 3.0).abs() < 1e-15);
        let var = ((1.0 - r.mean).powi(2) + (2.0 - r.mean).powi(2) + (4.0 - r.mean).powi(2)) / 2.0;
        assert!((r.std - var.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    fn toy_subspace(cfg: &ModelConfig, p: &Partition, theta0: &ParameterVector, k: usize) -> ActiveSubspace {
        let d_s = p.stochastic_len();
        let mut proj = DMatrix::zeros(d_s, k);
        for i in 0..k {
            proj[(i, i)] = 1.0;
        }
        let _ = cfg;
        ActiveSubspace {
            anchor: gather_stochastic(theta0, p).unwrap(),
            projection: proj,
            eigenvalues: vec![1.0; k],
            k,
            n: k,
            sigma0: 0.1,
        }
    }

    #[test]
    fn collapsed_posterior_reproduces_anchor() {
        let cfg = ModelConfig::default();
        let theta0 = init_parameters(&cfg, 2);
        let p = build_partition(&cfg, Selector::Decoder);
        let s = toy_subspace(&cfg, &p, &theta0, 4);
        let q = VariationalPosterior::new(vec![0.0; 4], vec![-1000.0; 4]).unwrap();
        let e = draw_ensemble(&q, &s, &p, &theta0, 10, 3).unwrap();
        assert_eq!(e.len(), 10);
        for t in &e.thetas {
            assert_eq!(t, &theta0);
        }
    }

    #[test]
    fn ensemble_keeps_frozen_block() {
        let cfg = ModelConfig::default();
        let theta0 = init_parameters(&cfg, 2);
        let p = build_partition(&cfg, Selector::Encoder);
        let s = toy_subspace(&cfg, &p, &theta0, 3);
        let q = VariationalPosterior::from_sigma(vec![0.5, -0.5, 1.0], &[0.3; 3]).unwrap();
        let e = draw_ensemble(&q, &s, &p, &theta0, 4, 9).unwrap();
        for t in &e.thetas {
            for &i in &p.deterministic_indices {
                assert_eq!(t.values[i].to_bits(), theta0.values[i].to_bits());
            }
        }
        assert_ne!(e.thetas[0], e.thetas[1]);
        assert!(draw_ensemble(&q, &s, &p, &theta0, 0, 9).is_err());
    }

    #[test]
    fn zero_model_nll_is_constant() {
        let cfg = ModelConfig::default();
        let theta = ParameterVector::zeros(&cfg);
        let data = crate::nnkit::generate_dataset(&cfg, 50, 1).unwrap();
        let r = evaluate_nll_pretrained(&cfg, &theta, &data.validation, 6, 1, 4).unwrap();
        assert!(r.per_run.iter().all(|v| (v - 8.0 * 4f64.ln()).abs() < 1e-12));
        assert!(r.std < 1e-12);
    }

    #[test]
    fn diversity_divisibility() {
        let cfg = ModelConfig::default();
        let models = vec![ParameterVector::zeros(&cfg); 3];
        assert!(matches!(
            diversity_eval(&cfg, &models, 100, 1, 0, DiversityOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_model_decodes_single_sequence() {
        let cfg = ModelConfig::default();
        let models = vec![ParameterVector::zeros(&cfg)];
        let r = diversity_eval(&cfg, &models, 50, 2, 0, DiversityOptions::default()).unwrap();
        assert_eq!(r.per_repeat_unique, vec![1, 1]);
        assert_eq!(r.top10_mean, 7.0);
        assert_eq!(r.top10_std, 0.0);
    }
}
