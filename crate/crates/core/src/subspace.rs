//! Active subspace of the stochastic parameter block.
//!
//! Gradients of the training loss are sampled around the anchor weights,
//! and the top-k eigenvectors of their uncentered covariance
//! `C = (1/n) G Gᵀ` become the columns of the projection `P`. The
//! eigenpairs come from the `n x n` Gram matrix `Gᵀ G`, so the `D_S x D_S`
//! covariance is never formed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nnkit::{grad_elbo, Dataset, LatentNoise, ModelConfig, ParameterVector};
use crate::partition::{assemble_full, gather_slice, gather_stochastic, Partition};
use crate::seed::{rng_for, Stream};

/// Relative cutoff on Gram eigenvalues below which a direction counts as null.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Loss gradients w.r.t. the stochastic block, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSampleMatrix {
    pub columns: DMatrix<f64>,
    pub sigma0: f64,
    pub seed: u64,
    pub datum_ids: Vec<usize>,
}

impl GradientSampleMatrix {
    pub fn n(&self) -> usize {
        self.columns.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSubspace {
    pub anchor: Vec<f64>,
    /// `D_S x k`, orthonormal columns.
    pub projection: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub k: usize,
    pub n: usize,
    pub sigma0: f64,
}

impl ActiveSubspace {
    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// `Pᵀ g` for a gradient `g` over the stochastic block.
    pub fn pull_back(&self, g_s: &[f64]) -> Result<Vec<f64>> {
        if g_s.len() != self.dim() {
            return Err(Error::Contract(format!(
                "gradient has length {}, subspace lives in {}",
                g_s.len(),
                self.dim()
            )));
        }
        Ok(self.projection.tr_mul(&DVector::from_column_slice(g_s)).as_slice().to_vec())
    }
}

/// Draws `n` perturbed-weight loss gradients.
///
/// Column `j` uses datum `datum_ids[j]` (sampled without replacement from
/// the training split), weights `θ₀^S + σ₀ ξ_j` with `ξ_j ~ N(0, I)`, and its
/// own latent noise. Each column has an independent seeded stream, so the
/// parallel evaluation is order-independent.
#[allow(clippy::too_many_arguments)]
pub fn sample_gradients(
    config: &ModelConfig,
    theta0: &ParameterVector,
    p: &Partition,
    data: &Dataset,
    n: usize,
    sigma0: f64,
    seed: u64,
) -> Result<GradientSampleMatrix> {
    theta0.check_matches(config)?;
    if n == 0 || n > data.train.len() {
        return Err(Error::Config(format!(
            "subspace.n = {n} must be between 1 and the training split size {}",
            data.train.len()
        )));
    }
    if !(sigma0.is_finite() && sigma0 >= 0.0) {
        return Err(Error::Config(format!("subspace.sigma0 = {sigma0} must be >= 0")));
    }
    let anchor = gather_stochastic(theta0, p)?;
    let mut pick = rng_for(seed, Stream::GradientColumn, u64::MAX);
    let datum_ids = index::sample(&mut pick, data.train.len(), n).into_vec();

    let cols: Vec<Vec<f64>> = datum_ids
        .par_iter()
        .enumerate()
        .map(|(j, &id)| {
            let mut rng = rng_for(seed, Stream::GradientColumn, j as u64);
            let theta_s: Vec<f64> = anchor
                .iter()
                .map(|&a| a + sigma0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let noise = LatentNoise::draw(&mut rng, config.latent_dim);
            let theta = assemble_full(&theta_s, theta0, p)?;
            let g = grad_elbo(config, &theta, &data.train[id], &noise).map_err(|e| Error::GradientSample {
                index: j,
                detail: e.to_string(),
            })?;
            let g_s = gather_slice(&g, p)?;
            if g_s.iter().any(|v| !v.is_finite()) {
                return Err(Error::GradientSample {
                    index: j,
                    detail: "non-finite entry".into(),
                });
            }
            Ok(g_s)
        })
        .collect::<Result<_>>()?;

    let d_s = anchor.len();
    let columns = DMatrix::from_fn(d_s, n, |i, j| cols[j][i]);
    Ok(GradientSampleMatrix {
        columns,
        sigma0,
        seed,
        datum_ids,
    })
}

/// Top-k eigenpairs of `(1/n) G Gᵀ` for the `D_S x n` matrix `g`.
///
/// Eigenvalues are descending; each eigenvector is flipped so its
/// largest-magnitude entry is positive.
pub fn top_eigenpairs(g: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = g.ncols();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must satisfy 1 <= k <= n = {n}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("gradient matrix has non-finite entries".into()));
    }
    let gram = g.tr_mul(g);
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s_top = eig.eigenvalues[order[0]].max(0.0);
    let effective = order
        .iter()
        .take_while(|&&i| s_top > 0.0 && eig.eigenvalues[i] >= RANK_TOLERANCE * s_top)
        .count();
    if effective < k {
        return Err(Error::RankDeficient {
            requested: k,
            effective,
        });
    }

    let mut v1 = DMatrix::zeros(g.nrows(), k);
    let mut lambda = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let s = eig.eigenvalues[i];
        let w = eig.eigenvectors.column(i);
        let mut v = g * w / s.sqrt();
        let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            v.neg_mut();
        }
        v1.set_column(c, &v);
        lambda.push((s / n as f64).max(0.0));
    }
    Ok((v1, lambda))
}

pub fn covariance_eigs(g: &GradientSampleMatrix, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    top_eigenpairs(&g.columns, k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceSettings {
    pub n: usize,
    pub k: usize,
    pub sigma0: f64,
    pub seed: u64,
}

pub fn build_subspace(
    config: &ModelConfig,
    theta0: &ParameterVector,
    p: &Partition,
    data: &Dataset,
    settings: &SubspaceSettings,
) -> Result<ActiveSubspace> {
    let d_s = p.stochastic_len();
    if settings.k > settings.n || settings.n > d_s {
        return Err(Error::Config(format!(
            "need k <= n <= D_S, got k = {}, n = {}, D_S = {d_s}",
            settings.k, settings.n
        )));
    }
    let g = sample_gradients(config, theta0, p, data, settings.n, settings.sigma0, settings.seed)?;
    let (projection, eigenvalues) = covariance_eigs(&g, settings.k)?;
    Ok(ActiveSubspace {
        anchor: gather_stochastic(theta0, p)?,
        projection,
        eigenvalues,
        k: settings.k,
        n: settings.n,
        sigma0: settings.sigma0,
    })
}

/// `θ^S = anchor + P ω`.
pub fn project_to_full(s: &ActiveSubspace, omega: &[f64]) -> Result<Vec<f64>> {
    if omega.len() != s.k {
        return Err(Error::Contract(format!(
            "omega has length {}, subspace dimension is {}",
            omega.len(),
            s.k
        )));
    }
    let offset = &s.projection * DVector::from_column_slice(omega);
    Ok(s.anchor.iter().zip(offset.iter()).map(|(a, o)| a + o).collect())
}
