//! Conversions between pipeline objects and checkpoints.

use asinfer::inference::PosteriorEnsemble;
use asinfer::nnkit::{Dataset, ModelConfig, ParameterVector, Pretrained, SequenceDatum};
use asinfer::partition::Selector;
use asinfer::subspace::ActiveSubspace;
use asinfer::vi::{CurvePoint, PriorConfig, VariationalPosterior};
use nalgebra::DMatrix;

use crate::checkpoint::{Checkpoint, CheckpointError, Kind, Value};

fn bad(field: &str, detail: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Corrupt {
        field: field.to_string(),
        detail: detail.to_string(),
    }
}

fn to_i64(v: usize) -> i64 {
    i64::try_from(v).expect("count fits in i64")
}

fn selector_field(c: &Checkpoint, expected: Selector) -> Result<(), CheckpointError> {
    let found = c.text("selector")?;
    if found != expected.as_str() {
        return Err(bad("selector", format!("checkpoint is for `{found}`, expected `{expected}`")));
    }
    Ok(())
}

fn split_rows(rows: &[SequenceDatum], seq_len: usize) -> Value {
    Value::Int {
        shape: vec![rows.len(), seq_len],
        data: rows.iter().flat_map(|r| r.symbols.iter().map(|&s| to_i64(s))).collect(),
    }
}

fn read_rows(c: &Checkpoint, name: &str, cfg: &ModelConfig) -> Result<Vec<SequenceDatum>, CheckpointError> {
    let (shape, data) = c.ints(name, &[None, Some(cfg.seq_len)])?;
    let mut rows = Vec::with_capacity(shape[0]);
    for chunk in data.chunks(cfg.seq_len.max(1)) {
        let symbols = chunk
            .iter()
            .map(|&s| usize::try_from(s).map_err(|_| bad(name, format!("negative symbol {s}"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(SequenceDatum::new(cfg, symbols).map_err(|e| bad(name, e))?);
    }
    Ok(rows)
}

pub fn dataset_checkpoint(d: &Dataset, cfg: &ModelConfig, hash: &str) -> Checkpoint {
    Checkpoint::new(Kind::Dataset, hash)
        .with("generator_seed", Value::Text(d.generator_seed.to_string()))
        .with("train", split_rows(&d.train, cfg.seq_len))
        .with("validation", split_rows(&d.validation, cfg.seq_len))
        .with("test", split_rows(&d.test, cfg.seq_len))
        .with("template_ids", Value::ints(d.template_ids.iter().map(|&t| to_i64(t)).collect()))
}

pub fn dataset_from(c: &Checkpoint, cfg: &ModelConfig, hash: &str) -> Result<Dataset, CheckpointError> {
    c.expect(Kind::Dataset, hash)?;
    let train = read_rows(c, "train", cfg)?;
    let validation = read_rows(c, "validation", cfg)?;
    let test = read_rows(c, "test", cfg)?;
    let total = train.len() + validation.len() + test.len();
    let template_ids = c
        .ints("template_ids", &[Some(total)])?
        .1
        .iter()
        .map(|&t| usize::try_from(t).map_err(|_| bad("template_ids", format!("negative id {t}"))))
        .collect::<Result<_, _>>()?;
    let generator_seed = c
        .text("generator_seed")?
        .parse()
        .map_err(|e| bad("generator_seed", e))?;
    Ok(Dataset {
        train,
        validation,
        test,
        generator_seed,
        template_ids,
    })
}

pub fn params_checkpoint(p: &Pretrained, hash: &str) -> Checkpoint {
    Checkpoint::new(Kind::Params, hash)
        .with("values", Value::reals(p.theta.values.clone()))
        .with("epoch_losses", Value::reals(p.epoch_losses.clone()))
}

pub fn params_from(c: &Checkpoint, cfg: &ModelConfig, hash: &str) -> Result<Pretrained, CheckpointError> {
    c.expect(Kind::Params, hash)?;
    let values = c.reals("values", &[Some(cfg.num_params())])?.1.to_vec();
    let theta = ParameterVector::from_values(cfg, values).map_err(|e| bad("values", e))?;
    let epoch_losses = c.reals("epoch_losses", &[None])?.1.to_vec();
    Ok(Pretrained { theta, epoch_losses })
}

pub fn subspace_checkpoint(s: &ActiveSubspace, selector: Selector, hash: &str) -> Checkpoint {
    let (rows, cols) = s.projection.shape();
    // Row-major, matching the shape header.
    let data = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| s.projection[(i, j)])
        .collect();
    Checkpoint::new(Kind::Subspace, hash)
        .with("selector", Value::Text(selector.as_str().into()))
        .with("k", Value::int(to_i64(s.k)))
        .with("n", Value::int(to_i64(s.n)))
        .with("sigma0", Value::reals(vec![s.sigma0]))
        .with("anchor", Value::reals(s.anchor.clone()))
        .with("projection", Value::Real { shape: vec![rows, cols], data })
        .with("eigenvalues", Value::reals(s.eigenvalues.clone()))
}

pub fn subspace_from(
    c: &Checkpoint,
    selector: Selector,
    stochastic_len: usize,
    hash: &str,
) -> Result<ActiveSubspace, CheckpointError> {
    c.expect(Kind::Subspace, hash)?;
    selector_field(c, selector)?;
    let k = c.count("k")?;
    let n = c.count("n")?;
    let sigma0 = c.real("sigma0")?;
    let anchor = c.reals("anchor", &[Some(stochastic_len)])?.1.to_vec();
    let (_, data) = c.reals("projection", &[Some(stochastic_len), Some(k)])?;
    let projection = DMatrix::from_row_slice(stochastic_len, k, data);
    let eigenvalues = c.reals("eigenvalues", &[Some(k)])?.1.to_vec();
    Ok(ActiveSubspace {
        anchor,
        projection,
        eigenvalues,
        k,
        n,
        sigma0,
    })
}

pub struct PosteriorRecord {
    pub posterior: VariationalPosterior,
    pub prior: PriorConfig,
    pub curve: Vec<CurvePoint>,
}

pub fn posterior_checkpoint(r: &PosteriorRecord, selector: Selector, hash: &str) -> Checkpoint {
    Checkpoint::new(Kind::Posterior, hash)
        .with("selector", Value::Text(selector.as_str().into()))
        .with("k", Value::int(to_i64(r.posterior.k())))
        .with("mu", Value::reals(r.posterior.mu.clone()))
        .with("rho", Value::reals(r.posterior.rho.clone()))
        .with("prior_mean", Value::reals(r.prior.mean.clone()))
        .with("prior_std", Value::reals(vec![r.prior.std]))
        .with("curve_epoch", Value::ints(r.curve.iter().map(|c| to_i64(c.epoch)).collect()))
        .with("curve_objective", Value::reals(r.curve.iter().map(|c| c.objective).collect()))
        .with("curve_kl", Value::reals(r.curve.iter().map(|c| c.kl_term).collect()))
}

pub fn posterior_from(c: &Checkpoint, selector: Selector, hash: &str) -> Result<PosteriorRecord, CheckpointError> {
    c.expect(Kind::Posterior, hash)?;
    selector_field(c, selector)?;
    let k = c.count("k")?;
    let mu = c.reals("mu", &[Some(k)])?.1.to_vec();
    let rho = c.reals("rho", &[Some(k)])?.1.to_vec();
    let posterior = VariationalPosterior::new(mu, rho).map_err(|e| bad("rho", e))?;
    let prior = PriorConfig {
        mean: c.reals("prior_mean", &[Some(k)])?.1.to_vec(),
        std: c.real("prior_std")?,
    };
    let epochs = c.ints("curve_epoch", &[None])?.1;
    let len = Some(epochs.len());
    let objective = c.reals("curve_objective", &[len])?.1;
    let kl = c.reals("curve_kl", &[len])?.1;
    let curve = epochs
        .iter()
        .zip(objective)
        .zip(kl)
        .map(|((&e, &o), &kl)| CurvePoint {
            epoch: e as usize,
            objective: o,
            kl_term: kl,
        })
        .collect();
    Ok(PosteriorRecord { posterior, prior, curve })
}

pub fn ensemble_checkpoint(e: &PosteriorEnsemble, selector: Selector, hash: &str) -> Checkpoint {
    let m = e.len();
    let k = e.omegas.first().map_or(0, Vec::len);
    let d = e.thetas.first().map_or(0, ParameterVector::len);
    Checkpoint::new(Kind::Ensemble, hash)
        .with("selector", Value::Text(selector.as_str().into()))
        .with("source", Value::Text(e.source.clone()))
        .with(
            "omegas",
            Value::Real {
                shape: vec![m, k],
                data: e.omegas.concat(),
            },
        )
        .with(
            "thetas",
            Value::Real {
                shape: vec![m, d],
                data: e.thetas.iter().flat_map(|t| t.values.iter().copied()).collect(),
            },
        )
}

pub fn ensemble_from(
    c: &Checkpoint,
    selector: Selector,
    cfg: &ModelConfig,
    m: usize,
    k: usize,
    hash: &str,
) -> Result<PosteriorEnsemble, CheckpointError> {
    c.expect(Kind::Ensemble, hash)?;
    selector_field(c, selector)?;
    let d = cfg.num_params();
    let omegas = c.reals("omegas", &[Some(m), Some(k)])?.1.chunks(k.max(1)).map(<[f64]>::to_vec).collect();
    let thetas = c
        .reals("thetas", &[Some(m), Some(d)])?
        .1
        .chunks(d)
        .map(|row| ParameterVector::from_values(cfg, row.to_vec()).map_err(|e| bad("thetas", e)))
        .collect::<Result<_, _>>()?;
    Ok(PosteriorEnsemble {
        omegas,
        thetas,
        source: c.text("source")?.to_string(),
    })
}
