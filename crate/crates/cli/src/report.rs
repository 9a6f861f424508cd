//! Result records and the final CSV/JSON reports.

use std::fmt::Write as _;

use asinfer::inference::{DiversityReport, NllReport};
use asinfer::partition::Selector;
use asinfer::subspace::ActiveSubspace;
use asinfer::vi::CurvePoint;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::pipeline::{inference_type, Stamped};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllResult {
    pub config_hash: String,
    pub inference_type: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub per_run: Vec<f64>,
}

impl NllResult {
    pub fn new(s: Option<Selector>, r: &NllReport, hash: &str) -> Self {
        Self {
            config_hash: hash.into(),
            inference_type: inference_type(s),
            mean: r.mean,
            std: r.std,
            runs: r.runs,
            per_run: r.per_run.clone(),
        }
    }
}

impl Stamped for NllResult {
    fn config_hash(&self) -> &str {
        &self.config_hash
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityResult {
    pub config_hash: String,
    pub inference_type: String,
    pub top10_mean: f64,
    pub top10_std: f64,
    pub repeats: usize,
    pub unique_count: usize,
    pub per_repeat_top10: Vec<f64>,
    pub per_repeat_unique: Vec<usize>,
    pub per_repeat_unique_mean: Vec<f64>,
}

impl DiversityResult {
    pub fn new(s: Option<Selector>, r: &DiversityReport, hash: &str) -> Self {
        Self {
            config_hash: hash.into(),
            inference_type: inference_type(s),
            top10_mean: r.top10_mean,
            top10_std: r.top10_std,
            repeats: r.repeats,
            unique_count: r.unique_count,
            per_repeat_top10: r.per_repeat_top10.clone(),
            per_repeat_unique: r.per_repeat_unique.clone(),
            per_repeat_unique_mean: r.per_repeat_unique_mean.clone(),
        }
    }
}

impl Stamped for DiversityResult {
    fn config_hash(&self) -> &str {
        &self.config_hash
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    pub selector: String,
    pub stochastic_dim: usize,
    pub n: usize,
    pub k: usize,
    pub sigma0: f64,
    pub eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn new(s: Selector, sub: &ActiveSubspace, stochastic_dim: usize) -> Self {
        Self {
            selector: s.as_str().into(),
            stochastic_dim,
            n: sub.n,
            k: sub.k,
            sigma0: sub.sigma0,
            eigenvalues: sub.eigenvalues.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub objective: f64,
    pub kl_term: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViCurve {
    pub selector: String,
    pub points: Vec<CurveRow>,
}

impl ViCurve {
    pub fn new(s: Selector, curve: &[CurvePoint]) -> Self {
        Self {
            selector: s.as_str().into(),
            points: curve
                .iter()
                .map(|c| CurveRow {
                    epoch: c.epoch,
                    objective: c.objective,
                    kl_term: c.kl_term,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectorNote {
    pub selector: String,
    pub inference_type: String,
    pub stochastic: String,
}

/// How each selector maps onto the network. The toy model has a single
/// encoder and decoder, so finer per-subnetwork partitions collapse to these.
pub fn selector_mapping(selectors: &[Selector]) -> Vec<SelectorNote> {
    selectors
        .iter()
        .map(|&s| SelectorNote {
            selector: s.as_str().into(),
            inference_type: inference_type(Some(s)),
            stochastic: match s {
                Selector::All => "encoder and decoder weights",
                Selector::Encoder => "encoder weights; decoder fixed at the pretrained values",
                Selector::Decoder => "decoder weights; encoder fixed at the pretrained values",
            }
            .into(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config_hash: String,
    pub config: RunConfig,
    pub selector_mapping: Vec<SelectorNote>,
    pub pretrain_curve: Vec<f64>,
    pub nll: Vec<NllResult>,
    pub diversity: Vec<DiversityResult>,
    pub spectra: Vec<Spectrum>,
    pub vi_curves: Vec<ViCurve>,
}

pub const NLL_METRIC: &str = "nll";
pub const TOP10_METRIC: &str = "top10_sequence_property";
pub const UNIQUE_METRIC: &str = "unique_sequences";

/// `inference_type,metric,mean,std,runs`, nLL rows first, then property rows;
/// within each block the pretrained row leads and selectors follow in config order.
pub fn render_csv(r: &Report) -> String {
    let mut out = String::from("inference_type,metric,mean,std,runs\n");
    for n in &r.nll {
        writeln!(out, "{},{NLL_METRIC},{},{},{}", n.inference_type, n.mean, n.std, n.runs).unwrap();
    }
    for d in &r.diversity {
        writeln!(out, "{},{TOP10_METRIC},{},{},{}", d.inference_type, d.top10_mean, d.top10_std, d.repeats).unwrap();
    }
    for d in &r.diversity {
        let counts: Vec<f64> = d.per_repeat_unique.iter().map(|&c| c as f64).collect();
        let (mean, std) = asinfer::inference::mean_std(&counts);
        writeln!(out, "{},{UNIQUE_METRIC},{mean},{std},{}", d.inference_type, d.repeats).unwrap();
    }
    out
}
