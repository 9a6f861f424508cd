//! Run configuration: a TOML document with one table per pipeline stage.
//! Every key has a default, so an empty document is a valid config.

use std::fmt;

use asinfer::inference::{DiversityOptions, NllMode, ScoreOrder, TopFraction};
use asinfer::nnkit::{split_sizes, ModelConfig, PretrainSettings};
use asinfer::partition::Selector;
use asinfer::subspace::SubspaceSettings;
use asinfer::vi::{PriorConfig, ViHyper, INIT_SIGMA};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub alphabet_size: usize,
    pub seq_len: usize,
    pub latent_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub kl_weight: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            alphabet_size: m.alphabet_size,
            seq_len: m.seq_len,
            latent_dim: m.latent_dim,
            enc_hidden: m.enc_hidden,
            dec_hidden: m.dec_hidden,
            kl_weight: m.kl_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub num_items: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            num_items: 1000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.001,
            batch: 32,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceSection {
    pub n: usize,
    pub k: usize,
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for SubspaceSection {
    fn default() -> Self {
        Self {
            n: 100,
            k: 20,
            sigma0: 0.1,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Weight on the prior KL; omitted means `1 / |train|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_scale: Option<f64>,
    pub seed: u64,
    pub init_sigma: f64,
    pub prior_mean: f64,
    pub prior_std: f64,
}

impl Default for ViSection {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 32,
            lr: 0.001,
            kl_scale: None,
            seed: 17,
            init_sigma: INIT_SIGMA,
            prior_mean: 0.0,
            prior_std: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllModeName {
    PerModel,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopFractionName {
    Points,
    Unique,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyOrderName {
    Higher,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Runs for the pretrained baseline; omitted means `m * repeats_per_model`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    pub repeats_per_model: usize,
    pub latent_samples: usize,
    /// Ensemble size M.
    pub m: usize,
    pub num_points: usize,
    pub repeats: usize,
    pub seed: u64,
    pub nll_mode: NllModeName,
    pub top_fraction_of: TopFractionName,
    pub property_order: PropertyOrderName,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            runs: None,
            repeats_per_model: 5,
            latent_samples: 1,
            m: 10,
            num_points: 1000,
            repeats: 5,
            seed: 23,
            nll_mode: NllModeName::PerModel,
            top_fraction_of: TopFractionName::Points,
            property_order: PropertyOrderName::Higher,
        }
    }
}

mod selector_names {
    use asinfer::partition::Selector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Selector], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.as_str()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Selector>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: String,
    #[serde(with = "selector_names")]
    pub selectors: Vec<Selector>,
    pub model: ModelSection,
    pub data: DataSection,
    pub pretrain: PretrainSection,
    pub subspace: SubspaceSection,
    pub vi: ViSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: "runs/default".into(),
            selectors: Selector::ALL.to_vec(),
            model: ModelSection::default(),
            data: DataSection::default(),
            pretrain: PretrainSection::default(),
            subspace: SubspaceSection::default(),
            vi: ViSection::default(),
            eval: EvalSection::default(),
        }
    }
}

fn positive(path: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(ConfigError::at(path, "must be >= 1"));
    }
    Ok(())
}

fn positive_real(path: &str, v: f64) -> Result<(), ConfigError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(ConfigError::at(path, format!("must be a positive number, got {v}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_config()
            .validate()
            .map_err(|e| ConfigError::at("model", e.to_string()))?;
        let (train, _, _) = split_sizes(self.data.num_items);
        if self.data.num_items < 10 {
            return Err(ConfigError::at("data.num_items", "must be >= 10"));
        }
        positive("pretrain.batch", self.pretrain.batch)?;
        positive_real("pretrain.lr", self.pretrain.lr)?;

        positive("subspace.k", self.subspace.k)?;
        if self.subspace.k > self.subspace.n {
            return Err(ConfigError::at(
                "subspace.k",
                format!("k = {} must not exceed n = {}", self.subspace.k, self.subspace.n),
            ));
        }
        if self.subspace.n > train {
            return Err(ConfigError::at(
                "subspace.n",
                format!("n = {} exceeds the training split size {train}", self.subspace.n),
            ));
        }
        if !(self.subspace.sigma0.is_finite() && self.subspace.sigma0 >= 0.0) {
            return Err(ConfigError::at("subspace.sigma0", "must be >= 0"));
        }

        positive("vi.epochs", self.vi.epochs)?;
        positive("vi.batch", self.vi.batch)?;
        positive_real("vi.lr", self.vi.lr)?;
        positive_real("vi.prior_std", self.vi.prior_std)?;
        positive_real("vi.init_sigma", self.vi.init_sigma)?;
        if let Some(s) = self.vi.kl_scale {
            positive_real("vi.kl_scale", s)?;
        }
        if !self.vi.prior_mean.is_finite() {
            return Err(ConfigError::at("vi.prior_mean", "must be finite"));
        }

        let e = &self.eval;
        positive("eval.m", e.m)?;
        positive("eval.repeats_per_model", e.repeats_per_model)?;
        positive("eval.latent_samples", e.latent_samples)?;
        positive("eval.num_points", e.num_points)?;
        positive("eval.repeats", e.repeats)?;
        if let Some(r) = e.runs {
            positive("eval.runs", r)?;
        }
        if e.m * e.repeats_per_model < 2 {
            return Err(ConfigError::at("eval.repeats_per_model", "m * repeats_per_model must be >= 2"));
        }
        if !e.num_points.is_multiple_of(e.m) {
            return Err(ConfigError::at(
                "eval.num_points",
                format!("{} is not divisible by m = {}", e.num_points, e.m),
            ));
        }

        if self.selectors.is_empty() {
            return Err(ConfigError::at("selectors", "at least one selector is required"));
        }
        for (i, s) in self.selectors.iter().enumerate() {
            if self.selectors[..i].contains(s) {
                return Err(ConfigError::at("selectors", format!("`{s}` listed twice")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            alphabet_size: m.alphabet_size,
            seq_len: m.seq_len,
            latent_dim: m.latent_dim,
            enc_hidden: m.enc_hidden,
            dec_hidden: m.dec_hidden,
            kl_weight: m.kl_weight,
        }
    }

    pub fn pretrain_settings(&self) -> PretrainSettings {
        PretrainSettings {
            epochs: self.pretrain.epochs,
            lr: self.pretrain.lr,
            batch: self.pretrain.batch,
            seed: self.pretrain.seed,
        }
    }

    pub fn subspace_settings(&self) -> SubspaceSettings {
        SubspaceSettings {
            n: self.subspace.n,
            k: self.subspace.k,
            sigma0: self.subspace.sigma0,
            seed: self.subspace.seed,
        }
    }

    pub fn vi_hyper(&self) -> ViHyper {
        ViHyper {
            epochs: self.vi.epochs,
            batch: self.vi.batch,
            lr: self.vi.lr,
            kl_scale: self.vi.kl_scale,
            seed: self.vi.seed,
            init_sigma: self.vi.init_sigma,
            freeze_scale: false,
        }
    }

    pub fn prior(&self) -> PriorConfig {
        PriorConfig::isotropic(self.subspace.k, self.vi.prior_mean, self.vi.prior_std)
    }

    pub fn pretrained_runs(&self) -> usize {
        self.eval.runs.unwrap_or(self.eval.m * self.eval.repeats_per_model)
    }

    pub fn nll_mode(&self) -> NllMode {
        match self.eval.nll_mode {
            NllModeName::PerModel => NllMode::PerModel,
            NllModeName::Mixture => NllMode::Mixture,
        }
    }

    pub fn diversity_options(&self) -> DiversityOptions {
        DiversityOptions {
            order: match self.eval.property_order {
                PropertyOrderName::Higher => ScoreOrder::HigherIsBetter,
                PropertyOrderName::Lower => ScoreOrder::LowerIsBetter,
            },
            top_of: match self.eval.top_fraction_of {
                TopFractionName::Points => TopFraction::OfPoints,
                TopFractionName::Unique => TopFraction::OfUnique,
            },
        }
    }

    /// Replaces every stage seed with one derived from `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.data.seed = seed;
        self.pretrain.seed = seed.wrapping_add(1);
        self.subspace.seed = seed.wrapping_add(2);
        self.vi.seed = seed.wrapping_add(3);
        self.eval.seed = seed.wrapping_add(4);
    }

    /// SHA-256 over the rendered config, excluding `output_dir`.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir.clear();
        let text = render_config(&canonical);
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_config(self))
    }
}

/// Parses and validates a config document, filling defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::at("<document>", e.message().to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::at(&path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn render_config(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.subspace.n, cfg.subspace.k, cfg.subspace.sigma0), (100, 20, 0.1));
        assert_eq!(cfg.eval.m, 10);
        assert_eq!(cfg.vi.lr, 0.001);
        assert_eq!(cfg.vi.prior_std, 5.0);
        assert_eq!(cfg.pretrained_runs(), 50);
        assert_eq!(cfg.selectors, vec![Selector::All, Selector::Encoder, Selector::Decoder]);
    }

    #[test]
    fn k_above_n_is_rejected() {
        let err = parse_config("[subspace]\nk = 200\nn = 100\n").unwrap_err();
        assert_eq!(err.path, "subspace.k");
    }

    #[test]
    fn unknown_and_mistyped_keys_name_their_path() {
        let err = parse_config("[vi]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.path.starts_with("vi"), "{err}");
        assert!(err.message.contains("learning_rate"), "{err}");
        let err = parse_config("[subspace]\nn = \"many\"\n").unwrap_err();
        assert_eq!(err.path, "subspace.n", "{err}");
        let err = parse_config("selectors = [\"tree\"]\n").unwrap_err();
        assert!(err.path.starts_with("selectors"), "{err}");
        assert!(parse_config("[model\n").is_err());
    }

    #[test]
    fn render_parse_round_trip() {
        let text = "output_dir = \"x\"\nselectors = [\"decoder\"]\n[vi]\nkl_scale = 0.5\n[eval]\nruns = 7\nnll_mode = \"mixture\"\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.vi.kl_scale, Some(0.5));
        assert_eq!(cfg.pretrained_runs(), 7);
        assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
        let d = RunConfig::default();
        assert_eq!(parse_config(&render_config(&d)).unwrap(), d);
    }

    #[test]
    fn digest_ignores_output_dir_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        b.subspace.seed += 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn divisibility_and_sizes() {
        assert_eq!(parse_config("[eval]\nnum_points = 999\n").unwrap_err().path, "eval.num_points");
        assert_eq!(parse_config("[subspace]\nn = 900\n").unwrap_err().path, "subspace.n");
        assert_eq!(parse_config("[data]\nnum_items = 5\n").unwrap_err().path, "data.num_items");
        assert_eq!(parse_config("selectors = [\"all\", \"all\"]\n").unwrap_err().path, "selectors");
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut cfg = RunConfig::default();
        cfg.override_seeds(100);
        assert_eq!(
            [cfg.data.seed, cfg.pretrain.seed, cfg.subspace.seed, cfg.vi.seed, cfg.eval.seed],
            [100, 101, 102, 103, 104]
        );
    }
}
