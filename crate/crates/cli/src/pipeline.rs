//! Stage driver. Each stage reads its inputs from checkpoints in the output
//! directory and writes its own, so stages can be run one at a time or all at
//! once with identical results.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use asinfer::inference::{
    diversity_eval, draw_ensemble, evaluate_nll_ensemble, evaluate_nll_mixture, evaluate_nll_pretrained,
    NllMode,
};
use asinfer::nnkit::{generate_dataset, pretrain, Dataset, ModelConfig, Pretrained};
use asinfer::partition::{build_partition, Partition, Selector};
use asinfer::subspace::{build_subspace, ActiveSubspace};
use asinfer::vi::{fit_posterior, ViProblem};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::artifacts::*;
use crate::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::report::{self, DiversityResult, NllResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    Pretrain,
    BuildAs,
    FitVi,
    DrawEnsemble,
    EvalNll,
    EvalDiversity,
    Run,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenData,
        Stage::Pretrain,
        Stage::BuildAs,
        Stage::FitVi,
        Stage::DrawEnsemble,
        Stage::EvalNll,
        Stage::EvalDiversity,
        Stage::Run,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Pretrain => "pretrain",
            Stage::BuildAs => "build-as",
            Stage::FitVi => "fit-vi",
            Stage::DrawEnsemble => "draw-ensemble",
            Stage::EvalNll => "eval-nll",
            Stage::EvalDiversity => "eval-diversity",
            Stage::Run => "run",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Stage::ALL.iter().map(|s| s.as_str()).collect();
                anyhow!("unknown stage `{s}` (expected one of {})", names.join(", "))
            })
    }
}

pub const DATASET_FILE: &str = "data.dataset.ckpt";
pub const PRETRAINED_FILE: &str = "pretrained.params.ckpt";
pub const PRETRAIN_CURVE_FILE: &str = "pretrain.curve.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

pub fn subspace_file(s: Selector) -> String {
    format!("as-{s}.subspace.ckpt")
}

pub fn posterior_file(s: Selector) -> String {
    format!("as-{s}.posterior.ckpt")
}

pub fn ensemble_file(s: Selector) -> String {
    format!("as-{s}.ensemble.ckpt")
}

pub fn vi_curve_file(s: Selector) -> String {
    format!("as-{s}.vi_curve.csv")
}

/// Row label used in reports.
pub fn inference_type(s: Option<Selector>) -> String {
    match s {
        None => "Pretrained".into(),
        Some(s) => format!("AS-{s}"),
    }
}

fn result_stem(s: Option<Selector>) -> String {
    match s {
        None => "pretrained".into(),
        Some(s) => format!("as-{s}"),
    }
}

pub fn nll_file(s: Option<Selector>) -> String {
    format!("{}.nll.json", result_stem(s))
}

pub fn diversity_file(s: Option<Selector>) -> String {
    format!("{}.diversity.json", result_stem(s))
}

pub struct Pipeline {
    cfg: RunConfig,
    model: ModelConfig,
    dir: PathBuf,
    digest: String,
    active: Vec<Selector>,
}

impl Pipeline {
    /// `cfg` must already be validated.
    pub fn new(cfg: RunConfig) -> Self {
        Self {
            model: cfg.model_config(),
            dir: PathBuf::from(&cfg.output_dir),
            digest: cfg.digest(),
            active: cfg.selectors.clone(),
            cfg,
        }
    }

    /// Limits per-selector stages to `s`, which must be one of the configured selectors.
    pub fn only(mut self, s: Selector) -> Result<Self> {
        if !self.cfg.selectors.contains(&s) {
            bail!("selector `{s}` is not listed in the config's selectors");
        }
        self.active = vec![s];
        Ok(self)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("cannot create {}", self.dir.display()))?;
        let out = match stage {
            Stage::GenData => self.gen_data(),
            Stage::Pretrain => self.pretrain(),
            Stage::Run => return self.run_all(),
            per_selector => self.active.iter().try_for_each(|&s| self.selector_stage(per_selector, s)),
        };
        out.with_context(|| format!("stage `{stage}` failed"))?;
        if stage == Stage::EvalDiversity {
            self.finish_report()
                .with_context(|| format!("stage `{stage}` failed"))?;
        }
        Ok(())
    }

    fn run_all(&self) -> Result<()> {
        let step = |stage: Stage, r: Result<()>| r.with_context(|| format!("stage `{stage}` failed"));
        step(Stage::GenData, self.gen_data())?;
        step(Stage::Pretrain, self.pretrain())?;
        for &s in &self.active {
            for stage in [
                Stage::BuildAs,
                Stage::FitVi,
                Stage::DrawEnsemble,
                Stage::EvalNll,
                Stage::EvalDiversity,
            ] {
                step(stage, self.selector_stage(stage, s))?;
            }
        }
        step(Stage::EvalDiversity, self.finish_report())
    }

    fn selector_stage(&self, stage: Stage, s: Selector) -> Result<()> {
        log(stage, Some(s));
        match stage {
            Stage::BuildAs => self.build_as(s),
            Stage::FitVi => self.fit_vi(s),
            Stage::DrawEnsemble => self.draw_ensemble(s),
            Stage::EvalNll => self.eval_nll(s),
            Stage::EvalDiversity => self.eval_diversity(s),
            _ => unreachable!("not a per-selector stage"),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn load(&self, name: &str, producer: Stage) -> Result<Checkpoint> {
        let path = self.path(name);
        if !path.exists() {
            bail!("missing {} (run stage `{producer}` first)", path.display());
        }
        load_checkpoint(&path).with_context(|| format!("cannot load {}", path.display()))
    }

    fn save(&self, name: &str, c: &Checkpoint) -> Result<()> {
        save_checkpoint(c, &self.path(name)).with_context(|| format!("cannot write {name}"))
    }

    fn save_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        write_atomic(&self.path(name), text.as_bytes()).with_context(|| format!("cannot write {name}"))
    }

    fn load_json<T: DeserializeOwned + Stamped>(&self, name: &str, producer: Stage) -> Result<T> {
        let path = self.path(name);
        if !path.exists() {
            bail!("missing {} (run stage `{producer}` first)", path.display());
        }
        let text = fs::read_to_string(&path)?;
        let v: T = serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
        if v.config_hash() != self.digest {
            bail!("{} was written under a different config", path.display());
        }
        Ok(v)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let c = self.load(DATASET_FILE, Stage::GenData)?;
        Ok(dataset_from(&c, &self.model, &self.digest)?)
    }

    pub fn pretrained(&self) -> Result<Pretrained> {
        let c = self.load(PRETRAINED_FILE, Stage::Pretrain)?;
        Ok(params_from(&c, &self.model, &self.digest)?)
    }

    fn partition(&self, s: Selector) -> Partition {
        build_partition(&self.model, s)
    }

    pub fn subspace(&self, s: Selector) -> Result<ActiveSubspace> {
        let c = self.load(&subspace_file(s), Stage::BuildAs)?;
        Ok(subspace_from(&c, s, self.partition(s).stochastic_len(), &self.digest)?)
    }

    pub fn posterior(&self, s: Selector) -> Result<PosteriorRecord> {
        let c = self.load(&posterior_file(s), Stage::FitVi)?;
        let r = posterior_from(&c, s, &self.digest)?;
        if r.posterior.k() != self.cfg.subspace.k {
            bail!("posterior has k = {}, config has k = {}", r.posterior.k(), self.cfg.subspace.k);
        }
        Ok(r)
    }

    pub fn ensemble(&self, s: Selector) -> Result<asinfer::inference::PosteriorEnsemble> {
        let c = self.load(&ensemble_file(s), Stage::DrawEnsemble)?;
        Ok(ensemble_from(&c, s, &self.model, self.cfg.eval.m, self.cfg.subspace.k, &self.digest)?)
    }

    fn gen_data(&self) -> Result<()> {
        log(Stage::GenData, None);
        let d = generate_dataset(&self.model, self.cfg.data.num_items, self.cfg.data.seed)?;
        self.save(DATASET_FILE, &dataset_checkpoint(&d, &self.model, &self.digest))
    }

    fn pretrain(&self) -> Result<()> {
        log(Stage::Pretrain, None);
        let data = self.dataset()?;
        let p = pretrain(&self.model, &data, &self.cfg.pretrain_settings())?;
        self.save(PRETRAINED_FILE, &params_checkpoint(&p, &self.digest))?;
        let mut csv = format!("# config_hash {}\nepoch,loss\n", self.digest);
        for (e, l) in p.epoch_losses.iter().enumerate() {
            csv.push_str(&format!("{e},{l}\n"));
        }
        write_atomic(&self.path(PRETRAIN_CURVE_FILE), csv.as_bytes())?;
        Ok(())
    }

    fn build_as(&self, s: Selector) -> Result<()> {
        let data = self.dataset()?;
        let theta0 = self.pretrained()?.theta;
        let sub = build_subspace(&self.model, &theta0, &self.partition(s), &data, &self.cfg.subspace_settings())?;
        self.save(&subspace_file(s), &subspace_checkpoint(&sub, s, &self.digest))
    }

    fn fit_vi(&self, s: Selector) -> Result<()> {
        let data = self.dataset()?;
        let theta0 = self.pretrained()?.theta;
        let sub = self.subspace(s)?;
        let partition = self.partition(s);
        let prior = self.cfg.prior();
        let problem = ViProblem {
            config: &self.model,
            subspace: &sub,
            partition: &partition,
            theta0: &theta0,
            prior: &prior,
        };
        let fit = fit_posterior(&problem, &data, &self.cfg.vi_hyper())?;
        let mut csv = format!("# config_hash {}\nepoch,objective,kl_term\n", self.digest);
        for c in &fit.curve {
            csv.push_str(&format!("{},{},{}\n", c.epoch, c.objective, c.kl_term));
        }
        let record = PosteriorRecord {
            posterior: fit.posterior,
            prior,
            curve: fit.curve,
        };
        self.save(&posterior_file(s), &posterior_checkpoint(&record, s, &self.digest))?;
        write_atomic(&self.path(&vi_curve_file(s)), csv.as_bytes())?;
        Ok(())
    }

    fn draw_ensemble(&self, s: Selector) -> Result<()> {
        let theta0 = self.pretrained()?.theta;
        let sub = self.subspace(s)?;
        let q = self.posterior(s)?.posterior;
        let e = draw_ensemble(&q, &sub, &self.partition(s), &theta0, self.cfg.eval.m, self.cfg.eval.seed)?;
        self.save(&ensemble_file(s), &ensemble_checkpoint(&e, s, &self.digest))
    }

    fn eval_nll(&self, s: Selector) -> Result<()> {
        let data = self.dataset()?;
        let ev = &self.cfg.eval;
        let theta0 = self.pretrained()?.theta;
        let base = evaluate_nll_pretrained(
            &self.model,
            &theta0,
            &data.validation,
            self.cfg.pretrained_runs(),
            ev.latent_samples,
            ev.seed,
        )?;
        self.save_json(&nll_file(None), &NllResult::new(None, &base, &self.digest))?;

        let e = self.ensemble(s)?;
        let r = match self.cfg.nll_mode() {
            NllMode::PerModel => {
                evaluate_nll_ensemble(&self.model, &e, &data.validation, ev.repeats_per_model, ev.latent_samples, ev.seed)?
            }
            NllMode::Mixture => evaluate_nll_mixture(
                &self.model,
                &e,
                &data.validation,
                ev.m * ev.repeats_per_model,
                ev.latent_samples,
                ev.seed,
            )?,
        };
        self.save_json(&nll_file(Some(s)), &NllResult::new(Some(s), &r, &self.digest))
    }

    fn eval_diversity(&self, s: Selector) -> Result<()> {
        let ev = &self.cfg.eval;
        let opts = self.cfg.diversity_options();
        let theta0 = self.pretrained()?.theta;
        let base = diversity_eval(&self.model, &[theta0], ev.num_points, ev.repeats, ev.seed, opts)?;
        self.save_json(&diversity_file(None), &DiversityResult::new(None, &base, &self.digest))?;

        let e = self.ensemble(s)?;
        let r = diversity_eval(&self.model, &e.thetas, ev.num_points, ev.repeats, ev.seed, opts)?;
        self.save_json(&diversity_file(Some(s)), &DiversityResult::new(Some(s), &r, &self.digest))
    }

    /// Writes `report.csv` and `report.json` once every configured selector has results.
    fn finish_report(&self) -> Result<()> {
        let missing: Vec<String> = self
            .cfg
            .selectors
            .iter()
            .flat_map(|&s| [nll_file(Some(s)), diversity_file(Some(s))])
            .filter(|f| !self.path(f).exists())
            .collect();
        if !missing.is_empty() {
            eprintln!("report not written yet; still missing: {}", missing.join(", "));
            return Ok(());
        }
        let rows: Vec<Option<Selector>> =
            std::iter::once(None).chain(self.cfg.selectors.iter().copied().map(Some)).collect();
        let nll = rows
            .iter()
            .map(|&s| self.load_json::<NllResult>(&nll_file(s), Stage::EvalNll))
            .collect::<Result<Vec<_>>>()?;
        let diversity = rows
            .iter()
            .map(|&s| self.load_json::<DiversityResult>(&diversity_file(s), Stage::EvalDiversity))
            .collect::<Result<Vec<_>>>()?;

        let mut spectra = Vec::new();
        let mut curves = Vec::new();
        for &s in &self.cfg.selectors {
            spectra.push(report::Spectrum::new(s, &self.subspace(s)?, self.partition(s).stochastic_len()));
            curves.push(report::ViCurve::new(s, &self.posterior(s)?.curve));
        }
        let full = report::Report {
            config_hash: self.digest.clone(),
            config: self.cfg.clone(),
            selector_mapping: report::selector_mapping(&self.cfg.selectors),
            pretrain_curve: self.pretrained()?.epoch_losses,
            nll,
            diversity,
            spectra,
            vi_curves: curves,
        };
        write_atomic(&self.path(REPORT_CSV), report::render_csv(&full).as_bytes())?;
        self.save_json(REPORT_JSON, &full)
    }
}

pub trait Stamped {
    fn config_hash(&self) -> &str;
}

fn log(stage: Stage, s: Option<Selector>) {
    match s {
        Some(s) => eprintln!("[{stage}] selector {s}"),
        None => eprintln!("[{stage}]"),
    }
}

/// Runs the whole pipeline for `cfg`.
pub fn run_pipeline(cfg: RunConfig) -> Result<()> {
    Pipeline::new(cfg).run_stage(Stage::Run)
}
