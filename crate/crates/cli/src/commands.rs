//! Command dispatch.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use completeness_core::eval::{
    cross_validate_with, evaluate_suite_with, make_folds, make_folds_stratified, subsample_curve, CvResult, Estimator,
    ErrorDecomposition, FoldPlan, FoldWeighting, ModelScore, SubsamplePoint,
};
use completeness_core::games::{pchm_model, pchm_predict, Game, Opponents, PchmOptions, PchmParams};
use completeness_core::hetero::{hetero_evaluate, HeteroPlan, HeteroReport};
use completeness_core::lookup::{KeyFn, LookupSpec};
use completeness_core::risk::{cpt_model, eu_model, CptParams};
use completeness_core::seq::{
    is_tie, rv_model, rv_probability, urn_model, urn_probability_with, Depletion, FlipHistory, RvParams, SeqOutput,
    UrnInference, UrnOptions, UrnParams,
};
use completeness_core::synth::{
    default_lotteries, gen_games, gen_risk, gen_strings, GameGenSpec, Metadata, RiskGenSpec, SeqGenSpec, SeqGenerator,
};
use completeness_core::trees::TreeConfig;
use completeness_core::{completeness_ratio, decompose, naive_rule, Dataset, FitConfig, LossFunction, ModelClass, ProblemKind};

use crate::config::RunConfig;
use crate::csvio::{read_dataset, read_strings, write_dataset, write_strings};
use crate::filter::{filter_subjects, FilterMethod};
use crate::report::{fixed, percent, Report, Table};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "completeness", version, about = "Completeness of behavioral models against a table-lookup benchmark")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for report.json, report.txt and data files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_parser = ["mse", "miscls"])]
    pub loss: Option<String>,
    /// Comma-separated model names.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long, value_parser = ["risk", "games", "sequences"])]
    pub domain: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Naive, models and table lookup under one fold plan.
    #[command(alias = "completeness")]
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validated error on random subsamples of the data.
    Subsample {
        #[command(flatten)]
        common: Common,
        /// Comma-separated fractions in (0, 1].
        #[arg(long)]
        fractions: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        /// `lookup` or a model name.
        #[arg(long)]
        estimator: Option<String>,
    },
    /// Compressed lookups over feature projections.
    Features {
        #[command(flatten)]
        common: Common,
        /// Comma-separated projections: full, heads_count, flips_4_7, constant.
        #[arg(long)]
        projections: Option<String>,
    },
    /// Drop or truncate sequence subjects.
    FilterSubjects {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["repeat_cutoff", "chi_squared", "first_k"], default_value = "repeat_cutoff")]
        method: String,
        #[arg(long, default_value_t = 5)]
        max_repeats: usize,
        #[arg(long, default_value_t = 1)]
        drop_n: usize,
        #[arg(long, default_value_t = 25)]
        k: usize,
        /// Use the 256-cell string histogram instead of position counts.
        #[arg(long)]
        cells: bool,
    },
    /// Cluster subjects and evaluate per-group fits.
    Hetero {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        test_subjects: Option<usize>,
        #[arg(long)]
        train_lotteries: Option<usize>,
    },
    /// Generate synthetic data in the input schema.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generator: Option<String>,
        #[arg(long)]
        n_strings: Option<usize>,
        #[arg(long)]
        n_subjects: Option<usize>,
        #[arg(long)]
        n_games: Option<usize>,
    },
}

/// A finished command: the report plus any data files, written together.
#[derive(Debug, Clone)]
pub struct Output {
    pub report: Report,
    pub files: Vec<(String, Vec<u8>)>,
    pub out_dir: PathBuf,
}

impl Output {
    pub fn write(&self) -> Result<(), CliError> {
        self.report.write(&self.out_dir)?;
        for (name, bytes) in &self.files {
            fs::write(self.out_dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config {
                line: None,
                message: format!("cannot read {}: {e}", p.display()),
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &common.domain {
        cfg.set("domain", v);
    }
    if let Some(v) = common.seed {
        cfg.set("seed", v);
    }
    if let Some(v) = common.folds {
        cfg.set("folds", v);
    }
    if let Some(v) = &common.loss {
        cfg.set("loss", v);
    }
    if let Some(v) = &common.models {
        cfg.set("models", v);
    }
    if let Some(v) = &common.out {
        cfg.set("out", v.display());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(cfg.raw("out").unwrap_or("out"))
}

fn read_input(common: &Common) -> Result<Vec<u8>, CliError> {
    let p = common.data.as_ref().ok_or_else(|| CliError::Config {
        line: None,
        message: "--data is required".into(),
    })?;
    fs::read(p).map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))
}

/// Fully resolved evaluation settings.
struct Setup {
    kind: ProblemKind,
    loss: LossFunction,
    folds: usize,
    seed: u64,
    models: Vec<String>,
    fit: FitConfig,
    output: SeqOutput,
    urn: UrnOptions,
    pchm: PchmOptions,
    trees: TreeConfig,
    stratify: bool,
    weighting: FoldWeighting,
    key: KeyFn,
    naive_mean: bool,
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError::Config {
        line: None,
        message: message.into(),
    }
}

impl Setup {
    fn resolve(cfg: &mut RunConfig) -> Result<Self, CliError> {
        let kind = cfg.domain()?;
        let default_loss = if kind == ProblemKind::Games { "miscls" } else { "mse" };
        let loss_name = cfg.choice("loss", &["mse", "miscls"], default_loss)?;
        match (kind, loss_name) {
            (ProblemKind::Risk, "miscls") => return Err(config_error("risk data is scored by squared error (loss = mse)")),
            (ProblemKind::Games, "mse") => return Err(config_error("games data is scored by misclassification (loss = miscls)")),
            _ => {}
        }
        let loss = if loss_name == "mse" {
            LossFunction::squared_error()
        } else {
            LossFunction::misclassification()
        };
        let folds: usize = cfg.get("folds", 10)?;
        let seed: u64 = cfg.get("seed", 0)?;
        let default_models = match kind {
            ProblemKind::Risk => vec!["eu", "cpt"],
            ProblemKind::Games => vec!["pchm"],
            _ => vec!["rv", "urn"],
        };
        let models = cfg
            .list("models")
            .unwrap_or_else(|| default_models.iter().map(|s| s.to_string()).collect());
        let defaults = FitConfig::default();
        let fit = FitConfig {
            grid_points_per_dim: cfg.get("fit.grid_points", defaults.grid_points_per_dim)?,
            refine: cfg.get("fit.refine", defaults.refine)?,
            refine_max_iters: cfg.get("fit.max_iters", defaults.refine_max_iters)?,
            refine_tolerance: cfg.get("fit.tolerance", defaults.refine_tolerance)?,
            refine_restarts: cfg.get("fit.restarts", defaults.refine_restarts)?,
        };
        let default_output = if loss_name == "miscls" { "hard" } else { "probability" };
        let output = match cfg.choice("seq.output", &["probability", "hard"], default_output)? {
            "hard" => SeqOutput::HardLabel,
            _ => SeqOutput::Probability,
        };
        let urn = UrnOptions {
            depletion: match cfg.choice("urn.depletion", &["force_refresh", "zero_likelihood"], "force_refresh")? {
                "zero_likelihood" => Depletion::ZeroLikelihood,
                _ => Depletion::ForceRefresh,
            },
            inference: match cfg.choice("urn.inference", &["posterior", "plug_in"], "posterior")? {
                "plug_in" => UrnInference::PlugIn,
                _ => UrnInference::Posterior,
            },
        };
        let pchm = PchmOptions {
            k_max: cfg.get("pchm.k_max", 6)?,
            opponents: match cfg.choice("pchm.opponents", &["hierarchy", "classic_chain"], "hierarchy")? {
                "classic_chain" => Opponents::ClassicChain,
                _ => Opponents::Hierarchy,
            },
        };
        let td = TreeConfig::default();
        let trees = TreeConfig {
            n_trees: cfg.get("trees.n_trees", td.n_trees)?,
            min_leaf: cfg.get("trees.min_leaf", td.min_leaf)?,
            max_depth: cfg.get_opt("trees.max_depth")?,
            seed,
            bootstrap: true,
        };
        let key_name = cfg.choice("lookup.key", &["full", "heads_count", "flips_4_7", "constant"], "full")?;
        let key = KeyFn::from_name(key_name).expect("listed key functions exist");
        if key_name != "full" && kind != ProblemKind::Sequences && key_name != "constant" {
            return Err(config_error(format!("lookup.key = {key_name} needs sequence data")));
        }
        let stratify = cfg.get("stratify", false)?;
        let weighting = match cfg.choice("weighting", &["unweighted", "by_observations"], "unweighted")? {
            "by_observations" => FoldWeighting::ByObservations,
            _ => FoldWeighting::Unweighted,
        };
        let naive_mean = cfg.choice("naive", &["default", "mean"], "default")? == "mean";
        if naive_mean && loss_name != "mse" {
            return Err(config_error("naive = mean needs loss = mse"));
        }
        for m in cfg.bounds_models() {
            if !models.contains(&m) {
                return Err(config_error(format!("bounds given for model `{m}` which is not in the model list")));
            }
        }

        cfg.set("domain", kind.name());
        cfg.set("loss", loss_name);
        cfg.set("folds", folds);
        cfg.set("seed", seed);
        cfg.set("models", models.join(","));
        cfg.set("fit.grid_points", fit.grid_points_per_dim);
        cfg.set("fit.refine", fit.refine);
        cfg.set("fit.max_iters", fit.refine_max_iters);
        cfg.set("fit.tolerance", fit.refine_tolerance);
        cfg.set("fit.restarts", fit.refine_restarts);
        cfg.set("lookup.key", key_name);
        cfg.set("stratify", stratify);
        cfg.set("weighting", if weighting == FoldWeighting::ByObservations { "by_observations" } else { "unweighted" });
        cfg.set("naive", if naive_mean { "mean" } else { "default" });
        match kind {
            ProblemKind::Sequences => {
                cfg.set("seq.output", if output == SeqOutput::HardLabel { "hard" } else { "probability" });
                cfg.set("urn.depletion", if urn.depletion == Depletion::ZeroLikelihood { "zero_likelihood" } else { "force_refresh" });
                cfg.set("urn.inference", if urn.inference == UrnInference::PlugIn { "plug_in" } else { "posterior" });
            }
            ProblemKind::Games => {
                cfg.set("pchm.k_max", pchm.k_max);
                cfg.set("pchm.opponents", if pchm.opponents == Opponents::ClassicChain { "classic_chain" } else { "hierarchy" });
            }
            _ => {}
        }
        if models.iter().any(|m| m == "trees") {
            cfg.set("trees.n_trees", trees.n_trees);
            cfg.set("trees.min_leaf", trees.min_leaf);
            cfg.set("trees.max_depth", trees.max_depth.map_or("none".to_string(), |d| d.to_string()));
        }
        Ok(Self {
            kind,
            loss,
            folds,
            seed,
            models,
            fit,
            output,
            urn,
            pchm,
            trees,
            stratify,
            weighting,
            key,
            naive_mean,
        })
    }

    fn class(&self, name: &str, cfg: &RunConfig) -> Result<ModelClass, CliError> {
        let class = match (self.kind, name) {
            (ProblemKind::Risk, "eu") => eu_model(),
            (ProblemKind::Risk, "cpt") => cpt_model(),
            (ProblemKind::Games, "pchm") => pchm_model(self.pchm),
            (ProblemKind::Sequences, "rv") => rv_model(self.output),
            (ProblemKind::Sequences, "urn") => urn_model(self.output, self.urn),
            _ => {
                return Err(config_error(format!(
                    "unknown model `{name}` for {} data",
                    self.kind.name()
                )))
            }
        };
        let mut class = class;
        for (param, lo, hi) in cfg.bounds(name)? {
            class = class.with_bounds(&param, lo, hi).map_err(|e| config_error(e.to_string()))?;
        }
        Ok(class)
    }

    fn estimators(&self, cfg: &RunConfig) -> Result<Vec<Estimator>, CliError> {
        self.models
            .iter()
            .map(|m| {
                if m == "trees" {
                    Ok(Estimator::trees("trees", self.trees.clone()))
                } else {
                    Ok(Estimator::model(self.class(m, cfg)?, self.fit.clone()))
                }
            })
            .collect()
    }

    fn naive(&self) -> Result<Estimator, CliError> {
        if self.naive_mean {
            let spec = LookupSpec::for_loss(&self.loss, KeyFn::Constant, naive_rule(self.kind)?)?;
            return Ok(Estimator::lookup("naive", spec));
        }
        Ok(Estimator::rule("naive", naive_rule(self.kind)?))
    }

    fn lookup(&self, key: KeyFn, name: &str) -> Result<Estimator, CliError> {
        let spec = LookupSpec::for_loss(&self.loss, key, naive_rule(self.kind)?)?;
        Ok(Estimator::lookup(name, spec))
    }

    fn plan(&self, data: &Dataset) -> Result<FoldPlan, CliError> {
        Ok(if self.stratify {
            make_folds_stratified(data, self.folds, self.seed)?
        } else {
            make_folds(data.len(), self.folds, self.seed)?
        })
    }

    fn decimals(&self) -> usize {
        match self.kind {
            ProblemKind::Risk => 2,
            ProblemKind::Games => 3,
            _ => 4,
        }
    }

    /// Whether the fitted rule hits a tie-break on input `x`.
    fn tie(&self, model: &str, theta: &[f64], x: &completeness_core::FeatureVector) -> bool {
        match (self.kind, model) {
            (ProblemKind::Games, "pchm") => match (Game::from_features(x), PchmParams::new(theta[0])) {
                (Ok(g), Ok(p)) => pchm_predict(&g, p, self.pchm).tie,
                _ => false,
            },
            (ProblemKind::Sequences, "rv" | "urn") if self.output == SeqOutput::HardLabel => {
                let Ok(h) = FlipHistory::from_features(x) else { return false };
                let q = if model == "rv" {
                    RvParams::new(theta[0], theta[1]).map(|t| rv_probability(&h, t))
                } else {
                    UrnParams::new(theta[0].round() as u32, theta[1]).map(|t| urn_probability_with(&h, t, self.urn))
                };
                q.map(is_tie).unwrap_or(false)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Serialize)]
struct EvaluateResult {
    domain: String,
    loss: String,
    folds: usize,
    observations: usize,
    fold_sizes: Vec<usize>,
    naive: CvResult,
    models: Vec<ModelScore>,
    lookup: CvResult,
    lookup_unseen_rate: f64,
    tie_breaks: BTreeMap<String, usize>,
    decomposition: ErrorDecomposition,
    trees: Option<TreeConfig>,
    conventions: Vec<String>,
}

/// How the risk models treat negative payoffs.
fn conventions(kind: ProblemKind, models: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    if kind != ProblemKind::Risk {
        return out;
    }
    if models.iter().any(|m| m == "eu") {
        out.push("eu: u(z) = sign(z) |z|^alpha on losses".to_string());
    }
    if models.iter().any(|m| m == "cpt") {
        out.push("cpt: v(z) = -((-z)^beta) for z < 0, no loss aversion".to_string());
    }
    out
}

fn score_rows(t: &mut Table, cv: &CvResult, completeness: Option<f64>, decimals: usize) {
    t.push(vec![
        cv.name.clone(),
        fixed(cv.mean_error, decimals),
        fixed(cv.std_error, decimals),
        completeness.map_or(String::new(), percent),
    ]);
}

fn params_block(models: &[&CvResult]) -> String {
    let mut s = String::new();
    for cv in models {
        if cv.fitted_parameters.is_empty() {
            continue;
        }
        s.push_str(&format!("{} fitted parameters per fold:\n", cv.name));
        for (f, theta) in cv.fitted_parameters.iter().enumerate() {
            let parts: Vec<String> = cv
                .param_names
                .iter()
                .zip(theta)
                .map(|(n, v)| format!("{n}={}", fixed(*v, 4)))
                .collect();
            s.push_str(&format!("  {:>2}: {}\n", f + 1, parts.join(" ")));
        }
    }
    s
}

fn cmd_evaluate(common: &Common) -> Result<Output, CliError> {
    let mut cfg = load_config(common)?;
    let setup = Setup::resolve(&mut cfg)?;
    let data = read_dataset(read_input(common)?.as_slice(), setup.kind)?;
    let plan = setup.plan(&data)?;
    let models = setup.estimators(&cfg)?;
    let report = evaluate_suite_with(
        &setup.naive()?,
        &models,
        &setup.lookup(setup.key.clone(), "lookup")?,
        &data,
        &setup.loss,
        &plan,
        setup.weighting,
    )?;

    let mut tie_breaks = BTreeMap::new();
    for m in &report.models {
        if m.cv.fitted_parameters.is_empty() {
            continue;
        }
        let mut ties = 0;
        for (fold, theta) in m.cv.fitted_parameters.iter().enumerate() {
            for i in plan.test_positions(fold) {
                ties += usize::from(setup.tie(&m.cv.name, theta, &data.get(i).x));
            }
        }
        tie_breaks.insert(m.cv.name.clone(), ties);
    }

    let d = setup.decimals();
    let mut t = Table::new(&["model", "error", "se", "completeness"]);
    score_rows(&mut t, &report.naive, Some(0.0), d);
    for m in &report.models {
        score_rows(&mut t, &m.cv, Some(m.completeness), d);
    }
    score_rows(&mut t, &report.lookup, Some(1.0), d);
    let decomposition = decompose(&report.lookup);
    let mut text = format!(
        "domain: {}  loss: {}  folds: {}  seed: {}  observations: {}\n\n",
        setup.kind.name(),
        setup.loss.name(),
        setup.folds,
        setup.seed,
        data.len()
    );
    text.push_str(&t.render());
    text.push('\n');
    for m in report.models.iter().filter(|m| m.out_of_range) {
        text.push_str(&format!("warning: {} completeness {} lies outside [0, 1]\n", m.cv.name, m.completeness));
    }
    text.push_str(&format!(
        "lookup unseen keys: {} ({})\n",
        report.lookup.unseen_keys,
        percent(report.lookup.unseen_rate())
    ));
    for (name, ties) in &tie_breaks {
        if *ties > 0 {
            text.push_str(&format!("{name} tie-breaks: {ties}\n"));
        }
    }
    text.push_str(&format!(
        "lookup sampling error (SE^2): {}  irreducible estimate: {}\n\n",
        fixed(decomposition.sampling_error, d + 2),
        fixed(decomposition.irreducible_estimate, d)
    ));
    let conventions = conventions(setup.kind, &setup.models);
    for c in &conventions {
        text.push_str(&format!("convention {c}\n"));
    }
    if !conventions.is_empty() {
        text.push('\n');
    }
    let cvs: Vec<&CvResult> = report.models.iter().map(|m| &m.cv).collect();
    text.push_str(&params_block(&cvs));

    let result = EvaluateResult {
        domain: setup.kind.name().into(),
        loss: setup.loss.name().into(),
        folds: setup.folds,
        observations: data.len(),
        fold_sizes: plan.sizes(),
        lookup_unseen_rate: report.lookup.unseen_rate(),
        naive: report.naive,
        models: report.models,
        lookup: report.lookup,
        tie_breaks,
        decomposition,
        trees: setup.models.iter().any(|m| m == "trees").then(|| setup.trees.clone()),
        conventions,
    };
    Ok(Output {
        report: Report::new("evaluate", setup.seed, cfg.echo(), result, text)?,
        files: Vec::new(),
        out_dir: out_dir(&cfg),
    })
}

#[derive(Debug, Serialize)]
struct SubsampleResult {
    estimator: String,
    iterations: usize,
    folds: usize,
    observations: usize,
    points: Vec<SubsamplePoint>,
}

fn cmd_subsample(common: &Common, fractions: Option<&str>, iterations: Option<usize>, estimator: Option<&str>) -> Result<Output, CliError> {
    let mut cfg = load_config(common)?;
    if let Some(f) = fractions {
        cfg.set("subsample.fractions", f);
    }
    if let Some(i) = iterations {
        cfg.set("subsample.iterations", i);
    }
    if let Some(e) = estimator {
        cfg.set("subsample.estimator", e);
    }
    let setup = Setup::resolve(&mut cfg)?;
    let fractions = cfg
        .list_f64("subsample.fractions")?
        .unwrap_or_else(|| (1..=10).map(|i| f64::from(i) / 10.0).collect());
    let iterations: usize = cfg.get("subsample.iterations", 100)?;
    let est_name = cfg.raw("subsample.estimator").unwrap_or("lookup").to_string();
    cfg.set(
        "subsample.fractions",
        fractions.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
    );
    cfg.set("subsample.iterations", iterations);
    cfg.set("subsample.estimator", &est_name);
    let est = match est_name.as_str() {
        "lookup" => setup.lookup(setup.key.clone(), "lookup")?,
        "naive" => setup.naive()?,
        "trees" => Estimator::trees("trees", setup.trees.clone()),
        m => Estimator::model(setup.class(m, &cfg)?, setup.fit.clone()),
    };
    let data = read_dataset(read_input(common)?.as_slice(), setup.kind)?;
    let points = subsample_curve(&est, &data, &setup.loss, &fractions, iterations, setup.folds, setup.seed)?;
    let d = setup.decimals();
    let mut t = Table::new(&["fraction", "observations", "error", "std"]);
    for p in &points {
        t.push(vec![
            format!("{}%", (p.fraction * 100.0).round()),
            p.size.to_string(),
            fixed(p.mean_error, d),
            fixed(p.std_dev, d),
        ]);
    }
    let text = format!(
        "subsample curve: {est_name}, {iterations} iterations, {} folds\n\n{}",
        setup.folds,
        t.render()
    );
    let result = SubsampleResult {
        estimator: est_name,
        iterations,
        folds: setup.folds,
        observations: data.len(),
        points,
    };
    Ok(Output {
        report: Report::new("subsample", setup.seed, cfg.echo(), result, text)?,
        files: Vec::new(),
        out_dir: out_dir(&cfg),
    })
}

#[derive(Debug, Serialize)]
struct FeatureRow {
    projection: String,
    cv: CvResult,
    completeness: f64,
}

#[derive(Debug, Serialize)]
struct FeaturesResult {
    naive: CvResult,
    full: CvResult,
    projections: Vec<FeatureRow>,
}

fn cmd_features(common: &Common, projections: Option<&str>) -> Result<Output, CliError> {
    let mut cfg = load_config(common)?;
    if let Some(p) = projections {
        cfg.set("features.projections", p);
    }
    let setup = Setup::resolve(&mut cfg)?;
    if setup.kind != ProblemKind::Sequences {
        return Err(config_error("feature projections need sequence data"));
    }
    let names = cfg
        .list("features.projections")
        .unwrap_or_else(|| vec!["heads_count".into(), "flips_4_7".into(), "full".into()]);
    let keys = names
        .iter()
        .map(|n| KeyFn::from_name(n).ok_or_else(|| config_error(format!("unknown projection `{n}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    cfg.set("features.projections", names.join(","));
    let data = read_dataset(read_input(common)?.as_slice(), setup.kind)?;
    let plan = setup.plan(&data)?;
    let naive = cross_validate_with(&setup.naive()?, &data, &setup.loss, &plan, setup.weighting)?;
    let full = cross_validate_with(&setup.lookup(KeyFn::Identity, "full")?, &data, &setup.loss, &plan, setup.weighting)?;
    let mut rows = Vec::new();
    for (name, key) in names.iter().zip(keys) {
        let cv = cross_validate_with(&setup.lookup(key, name)?, &data, &setup.loss, &plan, setup.weighting)?;
        let c = completeness_ratio(naive.mean_error, cv.mean_error, full.mean_error)?;
        rows.push(FeatureRow {
            projection: name.clone(),
            cv,
            completeness: c,
        });
    }
    let d = setup.decimals();
    let mut t = Table::new(&["feature set", "error", "se", "completeness"]);
    score_rows(&mut t, &naive, Some(0.0), d);
    for r in &rows {
        score_rows(&mut t, &r.cv, Some(r.completeness), d);
    }
    let text = format!("feature sets relative to the full lookup ({} folds)\n\n{}", setup.folds, t.render());
    let result = FeaturesResult {
        naive,
        full,
        projections: rows,
    };
    Ok(Output {
        report: Report::new("features", setup.seed, cfg.echo(), result, text)?,
        files: Vec::new(),
        out_dir: out_dir(&cfg),
    })
}

fn cmd_filter(common: &Common, method: FilterMethod) -> Result<Output, CliError> {
    let cfg = load_config(common)?;
    if let Some(d) = cfg.raw("domain") {
        if d != "sequences" {
            return Err(config_error("subject filters apply to sequence data"));
        }
    }
    let rows = read_strings(read_input(common)?.as_slice())?;
    let (kept, audit) = filter_subjects(&rows, method)?;
    let mut csv = Vec::new();
    write_strings(&kept, &mut csv)?;
    let mut t = Table::new(&["subject", "strings", "max repeats", "statistic", "p-value", "kept"]);
    for a in &audit.subjects {
        t.push(vec![
            a.subject.clone(),
            a.strings.to_string(),
            a.max_repeats.to_string(),
            a.statistic.map_or(String::new(), |s| fixed(s, 2)),
            a.p_value.map_or(String::new(), |p| format!("{p:.3e}")),
            a.kept_rows.to_string(),
        ]);
    }
    let text = format!(
        "{}: kept {} of {} subjects, {} of {} strings\n\n{}",
        audit.method,
        audit.subjects_out,
        audit.subjects_in,
        audit.rows_out,
        audit.rows_in,
        t.render()
    );
    let seed = cfg.get("seed", 0)?;
    let mut echo = cfg.echo();
    echo.insert("filter.method".into(), audit.method.clone());
    Ok(Output {
        report: Report::new("filter-subjects", seed, echo, &audit, text)?,
        files: vec![("filtered.csv".into(), csv)],
        out_dir: out_dir(&cfg),
    })
}

fn cmd_hetero(common: &Common, groups: Option<usize>, test_subjects: Option<usize>, train_lotteries: Option<usize>) -> Result<Output, CliError> {
    let mut cfg = load_config(common)?;
    if cfg.raw("domain").is_none() {
        cfg.set("domain", "risk");
    }
    if let Some(v) = groups {
        cfg.set("hetero.groups", v);
    }
    if let Some(v) = test_subjects {
        cfg.set("hetero.test_subjects", v);
    }
    if let Some(v) = train_lotteries {
        cfg.set("hetero.train_lotteries", v);
    }
    let setup = Setup::resolve(&mut cfg)?;
    if setup.kind != ProblemKind::Risk {
        return Err(config_error("heterogeneity analysis needs risk data"));
    }
    if setup.naive_mean {
        return Err(config_error("hetero scores against the default naive rule; drop `naive = mean`"));
    }
    let d = HeteroPlan::default();
    let plan = HeteroPlan {
        n_groups: cfg.get("hetero.groups", d.n_groups)?,
        n_test_subjects: cfg.get("hetero.test_subjects", d.n_test_subjects)?,
        n_train_lotteries: cfg.get("hetero.train_lotteries", d.n_train_lotteries)?,
        seed: setup.seed,
        train_lotteries: cfg.list("hetero.train_lottery_ids"),
    };
    cfg.set("hetero.groups", plan.n_groups);
    cfg.set("hetero.test_subjects", plan.n_test_subjects);
    cfg.set("hetero.train_lotteries", plan.n_train_lotteries);
    let models = setup
        .models
        .iter()
        .filter(|m| *m != "trees")
        .map(|m| Ok((setup.class(m, &cfg)?, setup.fit.clone())))
        .collect::<Result<Vec<_>, CliError>>()?;
    let data = read_dataset(read_input(common)?.as_slice(), setup.kind)?;
    let r: HeteroReport = hetero_evaluate(&data, &plan, &models, &setup.loss)?;

    let mut t = Table::new(&["model", "error", "se", "completeness"]);
    score_rows(&mut t, &r.report.naive, Some(0.0), 2);
    for m in &r.report.models {
        score_rows(&mut t, &m.cv, Some(m.completeness), 2);
    }
    score_rows(&mut t, &r.report.lookup, Some(1.0), 2);
    let mut text = format!(
        "groups: {}  test subjects: {}  training lotteries: {}\ngroup sizes: {:?}\n\n",
        plan.n_groups,
        r.test_subjects.len(),
        r.train_lotteries.join(","),
        r.group_sizes
    );
    text.push_str(&t.render());
    text.push('\n');
    if !r.dropped_subjects.is_empty() {
        text.push_str(&format!("dropped subjects (incomplete training responses): {}\n", r.dropped_subjects.join(",")));
    }
    text.push_str(&format!(
        "assignment ties: {}  lookup fallbacks: {}\n\n",
        r.assignment_ties, r.lookup_fallbacks
    ));
    let mut params = String::new();
    for m in &r.report.models {
        params.push_str(&format!("{} fitted parameters per group:\n", m.cv.name));
        for (g, theta) in m.cv.fitted_parameters.iter().enumerate() {
            let parts: Vec<String> = m
                .cv
                .param_names
                .iter()
                .zip(theta)
                .map(|(n, v)| format!("{n}={}", fixed(*v, 4)))
                .collect();
            params.push_str(&format!("  {:>2}: {}\n", g + 1, parts.join(" ")));
        }
    }
    text.push_str(&params);
    Ok(Output {
        report: Report::new("hetero", setup.seed, cfg.echo(), &r, text)?,
        files: Vec::new(),
        out_dir: out_dir(&cfg),
    })
}

fn parse_types(raw: &str) -> Result<Vec<(CptParams, f64)>, CliError> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|t| {
            let v: Vec<f64> = t
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| config_error(format!("synth.types: {e}")))?;
            match v.as_slice() {
                [a, b, d, g, w] => Ok((CptParams::new(*a, *b, *d, *g).map_err(|e| config_error(e.to_string()))?, *w)),
                _ => Err(config_error("synth.types entries are `alpha, beta, delta, gamma, weight`")),
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SynthResult {
    domain: String,
    rows: usize,
    files: Vec<String>,
    metadata: Metadata,
}

fn cmd_synth(common: &Common, generator: Option<&str>, n_strings: Option<usize>, n_subjects: Option<usize>, n_games: Option<usize>) -> Result<Output, CliError> {
    let mut cfg = load_config(common)?;
    if let Some(v) = generator {
        cfg.set("synth.generator", v);
    }
    if let Some(v) = n_strings {
        cfg.set("synth.n_strings", v);
    }
    if let Some(v) = n_subjects {
        cfg.set("synth.n_subjects", v);
    }
    if let Some(v) = n_games {
        cfg.set("synth.n_games", v);
    }
    let kind = cfg.domain()?;
    let seed: u64 = cfg.get("seed", 0)?;
    cfg.set("seed", seed);
    cfg.set("domain", kind.name());
    let mut csv = Vec::new();
    let (rows, meta) = match kind {
        ProblemKind::Risk => {
            let d = RiskGenSpec::default();
            let spec = RiskGenSpec {
                lotteries: default_lotteries(seed),
                types: match cfg.raw("synth.types") {
                    Some(raw) => parse_types(raw)?,
                    None => d.types,
                },
                ce_noise_sigma: cfg.get("synth.sigma", d.ce_noise_sigma)?,
                n_subjects: cfg.get("synth.n_subjects", d.n_subjects)?,
                reports_per_lottery: cfg.get("synth.reports", d.reports_per_lottery)?,
                seed,
            };
            cfg.set("synth.sigma", spec.ce_noise_sigma);
            cfg.set("synth.n_subjects", spec.n_subjects);
            cfg.set("synth.reports", spec.reports_per_lottery);
            cfg.set(
                "synth.types",
                spec.types
                    .iter()
                    .map(|(t, w)| format!("{},{},{},{},{w}", t.alpha, t.beta, t.delta, t.gamma))
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            let (data, meta) = gen_risk(&spec)?;
            write_dataset(&data, &mut csv)?;
            (data.len(), meta)
        }
        ProblemKind::Games => {
            let d = GameGenSpec::default();
            let spec = GameGenSpec {
                n_games: cfg.get("synth.n_games", d.n_games)?,
                observations_per_game: cfg.get("synth.obs_per_game", d.observations_per_game)?,
                tau_true: cfg.get("synth.tau", d.tau_true)?,
                tremble: cfg.get("synth.tremble", d.tremble)?,
                seed,
                ..d
            };
            cfg.set("synth.n_games", spec.n_games);
            cfg.set("synth.obs_per_game", spec.observations_per_game);
            cfg.set("synth.tau", spec.tau_true);
            cfg.set("synth.tremble", spec.tremble);
            let (_, data, meta) = gen_games(&spec)?;
            write_dataset(&data, &mut csv)?;
            (data.len(), meta)
        }
        ProblemKind::Sequences => {
            let d = SeqGenSpec::default();
            let gen = match cfg.choice("synth.generator", &["bernoulli_half", "rv", "urn"], "bernoulli_half")? {
                "rv" => SeqGenerator::RabinVayanos(
                    RvParams::new(cfg.get("synth.alpha", 0.2)?, cfg.get("synth.delta", 0.7)?)
                        .map_err(|e| config_error(e.to_string()))?,
                ),
                "urn" => SeqGenerator::Urn(
                    UrnParams::new(cfg.get("synth.urn_n", 10)?, cfg.get("synth.urn_p", 0.3)?)
                        .map_err(|e| config_error(e.to_string()))?,
                ),
                _ => SeqGenerator::BernoulliHalf,
            };
            let spec = SeqGenSpec {
                generator: gen,
                n_strings: cfg.get("synth.n_strings", d.n_strings)?,
                strings_per_subject: cfg.get("synth.strings_per_subject", d.strings_per_subject)?,
                seed,
                ..d
            };
            match gen {
                SeqGenerator::BernoulliHalf => cfg.set("synth.generator", "bernoulli_half"),
                SeqGenerator::RabinVayanos(t) => {
                    cfg.set("synth.generator", "rv");
                    cfg.set("synth.alpha", t.alpha);
                    cfg.set("synth.delta", t.delta);
                }
                SeqGenerator::Urn(t) => {
                    cfg.set("synth.generator", "urn");
                    cfg.set("synth.urn_n", t.n);
                    cfg.set("synth.urn_p", t.p);
                }
            }
            cfg.set("synth.n_strings", spec.n_strings);
            cfg.set("synth.strings_per_subject", spec.strings_per_subject);
            let (strings, meta) = gen_strings(&spec)?;
            write_strings(&strings, &mut csv)?;
            (strings.len(), meta)
        }
        ProblemKind::Custom => unreachable!("domain() only yields the three domains"),
    };
    let meta_json = serde_json::to_vec_pretty(&meta).map_err(|e| CliError::Io(e.to_string()))?;
    let text = format!("generated {rows} {} rows into data.csv (ground truth in metadata.json)\n", kind.name());
    let result = SynthResult {
        domain: kind.name().into(),
        rows,
        files: vec!["data.csv".into(), "metadata.json".into()],
        metadata: Metadata {
            labels: Vec::new(),
            ..meta
        },
    };
    Ok(Output {
        report: Report::new("synth", seed, cfg.echo(), result, text)?,
        files: vec![("data.csv".into(), csv), ("metadata.json".into(), meta_json)],
        out_dir: out_dir(&cfg),
    })
}

/// Run a command and return its output without touching the filesystem
/// beyond reading inputs.
pub fn run(args: &Args) -> Result<Output, CliError> {
    match &args.command {
        Command::Evaluate { common } => cmd_evaluate(common),
        Command::Subsample {
            common,
            fractions,
            iterations,
            estimator,
        } => cmd_subsample(common, fractions.as_deref(), *iterations, estimator.as_deref()),
        Command::Features { common, projections } => cmd_features(common, projections.as_deref()),
        Command::FilterSubjects {
            common,
            method,
            max_repeats,
            drop_n,
            k,
            cells,
        } => {
            let m = match method.as_str() {
                "chi_squared" => FilterMethod::ChiSquared {
                    drop_n: *drop_n,
                    cells: *cells,
                },
                "first_k" => FilterMethod::FirstK { k: *k },
                _ => FilterMethod::RepeatCutoff {
                    max_repeats: *max_repeats,
                },
            };
            cmd_filter(common, m)
        }
        Command::Hetero {
            common,
            groups,
            test_subjects,
            train_lotteries,
        } => cmd_hetero(common, *groups, *test_subjects, *train_lotteries),
        Command::Synth {
            common,
            generator,
            n_strings,
            n_subjects,
            n_games,
        } => cmd_synth(common, generator.as_deref(), *n_strings, *n_subjects, *n_games),
    }
}

pub fn output_dir(out: &Output) -> &Path {
    &out.out_dir
}
