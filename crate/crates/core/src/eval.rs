//! K-fold cross-validation, standard errors, completeness and subsample
//! curves.

use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fitting::{fit, FitConfig};
use crate::lookup::{train_lookup, LookupSpec};
use crate::loss::LossFunction;
use crate::par;
use crate::rng::{derive_seed, stream};
use crate::rule::{evaluate_loss, ModelClass, PredictionRule};
use crate::trees::{train_bagged, TreeConfig};

pub const DEFAULT_FOLDS: usize = 10;

/// Assignment of observations to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    seed: u64,
    assignment: Vec<usize>,
}

fn check_folds(n: usize, k: usize) -> Result<()> {
    if k < 2 || n < k {
        return Err(Error::InvalidFolds { n, folds: k });
    }
    Ok(())
}

/// Seeded uniform split: shuffle `0..n`, then deal positions round-robin.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    check_folds(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[0x_f01d]));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { k, seed, assignment })
}

/// Split that spreads each instance (game, lottery, ...) evenly over the
/// folds. Observations without an instance id form one stratum.
pub fn make_folds_stratified(data: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = data.len();
    check_folds(n, k)?;
    let mut rng = stream(seed, &[0x_f01d]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.sort_by(|&a, &b| data.get(a).instance_id.cmp(&data.get(b).instance_id));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { k, seed, assignment })
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn test_positions(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_positions(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }
}

/// Something cross-validation can train on a fold and evaluate.
#[derive(Clone)]
pub enum Estimator {
    /// Parameter-free rule; training is skipped.
    Rule { name: String, rule: PredictionRule },
    Model { class: ModelClass, fit: FitConfig },
    Lookup { name: String, spec: LookupSpec },
    Trees { name: String, config: TreeConfig },
}

impl std::fmt::Debug for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Estimator({})", self.name())
    }
}

impl Estimator {
    pub fn rule(name: impl Into<String>, rule: PredictionRule) -> Self {
        Self::Rule { name: name.into(), rule }
    }

    pub fn model(class: ModelClass, fit: FitConfig) -> Self {
        Self::Model { class, fit }
    }

    pub fn lookup(name: impl Into<String>, spec: LookupSpec) -> Self {
        Self::Lookup { name: name.into(), spec }
    }

    pub fn trees(name: impl Into<String>, config: TreeConfig) -> Self {
        Self::Trees { name: name.into(), config }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Rule { name, .. } | Self::Lookup { name, .. } | Self::Trees { name, .. } => name,
            Self::Model { class, .. } => class.name(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Self::Model { class, .. } => class.params().iter().map(|p| p.name.clone()).collect(),
            _ => Vec::new(),
        }
    }

    /// Train on `train`, then score on `test`.
    fn run_fold(&self, train: &Dataset, test: &Dataset, loss: &LossFunction, fold: usize, seed: u64) -> Result<FoldOutcome> {
        match self {
            Self::Rule { rule, .. } => Ok(FoldOutcome {
                error: evaluate_loss(rule, test, loss)?,
                params: Vec::new(),
                unseen: 0,
            }),
            Self::Model { class, fit: cfg } => {
                let fitted = fit(class, train, loss, cfg)?;
                let rule = class.build(&fitted.parameters)?;
                Ok(FoldOutcome {
                    error: evaluate_loss(&rule, test, loss)?,
                    params: fitted.parameters,
                    unseen: 0,
                })
            }
            Self::Lookup { spec, .. } => {
                spec.check_loss(loss)?;
                let table = Arc::new(train_lookup(train, spec)?);
                let error = evaluate_loss(&table.clone().into_rule(), test, loss)?;
                Ok(FoldOutcome {
                    error,
                    params: Vec::new(),
                    unseen: table.unseen_count(),
                })
            }
            Self::Trees { config, .. } => {
                let cfg = TreeConfig {
                    seed: derive_seed(config.seed ^ seed, &[fold as u64]),
                    ..config.clone()
                };
                let ensemble = train_bagged(train, loss, &cfg)?;
                Ok(FoldOutcome {
                    error: evaluate_loss(&ensemble.into_rule(), test, loss)?,
                    params: Vec::new(),
                    unseen: 0,
                })
            }
        }
    }
}

struct FoldOutcome {
    error: f64,
    params: Vec<f64>,
    unseen: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldWeighting {
    /// Plain mean of fold errors.
    #[default]
    Unweighted,
    /// Mean weighted by fold size.
    ByObservations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub name: String,
    pub per_fold_errors: Vec<f64>,
    pub fold_sizes: Vec<usize>,
    pub mean_error: f64,
    pub std_error: f64,
    pub param_names: Vec<String>,
    /// One vector per fold; empty for parameter-free estimators.
    pub fitted_parameters: Vec<Vec<f64>>,
    /// Test observations whose key was absent from the training table.
    pub unseen_keys: usize,
}

impl CvResult {
    pub fn k(&self) -> usize {
        self.per_fold_errors.len()
    }

    pub fn unseen_rate(&self) -> f64 {
        let n: usize = self.fold_sizes.iter().sum();
        if n == 0 {
            0.0
        } else {
            self.unseen_keys as f64 / n as f64
        }
    }

    /// Bundle externally computed fold errors.
    pub fn from_fold_errors(name: impl Into<String>, errors: Vec<f64>) -> Self {
        let k = errors.len();
        Self {
            name: name.into(),
            mean_error: mean(&errors),
            std_error: std_error(&errors),
            per_fold_errors: errors,
            fold_sizes: vec![0; k],
            param_names: Vec::new(),
            fitted_parameters: Vec::new(),
            unseen_keys: 0,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `sqrt(Var / K)` with the population variance of the fold errors.
pub fn std_error(per_fold_errors: &[f64]) -> f64 {
    let k = per_fold_errors.len();
    if k == 0 {
        return 0.0;
    }
    let m = mean(per_fold_errors);
    let var = per_fold_errors.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / k as f64;
    (var / k as f64).sqrt()
}

pub fn cross_validate(est: &Estimator, data: &Dataset, loss: &LossFunction, plan: &FoldPlan) -> Result<CvResult> {
    cross_validate_with(est, data, loss, plan, FoldWeighting::Unweighted)
}

pub fn cross_validate_with(
    est: &Estimator,
    data: &Dataset,
    loss: &LossFunction,
    plan: &FoldPlan,
    weighting: FoldWeighting,
) -> Result<CvResult> {
    if plan.len() != data.len() {
        return Err(Error::PlanMismatch {
            plan: plan.len(),
            data: data.len(),
        });
    }
    let outcomes = par::try_map_range(plan.k(), |fold| {
        let train = data.subset(&plan.train_positions(fold));
        let test = data.subset(&plan.test_positions(fold));
        est.run_fold(&train, &test, loss, fold, plan.seed())
            .map_err(|e| Error::FoldTraining {
                fold,
                source: Box::new(e),
            })
    })?;
    let per_fold_errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
    let fold_sizes = plan.sizes();
    let mean_error = match weighting {
        FoldWeighting::Unweighted => mean(&per_fold_errors),
        FoldWeighting::ByObservations => {
            per_fold_errors
                .iter()
                .zip(&fold_sizes)
                .map(|(e, &s)| e * s as f64)
                .sum::<f64>()
                / data.len() as f64
        }
    };
    let fitted_parameters = if matches!(est, Estimator::Model { .. }) {
        outcomes.iter().map(|o| o.params.clone()).collect()
    } else {
        Vec::new()
    };
    Ok(CvResult {
        name: est.name().to_string(),
        std_error: std_error(&per_fold_errors),
        mean_error,
        per_fold_errors,
        fold_sizes,
        param_names: est.param_names(),
        fitted_parameters,
        unseen_keys: outcomes.iter().map(|o| o.unseen).sum(),
    })
}

/// `(naive - model) / (naive - lookup)`.
pub fn completeness_ratio(naive: f64, model: f64, lookup: f64) -> Result<f64> {
    if naive.is_nan() || lookup.is_nan() || naive <= lookup {
        return Err(Error::DegenerateBenchmark { naive, lookup });
    }
    Ok((naive - model) / (naive - lookup))
}

pub fn completeness(naive: &CvResult, model: &CvResult, lookup: &CvResult) -> Result<f64> {
    completeness_ratio(naive.mean_error, model.mean_error, lookup.mean_error)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub expected_error: f64,
    pub sampling_error: f64,
    pub irreducible_estimate: f64,
}

/// Split a lookup CV error into sampling error (`SE²`) and the remainder.
pub fn decompose(lookup_cv: &CvResult) -> ErrorDecomposition {
    decompose_values(lookup_cv.mean_error, lookup_cv.std_error)
}

pub fn decompose_values(mean_error: f64, std_error: f64) -> ErrorDecomposition {
    let sampling_error = std_error * std_error;
    ErrorDecomposition {
        expected_error: mean_error,
        sampling_error,
        irreducible_estimate: mean_error - sampling_error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub cv: CvResult,
    pub completeness: f64,
    /// Completeness below 0 or above 1.
    pub out_of_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub naive: CvResult,
    pub models: Vec<ModelScore>,
    pub lookup: CvResult,
}

impl CompletenessReport {
    pub fn from_results(naive: CvResult, models: Vec<CvResult>, lookup: CvResult) -> Result<Self> {
        let models = models
            .into_iter()
            .map(|cv| {
                let c = completeness(&naive, &cv, &lookup)?;
                Ok(ModelScore {
                    cv,
                    completeness: c,
                    out_of_range: !(0.0..=1.0).contains(&c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { naive, models, lookup })
    }

    pub fn model(&self, name: &str) -> Option<&ModelScore> {
        self.models.iter().find(|m| m.cv.name == name)
    }
}

/// Cross-validate naive, models and lookup under one plan.
pub fn evaluate_suite(
    naive: &Estimator,
    models: &[Estimator],
    lookup: &Estimator,
    data: &Dataset,
    loss: &LossFunction,
    plan: &FoldPlan,
) -> Result<CompletenessReport> {
    evaluate_suite_with(naive, models, lookup, data, loss, plan, FoldWeighting::Unweighted)
}

pub fn evaluate_suite_with(
    naive: &Estimator,
    models: &[Estimator],
    lookup: &Estimator,
    data: &Dataset,
    loss: &LossFunction,
    plan: &FoldPlan,
    weighting: FoldWeighting,
) -> Result<CompletenessReport> {
    let naive_cv = cross_validate_with(naive, data, loss, plan, weighting)?;
    let lookup_cv = cross_validate_with(lookup, data, loss, plan, weighting)?;
    completeness_ratio(naive_cv.mean_error, naive_cv.mean_error, lookup_cv.mean_error)?;
    let model_cvs = par::map_slice(models, |m| cross_validate_with(m, data, loss, plan, weighting))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    CompletenessReport::from_results(naive_cv, model_cvs, lookup_cv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsamplePoint {
    pub fraction: f64,
    pub size: usize,
    pub mean_error: f64,
    /// Sample standard deviation across iterations; 0 for one iteration.
    pub std_dev: f64,
    pub iteration_errors: Vec<f64>,
}

pub fn subsample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// For each fraction, cross-validate on `iterations` uniform subsamples
/// drawn without replacement and average the CV errors.
#[allow(clippy::too_many_arguments)]
pub fn subsample_curve(
    est: &Estimator,
    data: &Dataset,
    loss: &LossFunction,
    fractions: &[f64],
    iterations: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<SubsamplePoint>> {
    if iterations == 0 {
        return Err(Error::InvalidFractions("iterations must be at least 1".into()));
    }
    if fractions.is_empty() {
        return Err(Error::InvalidFractions("no fractions given".into()));
    }
    for w in fractions.windows(2) {
        if w[0].is_nan() || w[0] >= w[1] {
            return Err(Error::InvalidFractions("fractions must be strictly ascending".into()));
        }
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::InvalidFractions(format!("fraction {f} outside (0, 1]")));
    }
    let n = data.len();
    for &f in fractions {
        let size = subsample_size(n, f);
        if size < k {
            return Err(Error::SubsampleTooSmall { size, folds: k });
        }
    }
    let jobs = fractions.len() * iterations;
    let errors = par::try_map_range(jobs, |job| {
        let (fi, it) = (job / iterations, job % iterations);
        let size = subsample_size(n, fractions[fi]);
        let mut positions = if size == n {
            (0..n).collect::<Vec<_>>()
        } else {
            let mut rng = stream(seed, &[0x5ab, fi as u64, it as u64]);
            index::sample(&mut rng, n, size).into_vec()
        };
        positions.sort_unstable();
        let sub = data.subset(&positions);
        let plan = make_folds(size, k, seed)?;
        cross_validate(est, &sub, loss, &plan).map(|cv| cv.mean_error)
    })?;
    Ok(fractions
        .iter()
        .enumerate()
        .map(|(fi, &fraction)| {
            let errs = errors[fi * iterations..(fi + 1) * iterations].to_vec();
            let m = mean(&errs);
            let std_dev = if errs.len() > 1 {
                (errs.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (errs.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            SubsamplePoint {
                fraction,
                size: subsample_size(n, fraction),
                mean_error: m,
                std_dev,
                iteration_errors: errs,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureVector, Observation, Outcome, ProblemKind};
    use crate::lookup::KeyFn;

    #[test]
    fn fold_sizes_balanced() {
        let p = make_folds(10, 10, 1).unwrap();
        assert_eq!(p.sizes(), vec![1; 10]);
        let p = make_folds(23137, 10, 42).unwrap();
        assert!(p.sizes().iter().all(|&s| s == 2313 || s == 2314));
        assert_eq!(p, make_folds(23137, 10, 42).unwrap());
        assert!(make_folds(5, 10, 0).is_err());
        assert!(make_folds(5, 1, 0).is_err());
    }

    #[test]
    fn std_error_population_convention() {
        assert_eq!(std_error(&[0.3; 5]), 0.0);
        let se = std_error(&[0.2, 0.4]);
        assert!((se - (0.01f64 / 2.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn completeness_endpoints() {
        assert_eq!(completeness_ratio(0.5, 0.5, 0.2).unwrap(), 0.0);
        assert_eq!(completeness_ratio(0.5, 0.2, 0.2).unwrap(), 1.0);
        assert!(matches!(
            completeness_ratio(0.2, 0.1, 0.2),
            Err(Error::DegenerateBenchmark { .. })
        ));
    }

    #[test]
    fn decomposition_of_published_row() {
        let d = decompose_values(65.58, 3.0);
        assert_eq!(d.sampling_error, 9.0);
        assert!((d.irreducible_estimate - 56.58).abs() < 1e-12);
    }

    fn deterministic_data() -> Dataset {
        let rows = (0..200)
            .map(|i| {
                let x = (i % 4) as u32;
                Observation::new(FeatureVector::cats(&[x]), Outcome::Real(f64::from(x) * 2.0))
            })
            .collect();
        Dataset::new(rows, ProblemKind::Custom).unwrap()
    }

    #[test]
    fn noiseless_lookup_has_zero_error() {
        let d = deterministic_data();
        let loss = LossFunction::squared_error();
        let spec = LookupSpec::for_loss(&loss, KeyFn::Identity, PredictionRule::constant(Outcome::Real(0.0))).unwrap();
        let plan = make_folds(d.len(), 10, 3).unwrap();
        let cv = cross_validate(&Estimator::lookup("lookup", spec), &d, &loss, &plan).unwrap();
        assert_eq!(cv.mean_error, 0.0);
        assert_eq!(cv.unseen_keys, 0);
    }

    #[test]
    fn fixed_rule_matches_full_evaluation_with_equal_folds() {
        let d = deterministic_data();
        let loss = LossFunction::squared_error();
        let rule = PredictionRule::constant(Outcome::Real(1.0));
        let plan = make_folds(d.len(), 10, 9).unwrap();
        let cv = cross_validate(&Estimator::rule("c", rule.clone()), &d, &loss, &plan).unwrap();
        let full = evaluate_loss(&rule, &d, &loss).unwrap();
        assert!((cv.mean_error - full).abs() < 1e-12);
    }

    #[test]
    fn subsample_preconditions() {
        let rows = (0..100)
            .map(|_| Observation::new(FeatureVector::cats(&[0]), Outcome::Real(0.0)))
            .collect();
        let d = Dataset::new(rows, ProblemKind::Custom).unwrap();
        let est = Estimator::rule("c", PredictionRule::constant(Outcome::Real(0.0)));
        let loss = LossFunction::squared_error();
        assert!(matches!(
            subsample_curve(&est, &d, &loss, &[0.05], 1, 10, 0),
            Err(Error::SubsampleTooSmall { size: 5, folds: 10 })
        ));
        assert!(subsample_curve(&est, &d, &loss, &[0.5, 0.2], 1, 10, 0).is_err());
    }
}
