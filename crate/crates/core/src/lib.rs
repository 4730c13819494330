//! Completeness of behavioral models: how much of the achievable reduction
//! in prediction error a model class captures, measured against a naive
//! baseline and a cross-validated table lookup.

pub mod data;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod games;
pub mod hetero;
pub mod lookup;
pub mod loss;
pub mod par;
pub mod risk;
pub mod rng;
pub mod rule;
pub mod seq;
pub mod synth;
pub mod trees;

pub use data::{Dataset, Feature, FeatureKind, FeatureVector, Label, Observation, Outcome, ProblemKind};
pub use error::{Error, Result};
pub use eval::{
    completeness, completeness_ratio, cross_validate, decompose, make_folds, std_error, subsample_curve,
    CompletenessReport, CvResult, ErrorDecomposition, Estimator, FoldPlan,
};
pub use fitting::{fit, fit_discrete, FitConfig, FitResult};
pub use lookup::{train_lookup, KeyFn, LookupSpec, LookupTable};
pub use loss::LossFunction;
pub use rule::{evaluate_loss, naive_rule, ModelClass, ParamSpec, PredictionRule};
