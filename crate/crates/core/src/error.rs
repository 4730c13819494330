use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("feature arity mismatch: expected {expected}, found {found} (observation {index})")]
    ArityMismatch {
        expected: usize,
        found: usize,
        index: usize,
    },

    #[error("feature position {position} mixes real and categorical entries (observation {index})")]
    MixedFeatureKind { position: usize, index: usize },

    #[error("outcome of observation {index} is {found}, expected {expected}")]
    OutcomeKind {
        index: usize,
        expected: &'static str,
        found: &'static str,
    },

    #[error("prediction for observation {index} is NaN")]
    NanPrediction { index: usize },

    #[error("loss {loss} cannot score prediction {prediction} against outcome {outcome}")]
    IncompatibleOutcome {
        loss: &'static str,
        prediction: &'static str,
        outcome: &'static str,
    },

    #[error("custom problems need a user-supplied naive rule")]
    MissingNaiveRule,

    #[error("invalid fold request: n = {n}, K = {folds} (need K >= 2 and n >= K)")]
    InvalidFolds { n: usize, folds: usize },

    #[error("fold plan covers {plan} observations but dataset has {data}")]
    PlanMismatch { plan: usize, data: usize },

    #[error("training failed in fold {fold}: {source}")]
    FoldTraining {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate benchmark: naive error {naive} does not exceed lookup error {lookup}")]
    DegenerateBenchmark { naive: f64, lookup: f64 },

    #[error("subsample of {size} observations is smaller than K = {folds}")]
    SubsampleTooSmall { size: usize, folds: usize },

    #[error("invalid subsample fractions: {0}")]
    InvalidFractions(String),

    #[error("parameter grid is empty")]
    EmptyParameterGrid,

    #[error("invalid parameter domain for `{name}`: {reason}")]
    InvalidDomain { name: String, reason: String },

    #[error("all {evaluated} parameter points failed to build a rule")]
    AllPointsFailed { evaluated: usize },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid lottery: {0}")]
    InvalidLottery(String),

    #[error("negative prize {0} is outside the expected-utility power form")]
    NegativePrize(f64),

    #[error("feature vector is not a {0}")]
    WrongFeatureLayout(&'static str),

    #[error("fewer subjects ({subjects}) than groups ({groups})")]
    TooFewSubjects { subjects: usize, groups: usize },

    #[error("vector length {found} does not match centroid length {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}
