//! Loss functions.
//!
//! Hard-label predictions score 0 or 1 under misclassification. Randomized
//! predictions (`Mixed`, or `Prob` against a binary outcome) score their
//! expected misclassification, which makes uniform-guessing baselines
//! deterministic.

use std::fmt;
use std::sync::Arc;

use crate::data::Outcome;
use crate::error::{Error, Result};

pub type CustomLoss = Arc<dyn Fn(&Outcome, &Outcome) -> Result<f64> + Send + Sync>;

#[derive(Clone)]
pub enum LossKind {
    SquaredError,
    Misclassification,
    Custom { name: String, eval: CustomLoss },
}

#[derive(Clone)]
pub struct LossFunction {
    kind: LossKind,
}

impl fmt::Debug for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LossFunction({})", self.name())
    }
}

impl LossFunction {
    pub fn squared_error() -> Self {
        Self {
            kind: LossKind::SquaredError,
        }
    }

    pub fn misclassification() -> Self {
        Self {
            kind: LossKind::Misclassification,
        }
    }

    pub fn custom(name: impl Into<String>, eval: CustomLoss) -> Self {
        Self {
            kind: LossKind::Custom {
                name: name.into(),
                eval,
            },
        }
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            LossKind::SquaredError => "squared_error",
            LossKind::Misclassification => "misclassification",
            LossKind::Custom { name, .. } => name,
        }
    }

    pub fn is_squared_error(&self) -> bool {
        matches!(self.kind, LossKind::SquaredError)
    }

    pub fn is_misclassification(&self) -> bool {
        matches!(self.kind, LossKind::Misclassification)
    }

    pub fn loss(&self, predicted: &Outcome, realized: &Outcome) -> Result<f64> {
        match &self.kind {
            LossKind::SquaredError => match (predicted.numeric(), realized.numeric()) {
                (Some(p), Some(r)) => Ok((p - r) * (p - r)),
                _ => Err(self.incompatible(predicted, realized)),
            },
            LossKind::Misclassification => misclassification(predicted, realized)
                .ok_or_else(|| self.incompatible(predicted, realized)),
            LossKind::Custom { eval, .. } => eval(predicted, realized),
        }
    }

    fn incompatible(&self, predicted: &Outcome, realized: &Outcome) -> Error {
        Error::IncompatibleOutcome {
            loss: match self.kind {
                LossKind::SquaredError => "squared_error",
                LossKind::Misclassification => "misclassification",
                LossKind::Custom { .. } => "custom",
            },
            prediction: predicted.kind_name(),
            outcome: realized.kind_name(),
        }
    }
}

fn misclassification(predicted: &Outcome, realized: &Outcome) -> Option<f64> {
    match (predicted, realized) {
        (Outcome::Mixed(dist), Outcome::Action(a)) => {
            let p = dist.get(usize::from(*a)).copied().unwrap_or(0.0);
            Some(1.0 - p)
        }
        (Outcome::Prob(q), Outcome::Binary(h)) => Some(if *h { 1.0 - q } else { *q }),
        _ => {
            let (p, r) = (predicted.label()?, realized.label()?);
            Some(if p == r { 0.0 } else { 1.0 })
        }
    }
}
