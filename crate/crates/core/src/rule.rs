//! Prediction rules and parametric model classes.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, Outcome, ProblemKind};
use crate::error::{Error, Result};
use crate::loss::LossFunction;

pub trait Predict: Send + Sync {
    fn predict(&self, x: &FeatureVector) -> Outcome;

    /// Input arity, when the rule only accepts one.
    fn arity(&self) -> Option<usize> {
        None
    }
}

struct FnRule<F> {
    arity: Option<usize>,
    f: F,
}

impl<F> Predict for FnRule<F>
where
    F: Fn(&FeatureVector) -> Outcome + Send + Sync,
{
    fn predict(&self, x: &FeatureVector) -> Outcome {
        (self.f)(x)
    }

    fn arity(&self) -> Option<usize> {
        self.arity
    }
}

/// A shareable, immutable prediction rule.
#[derive(Clone)]
pub struct PredictionRule(Arc<dyn Predict>);

impl fmt::Debug for PredictionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PredictionRule(arity = {:?})", self.0.arity())
    }
}

impl PredictionRule {
    pub fn new(rule: impl Predict + 'static) -> Self {
        Self(Arc::new(rule))
    }

    pub fn from_arc(rule: Arc<dyn Predict>) -> Self {
        Self(rule)
    }

    pub fn from_fn<F>(arity: Option<usize>, f: F) -> Self
    where
        F: Fn(&FeatureVector) -> Outcome + Send + Sync + 'static,
    {
        Self::new(FnRule { arity, f })
    }

    pub fn constant(y: Outcome) -> Self {
        Self::from_fn(None, move |_| y.clone())
    }

    pub fn predict(&self, x: &FeatureVector) -> Outcome {
        self.0.predict(x)
    }

    pub fn arity(&self) -> Option<usize> {
        self.0.arity()
    }
}

/// Mean of `loss(rule(x), y)` over the dataset, accumulated in view order.
pub fn evaluate_loss(rule: &PredictionRule, data: &Dataset, loss: &LossFunction) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(expected) = rule.arity() {
        if expected != data.arity() {
            return Err(Error::ArityMismatch {
                expected,
                found: data.arity(),
                index: 0,
            });
        }
    }
    let mut total = 0.0;
    for (index, obs) in data.iter().enumerate() {
        let pred = rule.predict(&obs.x);
        if pred.is_nan() {
            return Err(Error::NanPrediction { index });
        }
        total += loss.loss(&pred, &obs.y)?;
    }
    Ok(total / data.len() as f64)
}

/// The domain's naive baseline: lottery expected value, uniform play, or
/// a constant 0.5 probability of H.
pub fn naive_rule(kind: ProblemKind) -> Result<PredictionRule> {
    match kind {
        ProblemKind::Risk => Ok(crate::risk::expected_value_rule()),
        ProblemKind::Games => Ok(crate::games::uniform_rule()),
        ProblemKind::Sequences => Ok(PredictionRule::constant(Outcome::Prob(0.5))),
        ProblemKind::Custom => Err(Error::MissingNaiveRule),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamKind {
    Continuous,
    /// Integer values `lower, lower + step, ..., <= upper`.
    Integer { step: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn continuous(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            lower,
            upper,
            kind: ParamKind::Continuous,
        }
    }

    pub fn integer(name: &str, lower: f64, upper: f64, step: u32) -> Self {
        Self {
            name: name.to_string(),
            lower,
            upper,
            kind: ParamKind::Integer { step },
        }
    }

    pub fn is_integer(&self) -> bool {
        matches!(self.kind, ParamKind::Integer { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidDomain {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(bad("bounds must be finite"));
        }
        if self.lower > self.upper {
            return Err(bad("lower bound exceeds upper bound"));
        }
        if let ParamKind::Integer { step } = self.kind {
            if step == 0 {
                return Err(bad("integer step must be positive"));
            }
            if self.lower.fract() != 0.0 {
                return Err(bad("integer parameter needs an integral lower bound"));
            }
        }
        Ok(())
    }
}

pub type RuleBuilder = Arc<dyn Fn(&[f64]) -> Result<PredictionRule> + Send + Sync>;

/// A parametric family of prediction rules over a bounded box.
#[derive(Clone)]
pub struct ModelClass {
    name: String,
    params: Vec<ParamSpec>,
    builder: RuleBuilder,
}

impl fmt::Debug for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelClass")
            .field("name", &self.name)
            .field("params", &self.params)
            .finish()
    }
}

impl ModelClass {
    pub fn new<F>(name: impl Into<String>, params: Vec<ParamSpec>, builder: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<PredictionRule> + Send + Sync + 'static,
    {
        for p in &params {
            p.validate()?;
        }
        Ok(Self {
            name: name.into(),
            params,
            builder: Arc::new(builder),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn build(&self, theta: &[f64]) -> Result<PredictionRule> {
        if theta.len() != self.params.len() {
            return Err(Error::InvalidParameters(format!(
                "{} expects {} parameters, got {}",
                self.name,
                self.params.len(),
                theta.len()
            )));
        }
        (self.builder)(theta)
    }

    /// Replace the bounds of one parameter.
    pub fn with_bounds(mut self, param: &str, lower: f64, upper: f64) -> Result<Self> {
        let spec = self
            .params
            .iter_mut()
            .find(|p| p.name == param)
            .ok_or_else(|| Error::InvalidDomain {
                name: param.to_string(),
                reason: format!("model {} has no such parameter", self.name),
            })?;
        spec.lower = lower;
        spec.upper = upper;
        spec.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    fn bernoulli(ys: &[bool]) -> Dataset {
        let rows = ys
            .iter()
            .map(|&b| Observation::new(FeatureVector::cats(&[0]), Outcome::Binary(b)))
            .collect();
        Dataset::new(rows, ProblemKind::Sequences).unwrap()
    }

    #[test]
    fn constant_half_on_balanced_bernoulli() {
        let d = bernoulli(&[true, false, true, false]);
        let rule = PredictionRule::constant(Outcome::Prob(0.5));
        let l = evaluate_loss(&rule, &d, &LossFunction::squared_error()).unwrap();
        assert_eq!(l, 0.25);
    }

    #[test]
    fn constant_action_misclassifies_two_of_three() {
        let rows = (0..3)
            .map(|a| Observation::new(FeatureVector::reals(&[0.0]), Outcome::Action(a)))
            .collect();
        let d = Dataset::new(rows, ProblemKind::Games).unwrap();
        let rule = PredictionRule::constant(Outcome::Action(0));
        let l = evaluate_loss(&rule, &d, &LossFunction::misclassification()).unwrap();
        assert_eq!(l, 2.0 / 3.0);
    }

    #[test]
    fn nan_prediction_names_observation() {
        let d = bernoulli(&[true, false]);
        let rule = PredictionRule::from_fn(None, |x| {
            if x.get(0).is_some() {
                Outcome::Prob(f64::NAN)
            } else {
                Outcome::Prob(0.0)
            }
        });
        assert_eq!(
            evaluate_loss(&rule, &d, &LossFunction::squared_error()).unwrap_err(),
            Error::NanPrediction { index: 0 }
        );
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let d = bernoulli(&[true]);
        let rule = PredictionRule::from_fn(Some(7), |_| Outcome::Prob(0.5));
        assert!(matches!(
            evaluate_loss(&rule, &d, &LossFunction::squared_error()),
            Err(Error::ArityMismatch { expected: 7, found: 1, .. })
        ));
    }

    #[test]
    fn naive_rules_per_domain() {
        let seq = naive_rule(ProblemKind::Sequences).unwrap();
        assert_eq!(seq.predict(&FeatureVector::cats(&[1; 7])), Outcome::Prob(0.5));
        let risk = naive_rule(ProblemKind::Risk).unwrap();
        assert_eq!(
            risk.predict(&FeatureVector::reals(&[10.0, 0.0, 0.5])),
            Outcome::Real(5.0)
        );
        assert_eq!(naive_rule(ProblemKind::Custom).unwrap_err(), Error::MissingNaiveRule);
    }

    #[test]
    fn invalid_domains_rejected() {
        let r = ModelClass::new("m", vec![ParamSpec::continuous("a", 2.0, 1.0)], |_| {
            Ok(PredictionRule::constant(Outcome::Real(0.0)))
        });
        assert!(matches!(r, Err(Error::InvalidDomain { .. })));
        let r = ModelClass::new("m", vec![ParamSpec::continuous("a", f64::NEG_INFINITY, 1.0)], |_| {
            Ok(PredictionRule::constant(Outcome::Real(0.0)))
        });
        assert!(r.is_err());
    }
}
