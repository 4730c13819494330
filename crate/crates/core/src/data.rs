//! Observations, outcomes and datasets.
//!
//! A [`Dataset`] is an immutable, shareable collection of observations.
//! Subsets (training folds, subsamples) are index views over the same
//! storage, so slicing a dataset never copies observations.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Feature {
    Real(f64),
    /// Categorical symbol, stored as a small integer code.
    Cat(u32),
}

impl Feature {
    pub fn as_real(&self) -> Option<f64> {
        match *self {
            Feature::Real(v) => Some(v),
            Feature::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<u32> {
        match *self {
            Feature::Cat(c) => Some(c),
            Feature::Real(_) => None,
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Feature::Real(_) => FeatureKind::Real,
            Feature::Cat(_) => FeatureKind::Categorical,
        }
    }

    /// Canonical 64-bit encoding used for table keys. Real values are keyed
    /// by their exact bit pattern with `-0.0` folded onto `0.0`.
    pub fn canonical_bits(&self) -> u64 {
        match *self {
            Feature::Real(v) => {
                let v = if v == 0.0 { 0.0 } else { v };
                v.to_bits()
            }
            Feature::Cat(c) => u64::from(c) | (1 << 63),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Real,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<Feature>);

impl FeatureVector {
    pub fn new(values: Vec<Feature>) -> Self {
        Self(values)
    }

    pub fn reals(values: &[f64]) -> Self {
        Self(values.iter().map(|&v| Feature::Real(v)).collect())
    }

    pub fn cats(values: &[u32]) -> Self {
        Self(values.iter().map(|&c| Feature::Cat(c)).collect())
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[Feature] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Option<&Feature> {
        self.0.get(i)
    }
}

/// A realized or predicted outcome.
///
/// `Mixed` is only produced by randomized prediction rules (the uniform
/// game baseline): a probability over action labels, scored by its
/// expected loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Real(f64),
    /// Zero-based action index (a₁ = 0).
    Action(u8),
    /// `true` = H.
    Binary(bool),
    /// Probability of H (or of the positive symbol).
    Prob(f64),
    Mixed(Vec<f64>),
}

impl Outcome {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Outcome::Real(_) => "real",
            Outcome::Action(_) => "action",
            Outcome::Binary(_) => "binary",
            Outcome::Prob(_) => "probability",
            Outcome::Mixed(_) => "mixed",
        }
    }

    /// Numeric embedding for squared error. Binary outcomes map to 0/1.
    pub fn numeric(&self) -> Option<f64> {
        match *self {
            Outcome::Real(v) | Outcome::Prob(v) => Some(v),
            Outcome::Binary(b) => Some(if b { 1.0 } else { 0.0 }),
            Outcome::Action(_) | Outcome::Mixed(_) => None,
        }
    }

    /// Label for misclassification and mode statistics, ordered so that
    /// the smallest label wins ties: actions by index, and H before T.
    pub fn label(&self) -> Option<Label> {
        match *self {
            Outcome::Action(a) => Some(Label(u32::from(a))),
            Outcome::Binary(true) => Some(Label(0)),
            Outcome::Binary(false) => Some(Label(1)),
            _ => None,
        }
    }

    pub fn is_nan(&self) -> bool {
        match self {
            Outcome::Real(v) | Outcome::Prob(v) => v.is_nan(),
            Outcome::Mixed(p) => p.iter().any(|v| v.is_nan()),
            _ => false,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Real(v) => write!(f, "{v}"),
            Outcome::Action(a) => write!(f, "a{}", a + 1),
            Outcome::Binary(true) => write!(f, "H"),
            Outcome::Binary(false) => write!(f, "T"),
            Outcome::Prob(p) => write!(f, "P(H)={p}"),
            Outcome::Mixed(p) => write!(f, "mixed{p:?}"),
        }
    }
}

/// Ordered label code, see [`Outcome::label`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: FeatureVector,
    pub y: Outcome,
    pub subject_id: Option<String>,
    pub instance_id: Option<String>,
}

impl Observation {
    pub fn new(x: FeatureVector, y: Outcome) -> Self {
        Self {
            x,
            y,
            subject_id: None,
            instance_id: None,
        }
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject_id = Some(subject.into());
        self
    }

    pub fn with_instance(mut self, instance: impl Into<String>) -> Self {
        self.instance_id = Some(instance.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Risk,
    Games,
    Sequences,
    Custom,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Risk => "risk",
            ProblemKind::Games => "games",
            ProblemKind::Sequences => "sequences",
            ProblemKind::Custom => "custom",
        }
    }
}

/// Immutable dataset. Cloning is cheap; subsets share storage.
#[derive(Debug, Clone)]
pub struct Dataset {
    rows: Arc<Vec<Observation>>,
    view: Arc<[usize]>,
    kind: ProblemKind,
    schema: Arc<[FeatureKind]>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, kind: ProblemKind) -> Result<Self> {
        let first = observations.first().ok_or(Error::EmptyDataset)?;
        let schema: Vec<FeatureKind> = first.x.values().iter().map(Feature::kind).collect();
        let first_outcome = first.y.kind_name();
        for (index, obs) in observations.iter().enumerate() {
            if obs.x.arity() != schema.len() {
                return Err(Error::ArityMismatch {
                    expected: schema.len(),
                    found: obs.x.arity(),
                    index,
                });
            }
            for (position, (f, k)) in obs.x.values().iter().zip(&schema).enumerate() {
                if f.kind() != *k {
                    return Err(Error::MixedFeatureKind { position, index });
                }
            }
            let found = obs.y.kind_name();
            let expected = match kind {
                ProblemKind::Risk => "real",
                ProblemKind::Games => "action",
                ProblemKind::Sequences => match obs.y {
                    Outcome::Prob(_) => "probability",
                    _ => "binary",
                },
                ProblemKind::Custom => first_outcome,
            };
            if found != expected {
                return Err(Error::OutcomeKind {
                    index,
                    expected,
                    found,
                });
            }
            if let Outcome::Prob(p) = obs.y {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::OutcomeKind {
                        index,
                        expected: "probability in [0, 1]",
                        found: "probability out of range",
                    });
                }
            }
        }
        let n = observations.len();
        Ok(Self {
            rows: Arc::new(observations),
            view: (0..n).collect(),
            kind,
            schema: schema.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.view.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view.is_empty()
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn arity(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[FeatureKind] {
        &self.schema
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.rows[self.view[i]]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Observation> + '_ {
        self.view.iter().map(move |&i| &self.rows[i])
    }

    /// Index view over the given positions (positions refer to this
    /// dataset, not to the underlying storage).
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            rows: Arc::clone(&self.rows),
            view: positions.iter().map(|&p| self.view[p]).collect(),
            kind: self.kind,
            schema: Arc::clone(&self.schema),
        }
    }

    /// Owned copy of the observations in view order.
    pub fn to_observations(&self) -> Vec<Observation> {
        self.iter().cloned().collect()
    }

    /// Whether outcomes are probabilities of a binary symbol (mean cells
    /// then predict `Prob` rather than `Real`).
    pub fn has_binary_outcomes(&self) -> bool {
        matches!(self.get(0).y, Outcome::Binary(_) | Outcome::Prob(_))
    }
}
