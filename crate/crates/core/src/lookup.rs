//! Table Lookup: the unrestricted empirical rule mapping each observed
//! feature key to its training mean (squared error) or mode
//! (misclassification), plus compressed variants keyed on projections of
//! the feature vector.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Feature, FeatureVector, Label, Outcome};
use crate::error::{Error, Result};
use crate::loss::{LossFunction, LossKind};
use crate::rule::{Predict, PredictionRule};
use crate::seq::HISTORY_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyPart {
    Real(u64),
    Cat(u32),
}

impl KeyPart {
    fn from_feature(f: &Feature) -> Self {
        match *f {
            Feature::Real(v) => KeyPart::Real(if v == 0.0 { 0.0f64 } else { v }.to_bits()),
            Feature::Cat(c) => KeyPart::Cat(c),
        }
    }
}

impl Ord for KeyPart {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (KeyPart::Real(a), KeyPart::Real(b)) => f64::from_bits(*a).total_cmp(&f64::from_bits(*b)),
            (KeyPart::Cat(a), KeyPart::Cat(b)) => a.cmp(b),
            (KeyPart::Real(_), KeyPart::Cat(_)) => Ordering::Less,
            (KeyPart::Cat(_), KeyPart::Real(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for KeyPart {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Canonical hashable encoding of a (possibly projected) feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureKey(pub Vec<KeyPart>);

impl FeatureKey {
    pub fn of(x: &FeatureVector) -> Self {
        Self(x.values().iter().map(KeyPart::from_feature).collect())
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, part) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match part {
                KeyPart::Real(bits) => write!(f, "{}", f64::from_bits(*bits))?,
                KeyPart::Cat(c) => write!(f, "{c}")?,
            }
        }
        Ok(())
    }
}

pub type CustomKeyFn = Arc<dyn Fn(&FeatureVector) -> Result<FeatureKey> + Send + Sync>;

/// Maps a feature vector to its table key.
#[derive(Clone)]
pub enum KeyFn {
    Identity,
    /// Number of H among the seven history flips.
    HeadsCount,
    /// The suffix of flips 4 through 7.
    Flips4To7,
    /// Every vector maps to one key.
    Constant,
    Custom { name: String, f: CustomKeyFn },
}

impl fmt::Debug for KeyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl KeyFn {
    pub fn name(&self) -> &str {
        match self {
            KeyFn::Identity => "full",
            KeyFn::HeadsCount => "heads_count",
            KeyFn::Flips4To7 => "flips_4_7",
            KeyFn::Constant => "constant",
            KeyFn::Custom { name, .. } => name,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(KeyFn::Identity),
            "heads_count" => Some(KeyFn::HeadsCount),
            "flips_4_7" => Some(KeyFn::Flips4To7),
            "constant" => Some(KeyFn::Constant),
            _ => None,
        }
    }

    pub fn key(&self, x: &FeatureVector) -> Result<FeatureKey> {
        match self {
            KeyFn::Identity => Ok(FeatureKey::of(x)),
            KeyFn::HeadsCount => {
                let flips = sequence_flips(x)?;
                let heads = flips.iter().filter(|&&h| h).count() as u32;
                Ok(FeatureKey(vec![KeyPart::Cat(heads)]))
            }
            KeyFn::Flips4To7 => {
                let flips = sequence_flips(x)?;
                Ok(FeatureKey(
                    flips[3..].iter().map(|&h| KeyPart::Cat(u32::from(h))).collect(),
                ))
            }
            KeyFn::Constant => Ok(FeatureKey(Vec::new())),
            KeyFn::Custom { f, .. } => f(x),
        }
    }
}

pub fn projection_number_of_heads() -> KeyFn {
    KeyFn::HeadsCount
}

pub fn projection_flips_4_to_7() -> KeyFn {
    KeyFn::Flips4To7
}

fn sequence_flips(x: &FeatureVector) -> Result<[bool; HISTORY_LEN]> {
    if x.arity() != HISTORY_LEN {
        return Err(Error::WrongFeatureLayout("seven-flip history"));
    }
    let mut out = [false; HISTORY_LEN];
    for (slot, f) in out.iter_mut().zip(x.values()) {
        *slot = match f {
            Feature::Cat(1) => true,
            Feature::Cat(0) => false,
            _ => return Err(Error::WrongFeatureLayout("seven-flip history")),
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatistic {
    Mean,
    Mode,
}

#[derive(Debug, Clone)]
pub struct LookupSpec {
    pub key_fn: KeyFn,
    pub cell_statistic: CellStatistic,
    pub fallback: PredictionRule,
}

impl LookupSpec {
    /// Spec whose cell statistic matches `loss`.
    pub fn for_loss(loss: &LossFunction, key_fn: KeyFn, fallback: PredictionRule) -> Result<Self> {
        let cell_statistic = match loss.kind() {
            LossKind::SquaredError => CellStatistic::Mean,
            LossKind::Misclassification => CellStatistic::Mode,
            LossKind::Custom { name, .. } => {
                return Err(Error::Config(format!(
                    "table lookup has no cell statistic for custom loss `{name}`"
                )))
            }
        };
        Ok(Self {
            key_fn,
            cell_statistic,
            fallback,
        })
    }

    pub fn check_loss(&self, loss: &LossFunction) -> Result<()> {
        let ok = matches!(
            (self.cell_statistic, loss.kind()),
            (CellStatistic::Mean, LossKind::SquaredError) | (CellStatistic::Mode, LossKind::Misclassification)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "cell statistic {:?} does not match loss {}",
                self.cell_statistic,
                loss.name()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub prediction: Outcome,
    pub count: usize,
}

pub struct LookupTable {
    cells: HashMap<FeatureKey, Cell>,
    key_fn: KeyFn,
    fallback: PredictionRule,
    unseen: AtomicUsize,
}

impl fmt::Debug for LookupTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LookupTable")
            .field("cells", &self.cells.len())
            .field("key_fn", &self.key_fn)
            .finish()
    }
}

#[derive(Default)]
struct Accumulator {
    count: usize,
    sum: f64,
    labels: BTreeMap<Label, (usize, Option<Outcome>)>,
}

pub fn train_lookup(train: &Dataset, spec: &LookupSpec) -> Result<LookupTable> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc: HashMap<FeatureKey, Accumulator> = HashMap::new();
    for (index, obs) in train.iter().enumerate() {
        let key = spec.key_fn.key(&obs.x)?;
        let a = acc.entry(key).or_default();
        a.count += 1;
        match spec.cell_statistic {
            CellStatistic::Mean => {
                a.sum += obs.y.numeric().ok_or(Error::OutcomeKind {
                    index,
                    expected: "numeric",
                    found: obs.y.kind_name(),
                })?;
            }
            CellStatistic::Mode => {
                let label = obs.y.label().ok_or(Error::OutcomeKind {
                    index,
                    expected: "label",
                    found: obs.y.kind_name(),
                })?;
                let e = a.labels.entry(label).or_insert((0, None));
                e.0 += 1;
                if e.1.is_none() {
                    e.1 = Some(obs.y.clone());
                }
            }
        }
    }
    let probability = train.has_binary_outcomes();
    let cells = acc
        .into_iter()
        .map(|(key, a)| {
            let prediction = match spec.cell_statistic {
                CellStatistic::Mean => {
                    let mean = a.sum / a.count as f64;
                    if probability {
                        Outcome::Prob(mean)
                    } else {
                        Outcome::Real(mean)
                    }
                }
                CellStatistic::Mode => modal(&a.labels),
            };
            (
                key,
                Cell {
                    prediction,
                    count: a.count,
                },
            )
        })
        .collect();
    Ok(LookupTable {
        cells,
        key_fn: spec.key_fn.clone(),
        fallback: spec.fallback.clone(),
        unseen: AtomicUsize::new(0),
    })
}

/// Most frequent label; the smallest label wins ties.
fn modal(labels: &BTreeMap<Label, (usize, Option<Outcome>)>) -> Outcome {
    let mut best: Option<(usize, &Outcome)> = None;
    for (count, y) in labels.values() {
        let y = y.as_ref().expect("label recorded with its outcome");
        if best.is_none_or(|(c, _)| *count > c) {
            best = Some((*count, y));
        }
    }
    best.expect("cell has at least one observation").1.clone()
}

impl LookupTable {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, key: &FeatureKey) -> Option<&Cell> {
        self.cells.get(key)
    }

    pub fn key_fn(&self) -> &KeyFn {
        &self.key_fn
    }

    /// Prediction plus whether the key was present.
    pub fn lookup(&self, x: &FeatureVector) -> (Outcome, bool) {
        match self.key_fn.key(x).ok().and_then(|k| self.cells.get(&k)) {
            Some(cell) => (cell.prediction.clone(), true),
            None => (self.fallback.predict(x), false),
        }
    }

    /// Predict, counting unseen keys.
    pub fn predict(&self, x: &FeatureVector) -> Outcome {
        let (y, seen) = self.lookup(x);
        if !seen {
            self.unseen.fetch_add(1, AtomicOrdering::Relaxed);
        }
        y
    }

    pub fn unseen_count(&self) -> usize {
        self.unseen.load(AtomicOrdering::Relaxed)
    }

    pub fn into_rule(self: Arc<Self>) -> PredictionRule {
        PredictionRule::from_arc(self)
    }

    /// Cells sorted by key, one `key<TAB>prediction<TAB>count` line each.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<&FeatureKey> = self.cells.keys().collect();
        keys.sort();
        let mut out = String::from("key\tprediction\tcount\n");
        for k in keys {
            let c = &self.cells[k];
            let pred = match &c.prediction {
                Outcome::Real(v) | Outcome::Prob(v) => format!("{v}"),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{k}\t{pred}\t{}", c.count);
        }
        out
    }
}

impl Predict for LookupTable {
    fn predict(&self, x: &FeatureVector) -> Outcome {
        LookupTable::predict(self, x)
    }
}
