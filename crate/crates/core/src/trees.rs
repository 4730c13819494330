//! Bagged CART-style decision trees.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Feature, FeatureKind, FeatureVector, Label, Outcome};
use crate::error::{Error, Result};
use crate::loss::{LossFunction, LossKind};
use crate::par;
use crate::rng::stream;
use crate::rule::{Predict, PredictionRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
    /// Draw an n-sized bootstrap resample per tree. Turning this off trains
    /// every tree on the data as given.
    pub bootstrap: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 5,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl TreeConfig {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitTest {
    /// Left when `x <= threshold`.
    Threshold(f64),
    /// Left when `x == symbol`.
    Symbol(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        prediction: Outcome,
        count: usize,
    },
    Split {
        feature: usize,
        test: SplitTest,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &FeatureVector) -> &Outcome {
        match self {
            Node::Leaf { prediction, .. } => prediction,
            Node::Split {
                feature,
                test,
                left,
                right,
            } => {
                let go_left = match (test, x.get(*feature)) {
                    (SplitTest::Threshold(t), Some(Feature::Real(v))) => v <= t,
                    (SplitTest::Symbol(s), Some(Feature::Cat(c))) => c == s,
                    _ => false,
                };
                if go_left {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn min_leaf_count(&self) -> usize {
        match self {
            Node::Leaf { count, .. } => *count,
            Node::Split { left, right, .. } => left.min_leaf_count().min(right.min_leaf_count()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
}

impl DecisionTree {
    pub fn predict(&self, x: &FeatureVector) -> Outcome {
        self.root.predict(x).clone()
    }

    pub fn min_leaf_count(&self) -> usize {
        self.root.min_leaf_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Mean { probability: bool },
    Vote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trees: Vec<DecisionTree>,
    pub aggregation: Aggregation,
    pub arity: usize,
}

impl Ensemble {
    pub fn into_rule(self) -> PredictionRule {
        PredictionRule::new(self)
    }
}

impl Predict for Ensemble {
    fn predict(&self, x: &FeatureVector) -> Outcome {
        predict_ensemble(self, x)
    }

    fn arity(&self) -> Option<usize> {
        Some(self.arity)
    }
}

/// Mean of tree outputs, or the plurality label with the lowest label
/// winning ties.
pub fn predict_ensemble(ens: &Ensemble, x: &FeatureVector) -> Outcome {
    match ens.aggregation {
        Aggregation::Mean { probability } => {
            let total: f64 = ens
                .trees
                .iter()
                .map(|t| t.root.predict(x).numeric().unwrap_or(f64::NAN))
                .sum();
            let m = total / ens.trees.len() as f64;
            if probability {
                Outcome::Prob(m)
            } else {
                Outcome::Real(m)
            }
        }
        Aggregation::Vote => {
            let mut votes: BTreeMap<Label, (usize, &Outcome)> = BTreeMap::new();
            for t in &ens.trees {
                let y = t.root.predict(x);
                if let Some(l) = y.label() {
                    votes.entry(l).or_insert((0, y)).0 += 1;
                }
            }
            let mut best: Option<(usize, &Outcome)> = None;
            for (c, y) in votes.values() {
                if best.is_none_or(|(b, _)| *c > b) {
                    best = Some((*c, y));
                }
            }
            best.map(|(_, y)| y.clone()).unwrap_or(Outcome::Real(f64::NAN))
        }
    }
}

enum Targets {
    Numeric(Vec<f64>),
    /// Dense label index per row, plus the outcome for each label index.
    Labels(Vec<usize>, Vec<Outcome>),
}

struct Builder<'a> {
    data: &'a Dataset,
    targets: Targets,
    kinds: Vec<FeatureKind>,
    min_leaf: usize,
    max_depth: Option<usize>,
    probability: bool,
}

struct Candidate {
    feature: usize,
    test: SplitTest,
    impurity: f64,
}

impl Builder<'_> {
    fn impurity(&self, rows: &[usize]) -> f64 {
        match &self.targets {
            Targets::Numeric(y) => {
                let n = rows.len() as f64;
                let m = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
                rows.iter().map(|&r| (y[r] - m) * (y[r] - m)).sum()
            }
            Targets::Labels(l, outcomes) => {
                let mut counts = vec![0usize; outcomes.len()];
                for &r in rows {
                    counts[l[r]] += 1;
                }
                gini(&counts, rows.len())
            }
        }
    }

    fn leaf(&self, rows: &[usize]) -> Node {
        let prediction = match &self.targets {
            Targets::Numeric(y) => {
                let m = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
                if self.probability {
                    Outcome::Prob(m)
                } else {
                    Outcome::Real(m)
                }
            }
            Targets::Labels(l, outcomes) => {
                let mut counts = vec![0usize; outcomes.len()];
                for &r in rows {
                    counts[l[r]] += 1;
                }
                // label indices are ordered by label, so the first maximum wins ties
                let mut best = 0;
                for (i, &c) in counts.iter().enumerate() {
                    if c > counts[best] {
                        best = i;
                    }
                }
                outcomes[best].clone()
            }
        };
        Node::Leaf {
            prediction,
            count: rows.len(),
        }
    }

    fn build(&self, rows: Vec<usize>, depth: usize) -> Node {
        let can_split = rows.len() >= 2 * self.min_leaf && self.max_depth.is_none_or(|d| depth < d);
        if !can_split {
            return self.leaf(&rows);
        }
        let parent = self.impurity(&rows);
        let tol = 1e-12 * parent.abs().max(1e-300);
        let mut best: Option<Candidate> = None;
        for f in 0..self.kinds.len() {
            let c = match self.kinds[f] {
                FeatureKind::Real => self.best_threshold(&rows, f),
                FeatureKind::Categorical => self.best_symbol(&rows, f),
            };
            if let Some(c) = c {
                if c.impurity < parent - tol && best.as_ref().is_none_or(|b| c.impurity < b.impurity) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else {
            return self.leaf(&rows);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&r| {
            match (split.test, self.data.get(r).x.get(split.feature)) {
                (SplitTest::Threshold(t), Some(Feature::Real(v))) => *v <= t,
                (SplitTest::Symbol(s), Some(Feature::Cat(c))) => *c == s,
                _ => false,
            }
        });
        Node::Split {
            feature: split.feature,
            test: split.test,
            left: Box::new(self.build(left, depth + 1)),
            right: Box::new(self.build(right, depth + 1)),
        }
    }

    fn real(&self, r: usize, f: usize) -> f64 {
        self.data.get(r).x.get(f).and_then(Feature::as_real).unwrap_or(f64::NAN)
    }

    fn cat(&self, r: usize, f: usize) -> u32 {
        self.data.get(r).x.get(f).and_then(Feature::as_cat).unwrap_or(u32::MAX)
    }

    fn best_threshold(&self, rows: &[usize], f: usize) -> Option<Candidate> {
        let mut sorted: Vec<(f64, usize)> = rows.iter().map(|&r| (self.real(r, f), r)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let mut best: Option<(f64, f64)> = None;
        match &self.targets {
            Targets::Numeric(y) => {
                let total: f64 = sorted.iter().map(|&(_, r)| y[r]).sum();
                let total_sq: f64 = sorted.iter().map(|&(_, r)| y[r] * y[r]).sum();
                let (mut s, mut sq) = (0.0, 0.0);
                for i in 0..n - 1 {
                    let v = y[sorted[i].1];
                    s += v;
                    sq += v * v;
                    let nl = (i + 1) as f64;
                    let nr = (n - i - 1) as f64;
                    if i + 1 < self.min_leaf || n - i - 1 < self.min_leaf || sorted[i].0 == sorted[i + 1].0 {
                        continue;
                    }
                    let sse = (sq - s * s / nl) + ((total_sq - sq) - (total - s) * (total - s) / nr);
                    if best.is_none_or(|(b, _)| sse < b) {
                        best = Some((sse, 0.5 * (sorted[i].0 + sorted[i + 1].0)));
                    }
                }
            }
            Targets::Labels(l, outcomes) => {
                let mut right = vec![0usize; outcomes.len()];
                for &(_, r) in &sorted {
                    right[l[r]] += 1;
                }
                let mut left = vec![0usize; outcomes.len()];
                for i in 0..n - 1 {
                    let li = l[sorted[i].1];
                    left[li] += 1;
                    right[li] -= 1;
                    if i + 1 < self.min_leaf || n - i - 1 < self.min_leaf || sorted[i].0 == sorted[i + 1].0 {
                        continue;
                    }
                    let g = gini(&left, i + 1) + gini(&right, n - i - 1);
                    if best.is_none_or(|(b, _)| g < b) {
                        best = Some((g, 0.5 * (sorted[i].0 + sorted[i + 1].0)));
                    }
                }
            }
        }
        best.map(|(impurity, t)| Candidate {
            feature: f,
            test: SplitTest::Threshold(t),
            impurity,
        })
    }

    fn best_symbol(&self, rows: &[usize], f: usize) -> Option<Candidate> {
        let n = rows.len();
        let mut best: Option<(f64, u32)> = None;
        match &self.targets {
            Targets::Numeric(y) => {
                let mut by_sym: BTreeMap<u32, (usize, f64, f64)> = BTreeMap::new();
                let (mut total, mut total_sq) = (0.0, 0.0);
                for &r in rows {
                    let e = by_sym.entry(self.cat(r, f)).or_insert((0, 0.0, 0.0));
                    e.0 += 1;
                    e.1 += y[r];
                    e.2 += y[r] * y[r];
                    total += y[r];
                    total_sq += y[r] * y[r];
                }
                if by_sym.len() < 2 {
                    return None;
                }
                for (&sym, &(c, s, sq)) in &by_sym {
                    if c < self.min_leaf || n - c < self.min_leaf {
                        continue;
                    }
                    let nr = (n - c) as f64;
                    let sse = (sq - s * s / c as f64) + ((total_sq - sq) - (total - s) * (total - s) / nr);
                    if best.is_none_or(|(b, _)| sse < b) {
                        best = Some((sse, sym));
                    }
                }
            }
            Targets::Labels(l, outcomes) => {
                let mut by_sym: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
                let mut total = vec![0usize; outcomes.len()];
                for &r in rows {
                    by_sym.entry(self.cat(r, f)).or_insert_with(|| vec![0; outcomes.len()])[l[r]] += 1;
                    total[l[r]] += 1;
                }
                if by_sym.len() < 2 {
                    return None;
                }
                for (&sym, counts) in &by_sym {
                    let c: usize = counts.iter().sum();
                    if c < self.min_leaf || n - c < self.min_leaf {
                        continue;
                    }
                    let rest: Vec<usize> = total.iter().zip(counts).map(|(t, c)| t - c).collect();
                    let g = gini(counts, c) + gini(&rest, n - c);
                    if best.is_none_or(|(b, _)| g < b) {
                        best = Some((g, sym));
                    }
                }
            }
        }
        best.map(|(impurity, s)| Candidate {
            feature: f,
            test: SplitTest::Symbol(s),
            impurity,
        })
    }
}

/// Size-weighted Gini impurity `n (1 - sum p^2)`.
fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    nf - counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / nf
}

fn targets(train: &Dataset, loss: &LossFunction) -> Result<Targets> {
    match loss.kind() {
        LossKind::SquaredError => train
            .iter()
            .enumerate()
            .map(|(index, o)| {
                o.y.numeric().ok_or(Error::OutcomeKind {
                    index,
                    expected: "numeric",
                    found: o.y.kind_name(),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Targets::Numeric),
        LossKind::Misclassification => {
            let mut labels: BTreeMap<Label, Outcome> = BTreeMap::new();
            let mut raw = Vec::with_capacity(train.len());
            for (index, o) in train.iter().enumerate() {
                let l = o.y.label().ok_or(Error::OutcomeKind {
                    index,
                    expected: "label",
                    found: o.y.kind_name(),
                })?;
                labels.entry(l).or_insert_with(|| o.y.clone());
                raw.push(l);
            }
            let dense: BTreeMap<Label, usize> = labels.keys().enumerate().map(|(i, l)| (*l, i)).collect();
            Ok(Targets::Labels(
                raw.iter().map(|l| dense[l]).collect(),
                labels.into_values().collect(),
            ))
        }
        LossKind::Custom { name, .. } => Err(Error::Config(format!("trees do not support custom loss `{name}`"))),
    }
}

/// Train one unbagged tree on all rows.
pub fn train_tree(train: &Dataset, loss: &LossFunction, cfg: &TreeConfig) -> Result<DecisionTree> {
    train_on(train, loss, cfg, (0..train.len()).collect())
}

fn train_on(train: &Dataset, loss: &LossFunction, cfg: &TreeConfig, rows: Vec<usize>) -> Result<DecisionTree> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let b = Builder {
        data: train,
        targets: targets(train, loss)?,
        kinds: train.schema().to_vec(),
        min_leaf: cfg.min_leaf,
        max_depth: cfg.max_depth,
        probability: train.has_binary_outcomes(),
    };
    Ok(DecisionTree { root: b.build(rows, 0) })
}

pub fn train_bagged(train: &Dataset, loss: &LossFunction, cfg: &TreeConfig) -> Result<Ensemble> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = train.len();
    let trees = par::try_map_range(cfg.n_trees, |t| {
        let rows = if cfg.bootstrap {
            let mut rng = stream(cfg.seed, &[t as u64]);
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        train_on(train, loss, cfg, rows)
    })?;
    let aggregation = if loss.is_misclassification() {
        Aggregation::Vote
    } else {
        Aggregation::Mean {
            probability: train.has_binary_outcomes(),
        }
    };
    Ok(Ensemble {
        trees,
        aggregation,
        arity: train.arity(),
    })
}
