//! Continuation-probability models for human-generated coin-flip strings.
//!
//! Features are the first seven flips (categorical, H = 1, T = 0); the
//! outcome is flip eight. Three rules are provided: the constant-0.5
//! baseline, a finite-urn model drawing without replacement with random
//! refreshes, and a decaying negative-autocorrelation model.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};

use serde::{Deserialize, Serialize};

use crate::data::{Feature, FeatureVector, Outcome};
use crate::error::{Error, Result};
use crate::rule::{ModelClass, ParamSpec, PredictionRule};

pub const HISTORY_LEN: usize = 7;
pub const N_HISTORIES: usize = 1 << HISTORY_LEN;

/// Clamp applied to autocorrelation-model probabilities.
pub const RV_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlipHistory([bool; HISTORY_LEN]);

impl FlipHistory {
    pub fn new(flips: [bool; HISTORY_LEN]) -> Self {
        Self(flips)
    }

    pub fn from_slice(flips: &[bool]) -> Result<Self> {
        let arr: [bool; HISTORY_LEN] = flips
            .try_into()
            .map_err(|_| Error::WrongFeatureLayout("seven-flip history"))?;
        Ok(Self(arr))
    }

    /// Bit `i` of the index is flip `i + 1`.
    pub fn from_index(index: usize) -> Self {
        let mut flips = [false; HISTORY_LEN];
        for (i, f) in flips.iter_mut().enumerate() {
            *f = (index >> i) & 1 == 1;
        }
        Self(flips)
    }

    pub fn index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &h)| acc | (usize::from(h) << i))
    }

    pub fn from_features(x: &FeatureVector) -> Result<Self> {
        if x.arity() != HISTORY_LEN {
            return Err(Error::WrongFeatureLayout("seven-flip history"));
        }
        let mut flips = [false; HISTORY_LEN];
        for (slot, f) in flips.iter_mut().zip(x.values()) {
            *slot = match f {
                Feature::Cat(1) => true,
                Feature::Cat(0) => false,
                _ => return Err(Error::WrongFeatureLayout("seven-flip history")),
            };
        }
        Ok(Self(flips))
    }

    pub fn flips(&self) -> &[bool; HISTORY_LEN] {
        &self.0
    }

    pub fn complement(&self) -> Self {
        Self(self.0.map(|h| !h))
    }

    /// Parse from `H`/`T` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let flips: Vec<bool> = s
            .chars()
            .map(|c| match c {
                'H' => Ok(true),
                'T' => Ok(false),
                _ => Err(Error::WrongFeatureLayout("H/T string")),
            })
            .collect::<Result<_>>()?;
        Self::from_slice(&flips)
    }
}

/// Feature vector for a flip prefix.
pub fn history_features(flips: &[bool]) -> FeatureVector {
    FeatureVector(flips.iter().map(|&h| Feature::Cat(u32::from(h))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RvParams {
    pub alpha: f64,
    pub delta: f64,
}

impl RvParams {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && delta >= 0.0) || !alpha.is_finite() || !delta.is_finite() {
            return Err(Error::InvalidParameters(format!(
                "autocorrelation model needs alpha, delta >= 0 (got {alpha}, {delta})"
            )));
        }
        Ok(Self { alpha, delta })
    }
}

/// Unclamped continuation probability after an arbitrary prefix:
/// `0.5 - alpha * sum_t delta^t (2 s_{k-t-1} - 1)` with the most recent
/// flip at `t = 0`.
pub fn rv_raw(prefix: &[bool], theta: RvParams) -> f64 {
    let mut weight = 1.0;
    let mut sum = 0.0;
    for &h in prefix.iter().rev() {
        sum += weight * if h { 1.0 } else { -1.0 };
        weight *= theta.delta;
    }
    0.5 - theta.alpha * sum
}

pub fn rv_continuation(prefix: &[bool], theta: RvParams) -> f64 {
    if prefix.is_empty() {
        return 0.5;
    }
    rv_raw(prefix, theta).clamp(RV_EPSILON, 1.0 - RV_EPSILON)
}

pub fn rv_probability(h: &FlipHistory, theta: RvParams) -> f64 {
    rv_continuation(h.flips(), theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrnParams {
    pub n: u32,
    pub p: f64,
}

impl UrnParams {
    pub fn new(n: u32, p: f64) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::InvalidParameters(format!("urn size must be even and >= 2 (got {n})")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameters(format!("refresh probability {p} outside [0, 1]")));
        }
        Ok(Self { n, p })
    }
}

/// What happens when an urn runs out of balls without a refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depletion {
    #[default]
    ForceRefresh,
    ZeroLikelihood,
}

/// How the observed history informs the refresh pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrnInference {
    /// Weight refresh patterns by prior times the history likelihood.
    #[default]
    Posterior,
    /// Weight feasible patterns by their prior only.
    PlugIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct UrnOptions {
    pub depletion: Depletion,
    pub inference: UrnInference,
}

/// Probability that flip 8 is H, by exact enumeration of the 2⁷ refresh
/// patterns (refresh events before periods 2 through 8). Histories with
/// zero likelihood under every pattern get 0.5.
pub fn urn_probability(h: &FlipHistory, theta: UrnParams) -> f64 {
    urn_probability_with(h, theta, UrnOptions::default())
}

#[allow(clippy::needless_range_loop)]
pub fn urn_probability_with(h: &FlipHistory, theta: UrnParams, opts: UrnOptions) -> f64 {
    let half = theta.n / 2;
    let flips = h.flips();
    let (mut num, mut den) = (0.0, 0.0);
    for pattern in 0u32..(1 << HISTORY_LEN) {
        let refreshes = pattern.count_ones() as i32;
        let prior = theta.p.powi(refreshes) * (1.0 - theta.p).powi(HISTORY_LEN as i32 - refreshes);
        if prior == 0.0 {
            continue;
        }
        let (mut ones, mut zeros) = (half, half);
        let mut likelihood = 1.0;
        // period index t = 1..=7 corresponds to the event before draw t + 1
        let mut feasible = true;
        for t in 0..=HISTORY_LEN {
            if t > 0 {
                let refresh = (pattern >> (t - 1)) & 1 == 1;
                if refresh {
                    (ones, zeros) = (half, half);
                } else if ones + zeros == 0 {
                    match opts.depletion {
                        Depletion::ForceRefresh => (ones, zeros) = (half, half),
                        Depletion::ZeroLikelihood => {
                            feasible = false;
                            break;
                        }
                    }
                }
            }
            if t == HISTORY_LEN {
                break;
            }
            let total = f64::from(ones + zeros);
            if flips[t] {
                if ones == 0 {
                    feasible = false;
                    break;
                }
                likelihood *= f64::from(ones) / total;
                ones -= 1;
            } else {
                if zeros == 0 {
                    feasible = false;
                    break;
                }
                likelihood *= f64::from(zeros) / total;
                zeros -= 1;
            }
        }
        if !feasible {
            continue;
        }
        let next_h = f64::from(ones) / f64::from(ones + zeros);
        let w = match opts.inference {
            UrnInference::Posterior => prior * likelihood,
            UrnInference::PlugIn => prior,
        };
        num += w * next_h;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        0.5
    }
}

type UrnKey = (u32, u64, UrnOptions);

static URN_MEMO: LazyLock<Mutex<HashMap<UrnKey, Arc<[f64; N_HISTORIES]>>>> =
    LazyLock::new(|| Mutex::new(HashMap::new()));
const URN_MEMO_CAP: usize = 1 << 16;

/// Continuation probabilities for all 128 histories, memoised per
/// `(N, p, options)`. Concurrent fills compute identical tables.
pub fn urn_table(theta: UrnParams, opts: UrnOptions) -> Arc<[f64; N_HISTORIES]> {
    let key = (theta.n, theta.p.to_bits(), opts);
    if let Some(t) = URN_MEMO.lock().expect("urn memo poisoned").get(&key) {
        return Arc::clone(t);
    }
    let mut table = [0.0; N_HISTORIES];
    for (i, slot) in table.iter_mut().enumerate() {
        *slot = urn_probability_with(&FlipHistory::from_index(i), theta, opts);
    }
    let table = Arc::new(table);
    let mut memo = URN_MEMO.lock().expect("urn memo poisoned");
    if memo.len() >= URN_MEMO_CAP {
        memo.clear();
    }
    Arc::clone(memo.entry(key).or_insert(table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqOutput {
    /// Probability of H, scored by squared error.
    #[default]
    Probability,
    /// H iff the probability exceeds 0.5 (ties predict H).
    HardLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SeqModel {
    Naive,
    Urn(UrnParams, UrnOptions),
    Rv(RvParams),
}

/// True when a hard-label prediction falls back on the tie rule.
pub fn is_tie(q: f64) -> bool {
    q == 0.5
}

fn to_outcome(q: f64, output: SeqOutput) -> Outcome {
    match output {
        SeqOutput::Probability => Outcome::Prob(q),
        SeqOutput::HardLabel => Outcome::Binary(q >= 0.5),
    }
}

fn table_rule(table: Arc<[f64; N_HISTORIES]>, output: SeqOutput) -> PredictionRule {
    PredictionRule::from_fn(Some(HISTORY_LEN), move |x| match FlipHistory::from_features(x) {
        Ok(h) => to_outcome(table[h.index()], output),
        Err(_) => Outcome::Prob(f64::NAN),
    })
}

/// Prediction rule for a sequence model. The naive rule always predicts
/// probability 0.5, which misclassification scores as a fair random guess.
pub fn sequence_rule(model: SeqModel, output: SeqOutput) -> PredictionRule {
    match model {
        SeqModel::Naive => PredictionRule::constant(Outcome::Prob(0.5)),
        SeqModel::Urn(theta, opts) => table_rule(urn_table(theta, opts), output),
        SeqModel::Rv(theta) => {
            let mut table = [0.0; N_HISTORIES];
            for (i, slot) in table.iter_mut().enumerate() {
                *slot = rv_probability(&FlipHistory::from_index(i), theta);
            }
            table_rule(Arc::new(table), output)
        }
    }
}

/// Urn model class: `N` even in `[2, 256]`, refresh probability in `[0, 1]`.
pub fn urn_model(output: SeqOutput, opts: UrnOptions) -> ModelClass {
    ModelClass::new(
        "urn",
        vec![
            ParamSpec::integer("N", 2.0, 256.0, 2),
            ParamSpec::continuous("p", 0.0, 1.0),
        ],
        move |theta| {
            let n = theta[0].round();
            if n < 2.0 || n > f64::from(u32::MAX) {
                return Err(Error::InvalidParameters(format!("urn size {n}")));
            }
            let params = UrnParams::new(n as u32, theta[1])?;
            Ok(sequence_rule(SeqModel::Urn(params, opts), output))
        },
    )
    .expect("static domain is valid")
}

/// Autocorrelation model class: `alpha, delta` in `[0, 2]`.
pub fn rv_model(output: SeqOutput) -> ModelClass {
    ModelClass::new(
        "rv",
        vec![
            ParamSpec::continuous("alpha", 0.0, 2.0),
            ParamSpec::continuous("delta", 0.0, 2.0),
        ],
        move |theta| Ok(sequence_rule(SeqModel::Rv(RvParams::new(theta[0], theta[1])?), output)),
    )
    .expect("static domain is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(s: &str) -> FlipHistory {
        FlipHistory::parse(s).unwrap()
    }

    #[test]
    fn rv_examples() {
        let all_h = hist("HHHHHHH");
        assert_eq!(rv_probability(&all_h, RvParams::new(0.0, 0.7).unwrap()), 0.5);
        assert!((rv_probability(&all_h, RvParams::new(0.1, 0.0).unwrap()) - 0.4).abs() < 1e-15);
        let alt = hist("HTHTHTH");
        assert!((rv_probability(&alt, RvParams::new(0.1, 1.0).unwrap()) - 0.4).abs() < 1e-15);
        // clamped
        assert_eq!(rv_probability(&all_h, RvParams::new(2.0, 1.0).unwrap()), RV_EPSILON);
    }

    #[test]
    fn rv_most_recent_flip_lowers_probability() {
        let theta = RvParams::new(0.05, 0.6).unwrap();
        for i in 0..N_HISTORIES / 2 {
            let h = FlipHistory::from_index(i); // flip 7 is T
            let h_up = FlipHistory::from_index(i | 1 << 6);
            assert!(rv_probability(&h_up, theta) < rv_probability(&h, theta));
        }
    }

    #[test]
    fn urn_p_one_is_memoryless() {
        let theta = UrnParams::new(4, 1.0).unwrap();
        for i in 0..N_HISTORIES {
            assert_eq!(urn_probability(&FlipHistory::from_index(i), theta), 0.5);
        }
    }

    #[test]
    fn urn_n2_no_refresh_alternates_in_pairs() {
        let theta = UrnParams::new(2, 0.0).unwrap();
        // pairs HT TH HT + H: the urn holds only T for draw 8
        assert_eq!(urn_probability(&hist("HTTHHTH"), theta), 0.0);
        // after three complete pairs and a T, draw 8 must be H
        assert_eq!(urn_probability(&hist("HTTHHTT"), theta), 1.0);
        // impossible history
        assert_eq!(urn_probability(&hist("HHHHHHH"), theta), 0.5);
    }

    #[test]
    fn large_urn_is_nearly_fair() {
        for p in [0.0, 0.3, 0.9] {
            let theta = UrnParams::new(256, p).unwrap();
            for i in 0..N_HISTORIES {
                let q = urn_probability(&FlipHistory::from_index(i), theta);
                assert!((q - 0.5).abs() < 0.02, "p={p} i={i} q={q}");
            }
        }
    }

    #[test]
    fn complement_symmetry() {
        let rv = RvParams::new(0.03, 0.8).unwrap();
        for (n, p) in [(2, 0.0), (6, 0.4), (32, 0.9)] {
            let urn = UrnParams::new(n, p).unwrap();
            for i in 0..N_HISTORIES {
                let h = FlipHistory::from_index(i);
                let c = h.complement();
                let (a, b) = (urn_probability(&h, urn), urn_probability(&c, urn));
                assert!((a + b - 1.0).abs() < 1e-12, "{n} {p} {i}");
                assert!((rv_probability(&h, rv) + rv_probability(&c, rv) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_likelihood_depletion_variant() {
        let theta = UrnParams::new(2, 0.5).unwrap();
        let opts = UrnOptions {
            depletion: Depletion::ZeroLikelihood,
            ..UrnOptions::default()
        };
        let q = urn_probability_with(&hist("HTHTHTH"), theta, opts);
        assert!((0.0..=1.0).contains(&q));
        let plug = UrnOptions {
            inference: UrnInference::PlugIn,
            ..UrnOptions::default()
        };
        assert!((0.0..=1.0).contains(&urn_probability_with(&hist("HTHTHTH"), theta, plug)));
    }

    #[test]
    fn hard_label_rule_ties_to_heads() {
        let rule = sequence_rule(SeqModel::Urn(UrnParams::new(8, 1.0).unwrap(), UrnOptions::default()), SeqOutput::HardLabel);
        assert_eq!(rule.predict(&history_features(&[false; 7])), Outcome::Binary(true));
        let rule = sequence_rule(SeqModel::Rv(RvParams::new(0.1, 0.5).unwrap()), SeqOutput::HardLabel);
        assert_eq!(rule.predict(&history_features(&[true; 7])), Outcome::Binary(false));
        let naive = sequence_rule(SeqModel::Naive, SeqOutput::HardLabel);
        assert_eq!(naive.predict(&history_features(&[true; 7])), Outcome::Prob(0.5));
    }

    #[test]
    fn parse_and_index_roundtrip() {
        let h = hist("HTTHHTH");
        assert_eq!(FlipHistory::from_index(h.index()), h);
        assert_eq!(FlipHistory::from_features(&history_features(h.flips())).unwrap(), h);
        assert!(FlipHistory::parse("HTX").is_err());
    }
}
