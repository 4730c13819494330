//! Seeded synthetic data with known generating processes.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, Outcome, ProblemKind};
use crate::error::{Error, Result};
use crate::games::{pchm_distribution, poisson_masses, Game, PchmOptions, PchmParams, N_ACTIONS};
use crate::risk::{predict_cpt, CptParams, Lottery};
use crate::rng::stream;
use crate::seq::{history_features, rv_continuation, RvParams, UrnParams, HISTORY_LEN};

/// Ground-truth label attached to one generated unit (subject, observation
/// or string).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthLabel {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub generator: String,
    pub seed: u64,
    pub labels: Vec<TruthLabel>,
}

const GAIN_PROBS: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];

/// Fifty two-outcome lotteries, the first half over gains and the second
/// half the mirrored losses of a fresh draw.
pub fn default_lotteries(seed: u64) -> Vec<Lottery> {
    let mut rng = stream(seed, &[0x107]);
    let mut out = Vec::with_capacity(50);
    for i in 0..50 {
        let hi = f64::from(rng.random_range(10..=150));
        let lo = if rng.random_bool(0.5) {
            0.0
        } else {
            f64::from(rng.random_range(0..hi as i32))
        };
        let p = GAIN_PROBS[rng.random_range(0..GAIN_PROBS.len())];
        let sign = if i < 25 { 1.0 } else { -1.0 };
        out.push(Lottery::new(sign * hi, sign * lo, p).expect("generated lottery is valid"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGenSpec {
    pub lotteries: Vec<Lottery>,
    /// Subject types with population weights summing to 1.
    pub types: Vec<(CptParams, f64)>,
    pub ce_noise_sigma: f64,
    pub n_subjects: usize,
    pub reports_per_lottery: usize,
    pub seed: u64,
}

impl Default for RiskGenSpec {
    fn default() -> Self {
        Self {
            lotteries: default_lotteries(0),
            types: vec![(CptParams::new(0.9, 0.85, 0.8, 0.7).expect("valid"), 1.0)],
            ce_noise_sigma: 5.0,
            n_subjects: 100,
            reports_per_lottery: 1,
            seed: 0,
        }
    }
}

pub fn lottery_id(i: usize) -> String {
    format!("L{:02}", i + 1)
}

pub fn subject_id(i: usize) -> String {
    format!("s{:04}", i + 1)
}

pub fn game_id(i: usize) -> String {
    format!("g{:04}", i + 1)
}

/// Reported CE = CPT value of the subject's type plus Gaussian noise,
/// truncated to the lottery's payoff span (widened to the noiseless value).
pub fn gen_risk(spec: &RiskGenSpec) -> Result<(Dataset, Metadata)> {
    if spec.types.is_empty() {
        return Err(Error::Config("at least one subject type required".into()));
    }
    let wsum: f64 = spec.types.iter().map(|t| t.1).sum();
    if (wsum - 1.0).abs() > 1e-9 || spec.types.iter().any(|t| t.1.is_nan() || t.1 < 0.0) {
        return Err(Error::Config(format!("type weights must be non-negative and sum to 1 (got {wsum})")));
    }
    if spec.ce_noise_sigma.is_nan() || spec.ce_noise_sigma < 0.0 {
        return Err(Error::Config("noise sigma must be non-negative".into()));
    }
    let weights = WeightedIndex::new(spec.types.iter().map(|t| t.1)).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, spec.ce_noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for s in 0..spec.n_subjects {
        let mut rng = stream(spec.seed, &[0x715c, s as u64]);
        let t = weights.sample(&mut rng);
        let theta = spec.types[t].0;
        labels.push(TruthLabel {
            id: subject_id(s),
            label: t.to_string(),
        });
        for (l, lot) in spec.lotteries.iter().enumerate() {
            let truth = predict_cpt(lot, theta);
            let lo = lot.min_prize().min(truth);
            let hi = lot.max_prize().max(truth);
            for _ in 0..spec.reports_per_lottery {
                let ce = if spec.ce_noise_sigma > 0.0 {
                    (truth + noise.sample(&mut rng)).clamp(lo, hi)
                } else {
                    truth
                };
                rows.push(
                    Observation::new(lot.features(), Outcome::Real(ce))
                        .with_subject(subject_id(s))
                        .with_instance(lottery_id(l)),
                );
            }
        }
    }
    let meta = Metadata {
        generator: "risk_cpt_types".into(),
        seed: spec.seed,
        labels,
    };
    Ok((Dataset::new(rows, ProblemKind::Risk)?, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameGenSpec {
    pub n_games: usize,
    pub payoff_min: i32,
    pub payoff_max: i32,
    pub tau_true: f64,
    /// Probability of a uniformly random action.
    pub tremble: f64,
    pub observations_per_game: usize,
    pub pchm: PchmOptions,
    pub seed: u64,
}

impl Default for GameGenSpec {
    fn default() -> Self {
        Self {
            n_games: 100,
            payoff_min: 0,
            payoff_max: 100,
            tau_true: 1.5,
            tremble: 0.2,
            observations_per_game: 50,
            pchm: PchmOptions::default(),
            seed: 0,
        }
    }
}

pub fn random_game(rng: &mut impl Rng, lo: i32, hi: i32) -> Game {
    let mut m = [[[0.0; 3]; 3]; 2];
    for v in m.iter_mut().flatten().flatten() {
        *v = f64::from(rng.random_range(lo..=hi));
    }
    Game::new(m[0], m[1]).expect("integer payoffs are finite")
}

/// Each observation is a tremble (uniform action) or a level drawn from the
/// truncated Poisson hierarchy playing its hierarchy action.
pub fn gen_games(spec: &GameGenSpec) -> Result<(Vec<Game>, Dataset, Metadata)> {
    if !(0.0..=1.0).contains(&spec.tremble) {
        return Err(Error::Config("tremble must lie in [0, 1]".into()));
    }
    if spec.payoff_min > spec.payoff_max {
        return Err(Error::Config("empty payoff range".into()));
    }
    let theta = PchmParams::new(spec.tau_true)?;
    let masses = poisson_masses(spec.tau_true, spec.pchm.k_max.max(1));
    let levels = WeightedIndex::new(&masses).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream(spec.seed, &[0x6a3e]);
    let games: Vec<Game> = (0..spec.n_games)
        .map(|_| random_game(&mut rng, spec.payoff_min, spec.payoff_max))
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (gi, g) in games.iter().enumerate() {
        let dist = pchm_distribution(g, theta, spec.pchm);
        for j in 0..spec.observations_per_game {
            let (action, label) = if rng.random_bool(spec.tremble) {
                (rng.random_range(0..N_ACTIONS), "tremble".to_string())
            } else {
                let k = levels.sample(&mut rng);
                match dist.row_levels.get(k).copied().flatten() {
                    Some(a) if k > 0 => (a, format!("level{k}")),
                    _ => (rng.random_range(0..N_ACTIONS), "level0".to_string()),
                }
            };
            labels.push(TruthLabel {
                id: format!("{}/{}", game_id(gi), subject_id(j)),
                label,
            });
            rows.push(
                Observation::new(g.features(), Outcome::Action(action as u8))
                    .with_subject(subject_id(j))
                    .with_instance(game_id(gi)),
            );
        }
    }
    let meta = Metadata {
        generator: "games_pchm".into(),
        seed: spec.seed,
        labels,
    };
    Ok((games, Dataset::new(rows, ProblemKind::Games)?, meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqGenerator {
    BernoulliHalf,
    RabinVayanos(RvParams),
    Urn(UrnParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqGenSpec {
    pub generator: SeqGenerator,
    pub n_strings: usize,
    pub string_length: usize,
    pub strings_per_subject: usize,
    pub seed: u64,
}

impl Default for SeqGenSpec {
    fn default() -> Self {
        Self {
            generator: SeqGenerator::BernoulliHalf,
            n_strings: 10_000,
            string_length: HISTORY_LEN + 1,
            strings_per_subject: 50,
            seed: 0,
        }
    }
}

/// One generated string with its author and round (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipString {
    pub subject: String,
    pub round: usize,
    pub flips: Vec<bool>,
}

impl FlipString {
    pub fn to_ht(&self) -> String {
        self.flips.iter().map(|&b| if b { 'H' } else { 'T' }).collect()
    }
}

/// Strings plus their ground truth (refresh patterns for the urn).
pub fn gen_strings(spec: &SeqGenSpec) -> Result<(Vec<FlipString>, Metadata)> {
    if spec.string_length < 2 {
        return Err(Error::Config("string_length must be at least 2".into()));
    }
    if spec.strings_per_subject == 0 {
        return Err(Error::Config("strings_per_subject must be positive".into()));
    }
    let mut strings = Vec::with_capacity(spec.n_strings);
    let mut labels = Vec::new();
    for i in 0..spec.n_strings {
        let mut rng = stream(spec.seed, &[0x5e9, i as u64]);
        let subject = subject_id(i / spec.strings_per_subject);
        let round = i % spec.strings_per_subject + 1;
        let mut flips = Vec::with_capacity(spec.string_length);
        match spec.generator {
            SeqGenerator::BernoulliHalf => {
                for _ in 0..spec.string_length {
                    flips.push(rng.random_bool(0.5));
                }
            }
            SeqGenerator::RabinVayanos(theta) => {
                for _ in 0..spec.string_length {
                    let q = rv_continuation(&flips, theta);
                    flips.push(rng.random::<f64>() < q);
                }
            }
            SeqGenerator::Urn(theta) => {
                let half = theta.n / 2;
                let (mut ones, mut zeros) = (half, half);
                let mut pattern = String::new();
                for t in 0..spec.string_length {
                    if t > 0 {
                        let refresh = rng.random_bool(theta.p);
                        pattern.push(if refresh { '1' } else { '0' });
                        if refresh || ones + zeros == 0 {
                            (ones, zeros) = (half, half);
                        }
                    }
                    let h = rng.random_range(0..ones + zeros) < ones;
                    if h {
                        ones -= 1;
                    } else {
                        zeros -= 1;
                    }
                    flips.push(h);
                }
                labels.push(TruthLabel {
                    id: format!("{subject}/{round}"),
                    label: pattern,
                });
            }
        }
        strings.push(FlipString { subject, round, flips });
    }
    let generator = match spec.generator {
        SeqGenerator::BernoulliHalf => "bernoulli_half",
        SeqGenerator::RabinVayanos(_) => "rabin_vayanos",
        SeqGenerator::Urn(_) => "urn",
    };
    Ok((
        strings,
        Metadata {
            generator: generator.into(),
            seed: spec.seed,
            labels,
        },
    ))
}

/// Prediction observations: the first seven flips predict the eighth.
pub fn strings_to_dataset(strings: &[FlipString]) -> Result<Dataset> {
    let rows = strings
        .iter()
        .map(|s| {
            if s.flips.len() != HISTORY_LEN + 1 {
                return Err(Error::LengthMismatch {
                    expected: HISTORY_LEN + 1,
                    found: s.flips.len(),
                });
            }
            Ok(Observation::new(
                history_features(&s.flips[..HISTORY_LEN]),
                Outcome::Binary(s.flips[HISTORY_LEN]),
            )
            .with_subject(s.subject.clone())
            .with_instance(s.round.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(rows, ProblemKind::Sequences)
}

pub fn gen_sequences(spec: &SeqGenSpec) -> Result<(Dataset, Metadata)> {
    let (strings, meta) = gen_strings(spec)?;
    Ok((strings_to_dataset(&strings)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_reproducible() {
        let spec = SeqGenSpec {
            generator: SeqGenerator::Urn(UrnParams::new(10, 0.3).unwrap()),
            n_strings: 50,
            ..Default::default()
        };
        assert_eq!(gen_strings(&spec).unwrap(), gen_strings(&spec).unwrap());
        let r = RiskGenSpec {
            n_subjects: 3,
            ..Default::default()
        };
        assert_eq!(gen_risk(&r).unwrap().0.to_observations(), gen_risk(&r).unwrap().0.to_observations());
    }

    #[test]
    fn default_lotteries_split_gains_losses() {
        let l = default_lotteries(0);
        assert_eq!(l.len(), 50);
        assert!(l[..25].iter().all(|x| x.min_prize() >= 0.0));
        assert!(l[25..].iter().all(|x| x.max_prize() <= 0.0));
    }

    #[test]
    fn noiseless_identity_type_reports_ev() {
        let spec = RiskGenSpec {
            types: vec![(CptParams::new(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0)],
            ce_noise_sigma: 0.0,
            n_subjects: 2,
            ..Default::default()
        };
        let (d, _) = gen_risk(&spec).unwrap();
        for o in d.iter() {
            let lot = Lottery::from_features(&o.x).unwrap();
            assert!((o.y.numeric().unwrap() - crate::risk::predict_ev(&lot)).abs() < 1e-9);
        }
    }

    #[test]
    fn urn_strings_with_two_balls_alternate_within_pairs() {
        let spec = SeqGenSpec {
            generator: SeqGenerator::Urn(UrnParams::new(2, 0.0).unwrap()),
            n_strings: 20,
            ..Default::default()
        };
        let (strings, _) = gen_strings(&spec).unwrap();
        for s in strings {
            for pair in s.flips.chunks(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn bad_specs_rejected() {
        let spec = GameGenSpec {
            tremble: 1.5,
            ..Default::default()
        };
        assert!(gen_games(&spec).is_err());
        let spec = RiskGenSpec {
            types: vec![(CptParams::new(1.0, 1.0, 1.0, 1.0).unwrap(), 0.5)],
            ..Default::default()
        };
        assert!(gen_risk(&spec).is_err());
    }
}
