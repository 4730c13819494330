//! Initial play in 3×3 matrix games: uniform baseline, level-k chains,
//! Poisson cognitive hierarchy, and the game filters used to carve out
//! comparison subsets.
//!
//! Feature layout: 18 reals, the row player's payoffs `r11..r33` followed
//! by the column player's `c11..c33`, row-major with entry `(i, j)` the
//! payoff when row plays `a_i` and column plays `a_j`.

use serde::{Deserialize, Serialize};

use crate::data::{Feature, FeatureVector, Outcome};
use crate::error::{Error, Result};
use crate::rule::{ModelClass, ParamSpec, PredictionRule};

pub const N_ACTIONS: usize = 3;
pub const DEFAULT_K_MAX: usize = 6;
const TIE_TOL: f64 = 1e-12;

type Matrix = [[f64; N_ACTIONS]; N_ACTIONS];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Game {
    pub row: Matrix,
    pub col: Matrix,
}

impl Game {
    pub fn new(row: Matrix, col: Matrix) -> Result<Self> {
        if row.iter().chain(col.iter()).flatten().all(|v| v.is_finite()) {
            Ok(Self { row, col })
        } else {
            Err(Error::InvalidParameters("payoffs must be finite".into()))
        }
    }

    pub fn from_features(x: &FeatureVector) -> Result<Self> {
        if x.arity() != 2 * N_ACTIONS * N_ACTIONS {
            return Err(Error::WrongFeatureLayout("3x3 game (18 payoffs)"));
        }
        let mut vals = [0.0; 18];
        for (slot, f) in vals.iter_mut().zip(x.values()) {
            *slot = match f {
                Feature::Real(v) => *v,
                Feature::Cat(_) => return Err(Error::WrongFeatureLayout("3x3 game (18 payoffs)")),
            };
        }
        let mut row = [[0.0; 3]; 3];
        let mut col = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                row[i][j] = vals[3 * i + j];
                col[i][j] = vals[9 + 3 * i + j];
            }
        }
        Game::new(row, col)
    }

    pub fn features(&self) -> FeatureVector {
        let vals: Vec<f64> = self.row.iter().chain(self.col.iter()).flatten().copied().collect();
        FeatureVector::reals(&vals)
    }

    /// The same game seen from the column player's side.
    pub fn transposed(&self) -> Game {
        let mut row = [[0.0; 3]; 3];
        let mut col = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                row[j][i] = self.col[i][j];
                col[j][i] = self.row[i][j];
            }
        }
        Game { row, col }
    }

    pub fn max_row_payoff(&self) -> f64 {
        self.row.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row player's expected payoff of each action against a column mixture.
    pub fn row_payoffs_against(&self, mix: &[f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
        let mut out = [0.0; N_ACTIONS];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..N_ACTIONS).map(|j| mix[j] * self.row[i][j]).sum();
        }
        out
    }
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Index of the largest value (lowest index among ties) and whether a tie
/// occurred.
pub fn argmax(values: &[f64; N_ACTIONS]) -> (usize, bool) {
    let mut best = 0;
    for i in 1..N_ACTIONS {
        if values[i] > values[best] && !nearly_equal(values[i], values[best]) {
            best = i;
        }
    }
    let tie = (0..N_ACTIONS).any(|i| i != best && nearly_equal(values[i], values[best]));
    (best, tie)
}

fn pure(action: usize) -> [f64; N_ACTIONS] {
    let mut m = [0.0; N_ACTIONS];
    m[action] = 1.0;
    m
}

const UNIFORM: [f64; N_ACTIONS] = [1.0 / 3.0; N_ACTIONS];

/// Level-k actions for both players. Index 0 stands for level-0 (uniform)
/// and holds `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelProfile {
    pub row: Vec<Option<usize>>,
    pub col: Vec<Option<usize>>,
    pub row_ties: Vec<bool>,
    pub col_ties: Vec<bool>,
}

impl LevelProfile {
    pub fn any_tie(&self) -> bool {
        self.row_ties.iter().chain(&self.col_ties).any(|&t| t)
    }

    pub fn row_support(&self) -> Vec<usize> {
        support(&self.row)
    }

    pub fn col_support(&self) -> Vec<usize> {
        support(&self.col)
    }
}

fn support(levels: &[Option<usize>]) -> Vec<usize> {
    let mut s: Vec<usize> = levels.iter().flatten().copied().collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Level-1 best responds to uniform play; level-k to the opponent's
/// level-(k-1) action.
pub fn level_k_actions(g: &Game, k_max: usize) -> LevelProfile {
    let t = g.transposed();
    let mut p = LevelProfile {
        row: vec![None],
        col: vec![None],
        row_ties: vec![false],
        col_ties: vec![false],
    };
    for k in 1..=k_max.max(1) {
        let (row_mix, col_mix) = match (p.row[k - 1], p.col[k - 1]) {
            (Some(r), Some(c)) => (pure(r), pure(c)),
            _ => (UNIFORM, UNIFORM),
        };
        let (r, rt) = argmax(&g.row_payoffs_against(&col_mix));
        let (c, ct) = argmax(&t.row_payoffs_against(&row_mix));
        p.row.push(Some(r));
        p.col.push(Some(c));
        p.row_ties.push(rt);
        p.col_ties.push(ct);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PchmParams {
    pub tau: f64,
}

impl PchmParams {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self { tau })
        } else {
            Err(Error::InvalidParameters(format!("tau must be positive (got {tau})")))
        }
    }
}

/// How a level-k player models lower levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opponents {
    /// Best respond to the renormalised Poisson mixture of levels `0..k`,
    /// each playing its own hierarchy action.
    #[default]
    Hierarchy,
    /// Best respond to the opponent's level-(k-1) action only.
    ClassicChain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PchmOptions {
    pub k_max: usize,
    pub opponents: Opponents,
}

impl Default for PchmOptions {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            opponents: Opponents::Hierarchy,
        }
    }
}

/// Poisson(tau) masses for levels `0..=k_max`.
pub fn poisson_masses(tau: f64, k_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_max + 1);
    let mut m = (-tau).exp();
    for k in 0..=k_max {
        if k > 0 {
            m *= tau / k as f64;
        }
        out.push(m);
    }
    out
}

/// Perceived weights of a level-k player over levels `0..k`.
pub fn perceived_weights(tau: f64, k: usize) -> Vec<f64> {
    let masses = poisson_masses(tau, k.saturating_sub(1));
    let total: f64 = masses.iter().sum();
    masses.into_iter().map(|m| m / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PchmDistribution {
    pub probs: [f64; N_ACTIONS],
    /// Hierarchy actions for levels `1..=k_max` (index 0 unused).
    pub row_levels: Vec<Option<usize>>,
    pub level_ties: bool,
}

pub fn pchm_distribution(g: &Game, theta: PchmParams, opts: PchmOptions) -> PchmDistribution {
    let k_max = opts.k_max.max(1);
    let (row_levels, ties) = match opts.opponents {
        Opponents::ClassicChain => {
            let p = level_k_actions(g, k_max);
            let ties = p.row_ties.iter().any(|&t| t);
            (p.row, ties)
        }
        Opponents::Hierarchy => hierarchy_levels(g, theta.tau, k_max),
    };
    let masses = poisson_masses(theta.tau, k_max);
    let total: f64 = masses.iter().sum();
    let mut probs = [masses[0] / total / 3.0; N_ACTIONS];
    for (k, action) in row_levels.iter().enumerate().skip(1) {
        if let Some(a) = action {
            probs[*a] += masses[k] / total;
        }
    }
    PchmDistribution {
        probs,
        row_levels,
        level_ties: ties,
    }
}

fn hierarchy_levels(g: &Game, tau: f64, k_max: usize) -> (Vec<Option<usize>>, bool) {
    let t = g.transposed();
    let masses = poisson_masses(tau, k_max);
    let mut row: Vec<Option<usize>> = vec![None];
    let mut col: Vec<Option<usize>> = vec![None];
    let mut ties = false;
    for k in 1..=k_max {
        let norm: f64 = masses[..k].iter().sum();
        let mix_of = |levels: &[Option<usize>]| {
            let mut mix = [0.0; N_ACTIONS];
            for (h, a) in levels.iter().enumerate() {
                let w = masses[h] / norm;
                match a {
                    None => mix.iter_mut().for_each(|m| *m += w / 3.0),
                    Some(a) => mix[*a] += w,
                }
            }
            mix
        };
        let col_mix = mix_of(&col);
        let row_mix = mix_of(&row);
        let (r, rt) = argmax(&g.row_payoffs_against(&col_mix));
        let (c, _) = argmax(&t.row_payoffs_against(&row_mix));
        ties |= rt;
        row.push(Some(r));
        col.push(Some(c));
    }
    (row, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PchmPrediction {
    pub action: usize,
    /// Modal tie or a best-response tie at some level.
    pub tie: bool,
}

pub fn pchm_predict(g: &Game, theta: PchmParams, opts: PchmOptions) -> PchmPrediction {
    let d = pchm_distribution(g, theta, opts);
    let (action, modal_tie) = argmax(&d.probs);
    PchmPrediction {
        action,
        tie: modal_tie || d.level_ties,
    }
}

/// Uniform random play, scored by its expected misclassification.
pub fn uniform_rule() -> PredictionRule {
    PredictionRule::constant(Outcome::Mixed(UNIFORM.to_vec()))
}

pub fn pchm_rule(theta: PchmParams, opts: PchmOptions) -> PredictionRule {
    PredictionRule::from_fn(Some(18), move |x| match Game::from_features(x) {
        Ok(g) => Outcome::Action(pchm_predict(&g, theta, opts).action as u8),
        Err(_) => Outcome::Mixed(vec![f64::NAN; N_ACTIONS]),
    })
}

/// Modal prediction of a Poisson cognitive hierarchy, `tau` in `[0.1, 5]`.
pub fn pchm_model(opts: PchmOptions) -> ModelClass {
    ModelClass::new(
        "pchm",
        vec![ParamSpec::continuous("tau", 0.1, 5.0)],
        move |theta| Ok(pchm_rule(PchmParams::new(theta[0])?, opts)),
    )
    .expect("static domain is valid")
}

/// Whether some pure action of the row player is strictly dominated by
/// another pure action.
pub fn row_has_dominated_action(g: &Game) -> bool {
    (0..N_ACTIONS).any(|i| {
        (0..N_ACTIONS).any(|k| k != i && (0..N_ACTIONS).all(|j| g.row[k][j] > g.row[i][j]))
    })
}

pub fn has_dominated_action(g: &Game) -> bool {
    row_has_dominated_action(g) || row_has_dominated_action(&g.transposed())
}

/// Games with no pure action strictly dominated by another, for either player.
pub fn in_dataset_a(g: &Game) -> bool {
    !has_dominated_action(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareGap {
    /// A profile attaining the highest payoff sum (first in row-major order).
    pub max_profile: (usize, usize),
    pub max_sum: f64,
    /// Union of both players' level-k actions, `k = 1..=k_max`.
    pub level_support: Vec<usize>,
    pub best_supported_sum: f64,
    pub gap: f64,
    pub max_row_payoff: f64,
    pub ratio: f64,
}

pub fn welfare_gap(g: &Game, k_max: usize) -> WelfareGap {
    let profile = level_k_actions(g, k_max);
    let mut level_support = profile.row_support();
    level_support.extend(profile.col_support());
    level_support.sort_unstable();
    level_support.dedup();

    let sum = |i: usize, j: usize| g.row[i][j] + g.col[i][j];
    let mut max_profile = (0, 0);
    for i in 0..N_ACTIONS {
        for j in 0..N_ACTIONS {
            if sum(i, j) > sum(max_profile.0, max_profile.1) {
                max_profile = (i, j);
            }
        }
    }
    let max_sum = sum(max_profile.0, max_profile.1);
    let best_supported_sum = level_support
        .iter()
        .flat_map(|&i| level_support.iter().map(move |&j| (i, j)))
        .map(|(i, j)| sum(i, j))
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = max_sum - best_supported_sum;
    let max_row_payoff = g.max_row_payoff();
    WelfareGap {
        max_profile,
        max_sum,
        level_support,
        best_supported_sum,
        gap,
        max_row_payoff,
        ratio: gap / max_row_payoff,
    }
}

pub const DATASET_B_GAP_SHARE: f64 = 0.2;
pub const LEVEL1_MARGIN_SHARE: f64 = 0.25;

/// Games whose welfare-maximising profile lies outside the level-k
/// support, by a payoff-sum gap of at least 20% of the largest row payoff.
pub fn in_dataset_b(g: &Game, k_max: usize) -> bool {
    let w = welfare_gap(g, k_max);
    w.gap > 0.0 && w.gap >= DATASET_B_GAP_SHARE * w.max_row_payoff
}

/// Level-1 action's expected payoff against uniform play minus the next
/// best action's.
pub fn level1_margin(g: &Game) -> f64 {
    let mut ev = g.row_payoffs_against(&UNIFORM);
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[0] - ev[1]
}

pub fn in_level1_gap_set(g: &Game) -> bool {
    level1_margin(g) >= LEVEL1_MARGIN_SHARE * g.max_row_payoff()
}

pub fn filter_dataset_a(games: &[Game]) -> Vec<Game> {
    games.iter().copied().filter(in_dataset_a).collect()
}

pub fn filter_dataset_b(games: &[Game], k_max: usize) -> Vec<Game> {
    games.iter().copied().filter(|g| in_dataset_b(g, k_max)).collect()
}

pub fn filter_level1_gap(games: &[Game]) -> Vec<Game> {
    games.iter().copied().filter(in_level1_gap_set).collect()
}

/// The worked example game used throughout the docs and tests.
pub fn example_game() -> Game {
    Game::new(
        [[40.0, 10.0, 70.0], [20.0, 80.0, 0.0], [30.0, 100.0, 60.0]],
        [[40.0, 20.0, 30.0], [10.0, 80.0, 100.0], [70.0, 0.0, 60.0]],
    )
    .expect("finite payoffs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_game_levels() {
        let p = level_k_actions(&example_game(), 6);
        assert_eq!(p.row[1], Some(2));
        for k in 2..=6 {
            assert_eq!(p.row[k], Some(0), "level {k}");
        }
        assert!(!p.any_tie());
    }

    #[test]
    fn example_game_welfare_gap() {
        let w = welfare_gap(&example_game(), 6);
        assert_eq!(w.max_profile, (1, 1));
        assert_eq!(w.max_sum, 160.0);
        assert_eq!(w.level_support, vec![0, 2]);
        assert_eq!(w.best_supported_sum, 120.0);
        assert_eq!(w.gap, 40.0);
        assert_eq!(w.max_row_payoff, 100.0);
        assert!(in_dataset_b(&example_game(), 6));
    }

    #[test]
    fn example_game_filters() {
        let g = example_game();
        // a3 strictly dominates a2 for the row player
        assert!(!in_dataset_a(&g));
        assert!((level1_margin(&g) - 70.0 / 3.0).abs() < 1e-12);
        assert!(!in_level1_gap_set(&g));
    }

    #[test]
    fn dominant_action_everywhere() {
        let g = Game::new(
            [[1.0, 2.0, 3.0], [9.0, 9.0, 9.0], [0.0, 1.0, 0.0]],
            [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        let p = level_k_actions(&g, 6);
        assert!(p.row[1..].iter().all(|a| *a == Some(1)));
        assert!(!in_dataset_a(&g));
        let pred = pchm_predict(&g, PchmParams::new(1.5).unwrap(), PchmOptions::default());
        assert_eq!(pred.action, 1);
    }

    #[test]
    fn zero_game_ties_to_first_action() {
        let g = Game::new([[0.0; 3]; 3], [[0.0; 3]; 3]).unwrap();
        let p = level_k_actions(&g, 3);
        assert!(p.row[1..].iter().all(|a| *a == Some(0)));
        assert!(p.row_ties[1..].iter().all(|&t| t));
        let pred = pchm_predict(&g, PchmParams::new(1.0).unwrap(), PchmOptions::default());
        assert_eq!(pred.action, 0);
        assert!(pred.tie);
    }

    #[test]
    fn perceived_weights_tau_one() {
        let w = perceived_weights(1.0, 2);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_tau_tends_to_uniform() {
        let d = pchm_distribution(&example_game(), PchmParams::new(1e-9).unwrap(), PchmOptions::default());
        for p in d.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn distribution_sums_to_one() {
        for tau in [0.1, 0.7, 1.0, 2.5, 5.0] {
            let d = pchm_distribution(&example_game(), PchmParams::new(tau).unwrap(), PchmOptions::default());
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let floor = poisson_masses(tau, 6)[0] / poisson_masses(tau, 6).iter().sum::<f64>() / 3.0;
            assert!(d.probs.iter().all(|&p| p >= floor - 1e-15));
        }
    }

    #[test]
    fn example_game_mode_is_level_one() {
        let pred = pchm_predict(&example_game(), PchmParams::new(1.0).unwrap(), PchmOptions::default());
        assert_eq!(pred.action, 2);
    }

    #[test]
    fn features_roundtrip() {
        let g = example_game();
        assert_eq!(Game::from_features(&g.features()).unwrap(), g);
        assert_eq!(g.transposed().transposed(), g);
    }
}
