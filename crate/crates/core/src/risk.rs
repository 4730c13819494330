//! Certainty-equivalent rules for two-outcome lotteries: expected value,
//! expected utility with a power utility, and cumulative prospect theory
//! with a power value function and a two-parameter weighting function.
//!
//! Feature layout: `[z1, z2, p]`, all real, with `p` the probability of `z1`.

use serde::{Deserialize, Serialize};

use crate::data::{Feature, FeatureVector, Outcome};
use crate::error::{Error, Result};
use crate::rule::{ModelClass, ParamSpec, PredictionRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lottery {
    pub z1: f64,
    pub z2: f64,
    pub p: f64,
}

impl Lottery {
    pub fn new(z1: f64, z2: f64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidLottery(format!("probability {p} outside [0, 1]")));
        }
        if !z1.is_finite() || !z2.is_finite() {
            return Err(Error::InvalidLottery("prizes must be finite".into()));
        }
        Ok(Self { z1, z2, p })
    }

    pub fn from_features(x: &FeatureVector) -> Result<Self> {
        match x.values() {
            [Feature::Real(z1), Feature::Real(z2), Feature::Real(p)] => Self::new(*z1, *z2, *p),
            _ => Err(Error::WrongFeatureLayout("lottery (z1, z2, p)")),
        }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector::reals(&[self.z1, self.z2, self.p])
    }

    pub fn min_prize(&self) -> f64 {
        self.z1.min(self.z2)
    }

    pub fn max_prize(&self) -> f64 {
        self.z1.max(self.z2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuParams {
    pub alpha: f64,
}

impl EuParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self { alpha })
        } else {
            Err(Error::InvalidParameters(format!("EU alpha must be positive (got {alpha})")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl CptParams {
    pub fn new(alpha: f64, beta: f64, delta: f64, gamma: f64) -> Result<Self> {
        let all = [alpha, beta, delta, gamma];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(Self {
                alpha,
                beta,
                delta,
                gamma,
            })
        } else {
            Err(Error::InvalidParameters(format!(
                "CPT parameters must be positive (got {all:?})"
            )))
        }
    }
}

pub fn predict_ev(lot: &Lottery) -> f64 {
    lot.p * lot.z1 + (1.0 - lot.p) * lot.z2
}

/// `p z1^a + (1-p) z2^a`; prizes must be non-negative.
pub fn predict_eu(lot: &Lottery, theta: EuParams) -> Result<f64> {
    for z in [lot.z1, lot.z2] {
        if z < 0.0 {
            return Err(Error::NegativePrize(z));
        }
    }
    Ok(predict_eu_signed(lot, theta))
}

/// Expected utility under the sign-preserving power `sign(z) |z|^a`,
/// which agrees with [`predict_eu`] on gains.
pub fn predict_eu_signed(lot: &Lottery, theta: EuParams) -> f64 {
    let u = |z: f64| {
        if z == 0.0 {
            0.0
        } else {
            z.signum() * z.abs().powf(theta.alpha)
        }
    };
    lot.p * u(lot.z1) + (1.0 - lot.p) * u(lot.z2)
}

/// Value function: `z^alpha` on gains, `-((-z)^beta)` on losses.
pub fn cpt_value(z: f64, theta: CptParams) -> f64 {
    if z > 0.0 {
        z.powf(theta.alpha)
    } else if z == 0.0 {
        0.0
    } else {
        -(-z).powf(theta.beta)
    }
}

/// `delta p^gamma / (delta p^gamma + (1-p)^gamma)`, with `w(0) = 0` and
/// `w(1) = 1`.
pub fn cpt_weight(p: f64, theta: CptParams) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let a = theta.delta * p.powf(theta.gamma);
    a / (a + (1.0 - p).powf(theta.gamma))
}

pub fn predict_cpt(lot: &Lottery, theta: CptParams) -> f64 {
    let w = cpt_weight(lot.p, theta);
    w * cpt_value(lot.z1, theta) + (1.0 - w) * cpt_value(lot.z2, theta)
}

fn lottery_rule(f: impl Fn(&Lottery) -> f64 + Send + Sync + 'static) -> PredictionRule {
    PredictionRule::from_fn(Some(3), move |x| match Lottery::from_features(x) {
        Ok(lot) => Outcome::Real(f(&lot)),
        Err(_) => Outcome::Real(f64::NAN),
    })
}

pub fn expected_value_rule() -> PredictionRule {
    lottery_rule(predict_ev)
}

pub fn eu_rule(theta: EuParams) -> PredictionRule {
    lottery_rule(move |lot| predict_eu_signed(lot, theta))
}

pub fn cpt_rule(theta: CptParams) -> PredictionRule {
    lottery_rule(move |lot| predict_cpt(lot, theta))
}

/// Expected utility, `alpha` in `[0.05, 2]`.
pub fn eu_model() -> ModelClass {
    ModelClass::new(
        "eu",
        vec![ParamSpec::continuous("alpha", 0.05, 2.0)],
        |theta| Ok(eu_rule(EuParams::new(theta[0])?)),
    )
    .expect("static domain is valid")
}

/// Cumulative prospect theory over `(alpha, beta, delta, gamma)`.
pub fn cpt_model() -> ModelClass {
    ModelClass::new(
        "cpt",
        vec![
            ParamSpec::continuous("alpha", 0.05, 2.0),
            ParamSpec::continuous("beta", 0.05, 2.0),
            ParamSpec::continuous("delta", 0.05, 5.0),
            ParamSpec::continuous("gamma", 0.05, 3.0),
        ],
        |theta| Ok(cpt_rule(CptParams::new(theta[0], theta[1], theta[2], theta[3])?)),
    )
    .expect("static domain is valid")
}
