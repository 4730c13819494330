//! Training-loss minimisation over a model class's parameter box.
//!
//! A full grid scan (integer parameters enumerated over their whole range)
//! is followed, for continuous parameters under a smooth loss, by bounded
//! Nelder–Mead refinement from the best grid point. The result is never
//! worse than the best grid point.
//!
//! Training data is first collapsed to one sufficient-statistic group per
//! unique feature vector, so each parameter point costs one prediction per
//! unique input rather than per observation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, Outcome};
use crate::error::{Error, Result};
use crate::lookup::FeatureKey;
use crate::loss::{LossFunction, LossKind};
use crate::par;
use crate::rule::{ModelClass, ParamKind, PredictionRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub grid_points_per_dim: usize,
    pub refine: bool,
    pub refine_max_iters: usize,
    /// Relative spread of simplex losses at which refinement stops.
    pub refine_tolerance: f64,
    /// Extra refinement rounds restarted from the incumbent with a smaller
    /// simplex.
    pub refine_restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid_points_per_dim: 11,
            refine: true,
            refine_max_iters: 200,
            refine_tolerance: 1e-7,
            refine_restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub parameters: Vec<f64>,
    pub train_loss: f64,
    pub evaluations: usize,
    /// Grid points whose rule could not be built or predicted NaN.
    pub failed_points: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.parameters[i])
    }
}

enum Stats {
    Numeric { count: f64, mean: f64, m2: f64 },
    Outcomes(Vec<(Outcome, usize)>),
}

struct Group {
    x: FeatureVector,
    stats: Stats,
}

/// Training data grouped by unique feature vector.
pub struct GroupedData {
    groups: Vec<Group>,
    n: usize,
    loss: LossFunction,
}

impl GroupedData {
    pub fn new(data: &Dataset, loss: &LossFunction) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut index: HashMap<FeatureKey, usize> = HashMap::new();
        let mut groups: Vec<Group> = Vec::new();
        let numeric = matches!(loss.kind(), LossKind::SquaredError);
        for (i, obs) in data.iter().enumerate() {
            let key = FeatureKey::of(&obs.x);
            let g = *index.entry(key).or_insert_with(|| {
                groups.push(Group {
                    x: obs.x.clone(),
                    stats: if numeric {
                        Stats::Numeric {
                            count: 0.0,
                            mean: 0.0,
                            m2: 0.0,
                        }
                    } else {
                        Stats::Outcomes(Vec::new())
                    },
                });
                groups.len() - 1
            });
            match &mut groups[g].stats {
                Stats::Numeric { count, mean, m2 } => {
                    let y = obs.y.numeric().ok_or(Error::OutcomeKind {
                        index: i,
                        expected: "numeric",
                        found: obs.y.kind_name(),
                    })?;
                    *count += 1.0;
                    let d = y - *mean;
                    *mean += d / *count;
                    *m2 += d * (y - *mean);
                }
                Stats::Outcomes(list) => match list.iter_mut().find(|(y, _)| *y == obs.y) {
                    Some((_, c)) => *c += 1,
                    None => list.push((obs.y.clone(), 1)),
                },
            }
        }
        Ok(Self {
            groups,
            n: data.len(),
            loss: loss.clone(),
        })
    }

    pub fn unique_inputs(&self) -> usize {
        self.groups.len()
    }

    /// Average training loss of `rule`; `None` when a prediction is NaN or
    /// cannot be scored.
    pub fn loss_of(&self, rule: &PredictionRule) -> Option<f64> {
        let mut total = 0.0;
        for g in &self.groups {
            let pred = rule.predict(&g.x);
            if pred.is_nan() {
                return None;
            }
            total += match &g.stats {
                Stats::Numeric { count, mean, m2 } => {
                    let c = pred.numeric()?;
                    count * (c - mean) * (c - mean) + m2
                }
                Stats::Outcomes(list) => {
                    let mut s = 0.0;
                    for (y, c) in list {
                        s += *c as f64 * self.loss.loss(&pred, y).ok()?;
                    }
                    s
                }
            };
        }
        Some(total / self.n as f64)
    }
}

fn axis_values(spec: &crate::rule::ParamSpec, points: usize) -> Vec<f64> {
    match spec.kind {
        ParamKind::Integer { step } => {
            let mut v = Vec::new();
            let mut x = spec.lower;
            while x <= spec.upper + 1e-9 {
                v.push(x);
                x += f64::from(step);
            }
            v
        }
        ParamKind::Continuous => {
            if spec.lower == spec.upper {
                return vec![spec.lower];
            }
            let h = (spec.upper - spec.lower) / (points - 1) as f64;
            (0..points)
                .map(|i| if i + 1 == points { spec.upper } else { spec.lower + h * i as f64 })
                .collect()
        }
    }
}

struct Grid {
    axes: Vec<Vec<f64>>,
    size: usize,
}

impl Grid {
    fn new(model: &ModelClass, points: usize) -> Result<Self> {
        if model.params().is_empty() {
            return Err(Error::EmptyParameterGrid);
        }
        let axes: Vec<Vec<f64>> = model.params().iter().map(|p| axis_values(p, points)).collect();
        let size = axes.iter().map(Vec::len).product();
        if size == 0 {
            return Err(Error::EmptyParameterGrid);
        }
        Ok(Self { axes, size })
    }

    /// Point `i` in lexicographic order, first parameter slowest.
    fn point(&self, mut i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (d, axis) in self.axes.iter().enumerate().rev() {
            out[d] = axis[i % axis.len()];
            i /= axis.len();
        }
        out
    }
}

fn evaluate(model: &ModelClass, data: &GroupedData, theta: &[f64]) -> Option<f64> {
    let rule = model.build(theta).ok()?;
    data.loss_of(&rule).filter(|l| l.is_finite())
}

struct ScanResult {
    best: Vec<f64>,
    best_loss: f64,
    evaluations: usize,
    failed: usize,
}

fn scan(model: &ModelClass, data: &GroupedData, cfg: &FitConfig) -> Result<ScanResult> {
    if cfg.grid_points_per_dim < 2 {
        return Err(Error::Config("grid_points_per_dim must be at least 2".into()));
    }
    let grid = Grid::new(model, cfg.grid_points_per_dim)?;
    let losses = par::map_range(grid.size, |i| evaluate(model, data, &grid.point(i)));
    let failed = losses.iter().filter(|l| l.is_none()).count();
    let mut best: Option<(usize, f64)> = None;
    for (i, l) in losses.iter().enumerate() {
        if let Some(l) = *l {
            if best.is_none_or(|(_, b)| l < b) {
                best = Some((i, l));
            }
        }
    }
    let (i, best_loss) = best.ok_or(Error::AllPointsFailed {
        evaluated: grid.size,
    })?;
    Ok(ScanResult {
        best: grid.point(i),
        best_loss,
        evaluations: grid.size,
        failed,
    })
}

/// Grid scan followed by simplex refinement. Under misclassification loss
/// the objective is a step function and only the scan runs.
pub fn fit(model: &ModelClass, train: &Dataset, loss: &LossFunction, cfg: &FitConfig) -> Result<FitResult> {
    let data = GroupedData::new(train, loss)?;
    fit_grouped(model, &data, cfg, cfg.refine && !loss.is_misclassification())
}

/// Exhaustive scan only, first minimum in grid order.
pub fn fit_discrete(model: &ModelClass, train: &Dataset, loss: &LossFunction, cfg: &FitConfig) -> Result<FitResult> {
    let data = GroupedData::new(train, loss)?;
    fit_grouped(model, &data, cfg, false)
}

pub fn fit_grouped(model: &ModelClass, data: &GroupedData, cfg: &FitConfig, refine: bool) -> Result<FitResult> {
    let s = scan(model, data, cfg)?;
    let mut best = s.best;
    let mut best_loss = s.best_loss;
    let mut evaluations = s.evaluations;

    let free: Vec<usize> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_integer() && p.upper > p.lower)
        .map(|(i, _)| i)
        .collect();
    if refine && !free.is_empty() {
        let bounds: Vec<(f64, f64)> = free
            .iter()
            .map(|&i| (model.params()[i].lower, model.params()[i].upper))
            .collect();
        let mut step: Vec<f64> = bounds
            .iter()
            .map(|(lo, hi)| (hi - lo) / (cfg.grid_points_per_dim - 1) as f64)
            .collect();
        for _ in 0..=cfg.refine_restarts {
            let fixed = best.clone();
            let objective = |z: &[f64]| {
                let mut theta = fixed.clone();
                for (k, &i) in free.iter().enumerate() {
                    theta[i] = z[k];
                }
                evaluate(model, data, &theta).unwrap_or(f64::INFINITY)
            };
            let start: Vec<f64> = free.iter().map(|&i| best[i]).collect();
            let out = nelder_mead(&objective, &start, best_loss, &step, &bounds, cfg);
            evaluations += out.evaluations;
            if out.loss < best_loss {
                for (k, &i) in free.iter().enumerate() {
                    best[i] = out.point[k];
                }
                best_loss = out.loss;
            }
            step.iter_mut().for_each(|h| *h *= 0.25);
        }
    }

    Ok(FitResult {
        names: model.params().iter().map(|p| p.name.clone()).collect(),
        parameters: best,
        train_loss: best_loss,
        evaluations,
        failed_points: s.failed,
    })
}

pub struct SimplexOutcome {
    pub point: Vec<f64>,
    pub loss: f64,
    pub evaluations: usize,
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Bounded Nelder–Mead: trial points are projected onto the box.
pub fn nelder_mead<F>(
    f: &F,
    start: &[f64],
    start_loss: f64,
    step: &[f64],
    bounds: &[(f64, f64)],
    cfg: &FitConfig,
) -> SimplexOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let dim = start.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), start_loss)];
    for d in 0..dim {
        let mut x = start.to_vec();
        let (lo, hi) = bounds[d];
        x[d] = if x[d] + step[d] <= hi { x[d] + step[d] } else { (x[d] - step[d]).max(lo) };
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    for _ in 0..cfg.refine_max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fb, fw) = (simplex[0].1, simplex[dim].1);
        if fw.is_finite() && (fw - fb).abs() <= cfg.refine_tolerance * fb.abs().max(1e-12) {
            break;
        }
        let spread = (0..dim)
            .map(|d| {
                let (lo, hi) = simplex.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
                    (lo.min(x[d]), hi.max(x[d]))
                });
                hi - lo
            })
            .fold(0.0, f64::max);
        if spread < 1e-12 {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for d in 0..dim {
                centroid[d] += x[d] / dim as f64;
            }
        }
        let toward = |coef: f64, from: &[f64]| {
            let mut x: Vec<f64> = (0..dim).map(|d| centroid[d] + coef * (from[d] - centroid[d])).collect();
            clamp_into(&mut x, bounds);
            x
        };
        let worst = simplex[dim].0.clone();
        let xr = toward(-1.0, &worst);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = toward(-2.0, &worst);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[dim].1 {
                let xc = toward(-0.5, &worst);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = toward(0.5, &worst);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[dim].1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = (0..dim).map(|d| best[d] + 0.5 * (item.0[d] - best[d])).collect();
                    let fx = eval(&x);
                    *item = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (point, loss) = simplex.swap_remove(0);
    SimplexOutcome {
        point,
        loss,
        evaluations,
    }
}
