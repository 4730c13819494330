//! Subject heterogeneity: cluster subjects on a few training lotteries,
//! fit each group separately on the remaining lotteries, and compare with a
//! group-level lookup on held-out subjects.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, ProblemKind};
use crate::error::{Error, Result};
use crate::eval::{CompletenessReport, CvResult};
use crate::fitting::{fit, FitConfig};
use crate::lookup::{train_lookup, KeyFn, LookupSpec};
use crate::loss::LossFunction;
use crate::par;
use crate::rng::stream;
use crate::rule::{naive_rule, ModelClass, PredictionRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroPlan {
    pub n_groups: usize,
    pub n_test_subjects: usize,
    pub n_train_lotteries: usize,
    pub seed: u64,
    /// Explicit training lottery ids; drawn from the seed when absent.
    pub train_lotteries: Option<Vec<String>>,
}

impl Default for HeteroPlan {
    fn default() -> Self {
        Self {
            n_groups: 3,
            n_test_subjects: 71,
            n_train_lotteries: 5,
            seed: 0,
            train_lotteries: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// Group of each input vector.
    pub assignments: Vec<usize>,
    pub wcss: f64,
    /// Within-cluster sum of squares after each Lloyd iteration of the
    /// winning restart.
    pub wcss_trace: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties; the flag reports a tie.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    let mut tie = false;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best_d {
            best = i;
            best_d = d;
            tie = false;
        } else if d == best_d {
            tie = true;
        }
    }
    (best, tie)
}

pub fn assign_group(model: &ClusterModel, v: &[f64]) -> Result<(usize, bool)> {
    let dim = model.centroids.first().map_or(0, Vec::len);
    if v.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    Ok(nearest(&model.centroids, v))
}

fn wcss(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(p, &g)| sq_dist(p, &centroids[g])).sum()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest_dist(&centroids, p)).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

fn nearest_dist(centroids: &[Vec<f64>], p: &[f64]) -> f64 {
    centroids.iter().map(|c| sq_dist(c, p)).fold(f64::INFINITY, f64::min)
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let dim = points[0].len();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
    let mut trace = vec![wcss(points, &centroids, &assign)];
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &g) in points.iter().zip(&assign) {
            counts[g] += 1;
            for d in 0..dim {
                sums[g][d] += p[d];
            }
        }
        for (g, c) in centroids.iter_mut().enumerate() {
            if counts[g] > 0 {
                for d in 0..dim {
                    c[d] = sums[g][d] / counts[g] as f64;
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
        let w = wcss(points, &centroids, &next);
        trace.push(w);
        if next == assign {
            break;
        }
        assign = next;
    }
    (centroids, assign, trace)
}

/// k-means with k-means++ seeding; the restart with the smallest
/// within-cluster sum of squares wins, earliest on ties.
pub fn fit_clusters(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    fit_clusters_with(points, k, seed, KMeansConfig::default())
}

pub fn fit_clusters_with(points: &[Vec<f64>], k: usize, seed: u64, cfg: KMeansConfig) -> Result<ClusterModel> {
    if k == 0 || points.len() < k {
        return Err(Error::TooFewSubjects {
            subjects: points.len(),
            groups: k,
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let runs = par::map_range(cfg.restarts.max(1), |r| {
        let mut rng = stream(seed, &[0xc1, r as u64]);
        let init = plus_plus_init(points, k, &mut rng);
        lloyd(points, init, cfg.max_iters)
    });
    let mut best: Option<ClusterModel> = None;
    for (restart, (centroids, assignments, trace)) in runs.into_iter().enumerate() {
        let w = *trace.last().expect("trace starts with the initial value");
        if best.as_ref().is_none_or(|b| w < b.wcss) {
            best = Some(ClusterModel {
                centroids,
                assignments,
                wcss: w,
                wcss_trace: trace,
                restart,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroReport {
    pub report: CompletenessReport,
    pub train_lotteries: Vec<String>,
    pub test_subjects: Vec<String>,
    pub train_subjects: Vec<String>,
    pub clusters: ClusterModel,
    pub group_sizes: Vec<usize>,
    /// Subjects lacking a response on some training lottery.
    pub dropped_subjects: Vec<String>,
    /// Test subjects equidistant from two centroids.
    pub assignment_ties: usize,
    /// Test rows whose lottery was missing from their group's table.
    pub lookup_fallbacks: usize,
}

fn ids(data: &Dataset) -> Result<(Vec<String>, Vec<String>)> {
    let mut subjects = BTreeSet::new();
    let mut lotteries = BTreeSet::new();
    for (i, o) in data.iter().enumerate() {
        let s = o
            .subject_id
            .as_ref()
            .ok_or_else(|| Error::Config(format!("observation {i} has no subject id")))?;
        let l = o
            .instance_id
            .as_ref()
            .ok_or_else(|| Error::Config(format!("observation {i} has no lottery id")))?;
        subjects.insert(s.clone());
        lotteries.insert(l.clone());
    }
    Ok((subjects.into_iter().collect(), lotteries.into_iter().collect()))
}

fn draw(items: &[String], m: usize, seed: u64, tag: u64) -> Result<Vec<String>> {
    if m > items.len() {
        return Err(Error::Config(format!("cannot draw {m} of {} ids", items.len())));
    }
    let mut rng = stream(seed, &[tag]);
    let mut picked: Vec<usize> = index::sample(&mut rng, items.len(), m).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

/// Mean response per (subject, training lottery); subjects missing a
/// training lottery yield `None`.
fn profile(data: &Dataset, subject: &str, lotteries: &[String]) -> Option<Vec<f64>> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for o in data.iter() {
        if o.subject_id.as_deref() == Some(subject) {
            if let Some(l) = o.instance_id.as_deref() {
                if let Some(y) = o.y.numeric() {
                    let e = acc.entry(l).or_insert((0.0, 0));
                    e.0 += y;
                    e.1 += 1;
                }
            }
        }
    }
    lotteries
        .iter()
        .map(|l| acc.get(l.as_str()).map(|(s, c)| s / *c as f64))
        .collect()
}

pub fn hetero_evaluate(
    data: &Dataset,
    plan: &HeteroPlan,
    models: &[(ModelClass, FitConfig)],
    loss: &LossFunction,
) -> Result<HeteroReport> {
    if data.kind() != ProblemKind::Risk {
        return Err(Error::Config("heterogeneity analysis needs risk data".into()));
    }
    let (subjects, lotteries) = ids(data)?;
    let train_lotteries = match &plan.train_lotteries {
        Some(ids) => {
            let mut v = ids.clone();
            v.sort();
            for l in &v {
                if !lotteries.contains(l) {
                    return Err(Error::Config(format!("unknown training lottery `{l}`")));
                }
            }
            v
        }
        None => draw(&lotteries, plan.n_train_lotteries, plan.seed, 2)?,
    };
    let test_subjects = draw(&subjects, plan.n_test_subjects, plan.seed, 1)?;
    let test_set: BTreeSet<&String> = test_subjects.iter().collect();
    let train_lottery_set: BTreeSet<&String> = train_lotteries.iter().collect();

    let mut dropped = Vec::new();
    let mut train_subjects = Vec::new();
    let mut train_profiles = Vec::new();
    for s in subjects.iter().filter(|s| !test_set.contains(s)) {
        match profile(data, s, &train_lotteries) {
            Some(v) => {
                train_subjects.push(s.clone());
                train_profiles.push(v);
            }
            None => dropped.push(s.clone()),
        }
    }
    let clusters = fit_clusters(&train_profiles, plan.n_groups, plan.seed)?;
    let group_of: BTreeMap<&String, usize> = train_subjects.iter().zip(&clusters.assignments).map(|(s, &g)| (s, g)).collect();
    let mut group_sizes = vec![0; plan.n_groups];
    for &g in &clusters.assignments {
        group_sizes[g] += 1;
    }

    let mut test_group: BTreeMap<&String, usize> = BTreeMap::new();
    let mut ties = 0;
    let mut kept_test = Vec::new();
    for s in &test_subjects {
        match profile(data, s, &train_lotteries) {
            Some(v) => {
                let (g, tie) = assign_group(&clusters, &v)?;
                ties += usize::from(tie);
                test_group.insert(s, g);
                kept_test.push(s.clone());
            }
            None => dropped.push(s.clone()),
        }
    }

    let on_test_lottery = |o: &Observation| !o.instance_id.as_ref().is_some_and(|l| train_lottery_set.contains(l));
    let mut group_rows: Vec<Vec<Observation>> = vec![Vec::new(); plan.n_groups];
    let mut pooled_rows = Vec::new();
    let mut eval_rows: BTreeMap<&String, Vec<Observation>> = BTreeMap::new();
    for o in data.iter().filter(|o| on_test_lottery(o)) {
        let Some(s) = o.subject_id.as_ref() else { continue };
        if let Some(&g) = group_of.get(s) {
            group_rows[g].push(o.clone());
            pooled_rows.push(o.clone());
        } else if test_group.contains_key(s) {
            eval_rows.entry(s).or_default().push(o.clone());
        }
    }
    if pooled_rows.is_empty() || eval_rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pooled = Dataset::new(pooled_rows, ProblemKind::Risk)?;
    let group_data: Vec<Option<Dataset>> = group_rows
        .into_iter()
        .map(|rows| if rows.is_empty() { Ok(None) } else { Dataset::new(rows, ProblemKind::Risk).map(Some) })
        .collect::<Result<_>>()?;
    let train_of = |g: usize| group_data[g].as_ref().unwrap_or(&pooled);

    let naive = naive_rule(ProblemKind::Risk)?;
    let pooled_table = Arc::new(train_lookup(&pooled, &LookupSpec::for_loss(loss, KeyFn::Identity, naive.clone())?)?);
    let tables = (0..plan.n_groups)
        .map(|g| {
            let spec = LookupSpec::for_loss(loss, KeyFn::Identity, pooled_table.clone().into_rule())?;
            train_lookup(train_of(g), &spec).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs = plan.n_groups * models.len();
    let fits = par::try_map_range(jobs, |j| {
        let (m, g) = (j / plan.n_groups, j % plan.n_groups);
        let (class, cfg) = &models[m];
        let r = fit(class, train_of(g), loss, cfg)?;
        Ok::<_, Error>((class.build(&r.parameters)?, r.parameters))
    })?;

    let subject_losses = |rules: &dyn Fn(usize) -> PredictionRule| -> Result<Vec<f64>> {
        eval_rows
            .iter()
            .map(|(s, rows)| {
                let rule = rules(test_group[s]);
                let mut total = 0.0;
                for (index, o) in rows.iter().enumerate() {
                    let p = rule.predict(&o.x);
                    if p.is_nan() {
                        return Err(Error::NanPrediction { index });
                    }
                    total += loss.loss(&p, &o.y)?;
                }
                Ok(total / rows.len() as f64)
            })
            .collect()
    };
    let sizes: Vec<usize> = eval_rows.values().map(Vec::len).collect();
    let wrap = |name: &str, losses: Vec<f64>| {
        let mut cv = CvResult::from_fold_errors(name, losses);
        cv.fold_sizes = sizes.clone();
        cv
    };

    let naive_cv = wrap("naive", subject_losses(&|_| naive.clone())?);
    let lookup_cv = {
        let mut cv = wrap("lookup", subject_losses(&|g| tables[g].clone().into_rule())?);
        cv.unseen_keys = tables.iter().map(|t| t.unseen_count()).sum();
        cv
    };
    let mut model_cvs = Vec::new();
    for (m, (class, _)) in models.iter().enumerate() {
        let mut cv = wrap(class.name(), subject_losses(&|g| fits[m * plan.n_groups + g].0.clone())?);
        cv.param_names = class.params().iter().map(|p| p.name.clone()).collect();
        cv.fitted_parameters = (0..plan.n_groups).map(|g| fits[m * plan.n_groups + g].1.clone()).collect();
        model_cvs.push(cv);
    }
    let lookup_fallbacks = lookup_cv.unseen_keys;
    Ok(HeteroReport {
        report: CompletenessReport::from_results(naive_cv, model_cvs, lookup_cv)?,
        train_lotteries,
        test_subjects: kept_test,
        train_subjects,
        clusters,
        group_sizes,
        dropped_subjects: dropped,
        assignment_ties: ties,
        lookup_fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points_recovered() {
        let mut pts = Vec::new();
        for c in [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]] {
            for _ in 0..5 {
                pts.push(c.to_vec());
            }
        }
        let m = fit_clusters(&pts, 3, 1).unwrap();
        assert_eq!(m.wcss, 0.0);
        for chunk in m.assignments.chunks(5) {
            assert!(chunk.iter().all(|&g| g == chunk[0]));
        }
        let mut gs: Vec<usize> = m.assignments.chunks(5).map(|c| c[0]).collect();
        gs.sort();
        assert_eq!(gs, vec![0, 1, 2]);
    }

    #[test]
    fn identical_points_go_to_first_group() {
        let pts = vec![vec![1.0, 2.0]; 6];
        let m = fit_clusters(&pts, 3, 4).unwrap();
        assert!(m.centroids.iter().all(|c| c == &pts[0]));
        assert!(m.assignments.iter().all(|&g| g == 0));
    }

    #[test]
    fn assignment_ties_and_errors() {
        let m = ClusterModel {
            centroids: vec![vec![0.0], vec![2.0]],
            assignments: vec![],
            wcss: 0.0,
            wcss_trace: vec![],
            restart: 0,
        };
        assert_eq!(assign_group(&m, &[1.0]).unwrap(), (0, true));
        assert_eq!(assign_group(&m, &[2.0]).unwrap(), (1, false));
        assert!(assign_group(&m, &[1.0, 2.0]).is_err());
        assert!(fit_clusters(&[vec![0.0]], 2, 0).is_err());
    }

    #[test]
    fn lloyd_descends() {
        let mut rng = stream(9, &[]);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let m = fit_clusters(&pts, 4, 3).unwrap();
        for w in m.wcss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }
}
