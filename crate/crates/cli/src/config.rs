//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::str::FromStr;

use completeness_core::ProblemKind;

use crate::CliError;

const KEYS: &[&str] = &[
    "domain",
    "loss",
    "folds",
    "seed",
    "models",
    "stratify",
    "naive",
    "weighting",
    "out",
    "lookup.key",
    "fit.grid_points",
    "fit.refine",
    "fit.max_iters",
    "fit.tolerance",
    "fit.restarts",
    "seq.output",
    "urn.depletion",
    "urn.inference",
    "pchm.k_max",
    "pchm.opponents",
    "trees.n_trees",
    "trees.min_leaf",
    "trees.max_depth",
    "subsample.fractions",
    "subsample.iterations",
    "subsample.estimator",
    "features.projections",
    "hetero.groups",
    "hetero.test_subjects",
    "hetero.train_lotteries",
    "hetero.train_lottery_ids",
    "synth.n_subjects",
    "synth.reports",
    "synth.sigma",
    "synth.types",
    "synth.n_games",
    "synth.obs_per_game",
    "synth.tau",
    "synth.tremble",
    "synth.generator",
    "synth.n_strings",
    "synth.strings_per_subject",
    "synth.alpha",
    "synth.delta",
    "synth.urn_n",
    "synth.urn_p",
];

/// Parsed configuration: raw values with their source line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, (String, usize)>,
}

fn known(key: &str) -> bool {
    if KEYS.contains(&key) {
        return true;
    }
    // bounds.<model>.<param>
    let parts: Vec<&str> = key.split('.').collect();
    parts.len() == 3 && parts[0] == "bounds" && !parts[1].is_empty() && !parts[2].is_empty()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: Some(line_no),
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let k = k.trim();
            if !known(k) {
                return Err(CliError::Config {
                    line: Some(line_no),
                    message: format!("unknown key `{k}`"),
                });
            }
            values.insert(k.to_string(), (v.trim().to_string(), line_no));
        }
        Ok(Self { values })
    }

    /// Set a value from a command-line flag; flags win over the file.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(known(key), "{key}");
        self.values.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn err(&self, key: &str, message: String) -> CliError {
        CliError::Config {
            line: self.values.get(key).map(|(_, l)| *l).filter(|l| *l > 0),
            message: format!("{key}: {message}"),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| self.err(key, format!("invalid value `{v}`: {e}"))),
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e: T::Err| self.err(key, format!("invalid value `{v}`: {e}"))),
        }
    }

    /// Comma-separated list.
    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.list(key)
            .map(|items| {
                items
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|e| self.err(key, format!("invalid number `{s}`: {e}"))))
                    .collect()
            })
            .transpose()
    }

    pub fn choice<'a>(&self, key: &str, allowed: &[&'a str], default: &'a str) -> Result<&'a str, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => allowed
                .iter()
                .find(|a| **a == v)
                .copied()
                .ok_or_else(|| self.err(key, format!("expected one of {allowed:?}, found `{v}`"))),
        }
    }

    pub fn domain(&self) -> Result<ProblemKind, CliError> {
        match self.choice("domain", &["risk", "games", "sequences"], "")? {
            "risk" => Ok(ProblemKind::Risk),
            "games" => Ok(ProblemKind::Games),
            "sequences" => Ok(ProblemKind::Sequences),
            _ => Err(CliError::Config {
                line: None,
                message: "domain is required (risk, games or sequences)".into(),
            }),
        }
    }

    /// `(lower, upper)` overrides for `model.param`.
    pub fn bounds(&self, model: &str) -> Result<Vec<(String, f64, f64)>, CliError> {
        let prefix = format!("bounds.{model}.");
        let mut out = Vec::new();
        for (k, (v, _)) in self.values.range(prefix.clone()..) {
            let Some(param) = k.strip_prefix(&prefix) else { break };
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            let parsed: Option<(f64, f64)> = match parts.as_slice() {
                [a, b] => a.parse().ok().zip(b.parse().ok()),
                _ => None,
            };
            let (lo, hi) = parsed.ok_or_else(|| self.err(k, format!("expected `lower, upper`, found `{v}`")))?;
            out.push((param.to_string(), lo, hi));
        }
        Ok(out)
    }

    /// Every bounds key, for detecting overrides of models not in use.
    pub fn bounds_models(&self) -> Vec<String> {
        self.values
            .keys()
            .filter_map(|k| k.strip_prefix("bounds."))
            .filter_map(|rest| rest.split('.').next())
            .map(str::to_string)
            .collect()
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }
}
