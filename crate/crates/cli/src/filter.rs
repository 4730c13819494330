//! Subject filters for sequence data.

use std::collections::BTreeMap;

use completeness_core::synth::FlipString;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::csvio::FLIPS_LEN;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterMethod {
    /// Drop subjects whose most repeated string occurs more than `max_repeats` times.
    RepeatCutoff { max_repeats: usize },
    /// Drop the `drop_n` subjects least consistent with fair coin flips.
    ChiSquared { drop_n: usize, cells: bool },
    /// Keep each subject's first `k` rounds.
    FirstK { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectAudit {
    pub subject: String,
    pub strings: usize,
    pub max_repeats: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub kept_rows: usize,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterAudit {
    pub method: String,
    pub subjects_in: usize,
    pub subjects_out: usize,
    pub rows_in: usize,
    pub rows_out: usize,
    pub subjects: Vec<SubjectAudit>,
}

/// Per-position statistic: the sum over the eight positions of
/// `(h - n/2)^2 / (n/2) + (t - n/2)^2 / (n/2)`, referred to chi-squared
/// with 8 degrees of freedom.
pub fn position_chi_squared(strings: &[&FlipString]) -> (f64, f64) {
    let n = strings.len() as f64;
    let e = n / 2.0;
    let mut stat = 0.0;
    for pos in 0..FLIPS_LEN {
        let h = strings.iter().filter(|s| s.flips[pos]).count() as f64;
        stat += (h - e).powi(2) / e + (n - h - e).powi(2) / e;
    }
    let dist = ChiSquared::new(FLIPS_LEN as f64).expect("positive degrees of freedom");
    (stat, dist.sf(stat))
}

/// Histogram over all 256 strings against the uniform expectation, 255
/// degrees of freedom.
pub fn cell_chi_squared(strings: &[&FlipString]) -> (f64, f64) {
    let cells = 1usize << FLIPS_LEN;
    let mut counts = vec![0usize; cells];
    for s in strings {
        let idx = s.flips.iter().enumerate().fold(0, |acc, (i, &b)| acc | (usize::from(b) << i));
        counts[idx] += 1;
    }
    let e = strings.len() as f64 / cells as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let dist = ChiSquared::new((cells - 1) as f64).expect("positive degrees of freedom");
    (stat, dist.sf(stat))
}

fn max_repeats(strings: &[&FlipString]) -> usize {
    let mut counts: BTreeMap<&[bool], usize> = BTreeMap::new();
    for s in strings {
        *counts.entry(&s.flips).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}

pub fn filter_subjects(rows: &[FlipString], method: FilterMethod) -> Result<(Vec<FlipString>, FilterAudit), CliError> {
    let mut by_subject: BTreeMap<&str, Vec<&FlipString>> = BTreeMap::new();
    for r in rows {
        by_subject.entry(r.subject.as_str()).or_default().push(r);
    }
    if by_subject.is_empty() {
        return Err(CliError::Schema {
            row: 1,
            column: "subject_id".into(),
            message: "no subjects".into(),
        });
    }
    let mut audits: Vec<SubjectAudit> = by_subject
        .iter()
        .map(|(s, strings)| SubjectAudit {
            subject: s.to_string(),
            strings: strings.len(),
            max_repeats: max_repeats(strings),
            statistic: None,
            p_value: None,
            kept_rows: strings.len(),
            dropped: false,
        })
        .collect();
    let mut keep_rounds: BTreeMap<&str, usize> = BTreeMap::new();
    let name = match method {
        FilterMethod::RepeatCutoff { max_repeats } => {
            for a in &mut audits {
                a.dropped = a.max_repeats > max_repeats;
            }
            format!("repeat_cutoff(max_repeats={max_repeats})")
        }
        FilterMethod::ChiSquared { drop_n, cells } => {
            for (a, strings) in audits.iter_mut().zip(by_subject.values()) {
                let (stat, p) = if cells {
                    cell_chi_squared(strings)
                } else {
                    position_chi_squared(strings)
                };
                a.statistic = Some(stat);
                a.p_value = Some(p);
            }
            let mut order: Vec<usize> = (0..audits.len()).collect();
            order.sort_by(|&i, &j| {
                let (pi, pj) = (audits[i].p_value.unwrap_or(1.0), audits[j].p_value.unwrap_or(1.0));
                pi.total_cmp(&pj)
                    .then_with(|| audits[j].statistic.unwrap_or(0.0).total_cmp(&audits[i].statistic.unwrap_or(0.0)))
                    .then(i.cmp(&j))
            });
            for &i in order.iter().take(drop_n) {
                audits[i].dropped = true;
            }
            format!("chi_squared(drop_n={drop_n}, {})", if cells { "cells" } else { "positions" })
        }
        FilterMethod::FirstK { k } => {
            for (a, (s, strings)) in audits.iter_mut().zip(&by_subject) {
                let mut rounds: Vec<usize> = strings.iter().map(|r| r.round).collect();
                rounds.sort_unstable();
                let cutoff = rounds.get(k.saturating_sub(1).min(rounds.len() - 1)).copied().unwrap_or(0);
                keep_rounds.insert(s, if k == 0 { 0 } else { cutoff });
                a.kept_rows = if k == 0 { 0 } else { rounds.iter().filter(|&&r| r <= cutoff).count() };
                a.dropped = a.kept_rows == 0;
            }
            format!("first_k(k={k})")
        }
    };
    let dropped: BTreeMap<&str, bool> = audits.iter().map(|a| (a.subject.as_str(), a.dropped)).collect();
    let kept: Vec<FlipString> = rows
        .iter()
        .filter(|r| !dropped[r.subject.as_str()])
        .filter(|r| match method {
            FilterMethod::FirstK { k } => k > 0 && r.round <= keep_rounds[r.subject.as_str()],
            _ => true,
        })
        .cloned()
        .collect();
    for a in &mut audits {
        if a.dropped {
            a.kept_rows = 0;
        }
    }
    let audit = FilterAudit {
        method: name,
        subjects_in: audits.len(),
        subjects_out: audits.iter().filter(|a| !a.dropped).count(),
        rows_in: rows.len(),
        rows_out: kept.len(),
        subjects: audits,
    };
    Ok((kept, audit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(subject: &str, round: usize, flips: &str) -> FlipString {
        FlipString {
            subject: subject.into(),
            round,
            flips: crate::csvio::parse_flips(flips).unwrap(),
        }
    }

    #[test]
    fn repeat_cutoff_drops_constant_subject() {
        let mut rows: Vec<FlipString> = (1..=50).map(|r| s("a", r, "HHTHTTHT")).collect();
        rows.push(s("b", 1, "HTHTHTHT"));
        let (kept, audit) = filter_subjects(&rows, FilterMethod::RepeatCutoff { max_repeats: 5 }).unwrap();
        assert_eq!(kept.len(), 1);
        assert!(audit.subjects[0].dropped);
    }

    #[test]
    fn first_k_keeps_lowest_rounds() {
        let rows: Vec<FlipString> = (1..=50).rev().map(|r| s("a", r, "HHTHTTHT")).collect();
        let (kept, _) = filter_subjects(&rows, FilterMethod::FirstK { k: 25 }).unwrap();
        assert_eq!(kept.len(), 25);
        assert!(kept.iter().all(|r| r.round <= 25));
    }

    #[test]
    fn position_statistic_of_all_heads() {
        let rows: Vec<FlipString> = (1..=10).map(|r| s("a", r, "HHHHHHHH")).collect();
        let refs: Vec<&FlipString> = rows.iter().collect();
        let (stat, p) = position_chi_squared(&refs);
        assert_eq!(stat, 80.0);
        assert!(p < 1e-10);
    }
}
