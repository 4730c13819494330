//! Machine report (JSON) and aligned text tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub result: Value,
    #[serde(skip)]
    pub text: String,
}

impl Report {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>, result: impl Serialize, text: String) -> Result<Self, CliError> {
        Ok(Self {
            tool: "completeness".into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            config,
            result: serde_json::to_value(result).map_err(|e| CliError::Io(e.to_string()))?,
            text,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Write `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json())?;
        fs::write(dir.join("report.txt"), &self.text)?;
        Ok(())
    }
}

/// Integer percentage, halves rounded away from zero.
pub fn percent(ratio: f64) -> String {
    if ratio.is_finite() {
        format!("{}%", (ratio * 100.0).round() as i64)
    } else {
        "n/a".into()
    }
}

/// Fixed decimals, halves rounded away from zero.
pub fn fixed(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return "n/a".into();
    }
    let scale = 10f64.powi(decimals as i32);
    let r = (x * scale).round() / scale;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.decimals$}")
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    /// First column left-aligned, the rest right-aligned.
    pub fn render(&self) -> String {
        let cols = self.headers.len();
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate().take(cols) {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, w) in widths.iter().enumerate() {
                let c = cells.get(i).map(String::as_str).unwrap_or("");
                if i == 0 {
                    s.push_str(&format!("{c:<w$}"));
                } else {
                    s.push_str(&format!("  {c:>w$}"));
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&self.headers);
        let total: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(percent(0.125), "13%");
        assert_eq!(percent(-0.125), "-13%");
        assert_eq!(percent(0.9653), "97%");
        assert_eq!(fixed(2.5, 0), "3");
        assert_eq!(fixed(0.125, 2), "0.13");
        assert_eq!(fixed(-0.00001, 2), "0.00");
    }

    #[test]
    fn table_alignment() {
        let mut t = Table::new(&["model", "error"]);
        t.push(vec!["naive".into(), "0.25".into()]);
        t.push(vec!["rv".into(), "0.2492".into()]);
        let s = t.render();
        assert!(s.contains("naive    0.25\n"));
        assert!(s.contains("rv     0.2492\n"));
    }
}
