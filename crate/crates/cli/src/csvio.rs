//! CSV schemas for the three domains.

use std::io::{Read, Write};

use completeness_core::synth::{strings_to_dataset, FlipString};
use completeness_core::{Dataset, Feature, Observation, Outcome, ProblemKind};

use crate::CliError;

pub const RISK_HEADER: &[&str] = &["lottery_id", "z1", "z2", "p", "ce", "subject_id"];
pub const SEQ_HEADER: &[&str] = &["subject_id", "round", "flips"];
pub const FLIPS_LEN: usize = 8;

pub fn games_header() -> Vec<String> {
    let mut h = vec!["game_id".to_string()];
    for who in ["r", "c"] {
        for i in 1..=3 {
            for j in 1..=3 {
                h.push(format!("{who}{i}{j}"));
            }
        }
    }
    h.push("action".into());
    h.push("subject_id".into());
    h
}

fn header_for(kind: ProblemKind) -> Vec<String> {
    match kind {
        ProblemKind::Risk => RISK_HEADER.iter().map(|s| s.to_string()).collect(),
        ProblemKind::Games => games_header(),
        ProblemKind::Sequences => SEQ_HEADER.iter().map(|s| s.to_string()).collect(),
        ProblemKind::Custom => Vec::new(),
    }
}

fn schema(row: usize, column: &str, message: impl Into<String>) -> CliError {
    CliError::Schema {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

struct Records {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_records(input: impl Read, kind: ProblemKind) -> Result<Records, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| schema(0, "header", e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let expected = header_for(kind);
    if header != expected {
        let col = expected
            .iter()
            .zip(header.iter().map(Some).chain(std::iter::repeat(None)))
            .find(|(e, h)| h.map(String::as_str) != Some(e.as_str()))
            .map(|(e, _)| e.clone())
            .unwrap_or_else(|| header.get(expected.len()).cloned().unwrap_or_default());
        return Err(schema(
            0,
            &col,
            format!("header must be `{}`, found `{}`", expected.join(","), header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| schema(i + 1, "", e.to_string()))?;
        if rec.len() != expected.len() {
            let col = expected.get(rec.len()).cloned().unwrap_or_else(|| "extra".into());
            return Err(schema(i + 1, &col, format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(schema(1, "", "no data rows"));
    }
    Ok(Records { header, rows })
}

fn field<'a>(rec: &'a csv::StringRecord, header: &[String], i: usize, row: usize) -> Result<&'a str, CliError> {
    let v = rec.get(i).unwrap_or("").trim();
    if v.is_empty() {
        return Err(schema(row, &header[i], "empty field"));
    }
    Ok(v)
}

fn number(rec: &csv::StringRecord, header: &[String], i: usize, row: usize) -> Result<f64, CliError> {
    let v = field(rec, header, i, row)?;
    let x: f64 = v
        .parse()
        .map_err(|_| schema(row, &header[i], format!("`{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(schema(row, &header[i], format!("`{v}` is not finite")));
    }
    Ok(x)
}

pub fn parse_flips(s: &str) -> Option<Vec<bool>> {
    if s.len() != FLIPS_LEN {
        return None;
    }
    s.chars()
        .map(|c| match c {
            'H' => Some(true),
            'T' => Some(false),
            _ => None,
        })
        .collect()
}

/// Sequence rows in file order.
pub fn read_strings(input: impl Read) -> Result<Vec<FlipString>, CliError> {
    let r = read_records(input, ProblemKind::Sequences)?;
    r.rows
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let row = i + 1;
            let subject = field(rec, &r.header, 0, row)?.to_string();
            let round_s = field(rec, &r.header, 1, row)?;
            let round: usize = round_s
                .parse()
                .map_err(|_| schema(row, "round", format!("`{round_s}` is not a non-negative integer")))?;
            let f = field(rec, &r.header, 2, row)?;
            let flips = parse_flips(f)
                .ok_or_else(|| schema(row, "flips", format!("`{f}` is not an {FLIPS_LEN}-character H/T string")))?;
            Ok(FlipString { subject, round, flips })
        })
        .collect()
}

pub fn read_dataset(input: impl Read, kind: ProblemKind) -> Result<Dataset, CliError> {
    if kind == ProblemKind::Sequences {
        return Ok(strings_to_dataset(&read_strings(input)?)?);
    }
    let r = read_records(input, kind)?;
    let mut obs = Vec::with_capacity(r.rows.len());
    for (i, rec) in r.rows.iter().enumerate() {
        let row = i + 1;
        let o = match kind {
            ProblemKind::Risk => {
                let z1 = number(rec, &r.header, 1, row)?;
                let z2 = number(rec, &r.header, 2, row)?;
                let p = number(rec, &r.header, 3, row)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(schema(row, "p", format!("probability {p} outside [0, 1]")));
                }
                let ce = number(rec, &r.header, 4, row)?;
                Observation::new(completeness_core::FeatureVector::reals(&[z1, z2, p]), Outcome::Real(ce))
                    .with_instance(field(rec, &r.header, 0, row)?)
                    .with_subject(field(rec, &r.header, 5, row)?)
            }
            ProblemKind::Games => {
                let mut payoffs = Vec::with_capacity(18);
                for c in 1..=18 {
                    payoffs.push(number(rec, &r.header, c, row)?);
                }
                let a = field(rec, &r.header, 19, row)?;
                let action: u8 = match a {
                    "1" => 0,
                    "2" => 1,
                    "3" => 2,
                    _ => return Err(schema(row, "action", format!("`{a}` is not one of 1, 2, 3"))),
                };
                Observation::new(completeness_core::FeatureVector::reals(&payoffs), Outcome::Action(action))
                    .with_instance(field(rec, &r.header, 0, row)?)
                    .with_subject(field(rec, &r.header, 20, row)?)
            }
            ProblemKind::Sequences | ProblemKind::Custom => unreachable!("handled above"),
        };
        obs.push(o);
    }
    Ok(Dataset::new(obs, kind)?)
}

fn real(f: Option<&Feature>) -> f64 {
    f.and_then(Feature::as_real).unwrap_or(f64::NAN)
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Write risk or games observations in their schema.
pub fn write_dataset(data: &Dataset, out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header_for(data.kind())).map_err(io)?;
    for o in data.iter() {
        let instance = o.instance_id.clone().unwrap_or_default();
        let subject = o.subject_id.clone().unwrap_or_default();
        let mut rec = vec![instance];
        match (data.kind(), &o.y) {
            (ProblemKind::Risk, Outcome::Real(ce)) => {
                for i in 0..3 {
                    rec.push(real(o.x.get(i)).to_string());
                }
                rec.push(ce.to_string());
            }
            (ProblemKind::Games, Outcome::Action(a)) => {
                for i in 0..18 {
                    rec.push(real(o.x.get(i)).to_string());
                }
                rec.push((a + 1).to_string());
            }
            _ => return Err(CliError::Io(format!("cannot write {} data in this schema", data.kind().name()))),
        }
        rec.push(subject);
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_strings(strings: &[FlipString], out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SEQ_HEADER).map_err(io)?;
    for s in strings {
        w.write_record([s.subject.clone(), s.round.to_string(), s.to_ht()]).map_err(io)?;
    }
    w.flush().map_err(io)
}
