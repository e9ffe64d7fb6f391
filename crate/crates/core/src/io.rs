//! File formats: long and aggregate CSV input, spectrum and result tables,
//! and the JSON documents for fitted parameters and forecasts.
//!
//! Output is UTF-8 with LF newlines; floats are printed in their shortest
//! round-trip form so files are reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::AccuracyReport;
use crate::data::{ArrivalCurve, FreqSpectrum, TriggerData};
use crate::error::{Error, Result};
use crate::fit::{FitMethod, FitOutcome};
use crate::model::{ForecastReport, FreqInterval, HyperParams, Interval};

pub const LONG_HEADER: [&str; 3] = ["day", "user", "count"];
pub const AGGREGATE_HEADER: [&str; 2] = ["day", "new_users"];
pub const SCHEMA_VERSION: u32 = 1;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader)
}

fn line_of(record: &csv::StringRecord, fallback: u64) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(fallback)
}

/// Read rows of `expected.len()` fields after checking the header.
fn read_rows<R: Read>(reader: R, expected: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("missing header `{}`", expected.join(",")),
            })
        }
    };
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must be exactly `{}`", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let fallback = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(fallback),
            msg: e.to_string(),
        })?;
        let line = line_of(&rec, fallback);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != expected.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(line: u64, name: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {name} `{raw}`"),
    })
}

/// Parse `day,user,count` rows. Duplicate `(day, user)` rows are summed and
/// zero counts dropped with a warning. The data length is `days` if given,
/// otherwise the last day with an entry.
pub fn read_long_csv<R: Read>(reader: R, days: Option<u32>) -> Result<TriggerData> {
    let mut builder = TriggerData::builder();
    for (line, rec) in read_rows(reader, &LONG_HEADER)? {
        let day: u32 = parse_field(line, "day", &rec[0])?;
        if day == 0 {
            return Err(Error::Parse {
                line,
                msg: "days start at 1".into(),
            });
        }
        let user = &rec[1];
        if user.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty user id".into(),
            });
        }
        let count: u64 = parse_field(line, "count", &rec[2])?;
        builder.add(day, user, count).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
    }
    if builder.dropped_zeros() > 0 {
        log::warn!("dropped {} rows with zero count", builder.dropped_zeros());
    }
    builder.build(days)
}

pub fn parse_long_csv(path: &Path) -> Result<TriggerData> {
    read_long_csv(open(path)?, None)
}

/// Canonical long CSV: rows sorted by day, then user id.
pub fn write_long_csv<W: Write>(data: &TriggerData, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(LONG_HEADER)?;
    for (day, user, count) in data.entries() {
        w.write_record([day.to_string().as_str(), user, count.to_string().as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_long_csv(data: &TriggerData, path: &Path) -> Result<()> {
    write_long_csv(data, create(path)?)
}

/// Parse `day,new_users` rows into a cumulative arrival curve. Rows may come
/// in any order; missing days count as zero arrivals.
pub fn read_aggregate_csv<R: Read>(reader: R) -> Result<ArrivalCurve> {
    let mut daily: BTreeMap<u32, u64> = BTreeMap::new();
    for (line, rec) in read_rows(reader, &AGGREGATE_HEADER)? {
        let day: u32 = parse_field(line, "day", &rec[0])?;
        if day == 0 {
            return Err(Error::Parse {
                line,
                msg: "days start at 1".into(),
            });
        }
        let n: u64 = parse_field(line, "new_users", &rec[1])?;
        if daily.insert(day, n).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("day {day} appears twice"),
            });
        }
    }
    let last = daily.keys().next_back().copied().unwrap_or(0);
    let counts: Vec<u64> = (1..=last).map(|d| daily.get(&d).copied().unwrap_or(0)).collect();
    Ok(ArrivalCurve::from_daily(&counts))
}

pub fn parse_aggregate_csv(path: &Path) -> Result<ArrivalCurve> {
    read_aggregate_csv(open(path)?)
}

pub fn write_aggregate_csv<W: Write>(arrivals: &ArrivalCurve, mut writer: W) -> Result<()> {
    writeln!(writer, "{}", AGGREGATE_HEADER.join(","))?;
    for (i, n) in arrivals.daily().iter().enumerate() {
        writeln!(writer, "{},{n}", i + 1)?;
    }
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(spectrum: &FreqSpectrum, mut writer: W) -> Result<()> {
    writeln!(writer, "k,users")?;
    for (k, n) in spectrum.iter() {
        writeln!(writer, "{k},{n}")?;
    }
    Ok(())
}

/// Fitted hyperparameters as stored in `params.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema_version: u32,
    pub params: HyperParams,
    pub method: FitMethod,
    pub pilot_days: u32,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl ParamsFile {
    pub fn from_outcome(outcome: &FitOutcome, pilot_days: u32) -> Self {
        ParamsFile {
            schema_version: SCHEMA_VERSION,
            params: outcome.params,
            method: outcome.method,
            pilot_days,
            objective: outcome.objective,
            converged: outcome.converged,
            iterations: outcome.iterations,
            warnings: outcome.warnings.clone(),
        }
    }
}

fn write_json<T: Serialize, W: Write>(value: &T, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn write_params_json<W: Write>(file: &ParamsFile, writer: W) -> Result<()> {
    write_json(file, writer)
}

pub fn save_params_json(file: &ParamsFile, path: &Path) -> Result<()> {
    write_json(file, create(path)?)
}

/// Load `params.json`; a bare `{beta, sigma, c, r}` object is accepted too.
pub fn load_params_json(path: &Path) -> Result<HyperParams> {
    let value: serde_json::Value = serde_json::from_reader(open(path)?)?;
    let params: HyperParams = match value.get("params") {
        Some(p) => serde_json::from_value(p.clone())?,
        None => serde_json::from_value(value)?,
    };
    params.validate()?;
    Ok(params)
}

/// `forecast.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastFile {
    pub schema_version: u32,
    pub pilot_days: u32,
    pub horizon: u32,
    pub params: HyperParams,
    pub new_users: Interval,
    pub new_by_freq: Vec<FreqInterval>,
    pub old_sum: Option<Interval>,
    pub total: Option<Interval>,
    pub level: f64,
    pub seed: u64,
}

impl ForecastFile {
    pub fn new(report: &ForecastReport, params: HyperParams, seed: u64) -> Self {
        ForecastFile {
            schema_version: SCHEMA_VERSION,
            pilot_days: report.pilot_days,
            horizon: report.horizon,
            params,
            new_users: report.new_users,
            new_by_freq: report.new_by_freq.clone(),
            old_sum: report.old_sum,
            total: report.total,
            level: report.level,
            seed,
        }
    }
}

pub fn write_forecast_json<W: Write>(file: &ForecastFile, writer: W) -> Result<()> {
    write_json(file, writer)
}

/// Plain-text rendering of a forecast.
pub fn write_forecast_text<W: Write>(file: &ForecastFile, mut w: W) -> Result<()> {
    let row = |w: &mut W, name: &str, iv: &Interval| -> std::io::Result<()> {
        writeln!(w, "{name:<16} {:>14.3} {:>12.1} {:>12.1}", iv.mean, iv.lo, iv.hi)
    };
    writeln!(
        w,
        "pilot {} days, horizon {} days, level {}",
        file.pilot_days, file.horizon, file.level
    )?;
    writeln!(w, "{:<16} {:>14} {:>12} {:>12}", "quantity", "mean", "lo", "hi")?;
    row(&mut w, "new_users", &file.new_users)?;
    for e in &file.new_by_freq {
        let iv = Interval {
            mean: e.mean,
            lo: e.lo,
            hi: e.hi,
        };
        row(&mut w, &format!("new_users[j={}]", e.j), &iv)?;
    }
    if let Some(iv) = &file.old_sum {
        row(&mut w, "old_sum", iv)?;
    }
    if let Some(iv) = &file.total {
        row(&mut w, "total", iv)?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Benchmark reports as CSV; `names` labels datasets by index.
pub fn write_results_csv<W: Write>(reports: &[AccuracyReport], names: &[String], with_timings: bool, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec![
        "dataset",
        "method",
        "d0",
        "d1",
        "observed",
        "predicted",
        "v",
        "observed_total",
        "predicted_total",
        "v_tilde",
        "error",
    ];
    if with_timings {
        header.push("runtime_ms");
    }
    w.write_record(&header)?;
    for r in reports {
        let name = names.get(r.dataset).cloned().unwrap_or_else(|| r.dataset.to_string());
        let mut row = vec![
            name,
            r.method.to_string(),
            r.d0.to_string(),
            r.d1.to_string(),
            opt(r.observed),
            opt(r.predicted),
            opt(r.v),
            opt(r.observed_total),
            opt(r.predicted_total),
            opt(r.v_tilde),
            r.error.clone().unwrap_or_default(),
        ];
        if with_timings {
            row.push(opt(r.runtime_ms));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `level,fraction` table.
pub fn write_survival_csv<W: Write>(curve: &[(f64, f64)], mut writer: W) -> Result<()> {
    writeln!(writer, "level,fraction")?;
    for (l, f) in curve {
        writeln!(writer, "{l},{f}")?;
    }
    Ok(())
}
