//! Long-format CSV (`subject_id,variable,time,value`) reading and writing.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use vdmfpca::dataset::{FunctionalDataset, Series, SubjectRecord};

use crate::error::{CliError, CliResult};

pub const LONG_HEADER: [&str; 4] = ["subject_id", "variable", "time", "value"];

/// What was dropped while loading.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub rows: usize,
    /// Rows outside the variable's plausible range.
    pub rows_out_of_range: usize,
    /// Subjects below the minimum observation count in some variable.
    pub below_min_obs: Vec<String>,
    /// Subjects missing a variable or left with fewer than 2 points.
    pub incomplete: Vec<String>,
}

impl LoadReport {
    pub fn excluded(&self) -> usize {
        self.below_min_obs.len() + self.incomplete.len()
    }
}

#[derive(Default)]
struct Raw {
    /// variable -> (time, value, line)
    series: HashMap<usize, Vec<(f64, f64, u64)>>,
}

/// Read a long CSV into a dataset. Subjects and variables keep the order of
/// their first appearance; times are sorted per series. The domain length of a
/// subject is its largest observed time.
pub fn read_long_csv(
    path: &Path,
    min_obs: usize,
    plausible: &BTreeMap<String, [f64; 2]>,
) -> CliResult<(FunctionalDataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let row_error = |line: u64, message: String| CliError::Row {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader
        .headers()
        .map_err(|e| row_error(1, e.to_string()))?
        .clone();
    let columns: Vec<usize> = LONG_HEADER
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| row_error(1, format!("missing column {name}")))
        })
        .collect::<CliResult<_>>()?;

    let mut report = LoadReport::default();
    let mut subject_order: Vec<String> = Vec::new();
    let mut subjects: HashMap<String, Raw> = HashMap::new();
    let mut variables: Vec<String> = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_error(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        report.rows += 1;
        let field = |i: usize| record.get(columns[i]).unwrap_or("");
        let id = field(0);
        if id.is_empty() {
            return Err(row_error(line, "empty subject_id".into()));
        }
        let variable = field(1);
        if variable.is_empty() {
            return Err(row_error(line, "empty variable".into()));
        }
        let parse = |i: usize| -> CliResult<f64> {
            let s = field(i);
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(row_error(
                    line,
                    format!("{} is not a finite number: {s:?}", LONG_HEADER[i]),
                )),
            }
        };
        let time = parse(2)?;
        let value = parse(3)?;
        if time < 0.0 {
            return Err(row_error(line, format!("negative time {time}")));
        }
        if let Some([lo, hi]) = plausible.get(variable) {
            if value < *lo || value > *hi {
                report.rows_out_of_range += 1;
                continue;
            }
        }
        let v = match variables.iter().position(|x| x == variable) {
            Some(v) => v,
            None => {
                variables.push(variable.to_string());
                variables.len() - 1
            }
        };
        let raw = subjects.entry(id.to_string()).or_insert_with(|| {
            subject_order.push(id.to_string());
            Raw::default()
        });
        raw.series.entry(v).or_default().push((time, value, line));
    }
    if variables.is_empty() {
        return Err(CliError::Data(format!(
            "{} contains no usable rows",
            path.display()
        )));
    }

    let mut records = Vec::new();
    for id in subject_order {
        let mut raw = subjects.remove(&id).unwrap();
        let mut series = Vec::with_capacity(variables.len());
        let mut complete = true;
        let mut enough = true;
        for v in 0..variables.len() {
            let mut points = raw.series.remove(&v).unwrap_or_default();
            points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(row_error(
                    w[1].2,
                    format!(
                        "duplicate time {} for subject {id} variable {}",
                        w[1].0, variables[v]
                    ),
                ));
            }
            if points.len() < 2 {
                complete = false;
            }
            if points.len() < min_obs {
                enough = false;
            }
            series.push(Series::new(
                points.iter().map(|p| p.0).collect(),
                points.iter().map(|p| p.1).collect(),
            ));
        }
        if !enough {
            report.below_min_obs.push(id);
            continue;
        }
        if !complete {
            report.incomplete.push(id);
            continue;
        }
        let domain_length = series
            .iter()
            .filter_map(|s| s.times.last().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        if !(domain_length > 0.0) {
            report.incomplete.push(id);
            continue;
        }
        records.push(SubjectRecord {
            subject_id: id,
            domain_length,
            series,
        });
    }
    let dataset =
        FunctionalDataset::new(variables, records).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((dataset, report))
}

/// Write a dataset as long CSV, subject by subject, variable by variable.
pub fn write_long_csv(dataset: &FunctionalDataset, path: &Path) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(LONG_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for s in dataset.subjects() {
        for (name, series) in dataset.variables().iter().zip(&s.series) {
            for (t, x) in series.times.iter().zip(&series.values) {
                w.write_record([s.subject_id.as_str(), name, &t.to_string(), &x.to_string()])
                    .map_err(|e| csv_error(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::output(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::output(path, std::io::Error::other(e.to_string()))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut file = File::create(path).map_err(|e| CliError::output(path, e))?;
    serde_json::to_writer_pretty(&mut file, value)
        .map_err(|e| CliError::output(path, std::io::Error::other(e.to_string())))?;
    file.write_all(b"\n").map_err(|e| CliError::output(path, e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::output(path, e))
}
