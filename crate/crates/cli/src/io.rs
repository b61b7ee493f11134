use std::fs::File;
use std::path::Path;

use dtks::geometry::in_support;
use dtks::{ObservationSet, Point, StudyWindow};
use serde::Serialize;

use crate::CliError;

/// Result of reading an observation file.
pub struct Loaded {
    pub obs: ObservationSet,
    /// Rows skipped by `--drop-invalid`.
    pub dropped: usize,
}

/// Reads a `x,t` CSV. Rows outside the observable region are an error
/// unless `drop_invalid` is set, in which case they are skipped.
pub fn read_observations(path: &Path, w: &StudyWindow, drop_invalid: bool) -> Result<Loaded, CliError> {
    let file = File::open(path).map_err(|e| CliError::Read(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| parse_error(&e, 1))?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "t" {
        return Err(CliError::Parse { line: 1, message: format!("expected header 'x,t', found '{}'", headers.iter().collect::<Vec<_>>().join(",")) });
    }

    let mut points = Vec::new();
    let mut dropped = 0;
    for (row, rec) in rdr.records().enumerate() {
        let row = row + 1;
        let rec = rec.map_err(|e| parse_error(&e, row + 1))?;
        let line = rec.position().map_or(row as u64 + 1, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64, CliError> {
            let v: f64 = rec[i]
                .parse()
                .map_err(|_| CliError::Parse { line, message: format!("column {name}: '{}' is not a number", &rec[i]) })?;
            if !v.is_finite() {
                return Err(CliError::Parse { line, message: format!("column {name}: '{}' is not finite", &rec[i]) });
            }
            Ok(v)
        };
        let p = Point::new(field(0, "x")?, field(1, "t")?);
        if !in_support(w, p) {
            if drop_invalid {
                dropped += 1;
                continue;
            }
            return Err(CliError::Invalid(format!(
                "row {row} (line {line}): observation ({}, {}) is outside the observable region for G = {}, s = {}",
                p.x,
                p.t,
                w.g(),
                w.s()
            )));
        }
        points.push(p);
    }
    let obs = ObservationSet::new(points, *w).map_err(CliError::data)?;
    Ok(Loaded { obs, dropped })
}

fn parse_error(e: &csv::Error, fallback_line: usize) -> CliError {
    let line = e.position().map_or(fallback_line as u64, |p| p.line());
    CliError::Parse { line, message: e.to_string() }
}

/// Writes `x,t` rows with 17 significant digits, enough to read back the
/// same doubles.
pub fn write_observations(path: &Path, points: &[Point]) -> Result<(), CliError> {
    let write_err = |e: csv::Error| CliError::Write(path.display().to_string(), e.to_string());
    let mut wtr = csv::Writer::from_path(path).map_err(write_err)?;
    wtr.write_record(["x", "t"]).map_err(write_err)?;
    for p in points {
        wtr.write_record([format!("{:.16e}", p.x), format!("{:.16e}", p.t)]).map_err(write_err)?;
    }
    wtr.flush().map_err(|e| CliError::Write(path.display().to_string(), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialises");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Write(path.display().to_string(), e.to_string()))
}
