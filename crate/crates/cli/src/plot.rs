//! Plot-ready CSV series.

use std::io::{Read, Write};

use heraldsim_core::experiments::SweepPoint;
use heraldsim_core::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub y: f64,
    pub error: Option<f64>,
}

/// Two-column series; an `error` column is added when any point carries one.
/// An empty series produces the header alone.
pub fn write_series<W: Write>(
    writer: W,
    x_name: &str,
    y_name: &str,
    points: &[SeriesPoint],
) -> Result<(), Error> {
    let with_error = points.iter().any(|p| p.error.is_some());
    let mut w = csv::Writer::from_writer(writer);
    if with_error {
        w.write_record([x_name, y_name, "error"])?;
    } else {
        w.write_record([x_name, y_name])?;
    }
    for p in points {
        let mut rec = vec![p.x.to_string(), p.y.to_string()];
        if with_error {
            rec.push(p.error.map(|e| e.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a series written by [`write_series`].
pub fn read_series<R: Read>(reader: R) -> Result<Vec<SeriesPoint>, Error> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::MalformedData {
            line: i + 2,
            message: m,
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        out.push(SeriesPoint {
            x: num(&rec[0])?,
            y: num(&rec[1])?,
            error: match rec.get(2) {
                Some(s) if !s.is_empty() => Some(num(s)?),
                _ => None,
            },
        });
    }
    Ok(out)
}

pub const SWEEP_HEADER: [&str; 7] = [
    "t1",
    "t2",
    "herald_probability",
    "herald_rate_relative",
    "P_direct",
    "P_estimator",
    "quadratic_line",
];

pub fn write_sweep_csv<W: Write>(writer: W, points: &[SweepPoint]) -> Result<(), Error> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(SWEEP_HEADER)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepPoint>, Error> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
