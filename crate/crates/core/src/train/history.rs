use std::io::{Read, Write};

use super::TrainMode;
use crate::error::{Error, Result};
use crate::search_space::ArchConfig;

pub const HISTORY_HEADER: [&str; 7] = ["step", "mode", "genome_json", "aepe", "f1_all", "l_flow", "l_d"];

/// One training step: the genome it used, its losses before the update and,
/// on eval steps, validation metrics of the weights it started from.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub mode: TrainMode,
    pub genome: ArchConfig,
    pub aepe: Option<f64>,
    pub f1_all: Option<f64>,
    pub l_flow: f64,
    pub l_d: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows as CSV; `header` controls whether the header line leads.
pub fn write_history<W: Write>(out: W, rows: &[HistoryRow], header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(HISTORY_HEADER).map_err(csv_err)?;
    }
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.mode.name().to_string(),
            r.genome.to_json(),
            opt(r.aepe),
            opt(r.f1_all),
            r.l_flow.to_string(),
            opt(r.l_d),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Usage(format!("csv: {other:?}")),
    }
}

/// Parses a history CSV; errors name the 1-based line.
pub fn read_history<R: Read>(input: R, path: &str) -> Result<Vec<HistoryRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let perr = |line: u64, message: String| Error::ParseLine {
        path: path.to_string(),
        line,
        message,
    };
    let headers = rd.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if headers.iter().ne(HISTORY_HEADER) {
        return Err(perr(1, format!("expected header {}", HISTORY_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 7 {
            return Err(perr(line, format!("expected 7 fields, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| perr(line, format!("field {} is not a number: {s:?}", HISTORY_HEADER[i])))
        };
        rows.push(HistoryRow {
            step: rec[0].parse().map_err(|_| perr(line, format!("bad step {:?}", &rec[0])))?,
            mode: rec[1].parse().map_err(|_| perr(line, format!("bad mode {:?}", &rec[1])))?,
            genome: ArchConfig::from_json(&rec[2]).map_err(|e| perr(line, e.to_string()))?,
            aepe: num(3)?,
            f1_all: num(4)?,
            l_flow: num(5)?.ok_or_else(|| perr(line, "l_flow is empty".into()))?,
            l_d: num(6)?,
        });
    }
    Ok(rows)
}
