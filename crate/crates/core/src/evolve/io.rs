use std::io::{Read, Write};

use super::Candidate;
use crate::error::{Error, Result};
use crate::search_space::ArchConfig;
use crate::train::Evaluation;

pub const SEARCH_HEADER: [&str; 9] = [
    "generation",
    "index",
    "genome_json",
    "params",
    "flops",
    "aepe",
    "f1_all",
    "l_d",
    "fitness",
];

pub const PARETO_HEADER: [&str; 3] = ["x", "y", "genome_json"];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Usage(format!("csv: {other:?}")),
    }
}

pub fn write_search_history<W: Write>(out: W, rows: &[Candidate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SEARCH_HEADER).map_err(csv_err)?;
    for c in rows {
        w.write_record([
            c.generation.to_string(),
            c.index.to_string(),
            c.genome.to_json(),
            c.params.to_string(),
            c.flops.to_string(),
            c.metrics.aepe.to_string(),
            c.metrics.f1_all.to_string(),
            c.metrics.l_d.map(|v| v.to_string()).unwrap_or_default(),
            c.fitness.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a search history CSV; errors name the 1-based line.
pub fn read_search_history<R: Read>(input: R, path: &str) -> Result<Vec<Candidate>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let perr = |line: u64, message: String| Error::ParseLine {
        path: path.to_string(),
        line,
        message,
    };
    let headers = rd.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if headers.iter().ne(SEARCH_HEADER) {
        return Err(perr(1, format!("expected header {}", SEARCH_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != SEARCH_HEADER.len() {
            return Err(perr(line, format!("expected {} fields, got {}", SEARCH_HEADER.len(), rec.len())));
        }
        fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> std::result::Result<T, String> {
            rec[i]
                .parse()
                .map_err(|_| format!("field {} is not a number: {:?}", SEARCH_HEADER[i], &rec[i]))
        }
        let parsed = (|| -> std::result::Result<Candidate, String> {
            Ok(Candidate {
                generation: field(&rec, 0)?,
                index: field(&rec, 1)?,
                genome: ArchConfig::from_json(&rec[2]).map_err(|e| e.to_string())?,
                params: field(&rec, 3)?,
                flops: field(&rec, 4)?,
                metrics: Evaluation {
                    aepe: field(&rec, 5)?,
                    f1_all: field(&rec, 6)?,
                    l_d: if rec[7].is_empty() { None } else { Some(field(&rec, 7)?) },
                },
                fitness: field(&rec, 8)?,
            })
        })();
        rows.push(parsed.map_err(|m| perr(line, m))?);
    }
    Ok(rows)
}

pub fn write_pareto<W: Write>(out: W, points: &[(f64, f64, ArchConfig)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PARETO_HEADER).map_err(csv_err)?;
    for (x, y, g) in points {
        w.write_record([x.to_string(), y.to_string(), g.to_json()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
