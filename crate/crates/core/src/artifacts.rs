//! CSV and JSON artifacts with an embedded provenance header.
//!
//! CSV files start with one `# `-prefixed JSON line holding the resolved
//! configuration, seeds, solver tolerances and library version; JSON files
//! carry the same object under `header`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::curvature::CG_TOL;
use crate::error::{Error, Result};
use crate::identifiability::RANK_TOL;
use crate::VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub artifact: String,
    pub version: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub tolerances: Value,
}

impl Header {
    pub fn new<C: Serialize>(artifact: &str, config: &C, seeds: Vec<u64>, tolerances: Value) -> Result<Self> {
        Ok(Self {
            artifact: artifact.to_string(),
            version: VERSION.to_string(),
            config: serde_json::to_value(config)?,
            seeds,
            tolerances,
        })
    }
}

/// Tolerances shared by every artifact; callers may merge extra keys.
pub fn base_tolerances() -> Value {
    let sk = crate::entropic_ot::SinkhornOptions::default();
    serde_json::json!({
        "sinkhorn_tol": sk.tol,
        "sinkhorn_max_iter": sk.max_iter,
        "simplex_support_tol_rel": 1e-10,
        "rank_tol_rel": RANK_TOL,
        "cg_tol_rel": CG_TOL,
    })
}

pub fn with_extra(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

pub fn write_csv_artifact<P: AsRef<Path>, T: Serialize>(path: P, header: &Header, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# {}", serde_json::to_string(header)?)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV artifact into its header, column names and string records.
pub fn read_csv_artifact<P: AsRef<Path>>(path: P) -> Result<(Header, Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::input("artifact header line is missing"))?;
    let header: Header = serde_json::from_str(json.trim_end())?;
    let mut csv_reader = csv::Reader::from_reader(reader);
    let columns = csv_reader.headers()?.iter().map(str::to_string).collect();
    let records = csv_reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, columns, records))
}

#[derive(Serialize, Deserialize)]
pub struct JsonArtifact<T> {
    pub header: Header,
    pub result: T,
}

pub fn write_json_artifact<P: AsRef<Path>, T: Serialize>(path: P, header: &Header, result: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        &mut out,
        &JsonArtifact {
            header: header.clone(),
            result,
        },
    )?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
