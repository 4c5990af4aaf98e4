//! File writers shared by every runner.
//!
//! CSV files start with one `# ` comment line holding the resolved config as
//! JSON, followed by a header row and the data rows.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Recorded in every summary: ratio MSE averages over classes.
pub const MSE_NORMALIZATION: &str = "mean_over_classes";

pub fn write_csv<S: Serialize>(path: &Path, config: &S, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# {}", serde_json::to_string(config)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], skipping the config line.
pub fn read_csv(path: &Path) -> Result<(serde_json::Value, Vec<csv::StringRecord>)> {
    let text = std::fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let config = serde_json::from_str(first.trim_start_matches("# "))?;
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    let rows = reader.records().collect::<Result<Vec<_>, _>>()?;
    Ok((config, rows))
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let cfg = serde_json::json!({"seed": 3, "name": "a,b"});
        let rows = vec![vec!["1".into(), "x".into()], vec!["2".into(), "".into()]];
        write_csv(&path, &cfg, &["n", "s"], &rows).unwrap();
        let (back, records) = read_csv(&path).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(records.len(), 2);
        assert_eq!(&records[1][1], "");
        assert_eq!(&records[0][0], "1");
    }

    #[test]
    fn floats_print_round_trip() {
        let v = 0.1 + 0.2;
        assert_eq!(fmt_opt(Some(v)).parse::<f64>().unwrap(), v);
        assert_eq!(fmt_opt(None), "");
    }
}
