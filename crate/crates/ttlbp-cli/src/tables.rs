//! Deterministic CSV writing/reading. Writers format floats with Rust's
//! shortest round-trip representation; readers skip `#` comment lines, so
//! every artifact can carry provenance headers and still round-trip.

use std::io::Write;
use std::path::Path;

use crate::{CliError, CliResult};

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Write a CSV with leading `# key: value` comment lines.
pub fn write_csv(
    path: &Path,
    comments: &[(&str, &str)],
    header: &[String],
    rows: &[Vec<String>],
) -> CliResult<()> {
    let mut out = String::new();
    for (key, value) in comments {
        out.push_str(&format!("# {key}: {value}\n"));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Read a CSV written by [`write_csv`]: returns (header, rows).
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok((header, rows))
}
