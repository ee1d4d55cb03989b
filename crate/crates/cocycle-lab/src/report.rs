//! Experiment reports: a JSON summary with deterministic scalar ordering plus
//! plain CSV data files ('.' decimal, header row, no locale).

use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct ReportRecord {
    pub command: String,
    /// Canonical config text sufficient to rerun the experiment.
    pub config_echo: String,
    pub seed: u64,
    /// Named results; reruns with the same seed reproduce these
    /// bit-identically.
    pub scalars: BTreeMap<String, serde_json::Value>,
    /// Data files written next to the report.
    pub files: Vec<String>,
    /// Wall time, excluded from determinism comparisons.
    pub wall_time_ms: u64,
}

impl ReportRecord {
    pub fn new(command: &str, config_echo: String, seed: u64) -> ReportRecord {
        ReportRecord {
            command: command.to_string(),
            config_echo,
            seed,
            scalars: BTreeMap::new(),
            files: Vec::new(),
            wall_time_ms: 0,
        }
    }

    pub fn put(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.scalars.insert(key.to_string(), value.into());
    }

    pub fn put_f64(&mut self, key: &str, value: f64) {
        self.put(key, serde_json::json!(value));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("report.json");
        let mut file = std::fs::File::create(&path)?;
        file.write_all(self.to_json().as_bytes())?;
        file.write_all(b"\n")?;
        Ok(path)
    }
}

/// Writes a CSV file with a header row; numbers use Rust's shortest
/// round-trip formatting with '.' decimal separators.
pub fn write_csv(
    out_dir: &Path,
    name: &str,
    header: &[&str],
    rows: &[Vec<f64>],
) -> std::io::Result<String> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(file, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(file, "{}", cells.join(","))?;
    }
    Ok(name.to_string())
}
