//! Output files: CSV tables, key-value documents and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hypersde::BoundCheck;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One row of a bound-check report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub quantity: String,
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

pub const REPORT_HEADER: [&str; 7] = [
    "quantity",
    "t",
    "estimate",
    "std_error",
    "bound",
    "slack",
    "pass",
];

impl From<&BoundCheck> for ReportRow {
    fn from(c: &BoundCheck) -> Self {
        Self {
            quantity: c.quantity.clone(),
            t: c.t,
            estimate: c.estimate.mean,
            std_error: c.estimate.std_error,
            bound: c.bound,
            slack: c.slack,
            pass: c.pass,
        }
    }
}

impl ReportRow {
    fn cells(&self) -> Vec<String> {
        vec![
            self.quantity.clone(),
            fmt_f64(self.t),
            fmt_f64(self.estimate),
            fmt_f64(self.std_error),
            fmt_f64(self.bound),
            fmt_f64(self.slack),
            self.pass.to_string(),
        ]
    }
}

pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::Run(e.to_string()))
}

pub fn report_csv(rows: &[ReportRow]) -> Result<Vec<u8>, CliError> {
    let header: Vec<String> = REPORT_HEADER.iter().map(|s| s.to_string()).collect();
    let cells: Vec<Vec<String>> = rows.iter().map(ReportRow::cells).collect();
    csv_bytes(&header, &cells)
}

pub fn parse_report(bytes: &[u8]) -> Result<Vec<ReportRow>, CliError> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .map(|row| row.map_err(CliError::from))
        .collect()
}

pub fn key_values(pairs: &[(&str, f64)]) -> Vec<u8> {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={}\n", fmt_f64(*v)))
        .collect::<String>()
        .into_bytes()
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

#[derive(Debug, Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    master_seed: u64,
    sub_seed: u64,
    version: &'static str,
    pass: bool,
    files: Vec<FileEntry>,
}

/// Files produced by one command, written together with `manifest.json`.
#[derive(Debug, Default)]
pub struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    pub fn write(
        self,
        dir: &Path,
        command: &str,
        config_json: &str,
        master_seed: u64,
        sub_seed: u64,
        pass: bool,
    ) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(self.files.len() + 1);
        let mut entries = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes)?;
            entries.push(FileEntry {
                name: name.clone(),
                sha256: sha256_hex(bytes),
            });
            written.push(path);
        }
        let manifest = Manifest {
            command,
            config_sha256: sha256_hex(config_json.as_bytes()),
            master_seed,
            sub_seed,
            version: env!("CARGO_PKG_VERSION"),
            pass,
            files: entries,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, json_bytes(&manifest))?;
        written.push(path);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    proptest! {
        #[test]
        fn report_rows_round_trip(
            q in "[a-z_]{1,12}",
            vals in proptest::array::uniform6(proptest::num::f64::ANY),
            pass in any::<bool>(),
        ) {
            let row = ReportRow {
                quantity: q,
                t: vals[0],
                estimate: vals[1],
                std_error: vals[2],
                bound: vals[3],
                slack: vals[4],
                pass: pass ^ (vals[5] > 0.0),
            };
            let back = parse_report(&report_csv(std::slice::from_ref(&row)).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 1);
            let b = &back[0];
            prop_assert_eq!(&b.quantity, &row.quantity);
            prop_assert_eq!(b.pass, row.pass);
            for (x, y) in [(b.t, row.t), (b.estimate, row.estimate), (b.std_error, row.std_error),
                           (b.bound, row.bound), (b.slack, row.slack)] {
                prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }
}
