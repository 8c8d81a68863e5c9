//! Provenance stamping and small file writers.

use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// Config hash and seed stamped into every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn preamble(&self) -> Vec<String> {
        vec![format!("config_sha256={} seed={}", self.config_sha256, self.seed)]
    }

    pub fn meta(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }

    /// JSON object `{"meta": ..., <key>: value}`.
    pub fn wrap<T: Serialize>(&self, key: &str, value: &T) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("meta".into(), self.meta());
        obj.insert(key.into(), serde_json::to_value(value).expect("output serializes"));
        serde_json::Value::Object(obj)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// CSV with the provenance comment line, a header and pre-formatted rows.
pub fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut s = String::new();
    for line in prov.preamble() {
        s.push_str(&format!("# {line}\n"));
    }
    s.push_str(&header.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
