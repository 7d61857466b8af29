//! Deterministic output files: UTF-8 CSV with `,` delimiter and `\n` line
//! endings, floats printed in shortest round-trip form, plus a JSON summary
//! embedding everything needed to reproduce the numbers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

/// Shortest round-trip decimal form; stable across platforms.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = Vec::new();
    out.extend_from_slice(header.join(",").as_bytes());
    out.push(b'\n');
    for row in rows {
        out.extend_from_slice(row.join(",").as_bytes());
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)
}

/// FNV-1a over the raw config bytes; hex-printed in every summary.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// JSON summary carrying artifact version, config hash, seed, wall clock
/// and per-test tolerances. The wall clock lives only here, never in the
/// CSV, so CSVs stay byte-reproducible.
pub struct Summary {
    command: String,
    config_hash: String,
    master_seed: u64,
    tolerances: BTreeMap<String, f64>,
    metrics: Map<String, Value>,
    pass: bool,
    csv_schema: Option<String>,
}

impl Summary {
    pub fn new(command: &str, config_bytes: &[u8], master_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash(config_bytes),
            master_seed,
            tolerances: BTreeMap::new(),
            metrics: Map::new(),
            pass: true,
            csv_schema: None,
        }
    }

    pub fn tolerance(&mut self, name: &str, value: f64) -> &mut Self {
        self.tolerances.insert(name.to_string(), value);
        self
    }

    pub fn metric(&mut self, name: &str, value: Value) -> &mut Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn metric_f64(&mut self, name: &str, value: f64) -> &mut Self {
        self.metrics.insert(name.to_string(), json!(value));
        self
    }

    pub fn csv_schema(&mut self, schema: &str) -> &mut Self {
        self.csv_schema = Some(schema.to_string());
        self
    }

    pub fn fail(&mut self) -> &mut Self {
        self.pass = false;
        self
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let wall_clock = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let doc = json!({
            "artifact_version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "wall_clock_unix": wall_clock,
            "csv_schema": self.csv_schema,
            "tolerances": self.tolerances,
            "metrics": self.metrics,
            "pass": self.pass,
        });
        std::fs::write(path, serde_json::to_string_pretty(&doc).unwrap() + "\n")
    }
}

pub fn output_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
