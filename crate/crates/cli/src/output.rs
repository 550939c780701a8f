//! JSON reports with sorted keys and round-trip numbers, series CSV, and the
//! run manifest.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

use werate_core::trajectory::format_number;
use werate_core::LogBase;

use crate::error::CliError;

/// `{:.16e}` as a JSON number, `null` when not finite.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        Value::Number(Number::from_str(&format_number(v)).expect("formatted float is valid JSON"))
    } else {
        Value::Null
    }
}

/// Report under construction. Log-valued entries are converted to the
/// requested base on insertion; everything else is stored as is.
pub struct Report {
    base: LogBase,
    map: Map<String, Value>,
    non_finite: Vec<String>,
    series: Vec<(usize, String, f64)>,
}

impl Report {
    pub fn new(base: LogBase) -> Self {
        Self {
            base,
            map: Map::new(),
            non_finite: Vec::new(),
            series: Vec::new(),
        }
    }

    fn note(&mut self, key: &str, values: &[f64]) {
        if values.iter().any(|v| !v.is_finite()) {
            self.non_finite.push(key.to_string());
        }
    }

    pub fn plain(&mut self, key: &str, v: f64) {
        self.note(key, &[v]);
        self.map.insert(key.into(), num(v));
    }

    pub fn log(&mut self, key: &str, nats: f64) {
        let v = self.base.convert(nats);
        self.plain(key, v);
    }

    pub fn plain_list(&mut self, key: &str, v: &[f64]) {
        self.note(key, v);
        self.map.insert(key.into(), Value::Array(v.iter().map(|&x| num(x)).collect()));
    }

    pub fn matrix(&mut self, key: &str, rows: &[Vec<f64>]) {
        for r in rows {
            self.note(key, r);
        }
        let v = rows
            .iter()
            .map(|r| Value::Array(r.iter().map(|&x| num(x)).collect()))
            .collect();
        self.map.insert(key.into(), Value::Array(v));
    }

    pub fn value(&mut self, key: &str, v: impl Into<Value>) {
        self.map.insert(key.into(), v.into());
    }

    /// Series point in nats, written to CSV after conversion.
    pub fn log_series(&mut self, n: usize, statistic: &str, nats: f64) {
        let v = self.base.convert(nats);
        self.series.push((n, statistic.to_string(), v));
    }

    pub fn has_series(&self) -> bool {
        !self.series.is_empty()
    }

    pub fn json(&self) -> Value {
        let mut map = self.map.clone();
        map.insert("log_base".into(), Value::String(self.base.to_string()));
        if !self.non_finite.is_empty() {
            let mut keys = self.non_finite.clone();
            keys.sort();
            keys.dedup();
            map.insert("non_finite".into(), Value::Array(keys.into_iter().map(Value::String).collect()));
        }
        Value::Object(map)
    }

    /// Series as `n,statistic,value` rows.
    pub fn series_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(["n", "statistic", "value"]).map_err(io)?;
        for (n, s, v) in &self.series {
            w.write_record([n.to_string(), s.clone(), format_number(*v)]).map_err(io)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Everything that determines the numbers a run produces.
#[derive(Serialize)]
struct Canonical<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    seed: u64,
    log_base: String,
}

/// SHA-256 of the canonical JSON of the resolved config, seed and log base.
pub fn config_digest<C: Serialize>(command: &str, config: &C, seed: u64, base: LogBase) -> Result<String, CliError> {
    let canonical = Canonical {
        command,
        config,
        seed,
        log_base: base.to_string(),
    };
    // Through `Value` so object keys come out sorted.
    let value = serde_json::to_value(&canonical).map_err(|e| CliError::Io(e.to_string()))?;
    let text = serde_json::to_string(&value).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub log_base: String,
    pub threads: usize,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.5f64.ln(), -3.0e-300, 123456789.12345679, f64::MIN_POSITIVE] {
            let s = serde_json::to_string(&num(v)).unwrap();
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::NAN), Value::Null);
    }

    #[test]
    fn keys_sorted_and_non_finite_flagged() {
        let mut r = Report::new(LogBase::Natural);
        r.plain("zeta", 1.0);
        r.plain("alpha", f64::INFINITY);
        let s = serde_json::to_string(&r.json()).unwrap();
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
        assert!(s.contains("\"non_finite\":[\"alpha\"]"));
    }

    #[test]
    fn bits_conversion() {
        let mut r = Report::new(LogBase::Base2);
        r.log("h", 2f64.ln());
        r.plain("mu", 1.5);
        let v = r.json();
        let h: f64 = v["h"].to_string().parse().unwrap();
        assert!((h - 1.0).abs() < 1e-15);
        assert_eq!(v["mu"].to_string().parse::<f64>().unwrap(), 1.5);
    }

    #[test]
    fn digest_tracks_fields() {
        let a = config_digest("iid", &serde_json::json!({"pmf": [0.5, 0.5]}), 1, LogBase::Natural).unwrap();
        let b = config_digest("iid", &serde_json::json!({"pmf": [0.5, 0.5]}), 1, LogBase::Natural).unwrap();
        let c = config_digest("iid", &serde_json::json!({"pmf": [0.4, 0.6]}), 1, LogBase::Natural).unwrap();
        let d = config_digest("iid", &serde_json::json!({"pmf": [0.5, 0.5]}), 2, LogBase::Natural).unwrap();
        let e = config_digest("iid", &serde_json::json!({"pmf": [0.5, 0.5]}), 1, LogBase::Base2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(a != c && a != d && a != e);
    }
}
