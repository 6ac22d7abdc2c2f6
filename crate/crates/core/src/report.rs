//! Machine-readable run reports.
//!
//! Every CLI invocation can emit one [`Report`]: the subcommand, content
//! hashes of its input files, a result body, and coarse timings. Reports
//! serialize with a fixed top-level field order and alphabetically sorted
//! object keys inside the body, so two runs on identical inputs produce
//! byte-identical documents once timings are stripped; any change to the
//! shape bumps [`SCHEMA_VERSION`].

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Version stamp embedded in every report.
pub const SCHEMA_VERSION: u32 = 1;

/// Content hash of one input file.
#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// One invocation's machine-readable result.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub body: serde_json::Value,
    pub timings_ms: BTreeMap<String, u64>,
}

impl Report {
    pub fn new(command: &str) -> Report {
        Report {
            schema: SCHEMA_VERSION,
            command: command.to_string(),
            inputs: Vec::new(),
            body: serde_json::Value::Null,
            timings_ms: BTreeMap::new(),
        }
    }

    /// Records an input file by path and content hash.
    pub fn add_input(&mut self, path: &str, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// [`Report::to_json`] minus the `timings_ms` field — the byte-stable
    /// form for comparing runs.
    pub fn to_json_without_timings(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut()
            .expect("report is an object")
            .remove("timings_ms");
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Wall-clock timer feeding [`Report::timings_ms`].
pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Timer {
        Timer(Instant::now())
    }

    /// Stops the timer and files the elapsed milliseconds under `label`.
    pub fn stop(self, report: &mut Report, label: &str) {
        report
            .timings_ms
            .insert(label.to_string(), self.0.elapsed().as_millis() as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sha256_matches_the_reference_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn reports_are_byte_stable_without_timings() {
        let build = |ms: u64| {
            let mut r = Report::new("count");
            r.add_input("h.json", b"{}");
            r.body = json!({"zeta": 1, "alpha": {"b": 2, "a": 3}});
            r.timings_ms.insert("total".into(), ms);
            r
        };
        let (a, b) = (build(5), build(900));
        assert_ne!(a.to_json(), b.to_json());
        assert_eq!(a.to_json_without_timings(), b.to_json_without_timings());
        // Body object keys serialize sorted, so nested order is canonical.
        let s = a.to_json();
        assert!(s.find("\"alpha\"").unwrap() < s.find("\"zeta\"").unwrap());
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("\"schema\": 1"));
    }
}
