//! Run reports (JSON) and per-node tables (CSV).
//!
//! Floats are written as `{:.16e}` (17 significant digits) so reports are
//! byte-identical across runs with the same seed and thread count. Wall time
//! is only included on request.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// One named pass/fail verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    pub relation: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::compare(name, value, limit, "<=", value <= limit)
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::compare(name, value, limit, ">=", value >= limit)
    }

    pub fn above(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::compare(name, value, limit, ">", value > limit)
    }

    fn compare(name: impl Into<String>, value: f64, limit: f64, relation: &'static str, passed: bool) -> Self {
        Self { name: name.into(), passed, value, limit: Some(limit), relation, detail: None }
    }

    /// A boolean verdict with an explanatory message.
    pub fn flag(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            limit: None,
            relation: "holds",
            detail: Some(detail.into()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub results: Map<String, Value>,
    pub checks: Vec<Check>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats::default());
        self.serialize(&mut ser).expect("reports serialize to memory");
        out.push(b'\n');
        String::from_utf8(out).expect("serde_json emits UTF-8")
    }
}

/// SHA-256 of the canonical JSON of `value`, as lowercase hex.
pub fn config_hash(value: &Value) -> String {
    let canonical = serde_json::to_string(value).expect("values serialize");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON with fixed-width scientific floats.
#[derive(Default)]
struct FixedFloats {
    pretty: PrettyFormatter<'static>,
}

impl Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(float(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(writer)
    }
}

/// A CSV file with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self { file: file.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(&self.file))?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn report(results: Value) -> Report {
        Report {
            command: "energy".into(),
            problem: None,
            config_hash: config_hash(&results),
            seed: 0,
            threads: 1,
            results: results.as_object().unwrap().clone(),
            checks: vec![Check::at_most("energy.total_le_max", 0.25, 1.0)],
            passed: true,
            wall_time_s: None,
        }
    }

    #[test]
    fn floats_carry_seventeen_digits() {
        let text = report(json!({"total": 0.1, "count": 3})).to_json();
        assert!(text.contains("\"total\": 1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"count\": 3"), "{text}");
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["results"]["total"].as_f64(), Some(0.1));
        assert_eq!(back["checks"][0]["limit"].as_f64(), Some(1.0));
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"a": 1, "b": [1.5, 2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"b": [1.5, 2], "a": 1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn check_relations() {
        assert!(Check::at_most("x", 1.0, 1.0).passed);
        assert!(!Check::above("x", 0.0, 0.0).passed);
        assert!(Check::at_least("x", 2.0, 1.0).passed);
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed);
    }

    #[test]
    fn tables_have_a_header_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("t.csv", &["a", "b"]);
        t.rows.push(vec!["1".into(), float(0.5)]);
        t.write_to(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, "a,b\n1,5.0000000000000000e-1\n");
    }
}
