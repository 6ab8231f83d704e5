//! The report every subcommand produces, and its two renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use fairlens_core::FairlensError;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Label used in place of a path for bundled data files.
pub const BUNDLED: &str = "<bundled>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_file(path: &Path) -> Result<Self, FairlensError> {
        let io_err = |e| FairlensError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut file = File::open(path).map_err(io_err)?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = file.read(&mut buf).map_err(io_err)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        Ok(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(hasher.finalize()),
        })
    }

    pub fn of_bundled(text: &str) -> Self {
        InputDigest {
            path: BUNDLED.to_string(),
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricReport {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub timestamp: Option<String>,
    /// Every effective option, flags and config file merged.
    pub config: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, InputDigest>,
    /// family -> metric name -> value
    pub metrics: BTreeMap<String, BTreeMap<String, Value>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub undefined: bool,
}

impl MetricReport {
    pub fn new(command: &str) -> Self {
        MetricReport {
            tool: "fairlens".into(),
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, family: &str, name: &str, value: impl Into<Value>) {
        self.metrics
            .entry(family.to_string())
            .or_default()
            .insert(name.to_string(), value.into());
    }

    /// Stores a float; non-finite values become null with a warning.
    pub fn set_f64(&mut self, family: &str, name: &str, value: f64) {
        let v = number(value);
        if v.is_null() {
            self.warn(format!("{family}.{name} is not finite ({value})"));
        }
        self.set(family, name, v);
    }

    pub fn set_serialized<T: Serialize>(&mut self, family: &str, name: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.set(family, name, v);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn input(&mut self, role: &str, digest: InputDigest) {
        self.inputs.insert(role.to_string(), digest);
    }

    /// Splits a metric outcome: input errors propagate, an undefined metric
    /// is recorded as null plus a warning and flips the exit status.
    pub fn settle<T>(
        &mut self,
        family: &str,
        name: &str,
        outcome: Result<T, FairlensError>,
    ) -> Result<Option<T>, FairlensError> {
        match outcome {
            Ok(v) => Ok(Some(v)),
            Err(e) if e.is_undefined_metric() => {
                self.set(family, name, Value::Null);
                self.warn(format!("{family}.{name}: {e}"));
                self.undefined = true;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

pub fn number(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Table,
}

/// Metric keys rendered ×100 under `--paper-scale`, as (family, key prefix).
const BIAS_METRICS: &[(&str, &str)] = &[
    ("biasamp", "value"),
    ("error", "rate"),
    ("lic", "lic"),
    ("resolution", "delta_ra"),
    ("retrieval", "bias@"),
    ("retrieval", "max_skew@"),
    ("retrieval", "ndkl"),
    ("vlbias", "dataset_bias"),
    ("vlbias", "per_group"),
    ("vlbias", "per_target"),
];

fn is_bias_metric(family: &str, key: &str) -> bool {
    BIAS_METRICS
        .iter()
        .any(|(f, prefix)| *f == family && key.starts_with(prefix))
}

pub fn emit_report(report: &MetricReport, format: Format, paper_scale: bool) -> Vec<u8> {
    match format {
        Format::Json => {
            // Going through Value sorts every object by key.
            let value = serde_json::to_value(report).expect("report serializes");
            let mut out = serde_json::to_vec_pretty(&value).expect("value serializes");
            out.push(b'\n');
            out
        }
        Format::Table => render_table(report, paper_scale).into_bytes(),
    }
}

/// Fixed-point rendering with a typographic minus sign.
pub fn format_decimal(x: f64, places: usize) -> String {
    let s = format!("{x:.places$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().any(|c| c.is_ascii_digit() && c != '0') => format!("\u{2212}{rest}"),
        Some(rest) => rest.to_string(),
        None => s,
    }
}

fn render_value(v: &Value, scaled: bool) -> String {
    match v {
        Value::Null => "n/a".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.to_string()
            } else if let Some(u) = n.as_u64() {
                u.to_string()
            } else {
                let x = n.as_f64().unwrap_or(f64::NAN);
                if scaled {
                    format_decimal(x * 100.0, 1)
                } else {
                    format_decimal(x, 4)
                }
            }
        }
        Value::String(s) => s.clone(),
        Value::Array(items) if items.is_empty() => "-".to_string(),
        Value::Array(items) => items
            .iter()
            .map(|i| render_value(i, scaled))
            .collect::<Vec<_>>()
            .join(", "),
        Value::Object(_) => unreachable!("objects are flattened"),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => flatten_map(prefix, map, out),
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn flatten_map(prefix: &str, map: &Map<String, Value>, out: &mut Vec<(String, Value)>) {
    for (k, v) in map {
        flatten(&format!("{prefix}.{k}"), v, out);
    }
}

fn render_table(report: &MetricReport, paper_scale: bool) -> String {
    let mut rows: Vec<(String, String, String)> = Vec::new();
    for (family, metrics) in &report.metrics {
        for (name, value) in metrics {
            let mut flat = Vec::new();
            flatten(name, value, &mut flat);
            for (key, v) in flat {
                let scaled = paper_scale && is_bias_metric(family, &key);
                rows.push((family.clone(), key, render_value(&v, scaled)));
            }
        }
    }
    let w_family = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0).max(6);
    let w_key = rows.iter().map(|r| r.1.chars().count()).max().unwrap_or(0).max(6);

    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", report.tool, report.tool_version, report.command);
    if paper_scale {
        out.push_str("bias metrics scaled by 100\n");
    }
    out.push('\n');
    let _ = writeln!(out, "{:<w_family$}  {:<w_key$}  value", "family", "metric");
    for (family, key, value) in &rows {
        let _ = writeln!(out, "{family:<w_family$}  {key:<w_key$}  {value}");
    }
    if !report.warnings.is_empty() {
        out.push_str("\nwarnings:\n");
        for w in &report.warnings {
            let _ = writeln!(out, "  {w}");
        }
    }
    out
}

pub fn write_output(bytes: &[u8], out: Option<&Path>, stdout: &mut dyn io::Write) -> Result<(), FairlensError> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| FairlensError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => stdout.write_all(bytes).map_err(|e| FairlensError::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_renders_minus_sign() {
        let mut r = MetricReport::new("lic");
        r.set_f64("lic", "lic", -0.011);
        r.set("lic", "n_eval_d", 40);
        let table = String::from_utf8(emit_report(&r, Format::Table, true)).unwrap();
        assert!(table.contains("\u{2212}1.1"), "{table}");
        assert!(table.contains("n_eval_d  40"), "{table}");
        let plain = String::from_utf8(emit_report(&r, Format::Table, false)).unwrap();
        assert!(plain.contains("\u{2212}0.0110"), "{plain}");
    }

    #[test]
    fn scaling_leaves_stored_value_alone() {
        let mut r = MetricReport::new("lic");
        r.set_f64("lic", "lic", -0.011);
        let _ = emit_report(&r, Format::Table, true);
        assert_eq!(r.metrics["lic"]["lic"], number(-0.011));
    }

    #[test]
    fn empty_warnings_are_omitted() {
        let r = MetricReport::new("label");
        let json = String::from_utf8(emit_report(&r, Format::Json, false)).unwrap();
        assert!(!json.contains("warnings"));
        let table = String::from_utf8(emit_report(&r, Format::Table, false)).unwrap();
        assert!(!table.contains("warnings"));

        let mut r = MetricReport::new("label");
        r.warn("something odd");
        let json = String::from_utf8(emit_report(&r, Format::Json, false)).unwrap();
        assert!(json.contains("something odd"));
    }

    #[test]
    fn json_keys_are_sorted() {
        let mut r = MetricReport::new("x");
        r.set("zeta", "b", 1);
        r.set("alpha", "z", 2);
        r.set("alpha", "a", 3);
        let json = String::from_utf8(emit_report(&r, Format::Json, false)).unwrap();
        let pos = |s: &str| json.find(s).unwrap();
        assert!(pos("\"alpha\"") < pos("\"zeta\""));
        assert!(pos("\"a\"") < pos("\"z\""));
        assert!(pos("\"command\"") < pos("\"tool\""));
    }

    #[test]
    fn negative_zero_has_no_sign() {
        assert_eq!(format_decimal(-0.00001, 1), "0.0");
        assert_eq!(format_decimal(-1.25, 1), "\u{2212}1.2");
        assert_eq!(format_decimal(0.5, 2), "0.50");
    }

    #[test]
    fn nonfinite_becomes_null() {
        let mut r = MetricReport::new("x");
        r.set_f64("f", "v", f64::NEG_INFINITY);
        assert!(r.metrics["f"]["v"].is_null());
        assert_eq!(r.warnings.len(), 1);
    }
}
