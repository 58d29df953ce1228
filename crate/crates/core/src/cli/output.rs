//! Tabular results with provenance, rendered as CSV or JSON.

use std::io::Write;

use serde_json::{json, Map, Value};

use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Fixed-column table plus `key=value` metadata emitted as `#` comment lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    pub metadata: Vec<(String, String)>,
}

impl Table {
    /// Starts a table stamped with the config hash, seed and library version.
    pub fn new(columns: &[&'static str], config_hash: &str, seed: u64) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
            metadata: vec![
                ("config_sha256".into(), config_hash.into()),
                ("seed".into(), seed.to_string()),
                ("version".into(), VERSION.into()),
            ],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn write(&self, out: &mut impl Write, format: Format) -> Result<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, &self.to_json())?;
                writeln!(out)?;
                Ok(())
            }
        }
    }

    fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let metadata: Map<String, Value> = self.metadata.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.columns.iter().zip(r).map(|(c, v)| (c.to_string(), cell(v))).collect()))
            .collect();
        json!({ "metadata": metadata, "rows": rows })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }
}

// Numbers stay numbers in JSON.
fn cell(v: &str) -> Value {
    if let Ok(i) = v.parse::<i64>() {
        return Value::from(i);
    }
    match v.parse::<f64>() {
        Ok(f) if f.is_finite() => Value::from(f),
        _ => Value::String(v.to_string()),
    }
}

/// Full-precision float for tables.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_metadata_then_header() {
        let mut t = Table::new(&["a", "b"], "abc", 7);
        t.push(vec!["1".into(), "x,y".into()]);
        let s = t.to_csv_string();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# config_sha256=abc");
        assert_eq!(lines[1], "# seed=7");
        assert!(lines[2].starts_with("# version="));
        assert_eq!(lines[3], "a,b");
        assert_eq!(lines[4], "1,\"x,y\"");
    }

    #[test]
    fn json_rows_are_typed() {
        let mut t = Table::new(&["n", "name"], "h", 1);
        t.push(vec!["0.5".into(), "em".into()]);
        let v = t.to_json();
        assert_eq!(v["rows"][0]["n"], json!(0.5));
        assert_eq!(v["rows"][0]["name"], json!("em"));
        assert_eq!(v["metadata"]["seed"], json!("1"));
    }
}
