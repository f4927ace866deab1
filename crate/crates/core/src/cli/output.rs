//! Tables written as CSV (17 significant digits, LF endings) or as JSON
//! `{metadata, data}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(_) | Cell::Empty => Value::Null,
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn to_json(&self, metadata: &Value) -> Vec<u8> {
        let data: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (c, v) in self.columns.iter().zip(row) {
                    obj.insert(c.clone(), v.json());
                }
                Value::Object(obj)
            })
            .collect();
        let mut text = serde_json::to_vec_pretty(&json!({ "metadata": metadata, "data": data })).expect("json");
        text.push(b'\n');
        text
    }
}

#[derive(Debug)]
pub struct OutputError {
    pub path: PathBuf,
    pub source: std::io::Error,
}

impl std::fmt::Display for OutputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cannot write {}: {}", self.path.display(), self.source)
    }
}

/// Writes `bytes` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), OutputError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|source| OutputError {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|source| OutputError {
                path: PathBuf::from("<stdout>"),
                source,
            })
        }
    }
}

/// Writes the table in the requested format. CSV output gets a
/// `<file>.meta.json` sidecar carrying the metadata when `sidecar` is set
/// and a file path is given.
pub fn write_output(table: &Table, metadata: &Value, format: Format, path: Option<&Path>, sidecar: bool) -> Result<(), OutputError> {
    match format {
        Format::Csv => {
            emit(path, &table.to_csv())?;
            if let (true, Some(p)) = (sidecar, path) {
                let mut meta = serde_json::to_vec_pretty(metadata).expect("json");
                meta.push(b'\n');
                emit(Some(&sidecar_path(p)), &meta)?;
            }
            Ok(())
        }
        Format::Json => emit(path, &table.to_json(metadata)),
    }
}

pub fn sidecar_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_digits_quoting_and_endings() {
        let mut t = Table::new(["x", "label", "n", "missing"]);
        t.push(vec![Cell::Float(0.1), "a,b".into(), 3usize.into(), Cell::Empty]);
        t.push(vec![Cell::Float(-2.5e-300), "plain".into(), 0usize.into(), Cell::Float(f64::NAN)]);
        let text = String::from_utf8(t.to_csv()).unwrap();
        assert!(!text.contains('\r'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,label,n,missing");
        assert_eq!(lines[1], "1.0000000000000001e-1,\"a,b\",3,");
        assert_eq!(lines[1].split(',').next().unwrap().parse::<f64>().unwrap(), 0.1);
        assert_eq!(lines[2], "-2.5000000000000000e-300,plain,0,NaN");
    }

    #[test]
    fn json_layout() {
        let mut t = Table::new(["p1"]);
        t.push(vec![Cell::Float(0.25)]);
        let v: Value = serde_json::from_slice(&t.to_json(&json!({"tool": "x"}))).unwrap();
        assert_eq!(v["metadata"]["tool"], "x");
        assert_eq!(v["data"][0]["p1"], 0.25);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("out/a.csv")), PathBuf::from("out/a.csv.meta.json"));
    }
}
