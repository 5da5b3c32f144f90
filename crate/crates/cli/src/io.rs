//! Text formats: dense matrices with a `rows cols` header, record streams
//! as JSON lines or CSV, and the phase-grid table.

use std::fmt::Write as _;
use std::io::Write;

use bsbl::experiments::{PhaseGrid, TrialRecord};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Doubles are written with 17 significant digits so they read back bit for bit.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

/// Parse `rows cols` followed by `rows·cols` values in row-major order,
/// separated by whitespace or commas.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, CliError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| CliError::input("empty matrix file"))?;
    let dims: Vec<usize> = header
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::input(format!("bad matrix header '{header}'")))?;
    let [rows, cols] = dims[..] else {
        return Err(CliError::input(format!(
            "matrix header must be 'rows cols', got '{header}'"
        )));
    };
    let values: Vec<f64> = lines
        .flat_map(|l| l.split(|c: char| c.is_whitespace() || c == ','))
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::input(format!("bad matrix entry '{t}'")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != rows * cols {
        return Err(CliError::input(format!(
            "matrix header says {rows}x{cols} = {} entries, found {}",
            rows * cols,
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(CliError::input(format!("non-finite matrix entry {v}")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// A vector file is a matrix file with one row or one column.
pub fn parse_vector(text: &str) -> Result<DVector<f64>, CliError> {
    let m = parse_matrix(text)?;
    if m.ncols() != 1 && m.nrows() != 1 {
        return Err(CliError::input(format!(
            "expected a vector, got a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DVector::from_iterator(
        m.len(),
        m.transpose().iter().copied(),
    ))
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

/// Minimal JSON object builder with fixed key order and 17-digit floats.
#[derive(Default)]
pub struct JsonObject {
    body: String,
}

impl JsonObject {
    fn key(&mut self, key: &str) -> &mut String {
        if !self.body.is_empty() {
            self.body.push(',');
        }
        let _ = write!(self.body, "{}:", Value::from(key));
        &mut self.body
    }

    pub fn raw(mut self, key: &str, json: &str) -> Self {
        self.key(key).push_str(json);
        self
    }

    pub fn str(self, key: &str, v: &str) -> Self {
        let json = Value::from(v).to_string();
        self.raw(key, &json)
    }

    pub fn int(self, key: &str, v: u64) -> Self {
        self.raw(key, &v.to_string())
    }

    pub fn bool(self, key: &str, v: bool) -> Self {
        self.raw(key, if v { "true" } else { "false" })
    }

    pub fn float(self, key: &str, v: f64) -> Self {
        self.raw(key, &fmt_f64(v))
    }

    pub fn opt_float(self, key: &str, v: Option<f64>) -> Self {
        self.raw(key, &v.map_or_else(|| "null".into(), fmt_f64))
    }

    pub fn floats(self, key: &str, v: impl IntoIterator<Item = f64>) -> Self {
        let items: Vec<String> = v.into_iter().map(fmt_f64).collect();
        self.raw(key, &format!("[{}]", items.join(",")))
    }

    pub fn ints(self, key: &str, v: impl IntoIterator<Item = usize>) -> Self {
        let items: Vec<String> = v.into_iter().map(|i| i.to_string()).collect();
        self.raw(key, &format!("[{}]", items.join(",")))
    }

    pub fn finish(self) -> String {
        format!("{{{}}}", self.body)
    }
}

pub fn record_json(r: &TrialRecord) -> String {
    JsonObject::default()
        .str("algorithm", r.algorithm.label())
        .int("seed", r.seed)
        .int("n", r.n as u64)
        .int("m", r.m as u64)
        .int("k_active", r.k_active as u64)
        .opt_float("r", r.r)
        .opt_float("snr_db", r.snr_db)
        .float("nmse", r.nmse)
        .float("runtime_s", r.runtime_s)
        .bool("success", r.success)
        .finish()
}

pub const CSV_COLUMNS: [&str; 10] = [
    "algorithm",
    "seed",
    "n",
    "m",
    "k_active",
    "r",
    "snr_db",
    "nmse",
    "runtime_s",
    "success",
];

fn record_row(r: &TrialRecord) -> [String; 10] {
    let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_f64);
    [
        r.algorithm.label().to_string(),
        r.seed.to_string(),
        r.n.to_string(),
        r.m.to_string(),
        r.k_active.to_string(),
        opt(r.r),
        opt(r.snr_db),
        fmt_f64(r.nmse),
        fmt_f64(r.runtime_s),
        r.success.to_string(),
    ]
}

/// Serialized single-writer sink for a record stream. The header (a JSON
/// object) goes first: as its own line in JSONL, as a `#` comment in CSV.
pub struct RecordWriter<W: Write> {
    out: W,
    format: Format,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W, format: Format, header: &Value) -> Result<Self, CliError> {
        match format {
            Format::Jsonl => writeln!(out, "{}", serde_json::json!({ "header": header }))?,
            Format::Csv => {
                writeln!(out, "# {header}")?;
                writeln!(out, "{}", CSV_COLUMNS.join(","))?;
            }
        }
        out.flush()?;
        Ok(Self { out, format })
    }

    pub fn write(&mut self, records: &[TrialRecord]) -> Result<(), CliError> {
        match self.format {
            Format::Jsonl => {
                for r in records {
                    writeln!(self.out, "{}", record_json(r))?;
                }
            }
            Format::Csv => {
                let mut w = csv::WriterBuilder::new()
                    .has_headers(false)
                    .from_writer(&mut self.out);
                for r in records {
                    w.write_record(record_row(r)).map_err(CliError::output)?;
                }
                w.flush()?;
            }
        }
        // Flush per batch so an interrupted run leaves whole records behind.
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parse a record stream back into its header and records.
pub fn parse_records(text: &str, format: Format) -> Result<(Value, Vec<TrialRecord>), CliError> {
    match format {
        Format::Jsonl => {
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            let first = lines
                .next()
                .ok_or_else(|| CliError::input("empty records file"))?;
            let header: Value = serde_json::from_str(first)
                .map_err(|e| CliError::input(format!("bad header line: {e}")))?;
            let header = header
                .get("header")
                .cloned()
                .ok_or_else(|| CliError::input("first line is not a header"))?;
            let records = lines
                .map(|l| {
                    serde_json::from_str(l)
                        .map_err(|e| CliError::input(format!("bad record line: {e}")))
                })
                .collect::<Result<_, _>>()?;
            Ok((header, records))
        }
        Format::Csv => {
            let first = text
                .lines()
                .next()
                .and_then(|l| l.strip_prefix("# "))
                .ok_or_else(|| CliError::input("missing CSV header comment"))?;
            let header: Value = serde_json::from_str(first)
                .map_err(|e| CliError::input(format!("bad header comment: {e}")))?;
            let mut reader = csv::ReaderBuilder::new()
                .comment(Some(b'#'))
                .from_reader(text.as_bytes());
            let records = reader
                .deserialize()
                .collect::<Result<Vec<TrialRecord>, _>>()
                .map_err(|e| CliError::input(format!("bad CSV record: {e}")))?;
            Ok((header, records))
        }
    }
}

/// Success-rate table: one row per active-block count, one column per M.
pub fn format_grid(grid: &PhaseGrid) -> String {
    let mut out = String::from("# success rate; rows: active blocks, columns: measurements M\n");
    let mut head = vec!["k_active\\m".to_string()];
    head.extend(grid.m_values.iter().map(|m| m.to_string()));
    out.push_str(&head.join(","));
    out.push('\n');
    for (k, row) in grid.k_values.iter().zip(&grid.success) {
        let mut line = vec![k.to_string()];
        line.extend(row.iter().map(|v| fmt_f64(*v)));
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
