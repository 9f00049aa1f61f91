//! Date-indexed numeric tables in CSV form (`date,<col1>,<col2>,...`).
//!
//! Returns, feature vectors and score series all share this layout.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// How floats are rendered when a table is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatFormat {
    /// Shortest representation that parses back to the identical `f64`.
    RoundTrip,
    /// Twelve significant digits, `%.12g` style.
    Sig12,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatedTable {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<String>,
    /// One row per date, each of length `columns.len()`.
    pub rows: Vec<Vec<f64>>,
}

impl DatedTable {
    pub fn new(dates: Vec<NaiveDate>, columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if dates.len() != rows.len() {
            return Err(Error::shape(
                "DatedTable::new",
                format!("{} dates vs {} rows", dates.len(), rows.len()),
            ));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != columns.len()) {
            return Err(Error::shape(
                "DatedTable::new",
                format!("row of length {} vs {} columns", bad.len(), columns.len()),
            ));
        }
        Ok(Self {
            dates,
            columns,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn to_csv_string(&self, format: FloatFormat) -> String {
        let mut out = String::with_capacity(self.rows.len() * (self.columns.len() + 1) * 12);
        out.push_str("date");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (date, row) in self.dates.iter().zip(&self.rows) {
            out.push_str(&date.format("%Y-%m-%d").to_string());
            for &v in row {
                out.push(',');
                out.push_str(&format_float(v, format));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, format: FloatFormat) -> Result<()> {
        fs::write(path, self.to_csv_string(format)).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?;
        if header.get(0).map(|h| h.to_ascii_lowercase()) != Some("date".to_string()) {
            return Err(Error::Header {
                column: 0,
                reason: "first column must be `date`".into(),
            });
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut rows = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let line = idx + 2;
            let record = record.map_err(|e| Error::Parse {
                line,
                reason: e.to_string(),
            })?;
            let date = parse_date(&record[0]).ok_or_else(|| Error::Parse {
                line,
                reason: format!("bad date `{}`", &record[0]),
            })?;
            let row = record
                .iter()
                .skip(1)
                .map(|cell| {
                    cell.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        reason: format!("bad number `{cell}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            dates.push(date);
            rows.push(row);
        }
        Self::new(dates, columns, rows)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

pub fn format_float(v: f64, format: FloatFormat) -> String {
    match format {
        FloatFormat::RoundTrip => format!("{v}"),
        FloatFormat::Sig12 => format_sig(v, 12),
    }
}

/// `%.{digits}g`-style rendering.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
