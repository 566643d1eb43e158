//! CSV tables for solver and evaluator output.
//!
//! Output is RFC 4180 with `\n` record terminators. Reals are written with
//! 12 significant digits in plain decimal notation (the shortest decimal
//! that reads back to the 12-digit rounded value), so re-reading a file and
//! writing it again reproduces it byte for byte.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds `x` to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("scientific notation from the formatter parses")
}

/// Decimal rendering with 12 significant digits.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r = round_sig(x);
    // Negative zero prints as "-0"; keep the output sign-stable.
    if r == 0.0 {
        return "0".into();
    }
    format!("{r}")
}

pub fn parse_number(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::config("csv", format!("cannot parse number {s:?}: {e}")))
}

/// Header plus string rows, all of the header's width.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn push_row<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) -> Result<()> {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        if row.len() != self.header.len() {
            return Err(Error::Internal(format!(
                "row has {} fields, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Column index by header name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = self
            .rows
            .get(row)
            .and_then(|r| r.get(col))
            .ok_or_else(|| Error::config("csv", format!("no cell at row {row}, column {col}")))?;
        parse_number(cell)
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .quote_style(csv::QuoteStyle::Necessary)
            .from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory does not fail");
        String::from_utf8(buf).expect("csv output of UTF-8 cells is UTF-8")
    }

    /// Strict reader: a header is required and every record must match its width.
    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input);
        let header = r.headers()?.iter().map(str::to_owned).collect::<Vec<_>>();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::config("csv", "missing header"));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_owned).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        Self::read_from(s.as_bytes())
    }
}
