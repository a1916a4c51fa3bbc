//! Minimal CSV layer for the strictly numeric tables this crate emits.
//!
//! Floats are written through `Display`, the shortest representation that
//! round-trips, so a rerun with the same inputs reproduces the file byte
//! for byte. No quoting: every field is a number or a bare identifier.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// One in-memory table: a header row and float rows of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Index of a named column.
    pub fn col(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .with_context(|| format!("missing column '{name}'"))
    }

    /// All values of a named column.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = match lines.next() {
            Some(h) if !h.is_empty() => h,
            _ => bail!("empty csv"),
        };
        let columns: Vec<String> = header.split(',').map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.parse::<f64>()
                        .with_context(|| format!("row {}: bad number '{f}'", k + 2))
                })
                .collect::<Result<_>>()?;
            if row.len() != columns.len() {
                bail!(
                    "row {}: {} fields, header has {}",
                    k + 2,
                    row.len(),
                    columns.len()
                );
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

/// Expand a base name into `base_1..base_n` (or nothing for n = 0).
pub fn numbered(base: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{base}_{i}")).collect()
}
