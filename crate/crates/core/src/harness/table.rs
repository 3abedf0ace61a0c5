//! CSV output: `#` metadata lines, one header row, 17-significant-digit floats.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Round-trip float formatting (17 significant digits).
pub fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn opt_float(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

/// In-memory CSV document.
#[derive(Clone, Debug, Default)]
pub struct Table {
    meta: Vec<String>,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Table {
        Table { meta: Vec::new(), header: header.to_vec(), rows: Vec::new() }
    }

    pub fn meta(&mut self, key: &str, value: impl std::fmt::Display) {
        let value = value.to_string().replace('\n', " ");
        self.meta.push(format!("{key}: {value}"));
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.meta {
            let _ = writeln!(out, "# {m}");
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.render())
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(float(1.0), "1.0000000000000000e0");
        assert_eq!(float(f64::NAN), "NaN");
    }

    #[test]
    fn render_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.meta("seed", 3);
        t.push(vec!["1".into(), float(0.5)]);
        assert_eq!(t.render(), "# seed: 3\na,b\n1,5.0000000000000000e-1\n");
    }
}
