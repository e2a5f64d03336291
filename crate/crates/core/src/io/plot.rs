//! Plain-text matrix for external plotting tools. The first line is
//! `# <rows> <cols> <label>|<label>|…` with one label per row; each further
//! line holds one row of comma-separated reals.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl PlotData {
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(Error::InvalidShape(format!("{} labels for {} rows", labels.len(), values.len())));
        }
        if let Some(first) = values.first() {
            if values.iter().any(|r| r.len() != first.len()) {
                return Err(Error::InvalidShape("rows differ in length".into()));
            }
        }
        if labels.iter().any(|l| l.contains(['|', '\n', '\r'])) {
            return Err(Error::InvalidConfig("labels may not contain '|' or line breaks".into()));
        }
        Ok(Self { labels, values })
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# {} {} {}\n", self.rows(), self.cols(), self.labels.join("|"));
        for row in &self.values {
            let cells: Vec<String> = row.iter().map(|&v| super::fmt_real(v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, detail: &str| Error::ParseError {
            line: line + 1,
            detail: detail.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| Error::EmptyResult("empty plot file".into()))?;
        let rest = header.strip_prefix("# ").ok_or_else(|| bad(0, "missing '# ' header"))?;
        let mut parts = rest.splitn(3, ' ');
        let mut dim = || -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| bad(0, "header needs row and column counts"))
        };
        let (rows, cols) = (dim()?, dim()?);
        let labels: Vec<String> = match parts.next() {
            Some(l) if rows > 0 => l.split('|').map(str::to_string).collect(),
            _ => Vec::new(),
        };
        if labels.len() != rows {
            return Err(bad(0, "label count differs from row count"));
        }
        let mut values = Vec::with_capacity(rows);
        for (i, line) in lines {
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| bad(i, "bad number")))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != cols {
                return Err(bad(i, "wrong column count"));
            }
            values.push(row);
        }
        if values.len() != rows {
            return Err(Error::ParseError {
                line: values.len() + 1,
                detail: format!("expected {rows} data rows"),
            });
        }
        Self::new(labels, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
