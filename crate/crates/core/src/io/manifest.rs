//! Corpus manifest: a CSV file with header `path,condition,split,<target>…`
//! and one row per segment. Target columns hold values scaled to [−1, 1];
//! relative paths are resolved against the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::preprocess::TargetSpec;

const FIXED_COLUMNS: [&str; 3] = ["path", "condition", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    Unseen,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Unseen];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unseen => "unseen",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown split '{s}' (train|val|test|unseen)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub condition: String,
    pub split: Split,
    /// Scaled values, in the manifest's target order.
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub unseen: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub targets: Vec<TargetSpec>,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(targets: Vec<TargetSpec>) -> Self {
        Self {
            targets,
            records: Vec::new(),
        }
    }

    pub fn fractions(&self) -> SplitFractions {
        let n = self.records.len().max(1) as f64;
        let f = |s: Split| self.records.iter().filter(|r| r.split == s).count() as f64 / n;
        SplitFractions {
            train: f(Split::Train),
            val: f(Split::Val),
            test: f(Split::Test),
            unseen: f(Split::Unseen),
        }
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == s)
    }

    /// Column index of a target name.
    pub fn target_index(&self, name: &str) -> Option<usize> {
        self.targets.iter().position(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Parses manifest text. Relative paths are joined onto `base`; existence
    /// is not checked.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut rows = rdr.records();
        let header = match rows.next() {
            None => return Err(Error::EmptyResult("manifest has no header".into())),
            Some(h) => h.map_err(|e| csv_error(&e))?,
        };
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names.len() < 3 || names[..3] != FIXED_COLUMNS {
            return Err(Error::ParseError {
                line: 1,
                detail: format!("header must start with {}", FIXED_COLUMNS.join(",")),
            });
        }
        let targets = names[3..]
            .iter()
            .map(|n| {
                TargetSpec::lookup(n).ok_or_else(|| Error::ParseError {
                    line: 1,
                    detail: format!("unknown target '{n}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut m = Manifest::new(targets);
        for row in rows {
            let row = row.map_err(|e| csv_error(&e))?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            let bad = |detail: String| Error::ParseError { line, detail };
            if row.len() != names.len() {
                return Err(bad(format!("{} fields, header has {}", row.len(), names.len())));
            }
            let path = PathBuf::from(row[0].trim());
            if path.as_os_str().is_empty() {
                return Err(bad("empty path".into()));
            }
            let split = row[2].trim().parse::<Split>().map_err(bad)?;
            let values = (3..row.len())
                .map(|i| {
                    let v: f64 = row[i].trim().parse().map_err(|_| bad(format!("'{}' is not a number", &row[i])))?;
                    if !(-1.0..=1.0).contains(&v) {
                        return Err(bad(format!("scaled target {v} outside [-1, 1]")));
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<f64>>>()?;
            m.records.push(ManifestRecord {
                path: if path.is_absolute() { path } else { base.join(path) },
                condition: row[1].trim().to_string(),
                split,
                targets: values,
            });
        }
        if m.records.is_empty() {
            return Err(Error::EmptyResult("manifest has no records".into()));
        }
        Ok(m)
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let m = Self::parse(&text, base)?;
        if let Some(r) = m.records.iter().find(|r| !r.path.exists()) {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("segment file {} does not exist", r.path.display()),
            )));
        }
        Ok(m)
    }

    /// CSV text; paths inside `base` are written relative to it.
    pub fn to_csv(&self, base: &Path) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(self.targets.iter().map(|t| t.name)).collect();
        w.write_record(&header).map_err(|e| csv_error(&e))?;
        for r in &self.records {
            let path = r.path.strip_prefix(base).unwrap_or(&r.path);
            let mut row = vec![path.to_string_lossy().into_owned(), r.condition.clone(), r.split.to_string()];
            row.extend(r.targets.iter().map(|&v| super::fmt_real(v)));
            w.write_record(&row).map_err(|e| csv_error(&e))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        std::fs::write(path, self.to_csv(base)?)?;
        Ok(())
    }
}

fn csv_error(e: &csv::Error) -> Error {
    Error::ParseError {
        line: e.position().map_or(0, |p| p.line() as usize),
        detail: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(rows: &[&str]) -> String {
        let mut s = "path,condition,split,pesq\n".to_string();
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn split_fractions() {
        let splits = ["train"; 5].iter().chain(&["test"; 4]).chain(&["val"]).copied().collect::<Vec<_>>();
        let rows: Vec<String> = splits.iter().enumerate().map(|(i, s)| format!("s{i}.wav,c1,{s},0.5")).collect();
        let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
        let m = Manifest::parse(&text(&rows), Path::new("/data")).unwrap();
        let f = m.fractions();
        assert_eq!((f.train, f.test, f.val, f.unseen), (0.5, 0.4, 0.1, 0.0));
        assert_eq!(m.records[0].path, Path::new("/data/s0.wav"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Manifest::parse(&text(&["a.wav,c,train,0.1", "b.wav,c,train,1.2"]), Path::new("")).unwrap_err();
        assert!(matches!(e, Error::ParseError { line: 3, .. }), "{e}");
        let e = Manifest::parse(&text(&["a.wav,c,holdout,0.1"]), Path::new("")).unwrap_err();
        assert!(matches!(e, Error::ParseError { line: 2, .. }), "{e}");
        let e = Manifest::parse(&text(&["a.wav,c,train"]), Path::new("")).unwrap_err();
        assert!(matches!(e, Error::ParseError { line: 2, .. }), "{e}");
        let e = Manifest::parse("path,condition,split,nosuch\n", Path::new("")).unwrap_err();
        assert!(matches!(e, Error::ParseError { line: 1, .. }), "{e}");
        assert!(matches!(Manifest::parse("", Path::new("")), Err(Error::EmptyResult(_))));
        assert!(matches!(Manifest::parse(&text(&[]), Path::new("")), Err(Error::EmptyResult(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let m = Manifest::parse(&text(&["x/a.wav,\"noise:5,b\",val,-0.3333333333333333"]), Path::new("/d")).unwrap();
        let again = Manifest::parse(&m.to_csv(Path::new("/d")).unwrap(), Path::new("/d")).unwrap();
        assert_eq!(again, m);
        assert_eq!(m.records[0].condition, "noise:5,b");
    }
}
