//! Output files: a results CSV, the resolved config and a summary, all
//! written only after a run finishes and each via a temporary file and rename.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Where the three output files go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub config: PathBuf,
    pub summary: PathBuf,
}

impl OutputPaths {
    /// A path ending in `.csv` names the CSV itself, with the other two as
    /// siblings; anything else is a directory.
    pub fn from_out(out: &str) -> Self {
        let path = PathBuf::from(out);
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Self {
                config: dir.join(format!("{stem}.resolved.json")),
                summary: dir.join(format!("{stem}.summary.json")),
                csv: path,
            }
        } else {
            Self {
                csv: path.join("results.csv"),
                config: path.join("resolved_config.json"),
                summary: path.join("summary.json"),
            }
        }
    }
}

/// A header and rows of already formatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

/// Full-precision float cell; `{:.16e}` round-trips every finite `f64`.
pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numeric(format!("cannot serialise output: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(contents.as_bytes()).map_err(io)?;
    file.sync_all().map_err(io)?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

pub fn write_all(
    paths: &OutputPaths,
    csv: &str,
    config: &str,
    summary: &str,
) -> Result<(), CliError> {
    write_atomic(&paths.csv, csv)?;
    write_atomic(&paths.config, config)?;
    write_atomic(&paths.summary, summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_suffix_names_the_file_and_its_siblings() {
        let p = OutputPaths::from_out("runs/a.csv");
        assert_eq!(p.csv, PathBuf::from("runs/a.csv"));
        assert_eq!(p.config, PathBuf::from("runs/a.resolved.json"));
        assert_eq!(p.summary, PathBuf::from("runs/a.summary.json"));
        let d = OutputPaths::from_out("runs/b");
        assert_eq!(d.csv, PathBuf::from("runs/b/results.csv"));
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 5e-324] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(float(f64::NAN), "nan");
    }

    #[test]
    fn tables_render_with_lf_endings() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "2".into()]);
        assert_eq!(t.render(), "a,b\n1,2\n");
    }
}
