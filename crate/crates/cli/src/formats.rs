//! Plain-text data files.
//!
//! - features: header `<rows> <cols>`, then one whitespace-separated row per line
//! - labels: one integer per line, `-` for a missing label
//! - split: one of `train`, `val`, `test` per line, optionally suffixed `,unlabeled`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use xmmr_core::{Label, Matrix};

use crate::error::{CliError, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Lines that carry content, with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<Matrix> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or_else(|| CliError::parse(path, 1, "missing `<rows> <cols>` header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::parse(path, hl, "header must be `<rows> <cols>`"))?;
    let [rows, cols] = dims[..] else {
        return Err(CliError::parse(path, hl, "header must be `<rows> <cols>`"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (ln, line) in lines {
        seen += 1;
        if seen > rows {
            return Err(CliError::parse(path, ln, format!("more than {rows} data rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| CliError::parse(path, ln, format!("non-numeric cell `{tok}`")))?;
            if !v.is_finite() {
                return Err(CliError::parse(path, ln, format!("non-finite cell `{tok}`")));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(CliError::parse(path, ln, format!("expected {cols} values, found {}", data.len() - before)));
        }
    }
    if seen != rows {
        return Err(CliError::parse(path, hl, format!("header declares {rows} rows, file has {seen}")));
    }
    Ok(Matrix::from_vec(rows, cols, data)?)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    parse_matrix(&read(path)?, path)
}

/// Values use the shortest representation that parses back to the same bits.
pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 20 + 16);
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for row in m.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_text(path, &format_matrix(m))
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<Option<Label>>> {
    content_lines(text)
        .map(|(ln, line)| {
            let mut toks = line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty());
            let tok = toks.next().unwrap_or("");
            if toks.next().is_some() {
                return Err(CliError::parse(path, ln, "multi-label rows are not supported"));
            }
            if tok == "-" {
                return Ok(None);
            }
            tok.parse()
                .map(Some)
                .map_err(|_| CliError::parse(path, ln, format!("label `{tok}` is not an integer")))
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<Option<Label>>> {
    parse_labels(&read(path)?, path)
}

pub fn format_labels(labels: &[Label]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn write_labels(path: &Path, labels: &[Label]) -> Result<()> {
    write_text(path, &format_labels(labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn tag(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Part::Train),
            "val" => Some(Part::Val),
            "test" => Some(Part::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitEntry {
    pub part: Part,
    pub unlabeled: bool,
}

pub fn parse_split(text: &str, path: &Path) -> Result<Vec<SplitEntry>> {
    content_lines(text)
        .map(|(ln, line)| {
            let mut parts = None;
            let mut unlabeled = false;
            for tok in line.split(',').map(str::trim) {
                if tok == "unlabeled" {
                    unlabeled = true;
                } else if let Some(p) = Part::from_tag(tok) {
                    if parts.replace(p).is_some() {
                        return Err(CliError::parse(path, ln, "row assigned to more than one split"));
                    }
                } else {
                    return Err(CliError::parse(path, ln, format!("unknown split token `{tok}`")));
                }
            }
            let part = parts.ok_or_else(|| CliError::parse(path, ln, "missing train/val/test token"))?;
            Ok(SplitEntry { part, unlabeled })
        })
        .collect()
}

pub fn read_split(path: &Path) -> Result<Vec<SplitEntry>> {
    parse_split(&read(path)?, path)
}

pub fn format_split(entries: &[SplitEntry]) -> String {
    entries
        .iter()
        .map(|e| if e.unlabeled { format!("{},unlabeled\n", e.part.tag()) } else { format!("{}\n", e.part.tag()) })
        .collect()
}
