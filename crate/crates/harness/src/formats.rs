//! Text formats for score files and labels.
//!
//! Sample tensor (`RCPS1`): a header line `RCPS1 n K N_MC sigma`, then `n`
//! blocks of `K` lines, line `(i, k)` holding the `N_MC` draws of example
//! `i`, class `k` separated by spaces.
//!
//! Score matrix (`RCPM1`): a header line `RCPM1 n K`, then `n` lines of `K`
//! scores.
//!
//! Labels: one zero-based class index per line.
//!
//! Floats are written in Rust's shortest round-trip form, so reading back a
//! written file reproduces every value bit for bit. Blank lines and lines
//! starting with `#` are skipped everywhere. Errors name the file, the
//! 1-based line number and, for short files, the expected and found counts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rscp_core::scores::{ScoreMatrix, ScoreSamples};

use crate::error::{Error, Result};

pub const SAMPLES_MAGIC: &str = "RCPS1";
pub const MATRIX_MAGIC: &str = "RCPM1";

/// Files above this many cells still load, with a warning.
pub const LARGE_FILE_CELLS: u128 = 100_000_000;

/// Scores read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreFile {
    Samples(ScoreSamples),
    Matrix(ScoreMatrix),
}

/// Content lines with their 1-based line numbers.
struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self { path, inner: it.peekable(), last: text.lines().count() }
    }

    fn next_or(&mut self, what: impl FnOnce() -> String) -> Result<(usize, &'a str)> {
        self.inner.next().ok_or_else(|| Error::parse(self.path, self.last + 1, what()))
    }

    fn expect_end(&mut self, expected: &str) -> Result<()> {
        match self.inner.next() {
            None => Ok(()),
            Some((line, _)) => Err(Error::parse(self.path, line, format!("unexpected content after {expected}"))),
        }
    }
}

fn parse_floats(path: &Path, line_no: usize, line: &str, expected: usize, out: &mut Vec<f64>) -> Result<()> {
    let before = out.len();
    for (col, tok) in line.split_ascii_whitespace().enumerate() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("value {} ({tok:?}) is not a number", col + 1)))?;
        out.push(v);
    }
    let found = out.len() - before;
    if found != expected {
        return Err(Error::parse(path, line_no, format!("expected {expected} values, found {found}")));
    }
    Ok(())
}

fn header_field<T: std::str::FromStr>(path: &Path, line: usize, fields: &[&str], idx: usize, name: &str) -> Result<T> {
    fields
        .get(idx)
        .ok_or_else(|| Error::parse(path, line, format!("header is missing {name}")))?
        .parse()
        .map_err(|_| Error::parse(path, line, format!("header field {name} ({:?}) is malformed", fields[idx])))
}

fn warn_if_large(path: &Path, cells: u128) {
    if cells > LARGE_FILE_CELLS {
        log::warn!("{}: {cells} score cells exceeds the recommended limit of {LARGE_FILE_CELLS}", path.display());
    }
}

/// Parses either score format; `path` is only used in messages.
pub fn parse_scores(path: &Path, text: &str) -> Result<ScoreFile> {
    let mut lines = Lines::new(path, text);
    let (hl, header) = lines.next_or(|| "empty file, expected a header".into())?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    match fields[0] {
        SAMPLES_MAGIC => {
            if fields.len() != 5 {
                return Err(Error::parse(
                    path,
                    hl,
                    format!("expected `{SAMPLES_MAGIC} n K N_MC sigma`, found {header:?}"),
                ));
            }
            let n: usize = header_field(path, hl, &fields, 1, "n")?;
            let k: usize = header_field(path, hl, &fields, 2, "K")?;
            let n_mc: usize = header_field(path, hl, &fields, 3, "N_MC")?;
            let sigma: f64 = header_field(path, hl, &fields, 4, "sigma")?;
            let cells = n as u128 * k as u128 * n_mc as u128;
            warn_if_large(path, cells);
            let rows = n * k;
            let mut values = Vec::with_capacity(usize::try_from(cells).unwrap_or(0).min(1 << 28));
            for r in 0..rows {
                let (ln, line) =
                    lines.next_or(|| format!("expected {rows} score lines after the header, found {r}"))?;
                parse_floats(path, ln, line, n_mc, &mut values)?;
            }
            lines.expect_end("the last score line")?;
            let s = ScoreSamples::new(n, k, n_mc, sigma, None, values)
                .map_err(|e| Error::parse(path, hl, e.to_string()))?;
            Ok(ScoreFile::Samples(s))
        }
        MATRIX_MAGIC => {
            if fields.len() != 3 {
                return Err(Error::parse(path, hl, format!("expected `{MATRIX_MAGIC} n K`, found {header:?}")));
            }
            let n: usize = header_field(path, hl, &fields, 1, "n")?;
            let k: usize = header_field(path, hl, &fields, 2, "K")?;
            warn_if_large(path, n as u128 * k as u128);
            let mut values = Vec::with_capacity(n.saturating_mul(k).min(1 << 28));
            for r in 0..n {
                let (ln, line) = lines.next_or(|| format!("expected {n} score lines after the header, found {r}"))?;
                parse_floats(path, ln, line, k, &mut values)?;
            }
            lines.expect_end("the last score line")?;
            let m = ScoreMatrix::new(n, k, values).map_err(|e| Error::parse(path, hl, e.to_string()))?;
            Ok(ScoreFile::Matrix(m))
        }
        other => {
            Err(Error::parse(path, hl, format!("unknown header {other:?}; expected {SAMPLES_MAGIC} or {MATRIX_MAGIC}")))
        }
    }
}

pub fn read_scores(path: &Path) -> Result<ScoreFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(path, &text)
}

pub fn format_samples(s: &ScoreSamples) -> String {
    let mut out = format!("{SAMPLES_MAGIC} {} {} {} {}\n", s.rows(), s.num_classes(), s.n_mc(), s.sigma);
    for i in 0..s.rows() {
        for k in 0..s.num_classes() {
            push_row(&mut out, s.cell(i, k));
        }
    }
    out
}

pub fn format_matrix(m: &ScoreMatrix) -> String {
    let mut out = format!("{MATRIX_MAGIC} {} {}\n", m.rows(), m.num_classes());
    for i in 0..m.rows() {
        push_row(&mut out, m.row(i));
    }
    out
}

fn push_row(out: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(' ');
        }
        write!(out, "{v}").expect("writing to a String cannot fail");
    }
    out.push('\n');
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_samples(path: &Path, s: &ScoreSamples) -> Result<()> {
    write_text(path, &format_samples(s))
}

pub fn write_matrix(path: &Path, m: &ScoreMatrix) -> Result<()> {
    write_text(path, &format_matrix(m))
}

/// Parses a labels file. With `num_classes`, every label must be below it.
pub fn parse_labels(path: &Path, text: &str, num_classes: Option<usize>) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (ln, line) in Lines::new(path, text).inner {
        let y: usize =
            line.parse().map_err(|_| Error::parse(path, ln, format!("label {line:?} is not a class index")))?;
        if let Some(k) = num_classes {
            if y >= k {
                return Err(Error::parse(path, ln, format!("label {y} out of range for {k} classes")));
            }
        }
        labels.push(y);
    }
    Ok(labels)
}

pub fn read_labels(path: &Path, num_classes: Option<usize>) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(path, &text, num_classes)
}

pub fn format_labels(labels: &[usize]) -> String {
    labels.iter().map(|y| format!("{y}\n")).collect()
}

/// Reads scores and labels and checks that they describe the same examples.
pub fn read_scored_dataset(scores: &Path, labels: &Path) -> Result<(ScoreFile, Vec<usize>)> {
    let file = read_scores(scores)?;
    let (n, k) = match &file {
        ScoreFile::Samples(s) => (s.rows(), s.num_classes()),
        ScoreFile::Matrix(m) => (m.rows(), m.num_classes()),
    };
    let y = read_labels(labels, Some(k))?;
    if y.len() != n {
        return Err(Error::parse(labels, 0, format!("expected {n} labels to match the score file, found {}", y.len())));
    }
    Ok((file, y))
}

/// Reads a JSON document.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    write_text(path, &(text + "\n"))
}
