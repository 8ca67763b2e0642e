//! Plain-text dense matrix files.
//!
//! The first line holds `rows cols`; every following line is one row of
//! whitespace-separated decimals printed like C's `%.17g`, which round-trips
//! every finite `f64` exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Formats `x` the way `printf("%.17g", x)` does.
pub fn fmt_g17(x: f64) -> String {
    const PREC: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (PREC - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= PREC {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let digits = (PREC - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.digits$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_g17(m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(format_matrix(m).as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("bad header `{header}`: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse(format!("header must be `rows cols`, got `{header}`")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::Parse(format!("row {i}: `{tok}`: {e}")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Parse(format!(
                "row {i} has {} entries, expected {cols}",
                data.len() - before
            )));
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {rows} rows, found {}",
            data.len() / cols.max(1)
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut text = String::new();
    for line in f.lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_matrix(&text)
}
