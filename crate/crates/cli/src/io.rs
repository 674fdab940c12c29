//! CSV sample I/O.
//!
//! Format: header line `x1,x2,...,xn`, then decimal floats, UTF-8, no index
//! column.

use anyhow::{bail, Context};
use covgeom::SampleMatrix;
use nalgebra::DMatrix;
use std::path::Path;

pub fn read_samples(path: &Path) -> anyhow::Result<SampleMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = reader.headers().context("missing header line")?.clone();
    let n = headers.len();
    for (j, h) in headers.iter().enumerate() {
        let expected = format!("x{}", j + 1);
        if h.trim() != expected {
            bail!("line 1: expected header column {expected:?}, found {h:?}");
        }
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for record in reader.records() {
        let record = record.context("malformed CSV record")?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".into());
        if record.len() != n {
            bail!("line {line}: expected {n} columns, found {}", record.len());
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("line {line}: cannot parse {field:?} as a number"))?;
            if !v.is_finite() {
                bail!("line {line}: non-finite value {field:?}");
            }
            rows.push(v);
        }
        count += 1;
    }
    if count == 0 {
        bail!("no data rows in {}", path.display());
    }
    let data = DMatrix::from_row_slice(count, n, &rows);
    Ok(SampleMatrix::new(data, 0)?)
}

pub fn write_samples<W: std::io::Write>(out: &mut W, samples: &SampleMatrix) -> anyhow::Result<()> {
    let n = samples.dim();
    let header: Vec<String> = (1..=n).map(|j| format!("x{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..samples.count() {
        let row: Vec<String> = (0..n)
            .map(|j| format!("{}", samples.data()[(i, j)]))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
