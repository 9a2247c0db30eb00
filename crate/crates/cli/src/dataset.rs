//! CSV datasets: header `y1,...,yd,u`, one sample per line, 17 significant
//! digits so that finite doubles survive a round trip unchanged.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use sepreg_core::{Family, SampleSet};

fn expected_header(dims: usize) -> Vec<String> {
    (1..=dims).map(|k| format!("y{k}")).chain(["u".to_string()]).collect()
}

pub fn write_dataset(path: &Path, data: &SampleSet) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", expected_header(data.dims()).join(","))?;
    for j in 0..data.len() {
        let mut line = String::new();
        for &v in data.row(j) {
            line.push_str(&format!("{v:.16e},"));
        }
        line.push_str(&format!("{:.16e}", data.outputs()[j]));
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset whose inputs follow `family`.
pub fn read_dataset(path: &Path, family: Family) -> Result<SampleSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_dataset(file, family).with_context(|| format!("reading {}", path.display()))
}

pub fn parse_dataset<R: std::io::Read>(reader: R, family: Family) -> Result<SampleSet> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers().context("line 1: missing header")?.clone();
    if header.len() < 2 {
        bail!("line 1: need at least one input column and the output column u");
    }
    let dims = header.len() - 1;
    for (i, (got, want)) in header.iter().zip(expected_header(dims)).enumerate() {
        if got.trim() != want {
            bail!("line 1: column {} is named '{}', expected '{}'", i + 1, got, want);
        }
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let (row, line) = (i + 1, i + 2);
        let record = record.with_context(|| format!("line {line}: malformed row"))?;
        if record.len() != dims + 1 {
            bail!("line {line}: expected {} fields, found {}", dims + 1, record.len());
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("line {line}: column '{}' holds '{}'", &header[col], field))?;
            if !v.is_finite() {
                bail!("line {line} (data row {row}): column '{}' is not finite ({v})", &header[col]);
            }
            if col < dims {
                if family.check_domain(v).is_err() {
                    bail!("line {line} (data row {row}): column '{}' = {v} outside the {} domain", &header[col], family.name());
                }
                inputs.push(v);
            } else {
                outputs.push(v);
            }
        }
    }
    if outputs.is_empty() {
        bail!("no data rows");
    }
    Ok(SampleSet::new(dims, inputs, outputs, family)?)
}
