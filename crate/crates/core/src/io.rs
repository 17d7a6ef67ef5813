//! CSV ingestion and export of samples.
//!
//! The file layout is a header `y,d,x,z` followed by one row per
//! observation. `d` must be an integer in `1..=K` with every level present,
//! `z` a nonnegative integer. Row numbers in errors count the header as
//! row 1.

use crate::error::{Error, Result};
use crate::kreg::Sample;
use std::io::{Read, Write};
use std::path::Path;

pub const HEADER: [&str; 4] = ["y", "d", "x", "z"];

fn schema(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn parse_real(s: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| schema(row, column, format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(schema(row, column, format!("not finite: {s:?}")));
    }
    Ok(v)
}

fn parse_level(s: &str, row: usize, column: &str) -> Result<i64> {
    let t = s.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Ok(v);
    }
    match t.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 => Ok(v as i64),
        _ => Err(schema(row, column, format!("not an integer: {s:?}"))),
    }
}

/// Parse a sample from CSV text.
pub fn read_csv<R: Read>(reader: R) -> Result<Sample> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = r.headers().map_err(|e| schema(1, "header", e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    for want in HEADER {
        if !names.contains(&want) {
            return Err(schema(1, want, "missing column"));
        }
    }
    if let Some(extra) = names.iter().find(|c| !HEADER.contains(c)) {
        return Err(schema(1, extra, "unexpected column"));
    }
    if names != HEADER {
        return Err(schema(1, "header", format!("columns must be in order y,d,x,z, got {}", names.join(","))));
    }

    let (mut y, mut d, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| schema(row, "record", e.to_string()))?;
        if rec.len() != 4 {
            return Err(schema(row, "record", format!("expected 4 fields, found {}", rec.len())));
        }
        y.push(parse_real(&rec[0], row, "y")?);
        let dv = parse_level(&rec[1], row, "d")?;
        if !(1..=64).contains(&dv) {
            return Err(schema(row, "d", format!("level must be in 1..=64, got {dv}")));
        }
        d.push(dv as u32);
        x.push(parse_real(&rec[2], row, "x")?);
        let zv = parse_level(&rec[3], row, "z")?;
        if !(0..64).contains(&zv) {
            return Err(schema(row, "z", format!("level must be in 0..64, got {zv}")));
        }
        z.push(zv as u32);
    }
    if y.is_empty() {
        return Err(schema(2, "record", "no observations"));
    }
    let k = *d.iter().max().unwrap();
    let mut seen = vec![false; k as usize];
    for &v in &d {
        seen[v as usize - 1] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let first_above = d.iter().position(|&v| v as usize > missing + 1).unwrap();
        return Err(schema(
            first_above + 2,
            "d",
            format!("levels must be contiguous from 1; level {} is absent", missing + 1),
        ));
    }
    Sample::new(y, d, x, z)
}

/// Load and validate a sample file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Sample> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file))
}

/// Write a sample with full float precision.
pub fn write_csv<W: Write>(sample: &Sample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for i in 0..sample.n() {
        let o = sample.observation(i);
        w.write_record([o.y.to_string(), o.d.to_string(), o.x.to_string(), o.z.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(sample: &Sample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_csv(sample, std::io::BufWriter::new(file))
}
