use std::path::Path;

use crate::ingest::wire;
use crate::{Error, Result};

/// Encodes a `rows × cols` matrix as an 8-bit binary PGM, mapping the
/// minimum to 0 and the maximum to 255. A constant matrix is all black.
pub fn to_pgm(rows: usize, cols: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("{} values do not form a {rows} x {cols} image", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cannot render a matrix with non-finite entries".into()));
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn render_matrix(rows: usize, cols: usize, values: &[f64], path: &Path) -> Result<()> {
    wire::write_file(path, &to_pgm(rows, cols, values)?)
}

/// Parses a binary PGM with maxval 255 into `(rows, cols, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Format("not an 8-bit P5 image".into());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let cols: usize = fields[1].parse().map_err(|_| bad())?;
    let rows: usize = fields[2].parse().map_err(|_| bad())?;
    let raster = bytes.get(pos..).ok_or_else(bad)?;
    if raster.len() != rows * cols {
        return Err(Error::Format(format!(
            "P5 raster holds {} bytes, header declares {cols} x {rows}",
            raster.len()
        )));
    }
    Ok((rows, cols, raster.to_vec()))
}
