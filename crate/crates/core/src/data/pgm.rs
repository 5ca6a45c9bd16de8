//! Binary PGM (P5, maxval 255) previews.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Maps `[lo, hi]` linearly onto `0..=255`, clamping outside values.
pub fn encode(grid: &Grid, lo: f64, hi: f64) -> Vec<u8> {
    let (h, w) = grid.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    out.extend(grid.as_slice().iter().map(|&v| {
        let scaled = ((v - lo) / span * 255.0).round();
        scaled.clamp(0.0, 255.0) as u8
    }));
    out
}

pub fn write(grid: &Grid, lo: f64, hi: f64, path: impl AsRef<Path>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode(grid, lo, hi))?;
    f.flush()?;
    Ok(())
}

/// Preview of `[-1, 1]` data.
pub fn write_normalized(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    write(grid, -1.0, 1.0, path)
}

/// Preview scaled to the grid's own maximum (residual maps).
pub fn write_self_scaled(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let hi = grid.as_slice().iter().cloned().fold(0.0, f64::max);
    write(grid, 0.0, hi, path)
}

/// Parses a P5 image back into raw 0..=255 values.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
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
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Format("expected P5 with maxval 255".into()));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM dimension {s:?}")))
    };
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let pixels = bytes.get(pos..).unwrap_or_default();
    if pixels.len() != w * h {
        return Err(Error::Truncated {
            expected: w * h,
            found: pixels.len(),
        });
    }
    Ok((w, h, pixels.to_vec()))
}

pub fn read(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
