//! Binary (P5) PGM images: header-only format, bit-exact, viewable anywhere.
//! Used for dataset inspection, divergence-field dumps, and agreement
//! snapshots (255 = consistent / high).

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::divergence::{ConsistencyMask, DivergenceField};
use crate::label::LabelMap;
use crate::{Error, Result};

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "pgm: {} pixels for {width}x{height}",
            pixels.len()
        )));
    }
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    out.flush()?;
    Ok(())
}

/// Grayscale image from values in [0, 1].
pub fn write_gray(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm(path, width, height, &pixels)
}

/// Label map scaled so the largest class is white. One file per batch item
/// is the caller's business; this writes batch element `b`.
pub fn write_labels(path: &Path, labels: &LabelMap, b: usize) -> Result<()> {
    let scale = 255.0 / (labels.classes() - 1) as f64;
    let hw = labels.height() * labels.width();
    let pixels: Vec<u8> = labels.data()[b * hw..][..hw]
        .iter()
        .map(|&v| (v as f64 * scale).round() as u8)
        .collect();
    write_pgm(path, labels.width(), labels.height(), &pixels)
}

/// Divergence field of batch element `b`, 255 = high divergence.
pub fn write_divergence(path: &Path, field: &DivergenceField, b: usize) -> Result<()> {
    let hw = field.height() * field.width();
    write_gray(
        path,
        field.width(),
        field.height(),
        &field.values()[b * hw..][..hw],
    )
}

/// Consistency mask of batch element `b`, 255 = consistent.
pub fn write_mask(path: &Path, mask: &ConsistencyMask, b: usize) -> Result<()> {
    let hw = mask.height() * mask.width();
    let pixels: Vec<u8> = mask.cons()[b * hw..][..hw]
        .iter()
        .map(|&c| if c { 255 } else { 0 })
        .collect();
    write_pgm(path, mask.width(), mask.height(), &pixels)
}

/// Minimal P5 reader, for round-trip tests and external checks.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let header_err = || Error::Shape(format!("{}: malformed PGM header", path.display()));
    // P5 \n width space height \n maxval \n
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < raw.len() {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&raw[start..pos]).map_err(|_| header_err())?);
    }
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "255" {
        return Err(header_err());
    }
    let width: usize = fields[1].parse().map_err(|_| header_err())?;
    let height: usize = fields[2].parse().map_err(|_| header_err())?;
    pos += 1; // single whitespace after maxval
    let pixels = raw[pos..].to_vec();
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "{}: expected {} pixels, found {}",
            path.display(),
            width * height,
            pixels.len()
        )));
    }
    Ok((width, height, pixels))
}
