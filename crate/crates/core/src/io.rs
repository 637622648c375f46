//! File formats: PGM images, raw float images, PBM masks, measurement files
//! and patch-graph files. All binary numbers are little-endian except the
//! 16-bit PGM samples, which are big-endian as that format requires.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::PatchGraph;
use crate::grid::Image;
use crate::sensing::{Measurements, SamplingPlan};

pub const RAW_MAGIC: &[u8; 4] = b"NCSF";
pub const MEASUREMENT_MAGIC: &[u8; 4] = b"NCSM";
pub const GRAPH_MAGIC: &[u8; 4] = b"NCSG";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Reads whitespace-separated header tokens of a netpbm file, skipping comments.
/// Consumes exactly one whitespace byte after the last token.
fn read_header_tokens(r: &mut impl Read, count: usize) -> Result<Vec<String>> {
    let mut tokens = Vec::with_capacity(count);
    let mut current = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    while tokens.len() < count {
        if r.read(&mut byte)? == 0 {
            return Err(format_err("truncated header"));
        }
        let ch = byte[0] as char;
        if in_comment {
            in_comment = ch != '\n';
            continue;
        }
        if ch == '#' && current.is_empty() {
            in_comment = true;
        } else if ch.is_ascii_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else {
            current.push(ch);
        }
    }
    Ok(tokens)
}

fn parse_usize(token: &str, what: &str) -> Result<usize> {
    token.parse().map_err(|_| format_err(format!("bad {what}: {token:?}")))
}

/// Reads a binary PGM (P5) and scales samples to `[0, 1]` by the max value.
pub fn read_pgm_from(r: &mut impl Read) -> Result<Image> {
    let tokens = read_header_tokens(r, 4)?;
    if tokens[0] != "P5" {
        return Err(format_err(format!("not a binary PGM (magic {:?})", tokens[0])));
    }
    let width = parse_usize(&tokens[1], "width")?;
    let height = parse_usize(&tokens[2], "height")?;
    let maxval = parse_usize(&tokens[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("maxval {maxval} out of range")));
    }
    let n = width * height;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let mut buf = vec![0u8; n * bytes_per];
    r.read_exact(&mut buf).map_err(|_| format_err("truncated PGM pixel data"))?;
    let scale = maxval as f64;
    let data = if bytes_per == 1 {
        buf.iter().map(|&b| b as f64 / scale).collect()
    } else {
        buf.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Image::new(width, height, data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    read_pgm_from(&mut BufReader::new(File::open(path)?))
}

/// Writes a P5 PGM with 8 or 16 bits per sample; values are clamped to `[0, 1]`.
pub fn write_pgm_to(w: &mut impl Write, img: &Image, bits: u8) -> Result<()> {
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        _ => return Err(Error::InvalidParameter(format!("PGM depth must be 8 or 16, got {bits}"))),
    };
    write!(w, "P5\n{} {}\n{}\n", img.width(), img.height(), maxval)?;
    let quant = |v: f64| (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
    let mut buf = Vec::with_capacity(img.len() * (bits as usize / 8));
    for &v in img.as_slice() {
        let q = quant(if v.is_nan() { 0.0 } else { v });
        if bits == 8 {
            buf.push(q as u8);
        } else {
            buf.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Image, bits: u8) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm_to(&mut w, img, bits)?;
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| format_err("truncated file"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| format_err("truncated file"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| format_err("truncated header"))?;
    if &b != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    if r.read(&mut b)? != 0 {
        return Err(format_err("trailing bytes after payload"));
    }
    Ok(())
}

/// Lossless image format: `NCSF`, u32 width, u32 height, u32 reserved, then
/// row-major f64 samples.
pub fn write_raw_to(w: &mut impl Write, img: &Image) -> Result<()> {
    w.write_all(RAW_MAGIC)?;
    w.write_all(&(img.width() as u32).to_le_bytes())?;
    w.write_all(&(img.height() as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for &v in img.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raw_from(r: &mut impl Read) -> Result<Image> {
    read_magic(r, RAW_MAGIC)?;
    let width = read_u32(r)? as usize;
    let height = read_u32(r)? as usize;
    let _reserved = read_u32(r)?;
    let data = (0..width * height).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    expect_eof(r)?;
    Image::new(width, height, data)
}

pub fn write_raw(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raw_to(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Image> {
    read_raw_from(&mut BufReader::new(File::open(path)?))
}

/// Mask as a P4 bitmap; a set bit (black) marks a sampled coefficient.
pub fn write_pbm_to(w: &mut impl Write, plan: &SamplingPlan) -> Result<()> {
    let (width, height) = (plan.width(), plan.height());
    write!(w, "P4\n{width} {height}\n")?;
    let row_bytes = width.div_ceil(8);
    let mask = plan.mask();
    for r in 0..height {
        let mut row = vec![0u8; row_bytes];
        for c in 0..width {
            if mask[r * width + c] {
                row[c / 8] |= 0x80 >> (c % 8);
            }
        }
        w.write_all(&row)?;
    }
    Ok(())
}

/// Reads a P4 mask. Line count and seed are not stored in the file.
pub fn read_pbm_from(r: &mut impl Read) -> Result<SamplingPlan> {
    let tokens = read_header_tokens(r, 3)?;
    if tokens[0] != "P4" {
        return Err(format_err(format!("not a binary PBM (magic {:?})", tokens[0])));
    }
    let width = parse_usize(&tokens[1], "width")?;
    let height = parse_usize(&tokens[2], "height")?;
    let row_bytes = width.div_ceil(8);
    let mut buf = vec![0u8; row_bytes * height];
    r.read_exact(&mut buf).map_err(|_| format_err("truncated PBM data"))?;
    let mask = (0..width * height)
        .map(|i| {
            let (row, c) = (i / width, i % width);
            buf[row * row_bytes + c / 8] & (0x80 >> (c % 8)) != 0
        })
        .collect();
    SamplingPlan::from_mask(width, height, mask, 0, 0)
}

pub fn write_pbm(path: impl AsRef<Path>, plan: &SamplingPlan) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pbm_to(&mut w, plan)?;
    w.flush()?;
    Ok(())
}

pub fn read_pbm(path: impl AsRef<Path>) -> Result<SamplingPlan> {
    read_pbm_from(&mut BufReader::new(File::open(path)?))
}

/// Measurement values as stored on disk, before they are attached to a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub values: Vec<Complex64>,
    pub noise_sigma: f64,
    /// Noise seed; `u64::MAX` on disk when no noise was added.
    pub seed: Option<u64>,
}

impl MeasurementRecord {
    /// Attaches the values to the mask they were taken with.
    pub fn into_measurements(self, plan: SamplingPlan) -> Result<Measurements> {
        let mut m = Measurements::new(self.values, plan)?;
        m.noise_sigma = self.noise_sigma;
        m.noise_seed = self.seed;
        Ok(m)
    }
}

/// `NCSM`, u32 m, f64 noise sigma, u64 noise seed, then m (re, im) pairs.
pub fn write_measurements_to(w: &mut impl Write, f: &Measurements) -> Result<()> {
    w.write_all(MEASUREMENT_MAGIC)?;
    w.write_all(&(f.len() as u32).to_le_bytes())?;
    w.write_all(&f.noise_sigma.to_le_bytes())?;
    w.write_all(&f.noise_seed.unwrap_or(u64::MAX).to_le_bytes())?;
    for c in &f.values {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_measurements_from(r: &mut impl Read) -> Result<MeasurementRecord> {
    read_magic(r, MEASUREMENT_MAGIC)?;
    let m = read_u32(r)? as usize;
    let noise_sigma = read_f64(r)?;
    let seed = read_u64(r)?;
    let values = (0..m)
        .map(|_| Ok(Complex64::new(read_f64(r)?, read_f64(r)?)))
        .collect::<Result<Vec<_>>>()?;
    expect_eof(r)?;
    Ok(MeasurementRecord {
        values,
        noise_sigma,
        seed: (seed != u64::MAX).then_some(seed),
    })
}

pub fn write_measurements(path: impl AsRef<Path>, f: &Measurements) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_measurements_to(&mut w, f)?;
    w.flush()?;
    Ok(())
}

pub fn read_measurements(path: impl AsRef<Path>) -> Result<MeasurementRecord> {
    read_measurements_from(&mut BufReader::new(File::open(path)?))
}

/// `NCSG`, u32 n, u64 edge count, then CSR arrays: n + 1 u64 offsets,
/// u32 neighbor indices, f64 weights.
pub fn write_graph_to(w: &mut impl Write, g: &PatchGraph) -> Result<()> {
    w.write_all(GRAPH_MAGIC)?;
    w.write_all(&(g.node_count() as u32).to_le_bytes())?;
    w.write_all(&(g.edge_count() as u64).to_le_bytes())?;
    for &o in g.offsets() {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    for &j in g.neighbors() {
        w.write_all(&j.to_le_bytes())?;
    }
    for &wt in g.weights() {
        w.write_all(&wt.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a graph file; the grid shape is not stored and must be supplied.
pub fn read_graph_from(r: &mut impl Read, width: usize, height: usize) -> Result<PatchGraph> {
    read_magic(r, GRAPH_MAGIC)?;
    let n = read_u32(r)? as usize;
    if n != width * height {
        return Err(format_err(format!("graph has {n} nodes, expected {width}x{height}")));
    }
    let edges = read_u64(r)? as usize;
    let offsets = (0..=n).map(|_| Ok(read_u64(r)? as usize)).collect::<Result<Vec<_>>>()?;
    let neighbors = (0..edges).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let weights = (0..edges).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    expect_eof(r)?;
    PatchGraph::from_csr(width, height, offsets, neighbors, weights, 0.0)
}

pub fn write_graph(path: impl AsRef<Path>, g: &PatchGraph) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_graph_to(&mut w, g)?;
    w.flush()?;
    Ok(())
}

pub fn read_graph(path: impl AsRef<Path>, width: usize, height: usize) -> Result<PatchGraph> {
    read_graph_from(&mut BufReader::new(File::open(path)?), width, height)
}
