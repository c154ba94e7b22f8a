//! On-disk formats: raw little-endian f32 arrays with plain-text metadata
//! sidecars, 8/16-bit grayscale PNG previews, CSV tables, and run
//! manifests. Nothing here writes timestamps, so identical runs produce
//! bitwise-identical outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// Raw little-endian f32 array.
pub fn write_raw_f32(path: &Path, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw_f32(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(CliError::data(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Flat `key = value` metadata sidecar.
#[derive(Debug, Clone, Default)]
pub struct Meta {
    entries: Vec<(String, String)>,
}

impl Meta {
    pub fn new() -> Self {
        Meta::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn set_f64(&mut self, key: &str, value: f64) -> &mut Self {
        // full-precision round-trip
        self.set(key, format!("{value:e}"))
    }

    pub fn set_list(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
        self.set(key, joined.join(" "))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (k, v) in &self.entries {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<BTreeMap<String, String>> {
        let text = std::fs::read_to_string(path)?;
        let mut out = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::data(format!("{}: malformed meta line", path.display())))?;
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }
}

pub fn meta_f64(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<f64> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::data(format!("{}: missing or invalid '{key}'", path.display())))
}

pub fn meta_usize(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<usize> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::data(format!("{}: missing or invalid '{key}'", path.display())))
}

pub fn meta_list(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<Vec<f64>> {
    let raw = meta
        .get(key)
        .ok_or_else(|| CliError::data(format!("{}: missing '{key}'", path.display())))?;
    raw.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::data(format!("{}: invalid entry in '{key}'", path.display())))
        })
        .collect()
}

/// 8-bit grayscale PNG, mapping `[lo, hi]` to `[0, 255]`. Returns the
/// range actually used so callers can record it in metadata.
pub fn write_png_gray8(path: &Path, w: usize, h: usize, data: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = value_range(data);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let pixels: Vec<u8> = data.iter().map(|&v| (((v - lo) * scale).round() as i64).clamp(0, 255) as u8).collect();
    write_png(path, w, h, &pixels, png::BitDepth::Eight)?;
    Ok((lo, hi))
}

/// 16-bit grayscale PNG with the same range convention.
pub fn write_png_gray16(path: &Path, w: usize, h: usize, data: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = value_range(data);
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    let mut bytes = Vec::with_capacity(data.len() * 2);
    for &v in data {
        let q = (((v - lo) * scale).round() as i64).clamp(0, 65535) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    write_png(path, w, h, &bytes, png::BitDepth::Sixteen)?;
    Ok((lo, hi))
}

fn value_range(data: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

fn write_png(path: &Path, w: usize, h: usize, bytes: &[u8], depth: png::BitDepth) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| CliError::data(format!("{}: png header: {e}", path.display())))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| CliError::data(format!("{}: png data: {e}", path.display())))?;
    Ok(())
}

/// CSV writer with a fixed header.
pub struct Csv {
    w: BufWriter<File>,
}

impl Csv {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(Csv { w })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }
}

pub fn fmt_g(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.10e}")
    }
}

/// Per-run manifest: command, crate version, seeds, and the full config
/// echo. Enough to reproduce the run; no timestamps.
pub fn write_manifest(dir: &Path, command: &str, seed: u64, config_text: &str) -> Result<()> {
    let path = dir.join(format!("manifest_{command}.txt"));
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "command = {command}")?;
    writeln!(w, "version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "seed = {seed}")?;
    writeln!(w, "config:")?;
    for line in config_text.lines() {
        writeln!(w, "  {line}")?;
    }
    Ok(())
}

/// Refuses to clobber existing outputs unless `--force` was given.
pub fn guard_overwrite(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(CliError::config(format!(
                "refusing to overwrite {} (pass --force to allow)",
                p.display()
            )));
        }
    }
    Ok(())
}
