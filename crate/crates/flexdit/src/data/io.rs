//! On-disk dataset format.
//!
//! Each sample is `<id>.sample`: a 16-byte header of four little-endian u32
//! words (C, H, W, label) followed by `C*H*W` little-endian f32 values.
//! A directory holds an `index` file (one `id label HxW` line per sample)
//! and the `dataset.spec` key-value description that generated it.

use super::{DatasetSpec, ImageSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub fn write_sample(path: &Path, sample: &ImageSample) -> Result<()> {
    let s = sample.latent.shape();
    let mut f = fs::File::create(path)?;
    let mut header = Vec::with_capacity(16);
    for v in [s[0] as u32, s[1] as u32, s[2] as u32, sample.label as u32] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&header)?;
    let mut body = Vec::with_capacity(sample.latent.numel() * 4);
    for v in sample.latent.data() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&body)?;
    Ok(())
}

pub fn read_sample(path: &Path) -> Result<ImageSample> {
    let mut f = fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open sample {}: {e}", path.display())))?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header)
        .map_err(|e| Error::data(format!("short sample header in {}: {e}", path.display())))?;
    let word = |i: usize| u32::from_le_bytes(header[i * 4..(i + 1) * 4].try_into().unwrap()) as usize;
    let (c, h, w, label) = (word(0), word(1), word(2), word(3));
    let mut body = Vec::new();
    f.read_to_end(&mut body)?;
    if body.len() != c * h * w * 4 {
        return Err(Error::data(format!(
            "sample {} body has {} bytes, expected {}",
            path.display(),
            body.len(),
            c * h * w * 4
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(ImageSample {
        latent: Tensor::new(vec![c, h, w], data)?,
        label,
        source_size: (h, w),
    })
}

/// Serialize a dataset spec as `key = value` lines.
pub fn spec_to_string(spec: &DatasetSpec) -> String {
    let resolutions = spec
        .resolutions
        .iter()
        .map(|&(h, w, wt)| format!("{h}x{w}:{wt}"))
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "classes = {}\nchannels = {}\ncount = {}\nseed = {}\nbg_noise = {}\nfg_noise = {}\nresolutions = {}\n",
        spec.classes, spec.channels, spec.count, spec.seed, spec.bg_noise, spec.fg_noise, resolutions
    )
}

pub fn parse_spec(text: &str) -> Result<DatasetSpec> {
    let mut spec = DatasetSpec {
        classes: 0,
        channels: 4,
        count: 0,
        seed: 0,
        resolutions: Vec::new(),
        bg_noise: 0.3,
        fg_noise: 0.1,
    };
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::data(format!("dataset.spec line {}: missing '='", ln + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::data(format!("dataset.spec: bad integer '{v}' for {key}")))
        };
        let parse_f64 = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::data(format!("dataset.spec: bad number '{v}' for {key}")))
        };
        match key {
            "classes" => spec.classes = parse_usize(value)?,
            "channels" => spec.channels = parse_usize(value)?,
            "count" => spec.count = parse_usize(value)?,
            "seed" => {
                spec.seed = value
                    .parse::<u64>()
                    .map_err(|_| Error::data(format!("dataset.spec: bad seed '{value}'")))?
            }
            "bg_noise" => spec.bg_noise = parse_f64(value)?,
            "fg_noise" => spec.fg_noise = parse_f64(value)?,
            "resolutions" => {
                for entry in value.split(',') {
                    let entry = entry.trim();
                    let (dims, weight) = entry.split_once(':').ok_or_else(|| {
                        Error::data(format!("dataset.spec: resolution '{entry}' lacks ':weight'"))
                    })?;
                    let (h, w) = dims.split_once('x').ok_or_else(|| {
                        Error::data(format!("dataset.spec: resolution '{dims}' not HxW"))
                    })?;
                    spec.resolutions.push((
                        parse_usize(h.trim())?,
                        parse_usize(w.trim())?,
                        parse_f64(weight.trim())?,
                    ));
                }
            }
            other => return Err(Error::data(format!("dataset.spec: unknown key '{other}'"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Generate and persist the whole dataset; returns the sample count.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec) -> Result<usize> {
    fs::create_dir_all(dir)?;
    let samples = super::synth_dataset(spec)?;
    let mut index = String::new();
    for (i, s) in samples.iter().enumerate() {
        let id = format!("{i:06}");
        write_sample(&dir.join(format!("{id}.sample")), s)?;
        let sh = s.latent.shape();
        index.push_str(&format!("{id} {} {}x{}\n", s.label, sh[1], sh[2]));
    }
    fs::write(dir.join("index"), index)?;
    fs::write(dir.join("dataset.spec"), spec_to_string(spec))?;
    Ok(samples.len())
}

/// Load every sample listed in the directory index.
pub fn load_dataset(dir: &Path) -> Result<Vec<ImageSample>> {
    let index_path = dir.join("index");
    let index = fs::read_to_string(&index_path)
        .map_err(|_| Error::data(format!("missing dataset index at {}", index_path.display())))?;
    let mut out = Vec::new();
    for line in index.lines() {
        let id = line.split_whitespace().next().ok_or_else(|| {
            Error::data(format!("malformed index line '{line}' in {}", index_path.display()))
        })?;
        out.push(read_sample(&dir.join(format!("{id}.sample")))?);
    }
    if out.is_empty() {
        return Err(Error::data(format!("dataset at {} is empty", dir.display())));
    }
    Ok(out)
}

/// Portable-pixmap export for eyeballing: channels 0..3 map to RGB through
/// an affine [-2, 2] -> [0, 255] window.
pub fn write_ppm(path: &Path, latent: &Tensor<f32>) -> Result<()> {
    let s = latent.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let px = |ci: usize, y: usize, x: usize| -> u8 {
        let v = latent.data()[ci.min(c - 1) * h * w + y * w + x];
        (((v + 2.0) / 4.0).clamp(0.0, 1.0) * 255.0) as u8
    };
    for y in 0..h {
        for x in 0..w {
            out.push(px(0, y, x));
            out.push(px(1.min(c - 1), y, x));
            out.push(px(2.min(c - 1), y, x));
        }
    }
    fs::write(path, out)?;
    Ok(())
}
