//! Band images on disk: one PGM per band, or a flat little-endian `u16`
//! file with a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

/// Shape description stored next to a flat band file as `<file>.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub bit_depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u32,
    pub data: Vec<Vec<f64>>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, u32, Vec<f64>)> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(match img {
        DynamicImage::ImageLuma8(buf) => (w, h, 8, buf.into_raw().into_iter().map(f64::from).collect()),
        DynamicImage::ImageLuma16(buf) => (w, h, 16, buf.into_raw().into_iter().map(f64::from).collect()),
        _ => bail!("{} is not a grayscale image", path.display()),
    })
}

pub fn read_pgm_bands(paths: &[PathBuf]) -> Result<Bands> {
    let mut out: Option<Bands> = None;
    for p in paths {
        let (w, h, depth, data) = read_pgm(p)?;
        match &mut out {
            None => out = Some(Bands { width: w, height: h, bit_depth: depth, data: vec![data] }),
            Some(b) => {
                if (b.width, b.height) != (w, h) {
                    bail!("{} is {w}x{h}, expected {}x{}", p.display(), b.width, b.height);
                }
                b.bit_depth = b.bit_depth.max(depth);
                b.data.push(data);
            }
        }
    }
    out.context("no band files given")
}

pub fn read_raw(path: &Path) -> Result<Bands> {
    let side = sidecar_path(path);
    let header: RawHeader = serde_json::from_slice(&fs::read(&side).with_context(|| format!("reading {}", side.display()))?)
        .with_context(|| format!("parsing {}", side.display()))?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let plane = header.width * header.height;
    if bytes.len() != 2 * plane * header.bands {
        bail!("{} holds {} bytes, sidecar implies {}", path.display(), bytes.len(), 2 * plane * header.bands);
    }
    let values: Vec<f64> = bytes.chunks_exact(2).map(|c| f64::from(u16::from_le_bytes([c[0], c[1]]))).collect();
    Ok(Bands {
        width: header.width,
        height: header.height,
        bit_depth: header.bit_depth,
        data: values.chunks(plane).map(<[f64]>::to_vec).collect(),
    })
}

fn to_code(v: f64, max: f64) -> u16 {
    v.round().clamp(0.0, max) as u16
}

pub fn write_raw(path: &Path, bands: &Bands) -> Result<()> {
    let max = ((1u64 << bands.bit_depth.min(16)) - 1) as f64;
    let mut bytes = Vec::with_capacity(2 * bands.width * bands.height * bands.data.len());
    for band in &bands.data {
        for &v in band {
            bytes.extend_from_slice(&to_code(v, max).to_le_bytes());
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let header = RawHeader { width: bands.width, height: bands.height, bands: bands.data.len(), bit_depth: bands.bit_depth };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&header)?)?;
    Ok(())
}

/// Writes one band, rounded and clipped to the bit depth; 8-bit data is
/// stored as an 8-bit PGM, anything deeper as 16-bit.
pub fn write_pgm(path: &Path, width: usize, height: usize, bit_depth: u32, data: &[f64]) -> Result<()> {
    let max = ((1u64 << bit_depth.min(16)) - 1) as f64;
    let (w, h) = (width as u32, height as u32);
    let result = if bit_depth <= 8 {
        let raw = data.iter().map(|&v| to_code(v, max) as u8).collect();
        ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, raw).context("band size mismatch")?.save_with_format(path, ImageFormat::Pnm)
    } else {
        let raw = data.iter().map(|&v| to_code(v, max)).collect();
        ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w, h, raw).context("band size mismatch")?.save_with_format(path, ImageFormat::Pnm)
    };
    result.with_context(|| format!("writing {}", path.display()))
}
