//! Image and map files.
//!
//! Raw maps use the lossless `BSG1` layout: the 4-byte magic, little-endian
//! `u32` width and height, then `width·height` little-endian `f32` values in
//! row-major order. PNG is for viewing: 8/16-bit grayscale on input (scaled
//! to `[0, 1]`) and min-max scaled 16-bit on output with the scale written to
//! a sidecar text file.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const RAW_MAGIC: &[u8; 4] = b"BSG1";
const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// How a map is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapEncoding {
    Raw,
    Png16,
}

impl MapEncoding {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Raw => "bsg",
            Self::Png16 => "png",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        context: path.display().to_string(),
        message: message.into(),
    }
}

pub fn encode_raw(grid: &ImageGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * grid.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for &v in grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8], context: &Path) -> Result<ImageGrid> {
    if bytes.len() < 12 || &bytes[..4] != RAW_MAGIC {
        return Err(format_err(context, "missing BSG1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(context, "dimensions overflow"))?;
    if bytes.len() != 12 + n {
        return Err(format_err(
            context,
            format!("expected {} bytes for {w}x{h}, found {}", 12 + n, bytes.len()),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageGrid::new(w, h, data).map_err(|e| format_err(context, e.to_string()))
}

fn load_png(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a raw map verbatim or a grayscale PNG scaled to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(RAW_MAGIC) {
        return decode_raw(&bytes, path);
    }
    if !bytes.starts_with(PNG_SIGNATURE) {
        return Err(format_err(path, "neither BSG1 nor PNG"));
    }
    let (w, h, data): (u32, u32, Vec<f64>) = match load_png(path)? {
        DynamicImage::ImageLuma8(img) => (
            img.width(),
            img.height(),
            img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        ),
        DynamicImage::ImageLuma16(img) => (
            img.width(),
            img.height(),
            img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        ),
        other => {
            return Err(format_err(
                path,
                format!("expected 8/16-bit grayscale PNG, got {:?}", other.color()),
            ))
        }
    };
    ImageGrid::new(w as usize, h as usize, data)
}

/// Reads class ids: 8-bit PNG values as-is, or a raw map.
pub fn read_labels(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let grid = if bytes.starts_with(RAW_MAGIC) {
        decode_raw(&bytes, path)?
    } else {
        match load_png(path)? {
            DynamicImage::ImageLuma8(img) => ImageGrid::new(
                img.width() as usize,
                img.height() as usize,
                img.pixels().map(|p| p.0[0] as f64).collect(),
            )?,
            other => {
                return Err(format_err(
                    path,
                    format!("label images must be 8-bit grayscale, got {:?}", other.color()),
                ))
            }
        }
    };
    if let Some(bad) = grid.data().iter().find(|v| v.fract() != 0.0 || **v < 0.0) {
        return Err(format_err(path, format!("label value {bad} is not a class id")));
    }
    Ok(grid)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale.txt");
    PathBuf::from(s)
}

/// Writes `grid`. For PNG the min and max go to `<path>.scale.txt`.
pub fn write_map(path: &Path, grid: &ImageGrid, encoding: MapEncoding) -> Result<()> {
    match encoding {
        MapEncoding::Raw => fs::write(path, encode_raw(grid)).map_err(io_err(path)),
        MapEncoding::Png16 => {
            let (lo, hi) = (grid.min(), grid.max());
            let span = if hi > lo { hi - lo } else { 1.0 };
            let px: Vec<u16> = grid
                .data()
                .iter()
                .map(|v| (((v - lo) / span) * 65535.0).round() as u16)
                .collect();
            let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, px)
                    .expect("buffer matches dimensions");
            img.save_with_format(path, image::ImageFormat::Png)
                .map_err(|source| Error::Image {
                    path: path.to_path_buf(),
                    source,
                })?;
            let scale = format!("min = {lo:e}\nmax = {hi:e}\n");
            let side = sidecar(path);
            fs::write(&side, scale).map_err(io_err(&side))
        }
    }
}

/// Writes class ids as an 8-bit grayscale PNG.
pub fn write_labels(path: &Path, labels: &ImageGrid) -> Result<()> {
    let mut px = Vec::with_capacity(labels.len());
    for &v in labels.data() {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(Error::Invalid(format!("class id {v} does not fit in 8 bits")));
        }
        px.push(v as u8);
    }
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, px)
            .expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
