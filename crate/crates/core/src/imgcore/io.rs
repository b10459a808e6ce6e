//! PNG image I/O and the `FMOA` float-array container.
//!
//! `FMOA` layout: the four magic bytes `FMOA`, a little-endian `u32` rank,
//! `rank` little-endian `u32` dimensions, then the row-major payload as
//! little-endian `f32`.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb, Rgba};

use super::{Plane, RasterImage};
use crate::error::{Error, Result};

pub const FMOA_MAGIC: &[u8; 4] = b"FMOA";

/// Sample depth used when writing PNG files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Reads an 8- or 16-bit PNG into unit-interval intensities.
/// Gray+alpha images are expanded to RGBA.
pub fn read_png(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().iter().map(|v| *v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().iter().map(|v| *v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().iter().map(|v| *v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().iter().map(|v| *v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgba16(b) => (4, b.into_raw().iter().map(|v| *v as f64 / 65535.0).collect()),
        DynamicImage::ImageLumaA16(_) => {
            let b = img.to_rgba16();
            (4, b.into_raw().iter().map(|v| *v as f64 / 65535.0).collect())
        }
        other => {
            let b = other.to_rgba8();
            (4, b.into_raw().iter().map(|v| *v as f64 / 255.0).collect())
        }
    };
    RasterImage::new(h, w, channels, data)
}

/// Quantizes a unit-interval value to the given bit depth.
pub fn quantize(v: f64, depth: BitDepth) -> f64 {
    let max = match depth {
        BitDepth::Eight => 255.0,
        BitDepth::Sixteen => 65535.0,
    };
    (v.clamp(0.0, 1.0) * max).round() / max
}

pub fn write_png(path: impl AsRef<Path>, img: &RasterImage, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let map_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    macro_rules! save {
        ($px:ty, $t:ty, $max:expr) => {{
            let raw: Vec<$t> = img
                .data()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * $max).round() as $t)
                .collect();
            ImageBuffer::<$px, Vec<$t>>::from_raw(w, h, raw)
                .expect("buffer length matches")
                .save(path)
                .map_err(map_err)
        }};
    }
    match (img.channels(), depth) {
        (1, BitDepth::Eight) => save!(Luma<u8>, u8, 255.0),
        (1, BitDepth::Sixteen) => save!(Luma<u16>, u16, 65535.0),
        (3, BitDepth::Eight) => save!(Rgb<u8>, u8, 255.0),
        (3, BitDepth::Sixteen) => save!(Rgb<u16>, u16, 65535.0),
        (4, BitDepth::Eight) => save!(Rgba<u8>, u8, 255.0),
        (4, BitDepth::Sixteen) => save!(Rgba<u16>, u16, 65535.0),
        (c, _) => Err(Error::InvalidArgument(format!("cannot write {c}-channel PNG"))),
    }
}

/// N-dimensional `f32` array as stored in `FMOA` files.
#[derive(Debug, Clone, PartialEq)]
pub struct FmoArray {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl FmoArray {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(FmoArray { dims, data })
    }

    pub fn from_plane(p: &Plane) -> Self {
        FmoArray {
            dims: vec![p.height(), p.width()],
            data: p.data().iter().map(|v| *v as f32).collect(),
        }
    }

    /// Rank-2 for single-channel images, rank-3 `[H, W, C]` otherwise.
    pub fn from_image(img: &RasterImage) -> Self {
        let dims = if img.channels() == 1 {
            vec![img.height(), img.width()]
        } else {
            vec![img.height(), img.width(), img.channels()]
        };
        FmoArray {
            dims,
            data: img.data().iter().map(|v| *v as f32).collect(),
        }
    }

    fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.dims.as_slice() {
            [h, w] => Ok((*h, *w, 1)),
            [h, w, c] => Ok((*h, *w, *c)),
            d => Err(Error::DimensionMismatch(format!("expected rank 2 or 3, got dims {d:?}"))),
        }
    }

    pub fn to_plane(&self) -> Result<Plane> {
        let (h, w, c) = self.hwc()?;
        if c != 1 {
            return Err(Error::DimensionMismatch(format!("expected one channel, got {c}")));
        }
        Plane::new(h, w, self.data.iter().map(|v| *v as f64).collect())
    }

    pub fn to_image(&self) -> Result<RasterImage> {
        let (h, w, c) = self.hwc()?;
        RasterImage::new(h, w, c, self.data.iter().map(|v| *v as f64).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(FMOA_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let word = |i: usize| -> std::result::Result<u32, String> {
            bytes
                .get(i..i + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| "truncated header".to_string())
        };
        if bytes.len() < 8 || &bytes[..4] != FMOA_MAGIC {
            return Err("missing FMOA magic".into());
        }
        let rank = word(4)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for k in 0..rank {
            dims.push(word(8 + 4 * k)? as usize);
        }
        let start = 8 + 4 * rank;
        let n: usize = dims.iter().product();
        let payload = &bytes[start.min(bytes.len())..];
        if payload.len() != 4 * n {
            return Err(format!("payload holds {} bytes, dims need {}", payload.len(), 4 * n));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(FmoArray { dims, data })
    }
}

pub fn write_fmoa(path: impl AsRef<Path>, array: &FmoArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_fmoa(path: impl AsRef<Path>) -> Result<FmoArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FmoArray::from_bytes(&bytes).map_err(|reason| Error::BadArrayFile {
        path: path.to_path_buf(),
        reason,
    })
}
