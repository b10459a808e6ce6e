//! Raster types and the numeric primitives shared by every other module.
//!
//! [`RasterImage`] holds unit-interval intensities (frames, backgrounds,
//! appearances, masks, kernels). [`Plane`] is an unconstrained real-valued
//! single-channel grid used for distances, predictions and solver iterates.
//! Arithmetic is 64-bit throughout; values are clamped only when a
//! [`RasterImage`] is built from unconstrained data.

mod components;
mod conv;
mod distance;
mod filter;
pub mod io;
mod median;

pub use components::{connected_components, Components, Connectivity, Region};
pub use conv::{convolve2d, convolve_plane, Boundary};
pub use distance::distance_to_polyline;
pub use filter::{box_blur, dilate_disc, resize_bilinear, resize_plane_bilinear};
pub use median::median_background;

use crate::error::{Error, Result};

/// Values this far outside `[0, 1]` are treated as float dust and clamped.
const RANGE_DUST: f64 = 1e-9;

/// Pixel grid with origin at the top-left pixel center, x rightward, y downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelDomain {
    pub height: usize,
    pub width: usize,
}

impl PixelDomain {
    pub fn new(height: usize, width: usize) -> Self {
        PixelDomain { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the continuous point lies inside the hull of pixel centers.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// H x W x C image of unit-interval reals, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    /// Builds an image, rejecting values outside `[0, 1]` beyond float dust.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        check_len(height, width, channels, data.len())?;
        for v in data.iter_mut() {
            if !v.is_finite() || *v < -RANGE_DUST || *v > 1.0 + RANGE_DUST {
                return Err(Error::OutOfRange(format!(
                    "raster value {v} outside [0, 1]"
                )));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(RasterImage {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from unconstrained data, clamping every value to `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        check_len(height, width, channels, data.len())?;
        for v in data.iter_mut() {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Ok(RasterImage {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        RasterImage {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        RasterImage {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    /// Builds an image from per-channel planes of equal size, clamping to `[0, 1]`.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no planes given".into()))?;
        let (h, w) = (first.height(), first.width());
        if planes.iter().any(|p| p.height() != h || p.width() != w) {
            return Err(Error::DimensionMismatch("planes differ in size".into()));
        }
        let c = planes.len();
        let mut data = vec![0.0; h * w * c];
        for (ch, p) in planes.iter().enumerate() {
            for (i, v) in p.data().iter().enumerate() {
                data[i * c + ch] = *v;
            }
        }
        RasterImage::from_clamped(h, w, c, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn domain(&self) -> PixelDomain {
        PixelDomain::new(self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Writes a value, clamped to `[0, 1]`.
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    }

    /// Copies one channel out as a real-valued plane.
    pub fn channel(&self, c: usize) -> Plane {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Plane {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn planes(&self) -> Vec<Plane> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

fn check_len(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
    if channels == 0 {
        return Err(Error::InvalidArgument("zero channels".into()));
    }
    if len != height * width * channels {
        return Err(Error::DimensionMismatch(format!(
            "declared {height}x{width}x{channels} but data holds {len} values"
        )));
    }
    Ok(())
}

/// Unconstrained real-valued single-channel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "declared {height}x{width} but data holds {} values",
                data.len()
            )));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Plane {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Plane {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn domain(&self) -> PixelDomain {
        PixelDomain::new(self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Single-channel raster with values clamped to `[0, 1]`.
    pub fn to_image(&self) -> RasterImage {
        RasterImage::from_clamped(self.height, self.width, 1, self.data.clone())
            .expect("plane length is consistent")
    }

    pub fn threshold(&self, t: f64) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| *v > t).collect(),
        }
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "declared {height}x{width} but mask holds {} values",
                data.len()
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        BinaryMask {
            height,
            width,
            data,
        }
    }

    /// Solid disc of radius `r` (pixel centers within `r` of the mask center).
    pub fn disc(r: f64) -> Self {
        let a = r.floor().max(0.0) as usize;
        let s = 2 * a + 1;
        BinaryMask::from_fn(s, s, |y, x| {
            let dy = y as f64 - a as f64;
            let dx = x as f64 - a as f64;
            dx * dx + dy * dy <= r * r
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn domain(&self) -> PixelDomain {
        PixelDomain::new(self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }

    /// Set pixels as `(x, y)` pairs in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Nonnegative single-channel raster summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    plane: Plane,
}

impl BlurKernel {
    /// Tolerance on the unit-mass constraint accepted by [`BlurKernel::new`].
    pub const MASS_TOL: f64 = 1e-9;

    pub fn new(plane: Plane) -> Result<Self> {
        if plane.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::OutOfRange("blur kernel has negative or non-finite entries".into()));
        }
        let s = plane.sum();
        if (s - 1.0).abs() > Self::MASS_TOL {
            return Err(Error::OutOfRange(format!("blur kernel sums to {s}, expected 1")));
        }
        Ok(BlurKernel { plane })
    }

    /// Unit impulse at pixel `(x, y)`.
    pub fn delta(domain: PixelDomain, x: usize, y: usize) -> Self {
        let mut plane = Plane::zeros(domain.height, domain.width);
        plane.set(y, x, 1.0);
        BlurKernel { plane }
    }

    /// Rescales a nonnegative plane to unit mass.
    pub fn normalized(mut plane: Plane) -> Result<Self> {
        let s = plane.sum();
        if !(s > 0.0) || plane.data().iter().any(|v| *v < 0.0) {
            return Err(Error::OutOfRange("cannot normalize kernel with no positive mass".into()));
        }
        plane.data_mut().iter_mut().for_each(|v| *v /= s);
        Ok(BlurKernel { plane })
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn into_plane(self) -> Plane {
        self.plane
    }

    pub fn domain(&self) -> PixelDomain {
        self.plane.domain()
    }

    pub fn to_image(&self) -> RasterImage {
        self.plane.to_image()
    }
}
