use super::RasterImage;
use crate::error::{Error, Result};

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.min(b).max(a.max(b).min(c))
}

/// Per-pixel, per-channel median of exactly three frames.
pub fn median_background(frames: &[&RasterImage]) -> Result<RasterImage> {
    if frames.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "median background needs exactly 3 frames, got {}",
            frames.len()
        )));
    }
    let (a, b, c) = (frames[0], frames[1], frames[2]);
    if !a.same_shape(b) || !a.same_shape(c) {
        return Err(Error::DimensionMismatch("background frames differ in shape".into()));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((x, y), z)| median3(*x, *y, *z))
        .collect();
    RasterImage::new(a.height(), a.width(), a.channels(), data)
}
