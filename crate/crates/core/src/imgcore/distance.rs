use super::{PixelDomain, Plane};
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec2};

/// Exact Euclidean distance from every pixel center to a polyline.
///
/// A single point is a degenerate polyline. Cost is `O(pixels * segments)`.
pub fn distance_to_polyline(domain: PixelDomain, points: &[Vec2]) -> Result<Plane> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("polyline has no points".into()));
    }
    let segments: Vec<(Vec2, Vec2)> = if points.len() == 1 {
        vec![(points[0], points[0])]
    } else {
        points.windows(2).map(|w| (w[0], w[1])).collect()
    };
    Ok(Plane::from_fn(domain.height, domain.width, |y, x| {
        let p = Vec2::new(x as f64, y as f64);
        segments
            .iter()
            .map(|(a, b)| point_segment_distance(p, *a, *b))
            .fold(f64::INFINITY, f64::min)
    }))
}
