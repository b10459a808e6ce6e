//! Classical stand-in for a learned detector: background subtraction,
//! thresholding, connected components and skeleton-based TDF estimates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Vec2};
use crate::imgcore::{
    box_blur, connected_components, resize_plane_bilinear, BinaryMask, Connectivity, PixelDomain, Plane, RasterImage,
};
use crate::trajectory::{tdf_from_polyline, TdfRaster};

pub const DEFAULT_EPSILON: f64 = 0.3;
pub const CROP_SIZE: usize = 256;
pub const BLUR_RADIUS: usize = 2;
pub const MIN_AREA: usize = 4;
pub const CROP_PADDING: f64 = 0.3;
/// Responses whose peak stays below this are treated as empty.
pub const MIN_PEAK: f64 = 0.02;

/// One connected component of the binarized response.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Component extent in frame pixels, `[min, max + 1)`.
    pub bbox: BBox,
    /// Square frame region covered by the crops.
    pub crop_origin: (usize, usize),
    pub crop_side: usize,
    /// Crop pixels per frame pixel.
    pub scale: f64,
    /// Estimated object radius in frame pixels.
    pub radius: f64,
    pub area: usize,
    /// Binarization level that produced the component.
    pub threshold: f64,
    /// Component pixels in frame coordinates.
    pub mask: BinaryMask,
    pub response: Plane,
    pub frame: Option<RasterImage>,
    pub background: Option<RasterImage>,
}

/// Serializable summary of a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub bbox: BBox,
    pub scale: f64,
    pub radius: f64,
    pub area: usize,
}

impl Detection {
    pub fn summary(&self) -> DetectionSummary {
        DetectionSummary {
            bbox: self.bbox,
            scale: self.scale,
            radius: self.radius,
            area: self.area,
        }
    }

    /// Crop coordinates to frame coordinates (pixel centers aligned).
    pub fn to_frame(&self, p: Vec2) -> Vec2 {
        let (x0, y0) = self.crop_origin;
        Vec2::new(
            x0 as f64 + (p.x + 0.5) / self.scale - 0.5,
            y0 as f64 + (p.y + 0.5) / self.scale - 0.5,
        )
    }

    /// Attaches frame and background crops.
    pub fn with_images(mut self, frame: &RasterImage, background: &RasterImage) -> Result<Self> {
        self.frame = Some(self.crop_image(frame)?);
        self.background = Some(self.crop_image(background)?);
        Ok(self)
    }

    fn crop_image(&self, img: &RasterImage) -> Result<RasterImage> {
        if img.domain() != self.mask.domain() {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{}, detection frame is {}x{}",
                img.height(),
                img.width(),
                self.mask.height(),
                self.mask.width()
            )));
        }
        let planes: Vec<Plane> = img
            .planes()
            .iter()
            .map(|p| crop_resize(p, self.crop_origin, self.crop_side))
            .collect();
        RasterImage::from_planes(&planes)
    }
}

/// Per-pixel max over channels of `|I - B|`, box-blurred and scaled to peak 1.
pub fn delta_response(frame: &RasterImage, background: &RasterImage) -> Result<Plane> {
    if !frame.same_shape(background) {
        return Err(Error::DimensionMismatch(format!(
            "frame {}x{}x{} vs background {}x{}x{}",
            frame.height(),
            frame.width(),
            frame.channels(),
            background.height(),
            background.width(),
            background.channels()
        )));
    }
    let c = frame.channels();
    let diff: Vec<f64> = frame
        .data()
        .chunks_exact(c)
        .zip(background.data().chunks_exact(c))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        .collect();
    let blurred = box_blur(&Plane::new(frame.height(), frame.width(), diff)?, BLUR_RADIUS);
    let peak = blurred.max();
    if peak < MIN_PEAK {
        return Ok(Plane::zeros(frame.height(), frame.width()));
    }
    let data = blurred.into_data().into_iter().map(|v| (v / peak).clamp(0.0, 1.0)).collect();
    Plane::new(frame.height(), frame.width(), data)
}

/// Validates an externally produced TDF raster for use as a response.
pub fn response_from_tdf(tdf: &Plane) -> Result<Plane> {
    if let Some(v) = tdf.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("injected TDF value {v} outside [0, 1]")));
    }
    Ok(tdf.clone())
}

fn crop_resize(p: &Plane, origin: (usize, usize), side: usize) -> Plane {
    let (x0, y0) = origin;
    let sub = Plane::from_fn(side, side, |y, x| p.get(y0 + y, x0 + x));
    resize_plane_bilinear(&sub, CROP_SIZE, CROP_SIZE)
}

/// Square crop window: the padded box, grown to a square about its center
/// and shifted (then shrunk if needed) to lie inside the frame.
fn crop_window(domain: PixelDomain, min: (usize, usize), max: (usize, usize)) -> ((usize, usize), usize) {
    let w = (max.0 - min.0 + 1) as f64;
    let h = (max.1 - min.1 + 1) as f64;
    let side = ((w.max(h) * (1.0 + 2.0 * CROP_PADDING)).round() as usize)
        .max(1)
        .min(domain.width.min(domain.height));
    let cx = (min.0 + max.0) as f64 / 2.0;
    let cy = (min.1 + max.1) as f64 / 2.0;
    let place = |c: f64, limit: usize| -> usize {
        let start = (c - (side as f64 - 1.0) / 2.0).round();
        start.clamp(0.0, (limit - side) as f64) as usize
    };
    ((place(cx, domain.width), place(cy, domain.height)), side)
}

/// Centroid and unit principal axes (major, minor) of a pixel set.
pub(crate) fn principal_axes(pixels: &[(usize, usize)]) -> (Vec2, Vec2, Vec2) {
    let n = pixels.len().max(1) as f64;
    let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + *x as f64, b + *y as f64));
    let c = Vec2::new(sx / n, sy / n);
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for (x, y) in pixels {
        let (dx, dy) = (*x as f64 - c.x, *y as f64 - c.y);
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    let angle = 0.5 * (2.0 * xy).atan2(xx - yy);
    let major = Vec2::new(angle.cos(), angle.sin());
    (c, major, major.perp())
}

fn extent_along(pixels: &[(usize, usize)], axis: Vec2) -> f64 {
    let (lo, hi) = pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, y)| {
        let t = Vec2::new(*x as f64, *y as f64).dot(axis);
        (lo.min(t), hi.max(t))
    });
    hi - lo + 1.0
}

/// Thresholds `response` at `epsilon` and turns each 8-connected component
/// of at least [`MIN_AREA`] pixels into a detection.
pub fn binarize_and_split(response: &Plane, epsilon: f64) -> Result<Vec<Detection>> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let domain = response.domain();
    let binary = BinaryMask::from_fn(domain.height, domain.width, |y, x| response.get(y, x) > epsilon);
    let comps = connected_components(&binary, Connectivity::Eight);
    let mut out = Vec::new();
    for region in comps.regions.iter().filter(|r| r.area >= MIN_AREA) {
        let mask = comps.mask_of(region.label);
        let pixels: Vec<(usize, usize)> = mask.pixels().collect();
        let (_, _, minor) = principal_axes(&pixels);
        let (origin, side) = crop_window(domain, (region.min_x, region.min_y), (region.max_x, region.max_y));
        out.push(Detection {
            bbox: BBox::new(
                region.min_x as f64,
                region.min_y as f64,
                (region.max_x + 1) as f64,
                (region.max_y + 1) as f64,
            ),
            crop_origin: origin,
            crop_side: side,
            scale: CROP_SIZE as f64 / side as f64,
            radius: extent_along(&pixels, minor) / 2.0,
            area: region.area,
            threshold: epsilon,
            response: crop_resize(response, origin, side),
            mask,
            frame: None,
            background: None,
        });
    }
    Ok(out)
}

/// Delta response, thresholding and crops in one step.
pub fn detect(frame: &RasterImage, background: &RasterImage, epsilon: f64) -> Result<Vec<Detection>> {
    let response = delta_response(frame, background)?;
    binarize_and_split(&response, epsilon)?
        .into_iter()
        .map(|d| d.with_images(frame, background))
        .collect()
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

/// Zhang-Suen thinning.
pub fn thin(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let mut img: Vec<bool> = mask.data().to_vec();
    let at = |img: &[bool], y: usize, x: usize, k: usize| -> bool {
        let (dy, dx) = NEIGHBOURS[k];
        let (ny, nx) = (y as isize + dy, x as isize + dx);
        ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && img[ny as usize * w + nx as usize]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !img[y * w + x] {
                        continue;
                    }
                    let p: Vec<bool> = (0..8).map(|k| at(&img, y, x, k)).collect();
                    let b = p.iter().filter(|v| **v).count();
                    let a = (0..8).filter(|k| !p[*k] && p[(k + 1) % 8]).count();
                    // p[0]=N, p[2]=E, p[4]=S, p[6]=W.
                    let cond = if pass == 0 {
                        !(p[0] && p[2] && p[4]) && !(p[2] && p[4] && p[6])
                    } else {
                        !(p[0] && p[2] && p[6]) && !(p[0] && p[4] && p[6])
                    };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        remove.push(y * w + x);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                img[i] = false;
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMask::new(h, w, img).expect("same shape")
}

/// Breadth-first distances from `start` over 8-connected skeleton pixels.
fn bfs(skel: &BinaryMask, start: usize) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = (skel.height(), skel.width());
    let mut dist = vec![usize::MAX; h * w];
    let mut prev = vec![usize::MAX; h * w];
    let mut queue = VecDeque::from([start]);
    dist[start] = 0;
    while let Some(i) = queue.pop_front() {
        let (y, x) = (i / w, i % w);
        for (dy, dx) in NEIGHBOURS {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if skel.data()[j] && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                prev[j] = i;
                queue.push_back(j);
            }
        }
    }
    (dist, prev)
}

/// Longest geodesic path through the largest skeleton component.
pub fn longest_path(skel: &BinaryMask) -> Vec<Vec2> {
    let comps = connected_components(skel, Connectivity::Eight);
    let Some(largest) = comps.regions.iter().max_by_key(|r| (r.area, std::cmp::Reverse(r.label))) else {
        return Vec::new();
    };
    let w = skel.width();
    let part = comps.mask_of(largest.label);
    let first = part.data().iter().position(|v| *v).expect("nonempty region");
    let far = |dist: &[usize]| {
        (0..dist.len())
            .filter(|i| dist[*i] != usize::MAX)
            .max_by_key(|i| (dist[*i], std::cmp::Reverse(*i)))
            .expect("start is reachable")
    };
    let (d0, _) = bfs(&part, first);
    let a = far(&d0);
    let (d1, prev) = bfs(&part, a);
    let mut i = far(&d1);
    let mut path = vec![i];
    while i != a {
        i = prev[i];
        path.push(i);
    }
    path.into_iter().map(|i| Vec2::new((i % w) as f64, (i / w) as f64)).collect()
}

/// Skeleton polyline of a detection in crop coordinates.
///
/// Thins the bilinearly resampled response crop thresholded at the level
/// that produced the component, keeping the piece that overlaps it.
pub fn skeleton_polyline(det: &Detection) -> Result<Vec<Vec2>> {
    let (x0, y0) = det.crop_origin;
    let side = det.crop_side;
    let inside = |y: usize, x: usize| {
        let sy = (((y as f64 + 0.5) / det.scale) as usize).min(side - 1);
        let sx = (((x as f64 + 0.5) / det.scale) as usize).min(side - 1);
        det.mask.get(y0 + sy, x0 + sx)
    };
    let level = det.threshold;
    let smooth = BinaryMask::from_fn(CROP_SIZE, CROP_SIZE, |y, x| det.response.get(y, x) > level);
    let comps = connected_components(&smooth, Connectivity::Eight);
    let mut overlap = vec![0usize; comps.regions.len() + 1];
    for (x, y) in smooth.pixels() {
        if inside(y, x) {
            overlap[comps.label(y, x) as usize] += 1;
        }
    }
    let best = (1..overlap.len()).max_by_key(|l| (overlap[*l], std::cmp::Reverse(*l)));
    let mask = match best {
        Some(l) if overlap[l] > 0 => comps.mask_of(l as u32),
        _ => BinaryMask::from_fn(CROP_SIZE, CROP_SIZE, inside),
    };
    let path = longest_path(&thin(&mask));
    if path.is_empty() {
        return Err(Error::EmptySkeleton);
    }
    Ok(path)
}

/// TDF in crop coordinates from the skeleton of the detection's component,
/// using the detection's radius estimate.
pub fn estimate_tdf_from_response(det: &Detection) -> Result<TdfRaster> {
    let path = skeleton_polyline(det)?;
    tdf_from_polyline(&path, (det.radius * det.scale).max(0.5), PixelDomain::new(CROP_SIZE, CROP_SIZE))
}
