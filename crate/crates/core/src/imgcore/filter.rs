use super::{BinaryMask, Plane, RasterImage};

/// Mean over the `(2r+1) x (2r+1)` window, restricted to in-bounds pixels.
pub fn box_blur(plane: &Plane, radius: usize) -> Plane {
    let (h, w) = (plane.height(), plane.width());
    // Summed-area table with a zero border row/column.
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += plane.get(y, x);
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    Plane::from_fn(h, w, |y, x| {
        let y0 = y.saturating_sub(radius);
        let x0 = x.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        let x1 = (x + radius + 1).min(w);
        let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
            + sat[y0 * (w + 1) + x0];
        s / ((y1 - y0) * (x1 - x0)) as f64
    })
}

/// Morphological dilation by a Euclidean disc of the given radius.
pub fn dilate_disc(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let ri = radius.floor().max(0.0) as isize;
    let offsets: Vec<(isize, isize)> = (-ri..=ri)
        .flat_map(|dy| (-ri..=ri).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| ((dy * dy + dx * dx) as f64) <= radius * radius)
        .collect();
    let mut out = BinaryMask::empty(h, w);
    for (x, y) in mask.pixels() {
        for (dy, dx) in &offsets {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                out.set(ny as usize, nx as usize, true);
            }
        }
    }
    out
}

fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with pixel-center alignment.
pub fn resize_plane_bilinear(plane: &Plane, height: usize, width: usize) -> Plane {
    let ty = bilinear_taps(plane.height(), height);
    let tx = bilinear_taps(plane.width(), width);
    Plane::from_fn(height, width, |y, x| {
        let (y0, y1, fy) = ty[y];
        let (x0, x1, fx) = tx[x];
        let top = plane.get(y0, x0) * (1.0 - fx) + plane.get(y0, x1) * fx;
        let bot = plane.get(y1, x0) * (1.0 - fx) + plane.get(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

pub fn resize_bilinear(image: &RasterImage, height: usize, width: usize) -> RasterImage {
    let planes: Vec<Plane> = image
        .planes()
        .iter()
        .map(|p| resize_plane_bilinear(p, height, width))
        .collect();
    RasterImage::from_planes(&planes).expect("resized planes share a shape")
}
