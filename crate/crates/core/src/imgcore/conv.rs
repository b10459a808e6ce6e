use super::RasterImage;
use crate::error::{Error, Result};

/// How samples outside the image are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Outside pixels are zero.
    ZeroPad,
    /// Indices wrap around (periodic image).
    Circular,
}

/// "Same"-size 2-D convolution of one plane with a kernel anchored at
/// `(kh / 2, kw / 2)`.
///
/// `out[y, x] = sum_{i,j} k[i, j] * img[y - (i - kh/2), x - (j - kw/2)]`
///
/// Evaluated by scattering each nonzero input pixel, so sparse inputs such
/// as blur kernels on a frame grid cost `O(nnz * kernel size)`.
pub fn convolve_plane(
    img: &[f64],
    height: usize,
    width: usize,
    kernel: &[f64],
    kh: usize,
    kw: usize,
    boundary: Boundary,
) -> Vec<f64> {
    assert_eq!(img.len(), height * width);
    assert_eq!(kernel.len(), kh * kw);
    let mut out = vec![0.0; height * width];
    let (ay, ax) = ((kh / 2) as isize, (kw / 2) as isize);
    let (h, w) = (height as isize, width as isize);
    let taps: Vec<(isize, isize, f64)> = (0..kh)
        .flat_map(|i| (0..kw).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let k = kernel[i * kw + j];
            (k != 0.0).then_some((i as isize - ay, j as isize - ax, k))
        })
        .collect();

    for py in 0..h {
        for px in 0..w {
            let v = img[(py * w + px) as usize];
            if v == 0.0 {
                continue;
            }
            for &(dy, dx, k) in &taps {
                let (mut ty, mut tx) = (py + dy, px + dx);
                match boundary {
                    Boundary::ZeroPad => {
                        if ty < 0 || ty >= h || tx < 0 || tx >= w {
                            continue;
                        }
                    }
                    Boundary::Circular => {
                        ty = ty.rem_euclid(h);
                        tx = tx.rem_euclid(w);
                    }
                }
                out[(ty * w + tx) as usize] += v * k;
            }
        }
    }
    out
}

/// Per-channel "same" convolution of `image` with a single-channel `kernel`.
/// The result is clamped to `[0, 1]`.
pub fn convolve2d(image: &RasterImage, kernel: &RasterImage, boundary: Boundary) -> Result<RasterImage> {
    if kernel.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "kernel must have 1 channel, got {}",
            kernel.channels()
        )));
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut data = vec![0.0; h * w * c];
    for ch in 0..c {
        let plane = image.channel(ch);
        let out = convolve_plane(
            plane.data(),
            h,
            w,
            kernel.data(),
            kernel.height(),
            kernel.width(),
            boundary,
        );
        for (i, v) in out.into_iter().enumerate() {
            data[i * c + ch] = v;
        }
    }
    RasterImage::from_clamped(h, w, c, data)
}
