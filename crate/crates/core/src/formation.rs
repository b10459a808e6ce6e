//! Image formation for fast moving objects: `I = H*F + (1 - H*M) B`.
//!
//! `F` and `M` live on a compact `S x S` patch centered on the object; `H`
//! lives on the frame grid. `H*F` is the zero-padded "same" convolution of
//! the kernel with the patch anchored at its center pixel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imgcore::{convolve_plane, BlurKernel, Boundary, Plane, RasterImage};

/// Values beyond `[0, 1]` by more than this before clamping indicate a
/// modeling error rather than rounding.
pub const CLAMP_GUARD: f64 = 1e-6;

/// Sharp appearance `F` (3 channels) and mask `M` (1 channel) on a square patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub f: RasterImage,
    pub m: RasterImage,
    pub radius: f64,
}

impl ObjectModel {
    /// Checks shapes and the ordering `0 <= F <= M <= 1`.
    pub fn new(f: RasterImage, m: RasterImage, radius: f64) -> Result<Self> {
        if m.channels() != 1 {
            return Err(Error::DimensionMismatch("mask must have 1 channel".into()));
        }
        if f.height() != m.height() || f.width() != m.width() {
            return Err(Error::DimensionMismatch("appearance and mask differ in size".into()));
        }
        let c = f.channels();
        for (i, mv) in m.data().iter().enumerate() {
            for ch in 0..c {
                if f.data()[i * c + ch] > mv + 1e-9 {
                    return Err(Error::OutOfRange(format!(
                        "appearance exceeds mask at pixel {i} channel {ch}"
                    )));
                }
            }
        }
        Ok(ObjectModel { f, m, radius })
    }

    pub fn patch_size(&self) -> usize {
        self.m.height()
    }
}

/// Blurred appearance and mask, `(H*F, H*M)`, on the frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MattingPair {
    pub hf: RasterImage,
    pub hm: RasterImage,
}

/// Unclamped `H*F` planes (one per appearance channel) and `H*M`.
pub(crate) fn blur_object_planes(obj: &ObjectModel, h: &BlurKernel) -> (Vec<Plane>, Plane) {
    let d = h.domain();
    let (s_h, s_w) = (obj.m.height(), obj.m.width());
    let blur = |patch: &Plane| {
        let out = convolve_plane(
            h.plane().data(),
            d.height,
            d.width,
            patch.data(),
            s_h,
            s_w,
            Boundary::ZeroPad,
        );
        Plane::new(d.height, d.width, out).expect("convolution keeps the frame shape")
    };
    let hf = obj.f.planes().iter().map(blur).collect();
    let hm = blur(&obj.m.channel(0));
    (hf, hm)
}

fn guard(v: f64) -> Result<f64> {
    if !(-CLAMP_GUARD..=1.0 + CLAMP_GUARD).contains(&v) {
        return Err(Error::OutOfRange(format!(
            "pre-clamp value {v} exceeds [0, 1] by more than {CLAMP_GUARD}"
        )));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Composes a frame `H*F + (1 - H*M) B`.
pub fn compose(obj: &ObjectModel, h: &BlurKernel, background: &RasterImage) -> Result<RasterImage> {
    let pair = render_matting(obj, h)?;
    compose_from_matting(&pair, background)
}

/// Composes a frame from a matting pair: `Hf + (1 - Hm) B`.
pub fn compose_from_matting(pair: &MattingPair, background: &RasterImage) -> Result<RasterImage> {
    let (hf, hm) = (&pair.hf, &pair.hm);
    if background.domain() != hm.domain() || background.channels() != hf.channels() {
        return Err(Error::DimensionMismatch(format!(
            "background {}x{}x{} vs matting pair {}x{}x{}",
            background.height(),
            background.width(),
            background.channels(),
            hf.height(),
            hf.width(),
            hf.channels()
        )));
    }
    let c = hf.channels();
    let mut data = Vec::with_capacity(background.data().len());
    for (i, b) in background.data().iter().enumerate() {
        let m = hm.data()[i / c];
        data.push(guard(hf.data()[i] + (1.0 - m) * b)?);
    }
    RasterImage::new(background.height(), background.width(), c, data)
}

/// Renders the matting pair `(H*F, H*M)`.
pub fn render_matting(obj: &ObjectModel, h: &BlurKernel) -> Result<MattingPair> {
    let (hf, hm) = blur_object_planes(obj, h);
    let d = h.domain();
    let check = |p: &Plane| -> Result<Plane> {
        let data = p.data().iter().map(|v| guard(*v)).collect::<Result<Vec<_>>>()?;
        Plane::new(d.height, d.width, data)
    };
    let hf = hf.iter().map(check).collect::<Result<Vec<_>>>()?;
    let hm = check(&hm)?;
    Ok(MattingPair {
        hf: RasterImage::from_planes(&hf)?,
        hm: hm.to_image(),
    })
}

/// Adds i.i.d. zero-mean Gaussian noise and clamps to `[0, 1]`.
pub fn add_observation_noise(x: &RasterImage, sigma: f64, seed: u64) -> Result<RasterImage> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let data = x.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
    RasterImage::from_clamped(x.height(), x.width(), x.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::imgcore::PixelDomain;
    use crate::trajectory::{rasterize_kernel, Curve};
    use rand::Rng;

    pub(crate) fn random_disc(rng: &mut ChaCha8Rng, r: f64) -> ObjectModel {
        let a = r.ceil() as usize;
        let s = 2 * a + 1;
        let m = Plane::from_fn(s, s, |y, x| {
            let d = ((y as f64 - a as f64).powi(2) + (x as f64 - a as f64).powi(2)).sqrt();
            (r + 0.5 - d).clamp(0.0, 1.0)
        });
        let mut f = Vec::with_capacity(s * s * 3);
        for v in m.data() {
            for _ in 0..3 {
                f.push(v * rng.gen::<f64>());
            }
        }
        ObjectModel::new(RasterImage::new(s, s, 3, f).unwrap(), m.to_image(), r).unwrap()
    }

    fn random_background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RasterImage {
        RasterImage::new(h, w, 3, (0..h * w * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn empty_object_leaves_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_background(&mut rng, 20, 20);
        let obj = ObjectModel::new(RasterImage::zeros(5, 5, 3), RasterImage::zeros(5, 5, 1), 2.0).unwrap();
        let h = BlurKernel::delta(PixelDomain::new(20, 20), 10, 10);
        assert_eq!(compose(&obj, &h, &b).unwrap(), b);
    }

    #[test]
    fn delta_kernel_pastes_opaque_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_background(&mut rng, 20, 20);
        let f = RasterImage::new(5, 5, 3, (0..75).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let obj = ObjectModel::new(f.clone(), RasterImage::filled(5, 5, 1, 1.0), 2.0).unwrap();
        let h = BlurKernel::delta(PixelDomain::new(20, 20), 7, 12);
        let out = compose(&obj, &h, &b).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                for c in 0..3 {
                    let inside = (10..15).contains(&y) && (5..10).contains(&x);
                    let want = if inside { f.get(y - 10, x - 5, c) } else { b.get(y, x, c) };
                    assert_eq!(out.get(y, x, c), want);
                }
            }
        }
        let pair = render_matting(&obj, &h).unwrap();
        assert_eq!(pair.hm.get(12, 7, 0), 1.0);
        assert_eq!(pair.hf.get(10, 5, 1), f.get(0, 0, 1));
    }

    #[test]
    fn matches_direct_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = PixelDomain::new(48, 48);
        let obj = random_disc(&mut rng, 5.0);
        let curve = Curve::new(
            Vec2::new(12.0, 14.0),
            Vec2::new(18.0, 6.0),
            Vec2::new(2.0, 9.0),
            Vec2::ZERO,
        );
        let h = rasterize_kernel(&curve, d, None).unwrap();
        let b = random_background(&mut rng, 48, 48);
        let out = compose(&obj, &h, &b).unwrap();
        let a = obj.patch_size() as i64 / 2;
        for y in 0..48i64 {
            for x in 0..48i64 {
                let (mut hf, mut hm) = ([0.0; 3], 0.0);
                for i in 0..obj.patch_size() as i64 {
                    for j in 0..obj.patch_size() as i64 {
                        let (qy, qx) = (y - (i - a), x - (j - a));
                        if qy < 0 || qx < 0 || qy >= 48 || qx >= 48 {
                            continue;
                        }
                        let hv = h.plane().get(qy as usize, qx as usize);
                        hm += hv * obj.m.get(i as usize, j as usize, 0);
                        for c in 0..3 {
                            hf[c] += hv * obj.f.get(i as usize, j as usize, c);
                        }
                    }
                }
                for c in 0..3 {
                    let want = hf[c] + (1.0 - hm) * b.get(y as usize, x as usize, c);
                    assert!((out.get(y as usize, x as usize, c) - want).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn matting_mass_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obj = random_disc(&mut rng, 4.0);
        let d = PixelDomain::new(40, 60);
        let h = rasterize_kernel(
            &Curve::uniform_segment(Vec2::new(15.0, 20.0), Vec2::new(45.0, 20.0)),
            d,
            None,
        )
        .unwrap();
        let pair = render_matting(&obj, &h).unwrap();
        assert!((pair.hm.sum() - obj.m.sum()).abs() < 1e-9);
    }

    #[test]
    fn render_then_compose_roundtrip_and_off_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obj = random_disc(&mut rng, 3.0);
        let d = PixelDomain::new(32, 32);
        let h = rasterize_kernel(
            &Curve::new(Vec2::new(8.0, 8.0), Vec2::new(10.0, 12.0), Vec2::ZERO, Vec2::new(6.0, -4.0)),
            d,
            None,
        )
        .unwrap();
        let b = random_background(&mut rng, 32, 32);
        let pair = render_matting(&obj, &h).unwrap();
        let direct = compose(&obj, &h, &b).unwrap();
        for i in 0..32 * 32 {
            let hm = pair.hm.data()[i];
            for c in 0..3 {
                let k = i * 3 + c;
                let rebuilt = pair.hf.data()[k] + (1.0 - hm) * b.data()[k];
                assert!((rebuilt - direct.data()[k]).abs() <= 1e-12);
                if hm == 0.0 {
                    assert_eq!(direct.data()[k], b.data()[k]);
                }
                assert!(pair.hf.data()[k] <= hm + 1e-12);
            }
        }
    }

    #[test]
    fn domain_mismatch_is_error() {
        let obj = ObjectModel::new(RasterImage::zeros(3, 3, 3), RasterImage::zeros(3, 3, 1), 1.0).unwrap();
        let h = BlurKernel::delta(PixelDomain::new(10, 10), 5, 5);
        assert!(compose(&obj, &h, &RasterImage::zeros(10, 11, 3)).is_err());
        assert!(compose(&obj, &h, &RasterImage::zeros(10, 10, 1)).is_err());
    }

    #[test]
    fn object_ordering_enforced() {
        let f = RasterImage::filled(3, 3, 3, 0.6);
        let m = RasterImage::filled(3, 3, 1, 0.5);
        assert!(ObjectModel::new(f, m, 1.0).is_err());
    }

    #[test]
    fn noise_behaviour() {
        let x = RasterImage::filled(100, 100, 1, 0.5);
        assert_eq!(add_observation_noise(&x, 0.0, 3).unwrap(), x);
        let a = add_observation_noise(&x, 0.05, 42).unwrap();
        let b = add_observation_noise(&x, 0.05, 42).unwrap();
        assert_eq!(a, b);
        let n = a.data().len() as f64;
        let mean = a.data().iter().sum::<f64>() / n;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.05).abs() <= 0.005);
        assert!(add_observation_noise(&x, -1.0, 0).is_err());
    }
}
