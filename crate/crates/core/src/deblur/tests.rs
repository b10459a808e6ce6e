use super::*;
use crate::formation::{render_matting, ObjectModel};
use crate::geom::Vec2;
use crate::trajectory::{rasterize_kernel, Curve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Disc of radius `r` with a smooth random color gradient.
fn smooth_disc(rng: &mut ChaCha8Rng, r: f64) -> ObjectModel {
    let a = r.ceil() as usize;
    let s = 2 * a + 1;
    let base: [f64; 3] = [rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)];
    let slope: [f64; 3] = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    let m = Plane::from_fn(s, s, |y, x| {
        let d = ((y as f64 - a as f64).powi(2) + (x as f64 - a as f64).powi(2)).sqrt();
        (r + 0.5 - d).clamp(0.0, 1.0)
    });
    let mut f = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in 0..s {
            let mv = m.get(y, x);
            let u = (x as f64 - a as f64) / s as f64;
            for c in 0..3 {
                f.push(mv * (base[c] + slope[c] * u).clamp(0.0, 1.0));
            }
        }
    }
    ObjectModel::new(RasterImage::new(s, s, 3, f).unwrap(), m.to_image(), r).unwrap()
}

fn instance(seed: u64, frame: usize) -> (ObjectModel, BlurKernel, MattingPairRef) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.gen_range(4.0..7.0);
    let obj = smooth_disc(&mut rng, r);
    let c = frame as f64 / 2.0;
    let a = Vec2::new(c + rng.gen_range(-12.0..-6.0), c + rng.gen_range(-6.0..6.0));
    let b = Vec2::new(c + rng.gen_range(6.0..12.0), c + rng.gen_range(-6.0..6.0));
    let curve = Curve::uniform_segment(a, b);
    let h = rasterize_kernel(&curve, PixelDomain::new(frame, frame), None).unwrap();
    let pair = render_matting(&obj, &h).unwrap();
    (obj, h, MattingPairRef { hf: pair.hf, hm: pair.hm })
}

struct MattingPairRef {
    hf: RasterImage,
    hm: RasterImage,
}

/// Independent gather-form evaluation of the energy.
fn objective_oracle(f: &RasterImage, m: &RasterImage, h: &Plane, hf: &RasterImage, hm: &RasterImage, cfg: &DeblurConfig) -> f64 {
    let s = m.height();
    let a = (s / 2) as isize;
    let mut data = 0.0;
    for y in 0..h.height() {
        for x in 0..h.width() {
            let mut acc = [0.0; 4];
            for i in 0..s {
                for j in 0..s {
                    let (hy, hx) = (y as isize - (i as isize - a), x as isize - (j as isize - a));
                    if hy < 0 || hx < 0 || hy as usize >= h.height() || hx as usize >= h.width() {
                        continue;
                    }
                    let hv = h.get(hy as usize, hx as usize);
                    for c in 0..3 {
                        acc[c] += hv * f.get(i, j, c);
                    }
                    acc[3] += hv * m.get(i, j, 0);
                }
            }
            for c in 0..3 {
                data += (acc[c] - hf.get(y, x, c)).powi(2);
            }
            data += (acc[3] - hm.get(y, x, 0)).powi(2);
        }
    }
    let mut tv = 0.0;
    for i in 0..s {
        for j in 0..s {
            for c in 0..4 {
                let g = |ii: usize, jj: usize| if c < 3 { f.get(ii, jj, c) } else { m.get(ii, jj, 0) };
                let w = if c < 3 { cfg.alpha_f } else { cfg.alpha_m };
                if j + 1 < s {
                    tv += w * (g(i, j + 1) - g(i, j)).abs();
                }
                if i + 1 < s {
                    tv += w * (g(i + 1, j) - g(i, j)).abs();
                }
            }
        }
    }
    0.5 * data + tv
}

#[test]
fn objective_trivial_cases() {
    let cfg = DeblurConfig::default();
    let d = PixelDomain::new(12, 12);
    let h = BlurKernel::delta(d, 5, 5);
    let z3 = RasterImage::zeros(12, 12, 3);
    let z1 = RasterImage::zeros(12, 12, 1);
    let j = objective(&RasterImage::zeros(5, 5, 3), &RasterImage::zeros(5, 5, 1), &h, &z3, &z1, &cfg).unwrap();
    assert_eq!(j, 0.0);
    let f = RasterImage::filled(5, 5, 3, 0.3);
    let m = RasterImage::filled(5, 5, 1, 0.6);
    let with_tv = objective(&f, &m, &h, &z3, &z1, &cfg).unwrap();
    let no_tv = objective(&f, &m, &h, &z3, &z1, &DeblurConfig { alpha_f: 0.0, alpha_m: 0.0, ..cfg }).unwrap();
    assert_eq!(with_tv, no_tv);
}

#[test]
fn objective_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = PixelDomain::new(14, 17);
    let hp = Plane::from_fn(14, 17, |_, _| rng.gen::<f64>());
    let h = BlurKernel::normalized(hp).unwrap();
    let m = RasterImage::new(5, 5, 1, (0..25).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let f = RasterImage::new(5, 5, 3, (0..75).map(|i| m.data()[i / 3] * rng.gen::<f64>()).collect()).unwrap();
    let hf = RasterImage::new(14, 17, 3, (0..d.len() * 3).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let hm = RasterImage::new(14, 17, 1, (0..d.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let cfg = DeblurConfig { alpha_f: 0.3, alpha_m: 0.7, ..Default::default() };
    let got = objective(&f, &m, &h, &hf, &hm, &cfg).unwrap();
    let want = objective_oracle(&f, &m, h.plane(), &hf, &hm, &cfg);
    assert!((got - want).abs() <= 1e-10 * want.max(1.0), "{got} vs {want}");
}

#[test]
fn objective_rejects_shape_mismatch() {
    let h = BlurKernel::delta(PixelDomain::new(10, 10), 5, 5);
    let err = objective(
        &RasterImage::zeros(5, 5, 3),
        &RasterImage::zeros(5, 5, 1),
        &h,
        &RasterImage::zeros(10, 11, 3),
        &RasterImage::zeros(10, 10, 1),
        &DeblurConfig::default(),
    );
    assert!(matches!(err, Err(Error::DimensionMismatch(_))));
}

#[test]
fn identity_kernel_recovers_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obj = smooth_disc(&mut rng, 4.0);
    let h = BlurKernel::delta(PixelDomain::new(24, 24), 11, 13);
    let pair = render_matting(&obj, &h).unwrap();
    let cfg = DeblurConfig {
        alpha_f: 0.0,
        alpha_m: 0.0,
        optimize_h: false,
        iterations: 200,
        tolerance: 0.0,
        patch_size: obj.patch_size(),
        ..Default::default()
    };
    let rep = solve(&pair.hf, &pair.hm, &h, &cfg).unwrap();
    let err_f = rep.f.data().iter().zip(obj.f.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let err_m = rep.m.data().iter().zip(obj.m.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err_f <= 1e-6 && err_m <= 1e-6, "{err_f} {err_m}");
}

#[test]
fn report_invariants_and_descent() {
    for seed in 0..4 {
        let (obj, h, pair) = instance(seed, 48);
        let cfg = DeblurConfig { iterations: 15, patch_size: obj.patch_size(), ..Default::default() };
        let rep = solve(&pair.hf, &pair.hm, &h, &cfg).unwrap();
        assert!(rep.constraint_violation <= 1e-6);
        assert_eq!(rep.objective_trace.len(), rep.iterations + 1);
        assert!(rep.objective_trace.last().unwrap() <= &rep.objective_trace[0]);
        let direct = objective(&rep.f, &rep.m, &rep.h, &pair.hf, &pair.hm, &cfg).unwrap();
        let traced = *rep.objective_trace.last().unwrap();
        assert!((direct - traced).abs() <= 1e-9 * direct.max(1.0), "{direct} vs {traced}");
        let init = objective(
            &RasterImage::zeros(obj.patch_size(), obj.patch_size(), 3),
            &RasterImage::zeros(obj.patch_size(), obj.patch_size(), 1),
            &h,
            &pair.hf,
            &pair.hm,
            &cfg,
        )
        .unwrap();
        assert!((init - rep.objective_trace[0]).abs() <= 1e-9 * init);
    }
}

#[test]
fn fixed_h_keeps_kernel() {
    let (obj, h, pair) = instance(7, 48);
    let cfg = DeblurConfig { iterations: 5, optimize_h: false, patch_size: obj.patch_size(), ..Default::default() };
    let rep = solve(&pair.hf, &pair.hm, &h, &cfg).unwrap();
    assert_eq!(rep.h, h);
}

#[test]
fn kernel_stays_near_initial_support() {
    let (obj, h, pair) = instance(8, 48);
    let cfg = DeblurConfig { iterations: 10, patch_size: obj.patch_size(), ..Default::default() };
    let rep = solve(&pair.hf, &pair.hm, &h, &cfg).unwrap();
    let allowed = dilate_disc(&h.plane().threshold(0.0), cfg.h_support_radius);
    for (x, y) in rep.h.plane().threshold(0.0).pixels() {
        assert!(allowed.get(y, x));
    }
}

#[test]
fn resuming_at_convergence_is_a_fixed_point() {
    let (obj, h, pair) = instance(9, 48);
    let cfg = DeblurConfig { patch_size: obj.patch_size(), ..Default::default() };
    let rep = solve(&pair.hf, &pair.hm, &h, &cfg).unwrap();
    let more = solve_continue(&rep, 5).unwrap();
    let (a, b) = (*rep.objective_trace.last().unwrap(), *more.objective_trace.last().unwrap());
    assert!((a - b).abs() < 10.0 * cfg.tolerance * a, "{a} -> {b}");
}

#[test]
fn line_kernel_roundtrip_quality() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let obj = smooth_disc(&mut rng, 10.0);
    let curve = Curve::new(Vec2::new(30.0, 40.0), Vec2::new(28.0, 9.0), Vec2::ZERO, Vec2::ZERO);
    let h = rasterize_kernel(&curve, PixelDomain::new(80, 96), None).unwrap();
    let pair = render_matting(&obj, &h).unwrap();
    let cfg = DeblurConfig { patch_size: obj.patch_size(), ..Default::default() };
    let rep = solve(&pair.hf, &pair.hm, &h, &cfg).unwrap();
    let region = obj.m.channel(0).threshold(0.5);
    let psnr = psnr_masked(&rep.f, &obj.f, &region).unwrap();
    assert!(psnr >= 25.0, "psnr {psnr}");
}

#[test]
fn config_validation() {
    let bad = [
        DeblurConfig { alpha_f: -1.0, ..Default::default() },
        DeblurConfig { iterations: 0, ..Default::default() },
        DeblurConfig { rho: 0.0, ..Default::default() },
        DeblurConfig { tolerance: f64::NAN, ..Default::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err());
    }
    assert!(DeblurConfig::default().validate().is_ok());
}

#[test]
fn psnr_of_identical_images_is_infinite() {
    let a = RasterImage::filled(4, 4, 3, 0.5);
    let region = BinaryMask::from_fn(4, 4, |_, _| true);
    assert_eq!(psnr_masked(&a, &a, &region).unwrap(), f64::INFINITY);
    let b = RasterImage::filled(4, 4, 3, 0.6);
    assert!((psnr_masked(&a, &b, &region).unwrap() - 20.0).abs() < 1e-9);
}
