use super::*;
use crate::evalkit::bbox_stats;
use crate::geom::BBox;
use crate::trajectory::CurveClass;

fn small_cfg(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        height: 64,
        width: 96,
        radius: (4.0, 8.0),
        train_count: 6,
        val_count: 2,
        negative_fraction: 0.25,
        ..GenConfig::default()
    }
}

#[test]
fn solid_texture_is_flat_color_inside_disc() {
    let tex = TextureParams {
        family: TextureFamily::Solid,
        colors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        period: 8.0,
        angle: 0.3,
    };
    let obj = tex.render(6.0).unwrap();
    let a = 6;
    assert_eq!(obj.patch_size(), 13);
    for (dy, dx) in [(0i64, 0i64), (3, -2), (-4, 1)] {
        let (y, x) = ((a + dy) as usize, (a + dx) as usize);
        assert_eq!(obj.f.get(y, x, 0), 1.0);
        assert_eq!(obj.f.get(y, x, 1), 0.0);
        assert_eq!(obj.f.get(y, x, 2), 0.0);
    }
    // Corners lie outside the disc.
    for c in 0..3 {
        assert_eq!(obj.f.get(0, 0, c), 0.0);
    }
}

#[test]
fn disc_mask_support() {
    for family in TextureFamily::ALL {
        for r in [3.0, 5.5, 12.0] {
            let obj = gen_texture(family, r, 11).unwrap();
            let a = r.ceil() as usize;
            assert_eq!(obj.m.get(a, a, 0), 1.0);
            let s = obj.patch_size();
            for y in 0..s {
                for x in 0..s {
                    let d = (y as f64 - a as f64).hypot(x as f64 - a as f64);
                    let m = obj.m.get(y, x, 0);
                    if d > r + 1.0 {
                        assert_eq!(m, 0.0);
                    }
                    if d <= r - 0.5 {
                        assert_eq!(m, 1.0);
                    }
                    for c in 0..3 {
                        assert!(obj.f.get(y, x, c) <= m + 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn texture_is_deterministic_per_seed() {
    for family in TextureFamily::ALL {
        assert_eq!(gen_texture(family, 7.0, 5).unwrap(), gen_texture(family, 7.0, 5).unwrap());
    }
    assert_ne!(
        gen_texture(TextureFamily::Stripes, 7.0, 5).unwrap(),
        gen_texture(TextureFamily::Stripes, 7.0, 6).unwrap()
    );
}

#[test]
fn texture_family_parses() {
    assert_eq!("rings".parse::<TextureFamily>().unwrap(), TextureFamily::Rings);
    assert!("plaid".parse::<TextureFamily>().is_err());
}

#[test]
fn zero_speed_gives_static_curve() {
    let d = PixelDomain::new(50, 60);
    for seed in 0..20 {
        let c = gen_curve(d, 5.0, (0.0, 0.0), seed).unwrap();
        assert_eq!((c.c1, c.c2, c.c3), (Vec2::ZERO, Vec2::ZERO, Vec2::ZERO));
    }
}

#[test]
fn curves_keep_margin_and_length() {
    let d = PixelDomain::new(120, 200);
    for seed in 0..300 {
        let r = 3.0 + (seed % 10) as f64;
        let c = gen_curve(d, r, (20.0, 60.0), seed).unwrap();
        assert!(c.is_normalized());
        for i in 0..=100 {
            let p = c.at(i as f64 / 100.0);
            assert!(p.x >= r && p.y >= r, "seed {seed}: {p:?}");
            assert!(p.x <= 199.0 - r && p.y <= 119.0 - r, "seed {seed}: {p:?}");
        }
        let len = c.arc_length();
        assert!((20.0 - 1e-6..=60.0 + 1e-6).contains(&len), "seed {seed}: length {len}");
    }
}

#[test]
fn class_frequencies_are_balanced() {
    let d = PixelDomain::new(256, 512);
    let mut counts = [0usize; 3];
    for seed in 0..1000 {
        let c = gen_curve(d, 8.0, (16.0, 48.0), seed).unwrap();
        let k = match c.class().unwrap() {
            CurveClass::Line => 0,
            CurveClass::Parabola => 1,
            CurveClass::Piecewise => 2,
        };
        counts[k] += 1;
    }
    for n in counts {
        let f = n as f64 / 1000.0;
        assert!((0.25..=0.42).contains(&f), "{counts:?}");
    }
}

#[test]
fn impossible_curve_is_unsatisfiable() {
    let d = PixelDomain::new(30, 30);
    let err = gen_curve(d, 5.0, (200.0, 300.0), 1).unwrap_err();
    assert!(matches!(err, Error::Unsatisfiable { attempts: MAX_ATTEMPTS, .. }));
    assert!(gen_curve(PixelDomain::new(8, 8), 5.0, (0.0, 0.0), 1).is_err());
}

#[test]
fn sample_is_self_consistent() {
    let cfg = GenConfig {
        noise_sigma: 0.0,
        ..small_cfg(3)
    };
    let mut positives = 0;
    for i in 0..8 {
        let s = gen_sample(&cfg, Split::Train, i).unwrap();
        assert_eq!(s.frame.domain(), cfg.domain());
        if !s.present {
            assert_eq!(s.frame, s.background);
            assert!(s.matting.hm.data().iter().all(|v| *v == 0.0));
            continue;
        }
        positives += 1;
        let h = rasterize_kernel(&s.curve, cfg.domain(), None).unwrap();
        let direct = crate::formation::compose(&s.object, &h, &s.background).unwrap();
        let d = s.frame.data().iter().zip(direct.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-9, "sample {i}: {d}");
        let want = tdf(&s.curve, s.radius, cfg.domain(), Some(dataset::tdf_samples(&s.curve))).unwrap();
        assert_eq!(s.tdf, want);
        assert!(contrast(&s.frame, &s.background, &s.matting.hm) >= cfg.contrast_floor);
    }
    assert!(positives >= 4);
}

#[test]
fn samples_are_deterministic_and_split_streams_differ() {
    let cfg = small_cfg(9);
    let a = gen_sample(&cfg, Split::Train, 2).unwrap();
    let b = gen_sample(&cfg, Split::Train, 2).unwrap();
    assert_eq!(a, b);
    let c = gen_sample(&cfg, Split::Val, 2).unwrap();
    assert_ne!(a.frame, c.frame);
}

#[test]
fn negative_fraction_is_respected() {
    let cfg = GenConfig {
        height: 40,
        width: 40,
        radius: (3.0, 4.0),
        negative_fraction: 0.1,
        ..GenConfig::default()
    };
    let negatives = (0..400).filter(|i| !gen_sample(&cfg, Split::Train, *i).unwrap().present).count();
    assert!((20..=60).contains(&negatives), "{negatives}");
}

#[test]
fn noisy_samples_stay_within_noise_level() {
    let cfg = GenConfig {
        noise_sigma: 0.02,
        negative_fraction: 0.0,
        ..small_cfg(4)
    };
    let s = gen_sample(&cfg, Split::Train, 0).unwrap();
    let clean = compose_from_matting(&s.matting, &s.background).unwrap();
    let n = clean.data().len() as f64;
    let rms = (s.frame.data().iter().zip(clean.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    assert!(rms > 0.01 && rms <= 0.021, "{rms}");
}

#[test]
fn dataset_roundtrip_is_byte_identical_and_verifies() {
    let cfg = small_cfg(21);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = gen_dataset(&cfg, a.path()).unwrap();
    gen_dataset(&cfg, b.path()).unwrap();
    assert_eq!(ma.samples.len(), 8);
    for e in &ma.samples {
        for f in &e.files {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert!(x == y, "{f} differs");
        }
    }
    let manifest_a = std::fs::read(a.path().join("manifest.json")).unwrap();
    assert_eq!(manifest_a, std::fs::read(b.path().join("manifest.json")).unwrap());

    let report = verify_dataset(a.path()).unwrap();
    assert!(report.ok(), "{:?}", report.failures);
    assert_eq!(report.checked, 8);

    let (s, meta) = read_sample(&a.path().join(&ma.samples[0].dir)).unwrap();
    assert_eq!(meta.index, 0);
    assert_eq!(s.curve, gen_sample(&cfg, Split::Train, 0).unwrap().curve);
}

#[test]
fn verify_names_tampered_sample() {
    let cfg = GenConfig {
        negative_fraction: 0.0,
        ..small_cfg(22)
    };
    let root = tempfile::tempdir().unwrap();
    let m = gen_dataset(&cfg, root.path()).unwrap();
    let target = &m.samples[3];
    let path = root.path().join(&target.dir).join("hf.fmoa");
    let mut arr = crate::imgcore::io::read_fmoa(&path).unwrap();
    let k = arr.data.iter().position(|v| *v > 0.05).unwrap();
    arr.data[k] += 0.2;
    crate::imgcore::io::write_fmoa(&path, &arr).unwrap();
    let report = verify_dataset(root.path()).unwrap();
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].sample, target.dir);
    assert!(report.failures[0].reason.contains("hf"), "{}", report.failures[0].reason);

    // Truncation is reported the same way.
    std::fs::write(&path, b"FMOA").unwrap();
    let report = verify_dataset(root.path()).unwrap();
    assert_eq!(report.failures[0].sample, target.dir);
}

#[test]
fn directory_backgrounds_are_resized_and_used() {
    let dir = tempfile::tempdir().unwrap();
    let gray = RasterImage::filled(20, 30, 1, 64.0 / 255.0);
    crate::imgcore::io::write_png(dir.path().join("a.png"), &gray, BitDepth::Eight).unwrap();
    let cfg = GenConfig {
        background: BackgroundSource::Directory(dir.path().to_path_buf()),
        negative_fraction: 1.0,
        ..small_cfg(1)
    };
    let s = gen_sample(&cfg, Split::Train, 0).unwrap();
    assert_eq!(s.background.channels(), 3);
    assert_eq!(s.background.domain(), cfg.domain());
    assert!(s.background.data().iter().all(|v| (v - 64.0 / 255.0).abs() < 1e-4));

    let empty = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        background: BackgroundSource::Directory(empty.path().to_path_buf()),
        ..small_cfg(1)
    };
    assert!(gen_sample(&cfg, Split::Train, 0).is_err());
}

fn disc_box(p: Vec2, r: f64) -> BBox {
    BBox::new(p.x - r, p.y - r, p.x + r, p.y + r)
}

#[test]
fn fast_samples_have_low_consecutive_iou() {
    // Object footprint at exposure start against exposure end.
    let cfg = GenConfig {
        height: 128,
        width: 256,
        radius: (5.0, 12.0),
        speed: (4.0, 6.0),
        negative_fraction: 0.0,
        ..GenConfig::default()
    };
    let mut ious = Vec::new();
    for i in 0..100 {
        let s = gen_sample(&cfg, Split::Train, i).unwrap();
        let r = s.radius;
        let stats = bbox_stats(&[disc_box(s.curve.at(0.0), r), disc_box(s.curve.at(1.0), r)]).unwrap();
        ious.extend(stats.iou);
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!(mean < 0.1, "{mean}");
}

#[test]
fn sequence_frames_do_not_overlap_recent_frames() {
    let cfg = GenConfig {
        height: 96,
        width: 160,
        radius: (5.0, 7.0),
        ..GenConfig::default()
    };
    let seq = gen_sequence(&cfg, 8, 5).unwrap();
    assert_eq!(seq.frames.len(), 8);
    for t in 1..8 {
        let cur = &seq.frames[t].matting.hm;
        for back in 1..=2.min(t) {
            let prev = &seq.frames[t - back].matting.hm;
            let shared = cur.data().iter().zip(prev.data()).filter(|(a, b)| **a > 0.0 && **b > 0.0).count();
            assert_eq!(shared, 0, "frame {t} overlaps frame {}", t - back);
        }
    }
    assert_eq!(gen_sequence(&cfg, 8, 5).unwrap(), seq);
}
