//! Parametric intra-frame trajectories.
//!
//! A [`Curve`] is `C(t) = c0 + c1 s + c2 s^2 + c3 max(2t - 1, 0)` with
//! `s = min(2t, 1)` and `t` in `[0, 1]`. With `c2 = c3 = 0` it is a line
//! traversed during the first half of the exposure (the object rests at the
//! end point for the second half); with `c3 = 0` a parabola; with `c2 = 0`
//! a two-piece line with one bounce at `t = 0.5`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec2};
use crate::imgcore::{BlurKernel, PixelDomain, Plane};

/// Eight-parameter trajectory in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Curve {
    pub c0: Vec2,
    pub c1: Vec2,
    pub c2: Vec2,
    pub c3: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveClass {
    Line,
    Parabola,
    Piecewise,
}

impl Curve {
    pub fn new(c0: Vec2, c1: Vec2, c2: Vec2, c3: Vec2) -> Self {
        Curve { c0, c1, c2, c3 }
    }

    pub fn stationary(p: Vec2) -> Self {
        Curve {
            c0: p,
            ..Default::default()
        }
    }

    /// Constant-speed straight segment from `a` to `b` over the whole exposure.
    pub fn uniform_segment(a: Vec2, b: Vec2) -> Self {
        let half = (b - a) * 0.5;
        Curve::new(a, half, Vec2::ZERO, half)
    }

    /// Model class, or `None` when both `c2` and `c3` are nonzero.
    pub fn class(&self) -> Option<CurveClass> {
        match (self.c2.is_zero(), self.c3.is_zero()) {
            (true, true) => Some(CurveClass::Line),
            (false, true) => Some(CurveClass::Parabola),
            (true, false) => Some(CurveClass::Piecewise),
            (false, false) => None,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.class().is_some()
    }

    /// Position at `t`, which must lie in `[0, 1]`.
    pub fn eval(&self, t: f64) -> Result<Vec2> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange(format!("curve parameter t={t} outside [0, 1]")));
        }
        Ok(self.at(t))
    }

    /// Position at `t` without range checking.
    pub fn at(&self, t: f64) -> Vec2 {
        let s = (2.0 * t).min(1.0);
        let u = (2.0 * t - 1.0).max(0.0);
        self.c0 + self.c1 * s + self.c2 * (s * s) + self.c3 * u
    }

    /// The same path traversed backwards in time, if representable.
    ///
    /// Only the two-piece class is closed under time reversal; lines and
    /// parabolas rest at their end point and have no reversed form.
    pub fn reversed(&self) -> Option<Curve> {
        if !self.c2.is_zero() || self.c3.is_zero() && !self.c1.is_zero() {
            return None;
        }
        let end = self.at(1.0);
        Some(Curve::new(end, -self.c3, Vec2::ZERO, -self.c1))
    }

    /// Zeroes `c2` when `|c3| > 1`, otherwise zeroes `c3`.
    pub fn normalized(&self) -> Curve {
        let mut c = *self;
        if c.c3.norm() > 1.0 {
            c.c2 = Vec2::ZERO;
        } else {
            c.c3 = Vec2::ZERO;
        }
        c
    }

    /// `n >= 2` points at uniformly spaced `t`.
    pub fn sample(&self, n: usize) -> Vec<Vec2> {
        assert!(n >= 2);
        (0..n).map(|i| self.at(i as f64 / (n - 1) as f64)).collect()
    }

    /// Arc length of the traced path (polyline approximation, 1024 pieces).
    pub fn arc_length(&self) -> f64 {
        self.sample(1025).windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    /// At least 64 samples and at least 8 per pixel of arc length.
    pub fn default_samples(&self) -> usize {
        ((8.0 * self.arc_length()).ceil() as usize).max(64)
    }

    pub fn translated(&self, d: Vec2) -> Curve {
        Curve {
            c0: self.c0 + d,
            ..*self
        }
    }
}

/// Normalized form of a curve: see [`Curve::normalized`].
pub fn normalize_curve(c: &Curve) -> Curve {
    c.normalized()
}

/// Rasterizes a curve into a blur kernel on `domain`.
///
/// Each of `samples` uniform-in-`t` positions deposits unit mass split
/// bilinearly over its four neighbouring pixels; the result is rescaled to
/// sum to one.
pub fn rasterize_kernel(c: &Curve, domain: PixelDomain, samples: Option<usize>) -> Result<BlurKernel> {
    let n = samples.unwrap_or_else(|| c.default_samples());
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let (h, w) = (domain.height, domain.width);
    let mut plane = Plane::zeros(h, w);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let p = c.at(t);
        if !domain.contains_point(p.x, p.y) {
            return Err(Error::CurveOutsideDomain { t, x: p.x, y: p.y });
        }
        let (x0, y0) = (p.x.floor() as usize, p.y.floor() as usize);
        let (fx, fy) = (p.x - x0 as f64, p.y - y0 as f64);
        let d = plane.data_mut();
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let wgt = wy * wx;
                if wgt > 0.0 {
                    d[(y0 + dy) * w + x0 + dx] += wgt;
                }
            }
        }
    }
    BlurKernel::normalized(plane)
}

/// Truncated distance function raster: 1 on the trajectory, falling
/// linearly to 0 at distance `2r`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdfRaster {
    pub plane: Plane,
    pub radius: f64,
}

impl TdfRaster {
    pub fn domain(&self) -> PixelDomain {
        self.plane.domain()
    }
}

/// `D(x) = 1 - min(1, dist(x, polyline) / 2r)`.
///
/// Each segment only visits pixels within `2r` of its bounding box; all
/// other pixels are exact zeros.
pub fn tdf_from_polyline(points: &[Vec2], r: f64, domain: PixelDomain) -> Result<TdfRaster> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("polyline has no points".into()));
    }
    let reach = 2.0 * r;
    let (h, w) = (domain.height, domain.width);
    let mut dist = vec![reach; h * w];
    let single = [points[0], points[0]];
    let segments = if points.len() == 1 { &single[..] } else { points };
    for seg in segments.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = (a.x.min(b.x) - reach).floor().max(0.0);
        let y0 = (a.y.min(b.y) - reach).floor().max(0.0);
        let x1 = (a.x.max(b.x) + reach).ceil().min(w as f64 - 1.0);
        let y1 = (a.y.max(b.y) + reach).ceil().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let d = point_segment_distance(Vec2::new(x as f64, y as f64), a, b);
                let cell = &mut dist[y * w + x];
                if d < *cell {
                    *cell = d;
                }
            }
        }
    }
    let data = dist.into_iter().map(|d| 1.0 - (d / reach).min(1.0)).collect();
    Ok(TdfRaster {
        plane: Plane::new(h, w, data)?,
        radius: r,
    })
}

/// Truncated distance function of a curve, approximating the minimum over
/// `t` by the polyline through `samples` uniform-in-`t` points (rounded up
/// to an odd count).
pub fn tdf(c: &Curve, r: f64, domain: PixelDomain, samples: Option<usize>) -> Result<TdfRaster> {
    let n = samples.unwrap_or_else(|| c.default_samples()).max(2);
    // An odd count samples t = 0.5, where the piecewise class bends.
    let mut pts = c.sample(n | 1);
    // Lines and parabolas rest for half the exposure; repeated points add nothing.
    pts.dedup();
    tdf_from_polyline(&pts, r, domain)
}

const LOSS_TIMES: [f64; 3] = [0.0, 0.5, 1.0];

/// Mean distance between corresponding points at `t = 0, 0.5, 1`, taking the
/// better of the two time directions of `c_hat`.
pub fn curve_loss(c: &Curve, c_hat: &Curve) -> f64 {
    let mean = |rev: bool| {
        LOSS_TIMES
            .iter()
            .map(|t| {
                let th = if rev { 1.0 - t } else { *t };
                c.at(*t).dist(c_hat.at(th))
            })
            .sum::<f64>()
            / LOSS_TIMES.len() as f64
    };
    mean(false).min(mean(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::distance_to_polyline;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn eval_examples() {
        let c = Curve::stationary(v(10.0, 20.0));
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(c.eval(t).unwrap(), v(10.0, 20.0));
        }
        let c = Curve::new(Vec2::ZERO, v(4.0, 0.0), Vec2::ZERO, Vec2::ZERO);
        assert_eq!(c.eval(0.25).unwrap(), v(2.0, 0.0));
        let c = Curve::new(Vec2::ZERO, v(2.0, 0.0), Vec2::ZERO, v(0.0, 2.0));
        assert_eq!(c.eval(0.75).unwrap(), v(2.0, 1.0));
        assert!(c.eval(1.01).is_err());
        assert!(c.eval(-0.01).is_err());
    }

    #[test]
    fn normalize_examples() {
        let c = Curve::new(Vec2::ZERO, Vec2::ZERO, v(1.0, 1.0), v(3.0, 0.0)).normalized();
        assert_eq!((c.c2, c.c3), (Vec2::ZERO, v(3.0, 0.0)));
        let c = Curve::new(Vec2::ZERO, Vec2::ZERO, v(1.0, 1.0), v(0.5, 0.0)).normalized();
        assert_eq!((c.c2, c.c3), (v(1.0, 1.0), Vec2::ZERO));
        let line = Curve::new(v(1.0, 2.0), v(3.0, 4.0), Vec2::ZERO, Vec2::ZERO);
        assert_eq!(line.normalized(), line);
    }

    #[test]
    fn classification() {
        let mut c = Curve::stationary(v(1.0, 1.0));
        assert_eq!(c.class(), Some(CurveClass::Line));
        c.c2 = v(0.0, 1.0);
        assert_eq!(c.class(), Some(CurveClass::Parabola));
        c.c3 = v(2.0, 0.0);
        assert_eq!(c.class(), None);
        assert_eq!(c.normalized().class(), Some(CurveClass::Piecewise));
    }

    #[test]
    fn json_layout() {
        let c = Curve::new(v(1.0, 2.0), v(3.0, 4.0), v(0.0, 0.0), v(-1.5, 0.5));
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"c0":[1.0,2.0],"c1":[3.0,4.0],"c2":[0.0,0.0],"c3":[-1.5,0.5]}"#);
        assert_eq!(serde_json::from_str::<Curve>(&s).unwrap(), c);
    }

    #[test]
    fn reversed_piecewise_traces_same_path() {
        let c = Curve::new(v(5.0, 5.0), v(10.0, 2.0), Vec2::ZERO, v(3.0, 7.0));
        let r = c.reversed().unwrap();
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            assert!(c.at(t).dist(r.at(1.0 - t)) < 1e-12);
        }
        let line = Curve::new(v(0.0, 0.0), v(1.0, 0.0), Vec2::ZERO, Vec2::ZERO);
        assert!(line.reversed().is_none());
        assert!(Curve::stationary(v(1.0, 1.0)).reversed().is_some());
    }

    #[test]
    fn kernel_at_integer_pixel() {
        let d = PixelDomain::new(10, 10);
        let k = rasterize_kernel(&Curve::stationary(v(3.0, 7.0)), d, Some(100)).unwrap();
        assert_eq!(k.plane().get(7, 3), 1.0);
        assert_eq!(k.plane().sum(), 1.0);
    }

    #[test]
    fn kernel_bilinear_split() {
        let d = PixelDomain::new(10, 10);
        let k = rasterize_kernel(&Curve::stationary(v(5.5, 5.0)), d, Some(10)).unwrap();
        assert!((k.plane().get(5, 5) - 0.5).abs() < 1e-15);
        assert!((k.plane().get(5, 6) - 0.5).abs() < 1e-15);
        assert!((k.plane().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_errors() {
        let d = PixelDomain::new(10, 10);
        let c = Curve::new(v(5.0, 5.0), v(10.0, 0.0), Vec2::ZERO, Vec2::ZERO);
        assert!(matches!(
            rasterize_kernel(&c, d, Some(100)),
            Err(Error::CurveOutsideDomain { .. })
        ));
        assert!(rasterize_kernel(&Curve::stationary(v(1.0, 1.0)), d, Some(1)).is_err());
    }

    #[test]
    fn uniform_line_column_mass_matches_dense_oracle() {
        // Constant-speed horizontal segment of length 20 on row 8.
        let c = Curve::uniform_segment(v(10.0, 8.0), v(30.0, 8.0));
        let d = PixelDomain::new(16, 40);
        let k = rasterize_kernel(&c, d, Some(2000)).unwrap();
        // Dense oracle: fraction of exposure time each column's hat function collects.
        let n = 1_000_000;
        let mut oracle = [0.0f64; 40];
        for i in 0..n {
            let x = 10.0 + 20.0 * (i as f64 + 0.5) / n as f64;
            let x0 = x.floor() as usize;
            oracle[x0] += (1.0 - (x - x0 as f64)) / n as f64;
            oracle[x0 + 1] += (x - x0 as f64) / n as f64;
        }
        for col in 11..30 {
            let mass: f64 = (0..16).map(|y| k.plane().get(y, col)).sum();
            assert!((mass - 0.05).abs() <= 0.05 * 0.05, "column {col} mass {mass}");
            assert!((mass - oracle[col]).abs() <= 0.05 * 0.05);
        }
    }

    #[test]
    fn tdf_substitution_cases() {
        let d = PixelDomain::new(40, 40);
        let r = 4.0;
        let c = Curve::stationary(v(20.0, 20.0));
        let t = tdf(&c, r, d, Some(2)).unwrap();
        assert_eq!(t.plane.get(20, 20), 1.0);
        assert_eq!(t.plane.get(20, 24), 0.5);
        assert_eq!(t.plane.get(20, 28), 0.0);
        assert_eq!(t.plane.get(20, 32), 0.0);
        assert!(tdf(&c, 0.0, d, None).is_err());
        assert!(tdf(&c, -1.0, d, None).is_err());
    }

    #[test]
    fn tdf_matches_dense_oracle_on_parabola() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = Curve::new(
            v(rng.gen_range(15.0..25.0), rng.gen_range(15.0..25.0)),
            v(rng.gen_range(15.0..25.0), rng.gen_range(-5.0..5.0)),
            v(rng.gen_range(-8.0..8.0), rng.gen_range(5.0..15.0)),
            Vec2::ZERO,
        );
        let r = 8.0;
        let d = PixelDomain::new(64, 64);
        let t = tdf(&c, r, d, None).unwrap();
        let dense: Vec<Vec2> = (0..100_000).map(|i| c.at(i as f64 / 99_999.0)).collect();
        for y in 0..64 {
            for x in 0..64 {
                let p = v(x as f64, y as f64);
                let dist = dense.iter().map(|q| q.dist(p)).fold(f64::INFINITY, f64::min);
                let want = 1.0 - (dist / (2.0 * r)).min(1.0);
                assert!((t.plane.get(y, x) - want).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn curve_loss_examples() {
        let c = Curve::new(v(5.0, 5.0), v(10.0, 2.0), Vec2::ZERO, v(3.0, 7.0));
        assert_eq!(curve_loss(&c, &c), 0.0);
        assert!(curve_loss(&c, &c.reversed().unwrap()) < 1e-12);
        assert!((curve_loss(&c, &c.translated(v(3.0, 4.0))) - 5.0).abs() < 1e-12);
    }

    fn arb_vec(range: f64) -> impl Strategy<Value = Vec2> {
        (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
    }

    fn arb_curve() -> impl Strategy<Value = Curve> {
        // Every point stays within 51 px of (55, 55), inside the 110 px test domain.
        (arb_vec(20.0), arb_vec(15.0), arb_vec(8.0), arb_vec(8.0))
            .prop_map(|(a, b, c, d)| Curve::new(a + v(55.0, 55.0), b, c, d).normalized())
    }

    proptest! {
        #[test]
        fn continuous_at_half(c in arb_curve(), eps in 1e-9f64..1e-3) {
            let gap = c.at(0.5 - eps).dist(c.at(0.5 + eps));
            let bound = 10.0 * eps * (c.c1.norm() + 2.0 * c.c2.norm() + c.c3.norm());
            prop_assert!(gap <= bound + 1e-12);
        }

        #[test]
        fn kernel_is_unit_mass_and_local(c in arb_curve()) {
            let d = PixelDomain::new(110, 110);
            let n = c.default_samples();
            let k = rasterize_kernel(&c, d, Some(n)).unwrap();
            prop_assert!((k.plane().sum() - 1.0).abs() <= 1e-12);
            prop_assert!(k.plane().data().iter().all(|v| *v >= 0.0));
            let dist = distance_to_polyline(d, &c.sample(n)).unwrap();
            for (i, val) in k.plane().data().iter().enumerate() {
                if *val > 0.0 {
                    prop_assert!(dist.data()[i] <= std::f64::consts::SQRT_2 + 1e-9);
                }
            }
        }

        #[test]
        fn tdf_bounded_and_monotone(c in arb_curve(), r in 1.0f64..10.0) {
            let d = PixelDomain::new(110, 110);
            let pts = c.sample(c.default_samples());
            let t = tdf_from_polyline(&pts, r, d).unwrap();
            let dist = distance_to_polyline(d, &pts).unwrap();
            let mut pairs: Vec<(f64, f64)> = dist.data().iter().copied().zip(t.plane.data().iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in pairs.windows(2) {
                prop_assert!(w[1].1 <= w[0].1 + 1e-12);
            }
            prop_assert!(t.plane.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn curve_loss_symmetric(a in arb_curve(), b in arb_curve()) {
            prop_assert!((curve_loss(&a, &b) - curve_loss(&b, &a)).abs() <= 1e-12);
            prop_assert_eq!(curve_loss(&a, &a), 0.0);
        }
    }
}
