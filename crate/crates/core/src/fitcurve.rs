//! Recovers a parametric [`Curve`] from a blur kernel.
//!
//! Kernel mass is proportional to the time the object spends at a pixel, so
//! after ordering the support pixels along the path, cumulative mass gives
//! each pixel an exposure time `t`. Each model class is then a weighted
//! linear least-squares problem in the basis `1, s, s^2, u` with
//! `s = min(2t, 1)` and `u = max(2t - 1, 0)`.
//!
//! Fits run in coordinates relative to the first support pixel in row-major
//! order, which makes them exactly equivariant to integer shifts of `H`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::imgcore::BlurKernel;
use crate::trajectory::{Curve, CurveClass};

/// Default support threshold, relative to the median nonzero kernel value.
pub const DEFAULT_MIN_MASS: f64 = 0.05;
/// Score penalty per coefficient pair beyond `(c0, c1)`, in pixels.
pub const PAIR_PENALTY: f64 = 0.15;
/// Weighted RMS spread below which the support counts as a single point.
pub const DEGENERATE_SPREAD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub curve: Curve,
    /// Weighted RMS distance between support pixels and the fitted curve.
    pub residual: f64,
    /// `None` for the static fallback.
    pub class: Option<CurveClass>,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    p: Vec2,
    w: f64,
}

/// Fits a curve to a blur kernel. Pixels above `min_mass` times the median
/// nonzero value form the support.
pub fn fit_curve(h: &BlurKernel, min_mass: f64) -> Result<FitResult> {
    if !(min_mass >= 0.0) {
        return Err(Error::InvalidArgument(format!("min mass must be >= 0, got {min_mass}")));
    }
    let plane = h.plane();
    let mut nonzero: Vec<f64> = plane.data().iter().copied().filter(|v| *v > 0.0).collect();
    nonzero.sort_by(|a, b| a.partial_cmp(b).expect("kernel values are finite"));
    let median = nonzero[nonzero.len() / 2];
    let cut = min_mass * median;
    let w = plane.width();
    let mut pixels: Vec<(usize, usize, f64)> = plane
        .data()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > cut)
        .map(|(i, v)| (i / w, i % w, *v))
        .collect();
    if pixels.is_empty() {
        // Every value is at the median cut; keep the whole support.
        pixels = plane
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| (i / w, i % w, *v))
            .collect();
    }
    let (oy, ox) = (pixels[0].0, pixels[0].1);
    let origin = Vec2::new(ox as f64, oy as f64);
    let samples: Vec<Sample> = pixels
        .iter()
        .map(|(y, x, v)| Sample {
            p: Vec2::new(*x as f64 - ox as f64, *y as f64 - oy as f64),
            w: *v,
        })
        .collect();

    let total: f64 = samples.iter().map(|s| s.w).sum();
    let centroid = samples.iter().fold(Vec2::ZERO, |a, s| a + s.p * s.w) * (1.0 / total);
    let spread = (samples.iter().map(|s| s.w * s.p.dist(centroid).powi(2)).sum::<f64>() / total).sqrt();
    if spread <= DEGENERATE_SPREAD {
        return Ok(FitResult {
            curve: Curve::stationary(centroid + origin),
            residual: spread,
            class: None,
        });
    }
    if samples.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "kernel support has {} pixels, need at least 3",
            samples.len()
        )));
    }
    let order = order_along_path(&samples);
    let ordered: Vec<Sample> = order.iter().map(|i| samples[*i]).collect();
    let best = fit_ordered(&ordered, true)?;
    Ok(FitResult {
        curve: best.curve.translated(origin).normalized(),
        ..best
    })
}

/// Fits a curve to a polyline, timed by arc length (no rest phase).
pub fn fit_polyline(points: &[Vec2]) -> Result<FitResult> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("polyline has no points".into()));
    }
    let origin = points[0];
    let mut resampled = vec![Vec2::ZERO];
    let mut carry = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0] - origin, w[1] - origin);
        let len = a.dist(b);
        let mut d = 1.0 - carry;
        while d <= len {
            resampled.push(a + (b - a) * (d / len));
            d += 1.0;
        }
        carry = len - (d - 1.0);
    }
    let last = *points.last().expect("nonempty") - origin;
    if resampled.last().expect("nonempty").dist(last) > 1e-9 {
        resampled.push(last);
    }
    let samples: Vec<Sample> = resampled.iter().map(|p| Sample { p: *p, w: 1.0 }).collect();
    if samples.len() < 3 {
        let mid = samples.iter().fold(Vec2::ZERO, |a, s| a + s.p) * (1.0 / samples.len() as f64);
        return Ok(FitResult {
            curve: Curve::stationary(mid + origin),
            residual: 0.0,
            class: None,
        });
    }
    let best = fit_ordered(&samples, false)?;
    Ok(FitResult {
        curve: best.curve.translated(origin).normalized(),
        ..best
    })
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Geodesic distances over the 8-neighbour pixel graph.
fn geodesic(samples: &[Sample], adj: &[Vec<(usize, f64)>], start: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; samples.len()];
    dist[start] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(0.0, start));
    while let Some(HeapItem(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        for &(j, len) in &adj[i] {
            let nd = d + len;
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(HeapItem(nd, j));
            }
        }
    }
    dist
}

/// Orders pixels from one end of the path to the other: geodesic double
/// sweep when the support is connected, principal axis otherwise.
fn order_along_path(samples: &[Sample]) -> Vec<usize> {
    let n = samples.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = samples[i].p.dist(samples[j].p);
            if d < 1.5 {
                adj[i].push((j, d));
                adj[j].push((i, d));
            }
        }
    }
    let d0 = geodesic(samples, &adj, 0);
    let mut idx: Vec<usize> = (0..n).collect();
    let key: Vec<f64> = if d0.iter().all(|d| d.is_finite()) {
        let far = (0..n).fold(0, |b, i| if d0[i] > d0[b] { i } else { b });
        geodesic(samples, &adj, far)
    } else {
        principal_projection(samples)
    };
    idx.sort_by(|a, b| key[*a].total_cmp(&key[*b]).then(a.cmp(b)));
    idx
}

fn principal_projection(samples: &[Sample]) -> Vec<f64> {
    let total: f64 = samples.iter().map(|s| s.w).sum();
    let c = samples.iter().fold(Vec2::ZERO, |a, s| a + s.p * s.w) * (1.0 / total);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for s in samples {
        let d = s.p - c;
        sxx += s.w * d.x * d.x;
        sxy += s.w * d.x * d.y;
        syy += s.w * d.y * d.y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let axis = Vec2::new(theta.cos(), theta.sin());
    samples.iter().map(|s| (s.p - c).dot(axis)).collect()
}

/// Exposure times from cumulative weight (midpoint rule) over `[lo, hi]`.
fn times_by_mass(samples: &[Sample], lo: f64, hi: f64) -> Vec<f64> {
    let total: f64 = samples.iter().map(|s| s.w).sum();
    let mut acc = 0.0;
    samples
        .iter()
        .map(|s| {
            let t = (acc + 0.5 * s.w) / total;
            acc += s.w;
            lo + (hi - lo) * t
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Basis {
    Line,
    Parabola,
    Piecewise,
}

impl Basis {
    fn len(self) -> usize {
        match self {
            Basis::Line => 2,
            _ => 3,
        }
    }

    fn eval(self, t: f64) -> [f64; 3] {
        let s = (2.0 * t).min(1.0);
        let u = (2.0 * t - 1.0).max(0.0);
        match self {
            Basis::Line => [1.0, s, 0.0],
            Basis::Parabola => [1.0, s, s * s],
            Basis::Piecewise => [1.0, s, u],
        }
    }

    fn curve(self, cx: [f64; 3], cy: [f64; 3]) -> Curve {
        let v = |k: usize| Vec2::new(cx[k], cy[k]);
        match self {
            Basis::Line => Curve::new(v(0), v(1), Vec2::ZERO, Vec2::ZERO),
            Basis::Parabola => Curve::new(v(0), v(1), v(2), Vec2::ZERO),
            Basis::Piecewise => Curve::new(v(0), v(1), Vec2::ZERO, v(2)),
        }
    }

    fn class(self) -> CurveClass {
        match self {
            Basis::Line => CurveClass::Line,
            Basis::Parabola => CurveClass::Parabola,
            Basis::Piecewise => CurveClass::Piecewise,
        }
    }
}

/// Solves the `k x k` symmetric system by Gaussian elimination with partial
/// pivoting; `None` if singular.
fn solve_small(mut a: [[f64; 3]; 3], mut b: [[f64; 2]; 3], k: usize) -> Option<[[f64; 2]; 3]> {
    for col in 0..k {
        let piv = (col..k).max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..k {
            if row != col {
                let f = a[row][col] / a[col][col];
                for c in col..k {
                    a[row][c] -= f * a[col][c];
                }
                for c in 0..2 {
                    b[row][c] -= f * b[col][c];
                }
            }
        }
    }
    let mut x = [[0.0; 2]; 3];
    for row in 0..k {
        for c in 0..2 {
            x[row][c] = b[row][c] / a[row][row];
        }
    }
    Some(x)
}

/// Weighted least-squares fit; returns the curve and its weighted RMS residual.
fn wls(samples: &[Sample], times: &[f64], basis: Basis) -> Option<(Curve, f64)> {
    let k = basis.len();
    let mut a = [[0.0; 3]; 3];
    let mut b = [[0.0; 2]; 3];
    for (s, t) in samples.iter().zip(times) {
        let phi = basis.eval(*t);
        for i in 0..k {
            for j in 0..k {
                a[i][j] += s.w * phi[i] * phi[j];
            }
            b[i][0] += s.w * phi[i] * s.p.x;
            b[i][1] += s.w * phi[i] * s.p.y;
        }
    }
    let x = solve_small(a, b, k)?;
    let curve = basis.curve([x[0][0], x[1][0], x[2][0]], [x[0][1], x[1][1], x[2][1]]);
    let total: f64 = samples.iter().map(|s| s.w).sum();
    let se: f64 = samples
        .iter()
        .zip(times)
        .map(|(s, t)| s.w * s.p.dist(curve.at(*t)).powi(2))
        .sum();
    Some((curve, (se / total).sqrt()))
}

/// Best piecewise fit over breakpoints between the 20% and 80% order
/// statistics. Kernel pixels are timed by cumulative weight within each
/// piece; polyline samples (`inclusive`) are evenly spaced in time with the
/// breakpoint sample at exactly `t = 0.5`. Among equally good breakpoints
/// the one closest to the middle wins.
fn fit_piecewise(samples: &[Sample], inclusive: bool) -> Option<(Curve, f64)> {
    let n = samples.len();
    let lo = ((n as f64 * 0.2).floor() as usize).max(1);
    let hi = ((n as f64 * 0.8).ceil() as usize).min(n - 2).max(lo);
    let step = ((hi - lo) / 100).max(1);
    let mut best: Option<(Curve, f64, usize)> = None;
    let mut k = lo;
    while k <= hi {
        let times: Vec<f64> = if inclusive {
            (0..n)
                .map(|i| {
                    if i < k {
                        0.5 * i as f64 / k as f64
                    } else {
                        0.5 + 0.5 * (i - k) as f64 / (n - 1 - k) as f64
                    }
                })
                .collect()
        } else {
            let mut t = times_by_mass(&samples[..k], 0.0, 0.5);
            t.extend(times_by_mass(&samples[k..], 0.5, 1.0));
            t
        };
        if let Some((c, r)) = wls(samples, &times, Basis::Piecewise) {
            let better = match best {
                None => true,
                Some((_, br, bk)) => {
                    r < br - 1e-9 || (r <= br + 1e-9 && k.abs_diff(n / 2) < bk.abs_diff(n / 2))
                }
            };
            if better {
                best = Some((c, r, k));
            }
        }
        k += step;
    }
    best.map(|(c, r, _)| (c, r))
}

fn fit_ordered(samples: &[Sample], allow_rest: bool) -> Result<FitResult> {
    let mut candidates: Vec<(Basis, Curve, f64)> = Vec::new();
    let reversed: Vec<Sample> = samples.iter().rev().copied().collect();
    for seq in [samples, &reversed[..]] {
        if allow_rest {
            let times = times_by_mass(seq, 0.0, 1.0);
            for basis in [Basis::Line, Basis::Parabola] {
                if let Some((c, r)) = wls(seq, &times, basis) {
                    candidates.push((basis, c, r));
                }
            }
        }
        if let Some((c, r)) = fit_piecewise(seq, !allow_rest) {
            candidates.push((Basis::Piecewise, c, r));
        }
    }
    let score = |b: Basis, r: f64| r + PAIR_PENALTY * (b.len() - 2) as f64;
    candidates
        .into_iter()
        .min_by(|a, b| score(a.0, a.2).total_cmp(&score(b.0, b.2)))
        .map(|(basis, curve, residual)| FitResult {
            curve,
            residual,
            class: Some(basis.class()),
        })
        .ok_or_else(|| Error::InvalidArgument("kernel support is collinear in time; no fit".into()))
}
