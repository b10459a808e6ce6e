//! Euclidean projections onto the solver's convex constraint sets.

use crate::error::Result;
use crate::imgcore::{BlurKernel, Plane};

/// Projects one pixel `(f, m)` onto `{0 <= f_c <= m <= 1 for all c}`.
///
/// For a fixed `m'` the best `f'` is `clamp(f, 0, m')`, which leaves a convex
/// piecewise-quadratic problem in `m'` alone; its minimizer is
/// `(m + sum of the active f_c) / (1 + #active)` for the active set of
/// channels above `m'`, found by scanning the channels in descending order.
pub fn project_ordered_box_in_place(f: &mut [f64], m: &mut f64) {
    // Channels are few (3); a small insertion sort keeps this allocation-free.
    let mut sorted = [0.0f64; 8];
    let k = f.len();
    assert!(k <= sorted.len(), "at most 8 appearance channels");
    for (i, v) in f.iter().enumerate() {
        let v = v.max(0.0);
        let mut j = i;
        while j > 0 && sorted[j - 1] < v {
            sorted[j] = sorted[j - 1];
            j -= 1;
        }
        sorted[j] = v;
    }
    let mut sum = *m;
    let mut mp = *m;
    for j in 0..=k {
        mp = sum / (1 + j) as f64;
        if j == k || mp >= sorted[j] {
            break;
        }
        sum += sorted[j];
    }
    let mp = mp.clamp(0.0, 1.0);
    for v in f.iter_mut() {
        *v = v.clamp(0.0, mp);
    }
    *m = mp;
}

/// Allocating wrapper around [`project_ordered_box_in_place`].
pub fn project_ordered_box(f: &[f64], m: f64) -> (Vec<f64>, f64) {
    let mut f = f.to_vec();
    let mut m = m;
    project_ordered_box_in_place(&mut f, &mut m);
    (f, m)
}

/// Euclidean projection onto the probability simplex `{h >= 0, sum h = 1}`
/// by sorting.
pub fn project_simplex_vec(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    // Remove rounding drift so the mass is one to machine precision.
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        out.iter_mut().for_each(|x| *x /= s);
    }
    out
}

/// Projects a plane onto the set of blur kernels.
pub fn project_simplex(h: &Plane) -> Result<BlurKernel> {
    let data = project_simplex_vec(h.data());
    BlurKernel::new(Plane::new(h.height(), h.width(), data)?)
}
