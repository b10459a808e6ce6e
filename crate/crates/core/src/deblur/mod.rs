//! Joint recovery of the sharp appearance `F`, mask `M` and blur kernel `H`
//! from a matting pair `(H*F, H*M)` by minimizing
//!
//! ```text
//! 1/2 (|H*F - Hf|^2 + |H*M - Hm|^2) + alpha_F |grad F|_1 + alpha_M |grad M|_1
//! ```
//!
//! subject to `0 <= F <= M <= 1`, `H >= 0`, `sum H = 1`.
//!
//! The solver alternates an ADMM pass over `(F, M)` (quadratic step in the
//! Fourier domain, soft-thresholding of the gradient splits, projection onto
//! the ordered box) with an ADMM pass over `H` (quadratic step, projection
//! onto the simplex restricted to a neighbourhood of the initial support).
//!
//! All work happens on a window around the kernel support, padded by half a
//! patch so that circular convolution there equals linear convolution.
//! `F` and `M` are stored wrapped, patch center at index 0.

mod fft;
pub mod projection;

use std::fmt;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{
    convolve_plane, dilate_disc, BinaryMask, BlurKernel, Boundary, Plane, PixelDomain, RasterImage,
};
use fft::{smooth_size, Fft2};
pub use projection::{project_ordered_box, project_ordered_box_in_place, project_simplex, project_simplex_vec};

const CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeblurConfig {
    pub alpha_f: f64,
    pub alpha_m: f64,
    /// Outer iteration cap.
    pub iterations: usize,
    pub rho: f64,
    /// Relative objective change below which the solver stops.
    pub tolerance: f64,
    pub optimize_h: bool,
    /// Side of the square `F`/`M` patch; 0 infers it from the mass of `Hm`.
    pub patch_size: usize,
    /// ADMM passes over `(F, M)` per outer iteration.
    pub fm_inner: usize,
    /// ADMM passes over `H` per outer iteration.
    pub h_inner: usize,
    /// `H` may only move within this distance of the initial support.
    pub h_support_radius: f64,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        DeblurConfig {
            alpha_f: 0.001,
            alpha_m: 0.05,
            iterations: 50,
            rho: 1.0,
            tolerance: 1e-4,
            optimize_h: true,
            patch_size: 0,
            fm_inner: 5,
            h_inner: 50,
            h_support_radius: 2.0,
        }
    }
}

impl DeblurConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.alpha_f >= 0.0 && self.alpha_f.is_finite()) || !(self.alpha_m >= 0.0 && self.alpha_m.is_finite()) {
            return bad("alphas must be finite and >= 0");
        }
        if self.iterations == 0 || self.fm_inner == 0 || self.h_inner == 0 {
            return bad("iteration counts must be >= 1");
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and > 0");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be >= 0");
        }
        if !(self.h_support_radius >= 0.0) {
            return bad("support radius must be >= 0");
        }
        Ok(())
    }
}

/// Side of a patch holding a disc whose area matches the mask mass, plus a
/// 2 px margin.
pub fn infer_patch_size(hm: &RasterImage) -> usize {
    let r = (hm.sum() / std::f64::consts::PI).sqrt();
    2 * (r.ceil() as usize + 2) + 1
}

/// Largest violation of `F >= 0`, `F <= M`, `M <= 1`, `H >= 0`, `sum H = 1`.
pub fn constraint_violation(f: &RasterImage, m: &RasterImage, h: &Plane) -> f64 {
    let c = f.channels();
    let mut v: f64 = 0.0;
    for (i, mv) in m.data().iter().enumerate() {
        v = v.max(mv - 1.0).max(-mv);
        for ch in 0..c {
            let fv = f.data()[i * c + ch];
            v = v.max(-fv).max(fv - mv);
        }
    }
    for hv in h.data() {
        v = v.max(-hv);
    }
    v.max((h.sum() - 1.0).abs())
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub f: RasterImage,
    pub m: RasterImage,
    pub h: BlurKernel,
    /// Objective at the initial point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub constraint_violation: f64,
    pub iterations: usize,
    /// Whether the tolerance test stopped the run before the cap.
    pub converged: bool,
    pub state: SolverState,
}

/// Opaque solver variables (including ADMM duals) for resuming a run.
#[derive(Clone)]
pub struct SolverState {
    inner: Box<Solver>,
}

impl fmt::Debug for SolverState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SolverState({}x{} window)", self.inner.wh, self.inner.ww)
    }
}

fn tv_aniso(p: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = p[y * w + x];
            if x + 1 < w {
                s += (p[y * w + x + 1] - v).abs();
            }
            if y + 1 < h {
                s += (p[(y + 1) * w + x] - v).abs();
            }
        }
    }
    s
}

fn check_inputs(hf: &RasterImage, hm: &RasterImage, domain: PixelDomain) -> Result<()> {
    if hm.channels() != 1 {
        return Err(Error::DimensionMismatch("Hm must have 1 channel".into()));
    }
    if hf.channels() != 3 {
        return Err(Error::DimensionMismatch("Hf must have 3 channels".into()));
    }
    if hf.domain() != domain || hm.domain() != domain {
        return Err(Error::DimensionMismatch(format!(
            "kernel {}x{} vs matting pair {}x{} / {}x{}",
            domain.height,
            domain.width,
            hf.height(),
            hf.width(),
            hm.height(),
            hm.width()
        )));
    }
    Ok(())
}

/// The energy above, evaluated by direct zero-padded convolution.
pub fn objective(
    f: &RasterImage,
    m: &RasterImage,
    h: &BlurKernel,
    hf: &RasterImage,
    hm: &RasterImage,
    cfg: &DeblurConfig,
) -> Result<f64> {
    let d = h.domain();
    check_inputs(hf, hm, d)?;
    if m.channels() != 1 || f.channels() != 3 || f.height() != m.height() || f.width() != m.width() {
        return Err(Error::DimensionMismatch("F must be SxSx3 and M SxSx1".into()));
    }
    let (s_h, s_w) = (m.height(), m.width());
    let mut data = 0.0;
    let mut tv = 0.0;
    let targets = hf.planes().into_iter().chain(std::iter::once(hm.channel(0)));
    let patches = f.planes().into_iter().chain(std::iter::once(m.channel(0)));
    for (c, (target, patch)) in targets.zip(patches).enumerate() {
        let blurred = convolve_plane(h.plane().data(), d.height, d.width, patch.data(), s_h, s_w, Boundary::ZeroPad);
        data += blurred.iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let alpha = if c < 3 { cfg.alpha_f } else { cfg.alpha_m };
        tv += alpha * tv_aniso(patch.data(), s_h, s_w);
    }
    Ok(0.5 * data + tv)
}

/// Minimizes the energy starting from `F = M = 0` and `H = h_init`.
pub fn solve(hf: &RasterImage, hm: &RasterImage, h_init: &BlurKernel, cfg: &DeblurConfig) -> Result<SolveReport> {
    cfg.validate()?;
    check_inputs(hf, hm, h_init.domain())?;
    let s = if cfg.patch_size == 0 { infer_patch_size(hm) } else { cfg.patch_size };
    let mut solver = Solver::new(hf, hm, h_init, s, cfg)?;
    solver.run(cfg.iterations)
}

/// Continues a previous run for `extra` more outer iterations, keeping its
/// iterates and dual variables.
pub fn solve_continue(prev: &SolveReport, extra: usize) -> Result<SolveReport> {
    let mut solver = prev.state.inner.as_ref().clone();
    solver.run(extra)
}

fn soft(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

#[derive(Clone)]
struct Solver {
    cfg: DeblurConfig,
    fft: Fft2,
    wh: usize,
    ww: usize,
    oy: isize,
    ox: isize,
    frame: PixelDomain,
    s: usize,
    y: Vec<Vec<f64>>,
    y_hat: Vec<Vec<Complex64>>,
    in_frame: Vec<bool>,
    /// Data term of frame pixels outside the window, where `H*F = 0`.
    const_out: f64,
    patch_idx: Vec<usize>,
    in_patch: Vec<bool>,
    /// Forward differences that the energy penalizes (inside the patch).
    tv_x: Vec<bool>,
    tv_y: Vec<bool>,
    allowed: Vec<usize>,
    lap: Vec<f64>,
    h: Vec<f64>,
    h_hat: Vec<Complex64>,
    hty: Vec<Vec<Complex64>>,
    x: Vec<Vec<f64>>,
    zx: Vec<Vec<f64>>,
    zy: Vec<Vec<f64>>,
    ux: Vec<Vec<f64>>,
    uy: Vec<Vec<f64>>,
    zb: Vec<Vec<f64>>,
    ub: Vec<Vec<f64>>,
    trace: Vec<f64>,
}

impl Solver {
    fn new(hf: &RasterImage, hm: &RasterImage, h_init: &BlurKernel, s: usize, cfg: &DeblurConfig) -> Result<Self> {
        let frame = h_init.domain();
        let support = h_init.plane().threshold(0.0);
        let allowed_mask = if cfg.optimize_h {
            dilate_disc(&support, cfg.h_support_radius)
        } else {
            support
        };
        let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
        for (x, y) in allowed_mask.pixels() {
            y0 = y0.min(y);
            x0 = x0.min(x);
            y1 = y1.max(y);
            x1 = x1.max(x);
        }
        let a = s / 2;
        let wh = smooth_size(y1 - y0 + 1 + 2 * a);
        let ww = smooth_size(x1 - x0 + 1 + 2 * a);
        let (oy, ox) = (y0 as isize - a as isize, x0 as isize - a as isize);
        let n = wh * ww;
        let mut fft = Fft2::new(wh, ww);

        let to_frame = |wy: usize, wx: usize| -> Option<(usize, usize)> {
            let (fy, fx) = (wy as isize + oy, wx as isize + ox);
            (fy >= 0 && fx >= 0 && (fy as usize) < frame.height && (fx as usize) < frame.width)
                .then_some((fy as usize, fx as usize))
        };
        let targets: Vec<Plane> = hf.planes().into_iter().chain(std::iter::once(hm.channel(0))).collect();
        let mut y = vec![vec![0.0; n]; CHANNELS];
        let mut in_frame = vec![false; n];
        let mut window_sq = 0.0;
        let mut h = vec![0.0; n];
        for wy in 0..wh {
            for wx in 0..ww {
                if let Some((fy, fx)) = to_frame(wy, wx) {
                    let i = wy * ww + wx;
                    in_frame[i] = true;
                    for (c, t) in targets.iter().enumerate() {
                        let v = t.get(fy, fx);
                        y[c][i] = v;
                        window_sq += v * v;
                    }
                    h[i] = h_init.plane().get(fy, fx);
                }
            }
        }
        let total_sq: f64 = targets.iter().flat_map(|t| t.data()).map(|v| v * v).sum();
        let const_out = 0.5 * (total_sq - window_sq).max(0.0);
        let allowed: Vec<usize> = allowed_mask
            .pixels()
            .map(|(x, yy)| ((yy as isize - oy) as usize) * ww + (x as isize - ox) as usize)
            .collect();

        let wrap = |d: isize, len: usize| d.rem_euclid(len as isize) as usize;
        let mut patch_idx = Vec::with_capacity(s * s);
        let mut in_patch = vec![false; n];
        for py in 0..s {
            for px in 0..s {
                let i = wrap(py as isize - a as isize, wh) * ww + wrap(px as isize - a as isize, ww);
                patch_idx.push(i);
                in_patch[i] = true;
            }
        }
        let mut tv_x = vec![false; n];
        let mut tv_y = vec![false; n];
        for py in 0..s {
            for px in 0..s {
                let i = patch_idx[py * s + px];
                tv_x[i] = px + 1 < s;
                tv_y[i] = py + 1 < s;
            }
        }
        let lap: Vec<f64> = (0..n)
            .map(|i| {
                let (ky, kx) = (i / ww, i % ww);
                let cy = (2.0 * std::f64::consts::PI * ky as f64 / wh as f64).cos();
                let cx = (2.0 * std::f64::consts::PI * kx as f64 / ww as f64).cos();
                4.0 - 2.0 * cx - 2.0 * cy
            })
            .collect();
        let y_hat: Vec<Vec<Complex64>> = y.iter().map(|c| fft.forward_real(c)).collect();
        let zeros = vec![vec![0.0; n]; CHANNELS];
        let mut solver = Solver {
            cfg: cfg.clone(),
            fft,
            wh,
            ww,
            oy,
            ox,
            frame,
            s,
            y,
            y_hat,
            in_frame,
            const_out,
            patch_idx,
            in_patch,
            tv_x,
            tv_y,
            allowed,
            lap,
            h,
            h_hat: Vec::new(),
            hty: Vec::new(),
            x: zeros.clone(),
            zx: zeros.clone(),
            zy: zeros.clone(),
            ux: zeros.clone(),
            uy: zeros.clone(),
            zb: zeros.clone(),
            ub: zeros,
            trace: Vec::new(),
        };
        solver.refresh_kernel();
        let j0 = solver.objective();
        if !j0.is_finite() {
            return Err(Error::NonFinite { iteration: 0 });
        }
        solver.trace.push(j0);
        Ok(solver)
    }

    fn alpha(&self, c: usize) -> f64 {
        if c < 3 {
            self.cfg.alpha_f
        } else {
            self.cfg.alpha_m
        }
    }

    fn refresh_kernel(&mut self) {
        self.h_hat = self.fft.forward_real(&self.h);
        self.hty = self
            .y_hat
            .iter()
            .map(|yh| yh.iter().zip(&self.h_hat).map(|(y, h)| h.conj() * y).collect())
            .collect();
    }

    fn dx(&self, u: &[f64], out: &mut [f64]) {
        let (h, w) = (self.wh, self.ww);
        for yy in 0..h {
            let r = yy * w;
            for x in 0..w {
                out[r + x] = u[r + (x + 1) % w] - u[r + x];
            }
        }
    }

    fn dy(&self, u: &[f64], out: &mut [f64]) {
        let (h, w) = (self.wh, self.ww);
        for yy in 0..h {
            let r1 = ((yy + 1) % h) * w;
            for x in 0..w {
                out[yy * w + x] = u[r1 + x] - u[yy * w + x];
            }
        }
    }

    /// One ADMM pass over `(F, M)`.
    fn fm_step(&mut self) {
        let n = self.wh * self.ww;
        let (w, h) = (self.ww, self.wh);
        let rho = self.cfg.rho;
        let mut rhs = vec![0.0; n];
        let mut buf = vec![Complex64::default(); n];
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        for c in 0..CHANNELS {
            let alpha = self.alpha(c);
            let tv = alpha > 0.0;
            for i in 0..n {
                rhs[i] = rho * (self.zb[c][i] - self.ub[c][i]);
            }
            if tv {
                // Adjoints of the circular forward differences.
                for yy in 0..h {
                    let rp = ((yy + h - 1) % h) * w;
                    for x in 0..w {
                        let i = yy * w + x;
                        let il = yy * w + (x + w - 1) % w;
                        let iu = rp + x;
                        let vx = |j: usize| self.zx[c][j] - self.ux[c][j];
                        let vy = |j: usize| self.zy[c][j] - self.uy[c][j];
                        rhs[i] += rho * (vx(il) - vx(i) + vy(iu) - vy(i));
                    }
                }
            }
            for (b, r) in buf.iter_mut().zip(&rhs) {
                *b = Complex64::new(*r, 0.0);
            }
            self.fft.forward(&mut buf);
            for i in 0..n {
                let den = self.h_hat[i].norm_sqr() + rho + if tv { rho * self.lap[i] } else { 0.0 };
                buf[i] = (self.hty[c][i] + buf[i]) / den;
            }
            let mut xc = std::mem::take(&mut self.x[c]);
            self.fft.inverse_real(&mut buf, &mut xc);
            if tv {
                self.dx(&xc, &mut gx);
                self.dy(&xc, &mut gy);
                let k = alpha / rho;
                // Unpenalized differences have the identity as their prox.
                for i in 0..n {
                    let z = soft(gx[i] + self.ux[c][i], if self.tv_x[i] { k } else { 0.0 });
                    self.ux[c][i] += gx[i] - z;
                    self.zx[c][i] = z;
                    let z = soft(gy[i] + self.uy[c][i], if self.tv_y[i] { k } else { 0.0 });
                    self.uy[c][i] += gy[i] - z;
                    self.zy[c][i] = z;
                }
            }
            self.x[c] = xc;
        }
        let mut fv = [0.0; 3];
        for i in 0..n {
            if self.in_patch[i] {
                for (c, v) in fv.iter_mut().enumerate() {
                    *v = self.x[c][i] + self.ub[c][i];
                }
                let mut mv = self.x[3][i] + self.ub[3][i];
                project_ordered_box_in_place(&mut fv, &mut mv);
                for (c, v) in fv.iter().enumerate() {
                    self.zb[c][i] = *v;
                }
                self.zb[3][i] = mv;
            } else {
                for c in 0..CHANNELS {
                    self.zb[c][i] = 0.0;
                }
            }
            for c in 0..CHANNELS {
                self.ub[c][i] += self.x[c][i] - self.zb[c][i];
            }
        }
    }

    /// ADMM over `H` with `(F, M)` fixed at the feasible iterate.
    fn h_step(&mut self) {
        let n = self.wh * self.ww;
        let energy: f64 = self.zb.iter().flatten().map(|v| v * v).sum();
        if energy <= 0.0 {
            return;
        }
        // Mean diagonal of the normal operator, so the penalty scales with F.
        let rho_h = self.cfg.rho * energy;
        let f_hat: Vec<Vec<Complex64>> = self.zb.clone().iter().map(|c| self.fft.forward_real(c)).collect();
        let mut num0 = vec![Complex64::default(); n];
        let mut den = vec![rho_h; n];
        for c in 0..CHANNELS {
            for i in 0..n {
                num0[i] += f_hat[c][i].conj() * self.y_hat[c][i];
                den[i] += f_hat[c][i].norm_sqr();
            }
        }
        let mut g = self.h.clone();
        let mut wdual = vec![0.0; n];
        let mut hx = vec![0.0; n];
        let mut buf = vec![Complex64::default(); n];
        let mut v = vec![0.0; self.allowed.len()];
        for _ in 0..self.cfg.h_inner {
            for i in 0..n {
                buf[i] = Complex64::new(rho_h * (g[i] - wdual[i]), 0.0);
            }
            self.fft.forward(&mut buf);
            for i in 0..n {
                buf[i] = (num0[i] + buf[i]) / den[i];
            }
            self.fft.inverse_real(&mut buf, &mut hx);
            for (k, &i) in self.allowed.iter().enumerate() {
                v[k] = hx[i] + wdual[i];
            }
            let p = project_simplex_vec(&v);
            g.iter_mut().for_each(|x| *x = 0.0);
            for (k, &i) in self.allowed.iter().enumerate() {
                g[i] = p[k];
            }
            for i in 0..n {
                wdual[i] += hx[i] - g[i];
            }
        }
        self.h = g;
        self.refresh_kernel();
    }

    /// Energy of the feasible iterate `(zb, h)`.
    fn objective(&mut self) -> f64 {
        let n = self.wh * self.ww;
        let mut data = 0.0;
        let mut conv = vec![0.0; n];
        for c in 0..CHANNELS {
            let mut fh = self.fft.forward_real(&self.zb[c]);
            for (a, b) in fh.iter_mut().zip(&self.h_hat) {
                *a *= b;
            }
            self.fft.inverse_real(&mut fh, &mut conv);
            for i in 0..n {
                if self.in_frame[i] {
                    data += (conv[i] - self.y[c][i]).powi(2);
                }
            }
        }
        let mut tv = 0.0;
        for c in 0..CHANNELS {
            let patch: Vec<f64> = self.patch_idx.iter().map(|&i| self.zb[c][i]).collect();
            tv += self.alpha(c) * tv_aniso(&patch, self.s, self.s);
        }
        0.5 * data + self.const_out + tv
    }

    fn run(&mut self, iterations: usize) -> Result<SolveReport> {
        let mut converged = false;
        let mut done = 0;
        for _ in 0..iterations {
            for _ in 0..self.cfg.fm_inner {
                self.fm_step();
            }
            if self.cfg.optimize_h {
                self.h_step();
            }
            done += 1;
            let j = self.objective();
            if !j.is_finite() {
                return Err(Error::NonFinite { iteration: self.trace.len() });
            }
            let prev = *self.trace.last().expect("trace holds the initial value");
            self.trace.push(j);
            if (prev - j).abs() <= self.cfg.tolerance * prev.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        self.report(done, converged)
    }

    fn report(&self, iterations: usize, converged: bool) -> Result<SolveReport> {
        let s = self.s;
        let mut f = vec![0.0; s * s * 3];
        let mut m = vec![0.0; s * s];
        for (p, &i) in self.patch_idx.iter().enumerate() {
            for c in 0..3 {
                f[p * 3 + c] = self.zb[c][i];
            }
            m[p] = self.zb[3][i];
        }
        let f = RasterImage::new(s, s, 3, f)?;
        let m = RasterImage::new(s, s, 1, m)?;
        let mut hp = Plane::zeros(self.frame.height, self.frame.width);
        for &i in &self.allowed {
            let (wy, wx) = (i / self.ww, i % self.ww);
            hp.set((wy as isize + self.oy) as usize, (wx as isize + self.ox) as usize, self.h[i]);
        }
        let violation = constraint_violation(&f, &m, &hp);
        let h = BlurKernel::new(hp)?;
        let start = self.trace.len() - iterations - 1;
        Ok(SolveReport {
            f,
            m,
            h,
            objective_trace: self.trace[start..].to_vec(),
            constraint_violation: violation,
            iterations,
            converged,
            state: SolverState { inner: Box::new(self.clone()) },
        })
    }
}

/// Peak signal-to-noise ratio (peak 1) of `est` against `truth` over the
/// pixels where `region` holds, averaging over all channels.
pub fn psnr_masked(est: &RasterImage, truth: &RasterImage, region: &BinaryMask) -> Result<f64> {
    if !est.same_shape(truth) || region.domain() != truth.domain() {
        return Err(Error::DimensionMismatch("PSNR inputs differ in shape".into()));
    }
    let c = truth.channels();
    let mut se = 0.0;
    let mut count = 0usize;
    for (x, y) in region.pixels() {
        for ch in 0..c {
            se += (est.get(y, x, ch) - truth.get(y, x, ch)).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty PSNR region".into()));
    }
    let mse = se / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[cfg(test)]
mod tests;
