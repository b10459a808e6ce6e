use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned 2-D FFT over a fixed `height x width` grid (row-major buffers).
#[derive(Clone)]
pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    /// Transposed copy, so column transforms run over contiguous rows.
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(width);
        let row_inv = planner.plan_fft_inverse(width);
        let col_fwd = planner.plan_fft_forward(height);
        let col_inv = planner.plan_fft_inverse(height);
        let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2 {
            height,
            width,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            transposed: vec![Complex64::default(); height * width],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    fn run(&mut self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.len());
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let (h, w) = (self.height, self.width);
        row.process_with_scratch(buf, &mut self.scratch);
        for y in 0..h {
            for x in 0..w {
                self.transposed[x * h + y] = buf[y * w + x];
            }
        }
        col.process_with_scratch(&mut self.transposed, &mut self.scratch);
        for x in 0..w {
            for y in 0..h {
                buf[y * w + x] = self.transposed[x * h + y];
            }
        }
    }

    pub fn forward(&mut self, buf: &mut [Complex64]) {
        self.run(buf, false);
    }

    /// Normalized inverse transform.
    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        self.run(buf, true);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }

    pub fn forward_real(&mut self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&mut self, buf: &mut [Complex64], out: &mut [f64]) {
        self.inverse(buf);
        for (o, v) in out.iter_mut().zip(buf.iter()) {
            *o = v.re;
        }
    }
}

/// Smallest `n' >= n` whose prime factors are all 2, 3 or 5.
pub(crate) fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}
