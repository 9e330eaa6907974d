//! Square 2-D FFTs on row-major `n×n` grids (index `iy·n + ix`).

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(data.len(), n * n);
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for ix in 0..n {
            for iy in 0..n {
                col[iy] = data[iy * n + ix];
            }
            plan.process_with_scratch(&mut col, &mut scratch);
            for iy in 0..n {
                data[iy * n + ix] = col[iy];
            }
        }
    }

    /// `F[k] = Σ_j x_j e^{−2πi k·j/n}` (unnormalized).
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(&self.fwd, data);
    }

    /// `x_j = Σ_k F[k] e^{+2πi k·j/n}` (unnormalized).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(&self.inv, data);
    }

    /// Bin of integer frequency `k` (aliased modulo `n`).
    pub fn bin(&self, kx: i32, ky: i32) -> usize {
        let n = self.n as i32;
        (ky.rem_euclid(n) * n + kx.rem_euclid(n)) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_single_mode() {
        let n = 16;
        let f = Fft2::new(n);
        let mut d = vec![Complex64::new(0.0, 0.0); n * n];
        d[f.bin(2, -3)] = Complex64::new(1.0, 0.0);
        f.inverse(&mut d);
        let (x, y) = (5usize, 7usize);
        let ph = 2.0 * std::f64::consts::PI * (2.0 * x as f64 - 3.0 * y as f64) / n as f64;
        assert!((d[y * n + x] - Complex64::from_polar(1.0, ph)).norm() < 1e-12);
        f.forward(&mut d);
        assert!((d[f.bin(2, -3)].re - (n * n) as f64).abs() < 1e-9);
    }
}
