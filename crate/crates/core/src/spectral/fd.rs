//! Finite-difference Green functions of perturbed torus metrics.
//!
//! Independent of the spectral path: the operator `−∂_a(√g g^{ab} ∂_b)` is
//! assembled on a periodic grid whose node 0 sits at the source point, with
//! diagonal coefficients on edges and the mixed coefficient on cells. The
//! point source sits exactly on a node; the field at `y` is read off with
//! 4×4 Lagrange interpolation. Two grid levels are combined by Richardson
//! extrapolation.

use crate::error::{Error, Result};
use crate::geometry::{torus_displacement, SurfaceKind, TensorField2, WeylFactor};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Inverse metric `(g^{xx}, g^{xy}, g^{yy})` at a point of the unit torus.
pub trait InverseMetric {
    fn at(&self, z: Complex64) -> [f64; 3];
}

impl<F: Fn(Complex64) -> [f64; 3]> InverseMetric for F {
    fn at(&self, z: Complex64) -> [f64; 3] {
        self(z)
    }
}

/// `g^{ab} = δ^{ab} + ε f^{ab}`.
pub struct PerturbedFlat<'a> {
    pub f: &'a TensorField2,
    pub eps: f64,
}

impl InverseMetric for PerturbedFlat<'_> {
    fn at(&self, z: Complex64) -> [f64; 3] {
        let (zz, tr) = self.f.components(SurfaceKind::Torus, z);
        let e = self.eps;
        [1.0 + e * 0.5 * (tr + zz.re), e * 0.5 * zz.im, 1.0 + e * 0.5 * (tr - zz.re)]
    }
}

/// `g = e^ω |dz|²`.
pub struct WeylFlat<'a>(pub &'a WeylFactor);

impl InverseMetric for WeylFlat<'_> {
    fn at(&self, z: Complex64) -> [f64; 3] {
        let e = (-self.0.field.value(SurfaceKind::Torus, z)).exp();
        [e, 0.0, e]
    }
}

fn density(g: [f64; 3]) -> f64 {
    (g[0] * g[2] - g[1] * g[1]).powf(-0.5)
}

/// Grid solver with reusable buffers. Single-threaded; create one per worker.
#[derive(Debug, Clone)]
pub struct FdSolver {
    n: usize,
    /// Relative residual target of the conjugate-gradient iteration.
    pub tol: f64,
    pub max_iter: usize,
    ax: Vec<f64>,
    ay: Vec<f64>,
    axy: Vec<f64>,
    weights: Vec<f64>,
    last: Option<(Complex64, Vec<f64>)>,
}

impl FdSolver {
    pub fn new(n: usize) -> Result<Self> {
        if n < 16 {
            return Err(Error::Config(format!("finite-difference grid must be at least 16, got {n}")));
        }
        Ok(Self {
            n,
            tol: 1e-13,
            max_iter: 20 * n * n,
            ax: vec![0.0; n * n],
            ay: vec![0.0; n * n],
            axy: vec![0.0; n * n],
            weights: vec![0.0; n * n],
            last: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn assemble<M: InverseMetric>(&mut self, metric: &M, x: Complex64) {
        let n = self.n;
        let h = 1.0 / n as f64;
        let at = |i: f64, j: f64| x + Complex64::new(i * h, j * h);
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let (fi, fj) = (i as f64, j as f64);
                let ge = metric.at(at(fi + 0.5, fj));
                self.ax[k] = density(ge) * ge[0];
                let gn = metric.at(at(fi, fj + 0.5));
                self.ay[k] = density(gn) * gn[2];
                let gc = metric.at(at(fi + 0.5, fj + 0.5));
                self.axy[k] = density(gc) * gc[1];
                self.weights[k] = density(metric.at(at(fi, fj))) * h * h;
            }
        }
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..n {
            let j1 = (j + 1) % n;
            for i in 0..n {
                let i1 = (i + 1) % n;
                let k00 = j * n + i;
                let k10 = j * n + i1;
                let k01 = j1 * n + i;
                let k11 = j1 * n + i1;
                let fx = self.ax[k00] * (u[k10] - u[k00]);
                out[k00] -= fx;
                out[k10] += fx;
                let fy = self.ay[k00] * (u[k01] - u[k00]);
                out[k00] -= fy;
                out[k01] += fy;
                let a = self.axy[k00];
                if a != 0.0 {
                    let dx = 0.5 * (u[k10] - u[k00] + u[k11] - u[k01]);
                    let dy = 0.5 * (u[k01] - u[k00] + u[k11] - u[k10]);
                    out[k00] += a * (-0.5 * dy - 0.5 * dx);
                    out[k10] += a * (0.5 * dy - 0.5 * dx);
                    out[k01] += a * (-0.5 * dy + 0.5 * dx);
                    out[k11] += a * (0.5 * dy + 0.5 * dx);
                }
            }
        }
    }

    /// Zero-mean Green function `G(x, ·)` of the given metric on this grid,
    /// as nodal values on the grid anchored at `x`.
    pub fn solve<M: InverseMetric>(&mut self, metric: &M, x: Complex64) -> Result<Vec<f64>> {
        self.assemble(metric, x);
        let nn = self.n * self.n;
        let vol: f64 = self.weights.iter().sum();
        let mut b: Vec<f64> = self.weights.iter().map(|w| -2.0 * PI * w / vol).collect();
        b[0] += 2.0 * PI;
        let mut u = match &self.last {
            Some((x0, u0)) if *x0 == x => u0.clone(),
            _ => vec![0.0; nn],
        };
        let mut au = vec![0.0; nn];
        self.apply(&u, &mut au);
        let mut r: Vec<f64> = b.iter().zip(&au).map(|(b, a)| b - a).collect();
        project_mean(&mut r);
        let bnorm = dot(&b, &b).sqrt();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let mut ap = vec![0.0; nn];
        let mut it = 0;
        while rr.sqrt() > self.tol * bnorm {
            if it >= self.max_iter {
                return Err(Error::Convergence(format!(
                    "conjugate gradients stalled at relative residual {:.3e} after {it} iterations",
                    rr.sqrt() / bnorm
                )));
            }
            self.apply(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for k in 0..nn {
                u[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            project_mean(&mut r);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for k in 0..nn {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
            it += 1;
        }
        let mean = dot(&u, &self.weights) / vol;
        u.iter_mut().for_each(|v| *v -= mean);
        self.last = Some((x, u.clone()));
        Ok(u)
    }

    /// Interpolate grid values (anchored at `x`) at the point `y`.
    pub fn interpolate(&self, u: &[f64], x: Complex64, y: Complex64) -> f64 {
        let n = self.n;
        let d = torus_displacement(y, x);
        let t = [d.re.rem_euclid(1.0) * n as f64, d.im.rem_euclid(1.0) * n as f64];
        let base = [t[0].floor() as i64 - 1, t[1].floor() as i64 - 1];
        let wts = |s: f64| -> [f64; 4] {
            let nodes = [-1.0, 0.0, 1.0, 2.0];
            let mut w = [1.0; 4];
            for a in 0..4 {
                for b in 0..4 {
                    if a != b {
                        w[a] *= (s - nodes[b]) / (nodes[a] - nodes[b]);
                    }
                }
            }
            w
        };
        let wx = wts(t[0] - t[0].floor());
        let wy = wts(t[1] - t[1].floor());
        let mut acc = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            let j = (base[1] + b as i64).rem_euclid(n as i64) as usize;
            for (a, wxa) in wx.iter().enumerate() {
                let i = (base[0] + a as i64).rem_euclid(n as i64) as usize;
                acc += wxa * wyb * u[j * n + i];
            }
        }
        acc
    }

    /// `G(x, y)` on this grid.
    pub fn green<M: InverseMetric>(&mut self, metric: &M, x: Complex64, y: Complex64) -> Result<f64> {
        let u = self.solve(metric, x)?;
        Ok(self.interpolate(&u, x, y))
    }
}

fn project_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-level finite-difference Green function oracle (`n` and `2n`).
#[derive(Debug, Clone)]
pub struct FdGreen {
    coarse: FdSolver,
    fine: FdSolver,
}

impl FdGreen {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self { coarse: FdSolver::new(n)?, fine: FdSolver::new(2 * n)? })
    }

    /// `(4 G_{2n} − G_n) / 3`.
    pub fn green<M: InverseMetric>(&mut self, metric: &M, x: Complex64, y: Complex64) -> Result<f64> {
        if torus_displacement(x, y).norm() < 1e-12 {
            return Err(Error::Diagonal);
        }
        let gc = self.coarse.green(metric, x, y)?;
        let gf = self.fine.green(metric, x, y)?;
        Ok((4.0 * gf - gc) / 3.0)
    }

    /// Central difference `(G_{g_ε} − G_{g_{−ε}}) / 2ε` for `g^{ab} = δ^{ab} + ε f^{ab}`.
    pub fn variation(&mut self, f: &TensorField2, x: Complex64, y: Complex64, eps: f64) -> Result<f64> {
        let gp = self.green(&PerturbedFlat { f, eps }, x, y)?;
        let gm = self.green(&PerturbedFlat { f, eps: -eps }, x, y)?;
        Ok((gp - gm) / (2.0 * eps))
    }

    /// Mixed difference `∂²G/∂ε₁∂ε₂` for `g^{ab} = δ^{ab} + ε₁f₁^{ab} + ε₂f₂^{ab}`.
    pub fn mixed_variation(
        &mut self,
        f1: &TensorField2,
        f2: &TensorField2,
        x: Complex64,
        y: Complex64,
        eps: f64,
    ) -> Result<f64> {
        let mut acc = 0.0;
        for (s1, s2, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
            let f = f1.scale(s1).add(&f2.scale(s2));
            acc += sign * self.green(&PerturbedFlat { f: &f, eps }, x, y)?;
        }
        Ok(acc / (4.0 * eps * eps))
    }

    /// Green function of `e^ω |dz|²`.
    pub fn weyl(&mut self, omega: &WeylFactor, x: Complex64, y: Complex64) -> Result<f64> {
        self.green(&WeylFlat(omega), x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::kernel::torus_green;

    fn flat(_: Complex64) -> [f64; 3] {
        [1.0, 0.0, 1.0]
    }

    #[test]
    fn flat_metric_matches_theta_function() {
        let (x, y) = (Complex64::new(0.1, 0.2), Complex64::new(0.7, 0.6));
        let exact = torus_green(y - x);
        let mut c = FdSolver::new(64).unwrap();
        let mut f = FdSolver::new(128).unwrap();
        let gc = c.green(&flat, x, y).unwrap();
        let gf = f.green(&flat, x, y).unwrap();
        let rich = (4.0 * gf - gc) / 3.0;
        assert!((rich - exact).abs() < 0.2 * (gf - exact).abs().max(1e-7), "{gc} {gf} {rich} {exact}");
        assert!((rich - exact).abs() < 1e-5);
    }

    #[test]
    fn operator_is_symmetric_and_annihilates_constants() {
        let f = TensorField2::traceless(ScalarFieldHelper::wave(), ScalarFieldHelper::wave());
        let mut s = FdSolver::new(16).unwrap();
        s.assemble(&PerturbedFlat { f: &f, eps: 0.3 }, Complex64::new(0.0, 0.0));
        let n2 = 256;
        let ones = vec![1.0; n2];
        let mut out = vec![0.0; n2];
        s.apply(&ones, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        let e = |k: usize| {
            let mut v = vec![0.0; n2];
            v[k] = 1.0;
            v
        };
        for (a, b) in [(0usize, 17usize), (5, 6), (40, 200)] {
            let mut col = vec![0.0; n2];
            s.apply(&e(b), &mut col);
            let mut row = vec![0.0; n2];
            s.apply(&e(a), &mut row);
            assert!((col[a] - row[b]).abs() < 1e-12);
        }
    }

    struct ScalarFieldHelper;
    impl ScalarFieldHelper {
        fn wave() -> crate::geometry::ScalarField {
            crate::geometry::ScalarField::Fourier(vec![crate::geometry::FourierTerm { k: [1, 2], a: 0.5, b: 0.2 }])
        }
    }
}
