//! Complex-analytic kernels and the stress-energy field.
//!
//! Kernel normalizations (the single source of truth for `1/π` vs `1/4π`):
//!
//! * [`CAUCHY`]: `∂̄(CAUCHY / z) = δ`, so `C f(z) = CAUCHY ∫ f(w)/(z − w) dA(w)`
//!   solves `∂̄u = f`.
//! * [`KILLING`]: `2∇^z(KILLING / z) = δ` for `g = |dz|²`, where `2∇^z = 4∂̄`.
//!   The perturbation kernel of a point source is `ψ̇(w) = −KILLING/(w − z)`.
//!
//! Plane transforms act on cell-centred grids of a square box and integrate
//! the kernel exactly over each cell (piecewise-constant input). Torus
//! transforms are Fourier multipliers on the unit torus grid.

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::geometry::{conformal_weight, round_sigma, Mobius, SurfaceKind, TensorField2};
use crate::gff::{GffSample, PointMatrix};
use crate::jet::Jet2;
use crate::lcft::{CorrelatorSpec, FieldModel, RegularizationRecord, Sampler};
use crate::par;
use crate::rng::StreamId;
use crate::gff::sample_coefficients;
use crate::spectral::variation::gauss_legendre;
use crate::spectral::{SpectralBasis, Taper};
use crate::stats::{pairwise_sum, Estimate};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_PI, PI};
use std::sync::Arc;

type C = Complex64;

/// `∂̄(CAUCHY / z) = δ`.
pub const CAUCHY: f64 = FRAC_1_PI;
/// `4∂̄(KILLING / z) = δ`.
pub const KILLING: f64 = 0.25 * FRAC_1_PI;

/// Largest `‖μ‖∞` accepted by [`beltrami_solve_linear`].
pub const BELTRAMI_MAX_MU: f64 = 0.2;
/// Default Neumann order for [`beltrami_solve_linear`].
pub const BELTRAMI_ORDER: usize = 12;

const CHUNK: usize = 32;

fn zero() -> C {
    C::new(0.0, 0.0)
}

fn check_grid(n: usize) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::Config(format!("grid size must be a power of two and at least 8, got {n}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Plane box

/// Cell-centred `n×n` grid on `[−half, half]²`, row-major (`iy·n + ix`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneBox {
    pub half: f64,
    pub n: usize,
}

impl PlaneBox {
    pub fn new(half: f64, n: usize) -> Result<Self> {
        check_grid(n)?;
        if !(half > 0.0 && half.is_finite()) {
            return Err(Error::Config(format!("box half-width must be positive, got {half}")));
        }
        Ok(Self { half, n })
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        2.0 * self.half / self.n as f64
    }

    pub fn point(&self, ix: usize, iy: usize) -> C {
        let h = self.h();
        C::new(-self.half + (ix as f64 + 0.5) * h, -self.half + (iy as f64 + 0.5) * h)
    }

    pub fn points(&self) -> Vec<C> {
        (0..self.n * self.n).map(|i| self.point(i % self.n, i / self.n)).collect()
    }

    /// Cell averages of `f` by `sub × sub` midpoint sampling.
    pub fn cell_averages<F: Fn(C) -> C>(&self, f: F, sub: usize) -> Vec<C> {
        let h = self.h();
        let hs = h / sub as f64;
        let norm = 1.0 / (sub * sub) as f64;
        self.points()
            .into_iter()
            .map(|c| {
                let mut acc = zero();
                for j in 0..sub {
                    for i in 0..sub {
                        let o = C::new(-0.5 * h + (i as f64 + 0.5) * hs, -0.5 * h + (j as f64 + 0.5) * hs);
                        acc += f(c + o);
                    }
                }
                acc * norm
            })
            .collect()
    }

    /// Whether `z` lies at least `margin` inside the box.
    pub fn is_interior(&self, z: C, margin: f64) -> bool {
        z.re.abs() <= self.half - margin && z.im.abs() <= self.half - margin
    }
}

/// `Δ ln ζ` along the segment `a → b` (which must avoid 0).
fn dlog(a: C, b: C) -> C {
    let r = b / a;
    C::new(r.norm().ln(), r.arg())
}

/// `∮ ζ̄ ζ^{−p} dζ` counterclockwise around `[−h/2, h/2]² − d`, for `p ∈ {1, 2}`.
fn square_contour(d: C, h: f64, p: u8) -> C {
    let e = 0.5 * h;
    let c = [C::new(-e, -e) - d, C::new(e, -e) - d, C::new(e, e) - d, C::new(-e, e) - d];
    let i = C::new(0.0, 1.0);
    let mut acc = zero();
    for k in 0..4 {
        let (a, b) = (c[k], c[(k + 1) % 4]);
        let horizontal = k % 2 == 0;
        let dl = dlog(a, b);
        let dinv = b.inv() - a.inv();
        acc += match (horizontal, p) {
            (true, 1) => (b - a) - 2.0 * i * a.im * dl,
            (false, 1) => 2.0 * a.re * dl - (b - a),
            (true, _) => dl + 2.0 * i * a.im * dinv,
            (false, _) => -2.0 * a.re * dinv - dl,
        };
    }
    acc
}

/// `∫_cell dA(w) / (d − w)` for the cell of width `h` centred at 0.
pub fn cell_cauchy(d: C, h: f64) -> C {
    -square_contour(d, h, 1) / C::new(0.0, 2.0)
}

/// Principal value of `−∫_cell dA(w) / (d − w)²` (the `d`-derivative of [`cell_cauchy`]).
pub fn cell_beurling(d: C, h: f64) -> C {
    -square_contour(d, h, 2) / C::new(0.0, 2.0)
}

#[derive(Debug, Clone)]
struct PlaneKernels {
    grid: PlaneBox,
    fft: Fft2,
    cauchy_hat: Vec<C>,
    beurling_hat: Vec<C>,
}

impl PlaneKernels {
    fn new(grid: PlaneBox) -> Self {
        let n = grid.n;
        let big = 2 * n;
        let fft = Fft2::new(big);
        let h = grid.h();
        let mut kc = vec![zero(); big * big];
        let mut kb = vec![zero(); big * big];
        for my in -(n as i32 - 1)..n as i32 {
            for mx in -(n as i32 - 1)..n as i32 {
                let d = C::new(mx as f64 * h, my as f64 * h);
                let idx = fft.bin(mx, my);
                kc[idx] = cell_cauchy(d, h) * CAUCHY;
                kb[idx] = cell_beurling(d, h) * CAUCHY;
            }
        }
        fft.forward(&mut kc);
        fft.forward(&mut kb);
        Self { grid, fft, cauchy_hat: kc, beurling_hat: kb }
    }

    fn convolve(&self, f: &[C], kernel_hat: &[C]) -> Vec<C> {
        let n = self.grid.n;
        let big = 2 * n;
        let mut buf = vec![zero(); big * big];
        for iy in 0..n {
            buf[iy * big..iy * big + n].copy_from_slice(&f[iy * n..(iy + 1) * n]);
        }
        self.fft.forward(&mut buf);
        buf.iter_mut().zip(kernel_hat).for_each(|(b, k)| *b *= k);
        self.fft.inverse(&mut buf);
        let norm = 1.0 / (big * big) as f64;
        let mut out = Vec::with_capacity(n * n);
        for iy in 0..n {
            out.extend(buf[iy * big..iy * big + n].iter().map(|v| v * norm));
        }
        out
    }
}

/// Write `x,y,re,im` rows for a complex field sampled at `points`.
pub fn write_complex_csv<W: std::io::Write>(points: &[C], values: &[C], mut out: W) -> std::io::Result<()> {
    writeln!(out, "x,y,re,im")?;
    for (z, v) in points.iter().zip(values) {
        writeln!(out, "{},{},{},{}", z.re, z.im, v.re, v.im)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Torus Fourier calculus

/// Fourier calculus on the unit torus grid (`z = (ix + i·iy)/n`, row-major).
#[derive(Debug, Clone)]
pub struct TorusFourier {
    n: usize,
    fft: Fft2,
}

impl TorusFourier {
    pub fn new(n: usize) -> Result<Self> {
        check_grid(n)?;
        Ok(Self { n, fft: Fft2::new(n) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> Vec<C> {
        let h = 1.0 / self.n as f64;
        (0..self.n * self.n).map(|i| C::new((i % self.n) as f64 * h, (i / self.n) as f64 * h)).collect()
    }

    fn freq(&self, i: usize) -> f64 {
        if i < self.n / 2 {
            i as f64
        } else {
            i as f64 - self.n as f64
        }
    }

    fn check_len(&self, f: &[C]) {
        assert_eq!(f.len(), self.n * self.n, "torus grid field has the wrong length");
    }

    /// Apply the Fourier multiplier `m(kx, ky)`.
    fn multiply<F: Fn(f64, f64) -> C>(&self, f: &[C], m: F) -> Vec<C> {
        self.check_len(f);
        let n = self.n;
        let mut buf = f.to_vec();
        self.fft.forward(&mut buf);
        for iy in 0..n {
            for ix in 0..n {
                buf[iy * n + ix] *= m(self.freq(ix), self.freq(iy));
            }
        }
        self.fft.inverse(&mut buf);
        let norm = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|v| *v *= norm);
        buf
    }

    pub fn mean(&self, f: &[C]) -> C {
        self.check_len(f);
        let re: Vec<f64> = f.iter().map(|v| v.re).collect();
        let im: Vec<f64> = f.iter().map(|v| v.im).collect();
        C::new(pairwise_sum(&re), pairwise_sum(&im)) / (f.len() as f64)
    }

    /// `∂̄ = ½(∂x + i∂y)`.
    pub fn dbar(&self, u: &[C]) -> Vec<C> {
        self.multiply(u, |kx, ky| C::new(-PI * ky, PI * kx))
    }

    /// `∂ = ½(∂x − i∂y)`.
    pub fn dz(&self, u: &[C]) -> Vec<C> {
        self.multiply(u, |kx, ky| C::new(PI * ky, PI * kx))
    }

    /// Mean-zero solution of `∂̄u = f − mean(f)`.
    pub fn dbar_inverse(&self, f: &[C]) -> Vec<C> {
        self.multiply(f, |kx, ky| {
            if kx == 0.0 && ky == 0.0 {
                zero()
            } else {
                C::new(-PI * ky, PI * kx).inv()
            }
        })
    }

    /// `∂ ∂̄^{-1}` on mean-zero fields (the periodic Beurling transform).
    pub fn beurling(&self, f: &[C]) -> Vec<C> {
        self.multiply(f, |kx, ky| {
            if kx == 0.0 && ky == 0.0 {
                zero()
            } else {
                C::new(PI * ky, PI * kx) / C::new(-PI * ky, PI * kx)
            }
        })
    }

    /// Trigonometric interpolation of grid values at an arbitrary point.
    pub fn eval(&self, u: &[C], z: C) -> C {
        self.check_len(u);
        let n = self.n;
        let mut hat = u.to_vec();
        self.fft.forward(&mut hat);
        let mut acc = zero();
        for iy in 0..n {
            let ey = C::from_polar(1.0, 2.0 * PI * self.freq(iy) * z.im);
            for ix in 0..n {
                acc += hat[iy * n + ix] * ey * C::from_polar(1.0, 2.0 * PI * self.freq(ix) * z.re);
            }
        }
        acc / (n * n) as f64
    }
}

// ---------------------------------------------------------------------------
// Cauchy transform

/// Where a [`CauchyKernelOp`] acts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CauchyDomain {
    Plane(PlaneBox),
    Torus { n: usize },
}

/// `∂̄^{-1}` and its Beurling derivative on a plane box or the torus.
#[derive(Debug, Clone)]
pub struct CauchyKernelOp {
    domain: CauchyDomain,
    plane: Option<PlaneKernels>,
    torus: Option<TorusFourier>,
}

/// Output of [`cauchy_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyTransform {
    pub u: Vec<C>,
    /// Mean removed from a torus input before inversion (zero on the plane).
    pub projected: C,
}

impl CauchyKernelOp {
    pub fn plane(grid: PlaneBox) -> Self {
        Self { domain: CauchyDomain::Plane(grid), plane: Some(PlaneKernels::new(grid)), torus: None }
    }

    pub fn torus(n: usize) -> Result<Self> {
        Ok(Self { domain: CauchyDomain::Torus { n }, plane: None, torus: Some(TorusFourier::new(n)?) })
    }

    pub fn domain(&self) -> CauchyDomain {
        self.domain
    }

    pub fn points(&self) -> Vec<C> {
        match (&self.plane, &self.torus) {
            (Some(p), _) => p.grid.points(),
            (_, Some(t)) => t.points(),
            _ => unreachable!(),
        }
    }

    fn torus_mean(&self, t: &TorusFourier, f: &[C], project: bool) -> Result<C> {
        let m = t.mean(f);
        let scale = f.iter().fold(0.0f64, |a, v| a.max(v.norm()));
        if !project && m.norm() > 1e-12 * scale.max(1e-300) {
            return Err(Error::Domain(format!(
                "torus Cauchy transform needs mean-zero input (mean = {m}); enable projection"
            )));
        }
        Ok(m)
    }

    /// `u` with `∂̄u = f` (minus its mean on the torus when `project` is set).
    pub fn transform(&self, f: &[C], project: bool) -> Result<CauchyTransform> {
        match (&self.plane, &self.torus) {
            (Some(p), _) => {
                assert_eq!(f.len(), p.grid.n * p.grid.n);
                Ok(CauchyTransform { u: p.convolve(f, &p.cauchy_hat), projected: zero() })
            }
            (_, Some(t)) => {
                let m = self.torus_mean(t, f, project)?;
                Ok(CauchyTransform { u: t.dbar_inverse(f), projected: m })
            }
            _ => unreachable!(),
        }
    }

    /// `∂_z` of [`CauchyKernelOp::transform`].
    pub fn beurling(&self, f: &[C], project: bool) -> Result<Vec<C>> {
        match (&self.plane, &self.torus) {
            (Some(p), _) => {
                assert_eq!(f.len(), p.grid.n * p.grid.n);
                Ok(p.convolve(f, &p.beurling_hat))
            }
            (_, Some(t)) => {
                self.torus_mean(t, f, project)?;
                Ok(t.beurling(f))
            }
            _ => unreachable!(),
        }
    }
}

/// `u` with `∂̄u = f` on the operator's domain.
pub fn cauchy_transform(op: &CauchyKernelOp, f: &[C], project: bool) -> Result<CauchyTransform> {
    op.transform(f, project)
}

// ---------------------------------------------------------------------------
// Point-source perturbation kernels

/// `ψ̇(w) = −KILLING/(w − z)` and `ω̇(w) = KILLING (1/(w − z)² + ∂σ(w)/(w − z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaKernels {
    pub z: C,
    pub points: Vec<C>,
    pub psi_dot: Vec<C>,
    pub omega_dot: Vec<C>,
}

/// Kernels of a point perturbation at `z` on the given points; `dsigma` is
/// `∂_w σ` of the conformal factor.
pub fn delta_perturbation_kernels<F: Fn(C) -> C>(z: C, points: &[C], dsigma: F) -> Result<DeltaKernels> {
    let mut psi_dot = Vec::with_capacity(points.len());
    let mut omega_dot = Vec::with_capacity(points.len());
    for &w in points {
        let d = w - z;
        if d.norm() == 0.0 {
            return Err(Error::Diagonal);
        }
        let inv = d.inv();
        psi_dot.push(-KILLING * inv);
        omega_dot.push(KILLING * (inv * inv + dsigma(w) * inv));
    }
    Ok(DeltaKernels { z, points: points.to_vec(), psi_dot, omega_dot })
}

/// `∂σ` and `∂²σ` of the round metric in the primary chart.
pub fn round_sigma_derivatives(z: C) -> (C, C) {
    let s = round_sigma(Jet2::var_x(z.re), Jet2::var_y(z.im));
    (s.dz(), s.dzz())
}

// ---------------------------------------------------------------------------
// Beltrami equation

/// Solution `ψ(z) = z + a z̄ + v(z)` of `∂̄ψ = μ ∂ψ` on the torus grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BeltramiSolution {
    pub n: usize,
    /// Constant `a` of the affine part.
    pub affine: C,
    /// Periodic part `v` at the grid points.
    pub v: Vec<C>,
    /// `∂ψ` and `∂̄ψ` at the grid points.
    pub dz: Vec<C>,
    pub dzbar: Vec<C>,
    /// `‖∂̄ψ − μ∂ψ‖∞` after each Neumann order.
    pub residuals: Vec<f64>,
}

impl BeltramiSolution {
    pub fn residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }

    /// `ψ(z)` at an arbitrary point (Fourier interpolation of `v`).
    pub fn map_at(&self, tf: &TorusFourier, z: C) -> C {
        z + self.affine * z.conj() + tf.eval(&self.v, z)
    }
}

/// Linear Beltrami solve by Neumann iteration `v ← ∂̄^{-1}(μ(1 + ∂v) − a)`,
/// `a = mean(μ(1 + ∂v))`. `mu` holds grid values on the torus.
pub fn beltrami_solve_linear(mu: &[C], n: usize, order: usize) -> Result<BeltramiSolution> {
    let tf = TorusFourier::new(n)?;
    tf.check_len(mu);
    let sup = mu.iter().fold(0.0f64, |a, m| a.max(m.norm()));
    if !(sup <= BELTRAMI_MAX_MU) {
        return Err(Error::Convergence(format!(
            "‖μ‖∞ = {sup:.4} exceeds {BELTRAMI_MAX_MU}; the Neumann series is not used beyond that"
        )));
    }
    let mut v = vec![zero(); n * n];
    let mut affine = zero();
    let mut residuals = Vec::with_capacity(order);
    let mut dz = vec![C::new(1.0, 0.0); n * n];
    let mut dzbar = vec![zero(); n * n];
    for _ in 0..order {
        let g: Vec<C> = mu.iter().zip(&dz).map(|(m, d)| m * d).collect();
        affine = tf.mean(&g);
        v = tf.dbar_inverse(&g);
        dz = tf.dz(&v).into_iter().map(|d| d + 1.0).collect();
        dzbar = tf.dbar(&v).into_iter().map(|d| d + affine).collect();
        let r = dzbar.iter().zip(&dz).zip(mu).fold(0.0f64, |a, ((db, d), m)| a.max((db - m * d).norm()));
        residuals.push(r);
    }
    Ok(BeltramiSolution { n, affine, v, dz, dzbar, residuals })
}

// ---------------------------------------------------------------------------
// Conformal Killing inverse on the torus

/// Inverse of the conformal Killing operator on the flat unit torus, with the
/// constant quadratic differential as the moduli direction. Outputs are
/// mean-zero vector fields `u^z`.
#[derive(Debug, Clone)]
pub struct KillingInverse {
    fourier: TorusFourier,
}

/// `u = 𝒢f` with the removed moduli component.
#[derive(Debug, Clone, PartialEq)]
pub struct KillingSolution {
    pub u: Vec<C>,
    pub moduli: C,
}

impl KillingInverse {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self { fourier: TorusFourier::new(n)? })
    }

    pub fn fourier(&self) -> &TorusFourier {
        &self.fourier
    }

    /// `f^{zz}` of a tensor field on the grid.
    pub fn sample(&self, f: &TensorField2) -> Vec<C> {
        self.fourier.points().iter().map(|z| f.components(SurfaceKind::Torus, *z).0).collect()
    }

    /// Coefficient of the unit-norm constant quadratic differential.
    pub fn moduli_projection(&self, f: &[C]) -> C {
        self.fourier.mean(f)
    }

    /// `𝒦f` with `2∇^z 𝒦f = f − f_m`.
    pub fn green(&self, f: &[C]) -> Vec<C> {
        self.fourier.dbar_inverse(f).into_iter().map(|v| 0.25 * v).collect()
    }

    /// `u` with `2∇^z u^z = −(f − f_m)`, mean-zero.
    pub fn apply(&self, f: &[C]) -> KillingSolution {
        let u = self.green(f).into_iter().map(|v| -v).collect();
        KillingSolution { u, moduli: self.moduli_projection(f) }
    }

    /// `2∇^z u^z = 4∂̄u`.
    pub fn divergence(&self, u: &[C]) -> Vec<C> {
        self.fourier.dbar(u).into_iter().map(|v| 4.0 * v).collect()
    }

    /// `P♯u = −2∇^z u^z`, so that `P♯(apply(f)) = f − f_m`.
    pub fn p_sharp(&self, u: &[C]) -> Vec<C> {
        self.divergence(u).into_iter().map(|v| -v).collect()
    }

    /// `max |2∇^z 𝒦f − (f − f_m)|`.
    pub fn green_residual(&self, f: &[C]) -> f64 {
        let m = self.moduli_projection(f);
        let d = self.divergence(&self.green(f));
        d.iter().zip(f).fold(0.0f64, |a, (d, f)| a.max((d - (f - m)).norm()))
    }

    /// `max |P♯(apply f) − (f − f_m)|`.
    pub fn identity_residual(&self, f: &[C]) -> f64 {
        let sol = self.apply(f);
        let p = self.p_sharp(&sol.u);
        p.iter().zip(f).fold(0.0f64, |a, (p, f)| a.max((p - (f - sol.moduli)).norm()))
    }
}

/// `𝒢f` for a traceless tensor on the `n×n` torus grid.
pub fn killing_inverse(f: &TensorField2, n: usize) -> Result<KillingSolution> {
    let k = KillingInverse::new(n)?;
    Ok(k.apply(&k.sample(f)))
}

// ---------------------------------------------------------------------------
// Stress-energy field

/// Evaluates `𝒯 = Q∂²φ − (∂φ)² + (1/12)(∂²σ − ½(∂σ)²) + E[(∂X)²]`,
/// `φ = X + Qσ/2`, at fixed points for batches of coefficient rows.
#[derive(Debug, Clone)]
pub struct SeFieldOp {
    q: f64,
    points: Vec<C>,
    d: [PointMatrix; 4],
    wick: Vec<C>,
    dsigma: Vec<C>,
    constant: Vec<C>,
}

impl SeFieldOp {
    /// `scales` are the field scales `τ_n √(2π/λ_n)` applied to unit coefficients.
    pub fn new(b: &SpectralBasis, scales: &[f64], q: f64, points: &[C]) -> Result<Self> {
        for z in points {
            b.surface().check_point(*z)?;
        }
        let mut d = PointMatrix::derivatives(b, points);
        d.iter_mut().for_each(|m| m.scale_modes(scales));
        let m = b.len();
        let wick = (0..points.len())
            .map(|r| {
                let re = &d[0].values()[r * m..(r + 1) * m];
                let im = &d[1].values()[r * m..(r + 1) * m];
                let terms: Vec<C> = re.iter().zip(im).map(|(a, b)| C::new(*a, *b).powi(2)).collect();
                C::new(pairwise_sum(&terms.iter().map(|t| t.re).collect::<Vec<_>>()), pairwise_sum(&terms.iter().map(|t| t.im).collect::<Vec<_>>()))
            })
            .collect();
        let (mut dsigma, mut constant) = (Vec::new(), Vec::new());
        for z in points {
            let (ds, dds) = match b.kind() {
                SurfaceKind::Sphere => round_sigma_derivatives(*z),
                SurfaceKind::Torus => (zero(), zero()),
            };
            let schwarz = dds - 0.5 * ds * ds;
            dsigma.push(ds);
            constant.push((0.5 * q * q + 1.0 / 12.0) * schwarz);
        }
        Ok(Self { q, points: points.to_vec(), d, wick, dsigma, constant })
    }

    pub fn points(&self) -> &[C] {
        &self.points
    }

    /// `E[(∂X)²]` at each point.
    pub fn wick_constant(&self) -> &[C] {
        &self.wick
    }

    /// `(∂X, ∂²X)` for a batch of unit-coefficient rows (`batch × points` each).
    pub fn derivatives(&self, coeffs: &[f64], batch: usize) -> (Vec<C>, Vec<C>) {
        let s: Vec<Vec<f64>> = self.d.iter().map(|m| m.synthesize(coeffs, batch)).collect();
        let d1 = s[0].iter().zip(&s[1]).map(|(a, b)| C::new(*a, *b)).collect();
        let d2 = s[2].iter().zip(&s[3]).map(|(a, b)| C::new(*a, *b)).collect();
        (d1, d2)
    }

    /// `𝒯` at every point for a batch of unit-coefficient rows.
    pub fn evaluate(&self, coeffs: &[f64], batch: usize) -> Vec<C> {
        let (d1, d2) = self.derivatives(coeffs, batch);
        let np = self.points.len();
        (0..batch * np)
            .map(|k| {
                let r = k % np;
                let (dx, ddx) = (d1[k], d2[k]);
                self.q * ddx - dx * dx - self.q * dx * self.dsigma[r] + self.wick[r] + self.constant[r]
            })
            .collect()
    }
}

/// `𝒯(z)` for one field sample with the given regularizing taper.
pub fn se_field(sample: &GffSample, z: C, taper: Taper, q: f64) -> Result<C> {
    let b = sample.basis();
    let op = SeFieldOp::new(b, &crate::gff::field_scales(b, taper), q, &[z])?;
    Ok(op.evaluate(sample.coefficients(), 1)[0])
}

/// Weighted complex mean with delta-method error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub value: C,
    /// `sqrt(Var Re + Var Im)` of the estimate.
    pub stderr: f64,
}

impl ComplexEstimate {
    /// `|value − target| / stderr`.
    pub fn z_score(&self, target: C) -> f64 {
        let d = (self.value - target).norm();
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// `Σ w_i y_i / Σ w_i` with error `sqrt(Σ w_i² |y_i − R|²) / Σ w_i`.
pub fn weighted_mean(w: &[f64], y: &[C]) -> ComplexEstimate {
    assert_eq!(w.len(), y.len());
    let sw = pairwise_sum(w);
    let re: Vec<f64> = w.iter().zip(y).map(|(w, y)| w * y.re).collect();
    let im: Vec<f64> = w.iter().zip(y).map(|(w, y)| w * y.im).collect();
    let r = C::new(pairwise_sum(&re), pairwise_sum(&im)) / sw;
    let dev: Vec<f64> = w.iter().zip(y).map(|(w, y)| w * w * (y - r).norm_sqr()).collect();
    ComplexEstimate { value: r, stderr: pairwise_sum(&dev).sqrt() / sw }
}

/// Pure-GFF mean of `𝒯` at each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeMeanReport {
    pub points: Vec<C>,
    pub mean: Vec<ComplexEstimate>,
    /// Largest `|mean| / stderr`.
    pub max_z: f64,
    pub samples: usize,
    pub seed: u64,
}

fn unit_rows(m: usize, seed: u64, first: usize, count: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(count * m);
    for i in 0..count {
        a.extend(sample_coefficients(m, StreamId::new(seed, (first + i) as u64)));
    }
    a
}

/// Per-sample `𝒯` values at `points` (sample-major).
fn se_samples(b: &SpectralBasis, op: &SeFieldOp, samples: usize, seed: u64) -> Vec<C> {
    let m = b.len();
    par::map_chunks(samples, CHUNK, par::default_workers(), |r| {
        op.evaluate(&unit_rows(m, seed, r.start, r.len()), r.len())
    })
}

pub fn se_mean_check(
    b: &Arc<SpectralBasis>,
    taper: Taper,
    q: f64,
    points: &[C],
    samples: usize,
    seed: u64,
) -> Result<SeMeanReport> {
    if samples < 2 {
        return Err(Error::Config("at least two samples are needed".into()));
    }
    let op = SeFieldOp::new(b, &crate::gff::field_scales(b, taper), q, points)?;
    let vals = se_samples(b, &op, samples, seed);
    let np = points.len();
    let w = vec![1.0; samples];
    let mean: Vec<ComplexEstimate> = (0..np)
        .map(|p| weighted_mean(&w, &(0..samples).map(|i| vals[i * np + p]).collect::<Vec<_>>()))
        .collect();
    let max_z = mean.iter().map(|e| e.z_score(zero())).fold(0.0, f64::max);
    Ok(SeMeanReport { points: points.to_vec(), mean, max_z, samples, seed })
}

/// Two-point function of `𝒯` at `(z, w)` and at the rotated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeRotationReport {
    pub z: C,
    pub w: C,
    /// `E[𝒯(z)𝒯(w)]`.
    pub original: ComplexEstimate,
    /// `E[𝒯(ρz)𝒯(ρw)] ρ'(z)² ρ'(w)²`.
    pub rotated: ComplexEstimate,
    /// Paired difference rotated − original.
    pub difference: ComplexEstimate,
    /// Wick-contraction value from the truncated kernel.
    pub oracle: C,
    pub z_score: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Wick-contraction value of `E[𝒯(z)𝒯(w)]` for the truncated Gaussian field.
pub fn se_two_point_oracle(b: &SpectralBasis, scales: &[f64], q: f64, z: C, w: C) -> Result<C> {
    let op = SeFieldOp::new(b, scales, q, &[z, w])?;
    let m = b.len();
    let row = |k: usize, r: usize| &op.d[k].values()[r * m..(r + 1) * m];
    let cplx = |k: usize, r: usize| -> Vec<C> {
        row(2 * k, r).iter().zip(row(2 * k + 1, r)).map(|(a, b)| C::new(*a, *b)).collect()
    };
    let (d1z, d2z, d1w, d2w) = (cplx(0, 0), cplx(1, 0), cplx(0, 1), cplx(1, 1));
    let lin = |d1: &[C], d2: &[C], ds: C| -> Vec<C> { d1.iter().zip(d2).map(|(a, b)| q * (b - ds * a)).collect() };
    let az = lin(&d1z, &d2z, op.dsigma[0]);
    let aw = lin(&d1w, &d2w, op.dsigma[1]);
    let sum = |v: Vec<C>| -> C {
        C::new(pairwise_sum(&v.iter().map(|t| t.re).collect::<Vec<_>>()), pairwise_sum(&v.iter().map(|t| t.im).collect::<Vec<_>>()))
    };
    let aa = sum(az.iter().zip(&aw).map(|(a, b)| a * b).collect());
    let k11 = sum(d1z.iter().zip(&d1w).map(|(a, b)| a * b).collect());
    Ok(aa + 2.0 * k11 * k11 + op.constant[0] * op.constant[1])
}

pub fn se_rotation_check(
    b: &Arc<SpectralBasis>,
    taper: Taper,
    q: f64,
    z: C,
    w: C,
    rho: &Mobius,
    samples: usize,
    seed: u64,
) -> Result<SeRotationReport> {
    if !rho.is_isometry() {
        return Err(Error::Config("the rotation check needs a sphere isometry".into()));
    }
    if samples < 2 {
        return Err(Error::Config("at least two samples are needed".into()));
    }
    let (rz, rw) = (rho.apply(z), rho.apply(w));
    let scales = crate::gff::field_scales(b, taper);
    let op = SeFieldOp::new(b, &scales, q, &[z, w, rz, rw])?;
    let jac = rho.derivative(z).powi(2) * rho.derivative(w).powi(2);
    let vals = se_samples(b, &op, samples, seed);
    let orig: Vec<C> = vals.chunks_exact(4).map(|v| v[0] * v[1]).collect();
    let rot: Vec<C> = vals.chunks_exact(4).map(|v| v[2] * v[3] * jac).collect();
    let diff: Vec<C> = rot.iter().zip(&orig).map(|(a, b)| a - b).collect();
    let ones = vec![1.0; samples];
    let difference = weighted_mean(&ones, &diff);
    Ok(SeRotationReport {
        z,
        w,
        original: weighted_mean(&ones, &orig),
        rotated: weighted_mean(&ones, &rot),
        z_score: difference.z_score(zero()),
        difference,
        oracle: se_two_point_oracle(b, &scales, q, z, w)?,
        samples,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Ward identity, n = 1, on the sphere

/// Contour used to extract a conformal weight from `𝒯` around one insertion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    /// Index into the canonically ordered insertions.
    pub insertion: usize,
    pub radius: f64,
    pub nodes: usize,
}

/// Numerical parameters of [`ward_n1_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WardConfig {
    pub z_points: Vec<C>,
    /// Excision radii for the principal-value sweep, largest first.
    pub radii: Vec<f64>,
    /// Polar patch quadrature: radial Gauss–Legendre and angular trapezoid nodes.
    pub radial: usize,
    pub angular: usize,
    /// Nodes on each excision circle.
    pub boundary: usize,
    pub contour: Option<ContourSpec>,
}

impl WardConfig {
    /// Radii `r, r/2, r/4` and default patch sizes.
    pub fn new(z_points: Vec<C>, r: f64) -> Self {
        Self { z_points, radii: vec![r, 0.5 * r, 0.25 * r], radial: 10, angular: 32, boundary: 64, contour: None }
    }
}

/// Per-`z` outcome of the Ward check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WardPoint {
    pub z: C,
    /// `⟨𝒯(z) ΠV⟩ / ⟨ΠV⟩`.
    pub lhs: ComplexEstimate,
    /// `Σ_j Δ_j/(z−x_j)² + ∂_{x_j} ln⟨ΠV⟩/(z−x_j)` with principal-value derivatives at the smallest radius.
    pub rhs: ComplexEstimate,
    /// Same, with derivatives from the field gradient at the insertions.
    pub rhs_direct: ComplexEstimate,
    /// Paired `lhs − rhs`.
    pub difference: ComplexEstimate,
    /// `|lhs − rhs| / |rhs|`.
    pub rel_dev: f64,
    /// Error of `rel_dev` from the paired difference.
    pub rel_err: f64,
}

/// `∂_{x_j} ln⟨ΠV⟩` in the flat chart at one excision radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvEntry {
    pub radius: f64,
    pub derivatives: Vec<ComplexEstimate>,
    /// Paired z-scores against the next smaller radius (empty for the last).
    pub z_next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEntry {
    pub point: C,
    /// Integration-by-parts form with the full potential integral.
    pub ibp: ComplexEstimate,
    /// `α_j ∂X(x_j) + Δ_j ∂σ(x_j)` averaged directly.
    pub direct: ComplexEstimate,
    /// Paired z-score of `ibp − direct`.
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourEstimate {
    pub insertion: C,
    pub radius: f64,
    pub measured: ComplexEstimate,
    pub predicted: f64,
    pub rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WardReport {
    pub points: Vec<WardPoint>,
    pub pv: Vec<PvEntry>,
    /// Every paired radius comparison within 3 stderr.
    pub pv_consistent: bool,
    pub derivatives: Vec<DerivativeEntry>,
    pub contour: Option<ContourEstimate>,
    /// `Σ D_j`, `Σ (x_j D_j + Δ_j)`, `Σ (x_j² D_j + 2x_j Δ_j)`: zero for a Möbius-covariant correlator.
    pub global: Vec<ComplexEstimate>,
    pub max_rel_dev: f64,
    pub samples: usize,
    pub seed: u64,
    pub ess: f64,
    pub regularization: RegularizationRecord,
}

/// One excision patch around an insertion.
struct Patch {
    j: usize,
    /// Interior nodes `[start, end)` and boundary nodes `[bstart, bend)`.
    range: (usize, usize),
    brange: (usize, usize),
}

/// Precomputed geometry for the Ward sampler.
struct WardPlan {
    nj: usize,
    alpha: Vec<f64>,
    delta: Vec<f64>,
    x: Vec<C>,
    dsig_x: Vec<C>,
    gauss: Vec<C>,
    /// `∂₁C(x_j, y_k)` at quadrature nodes, per `j`.
    dc1_quad: Vec<Vec<C>>,
    patches: Vec<Patch>,
    /// Interior nodes: dv-weight, `∂₁C(x_j,·)`, symmetric part, other-insertion term, `∂σ`.
    omega: Vec<f64>,
    dc1: Vec<C>,
    sym: Vec<C>,
    oth: Vec<C>,
    dsig: Vec<C>,
    /// Boundary weights `(i/2) e^σ dz̄`.
    bweight: Vec<C>,
    n_interior: usize,
    /// Field values at interior then boundary nodes (scaled).
    values: PointMatrix,
    /// `s_n² ∂e_n` at interior nodes (real, imaginary).
    dh: [PointMatrix; 2],
    /// Field gradient at the insertions (scaled).
    grad_x: [PointMatrix; 2],
    se: SeFieldOp,
    nz: usize,
    contour: Option<(usize, f64, usize)>,
}

fn cdot(re: &[f64], im: &[f64], v: &[f64]) -> C {
    C::new(re.iter().zip(v).map(|(a, b)| a * b).sum(), im.iter().zip(v).map(|(a, b)| a * b).sum())
}

fn synth_complex(re: &PointMatrix, im: &PointMatrix, coeffs: &[f64]) -> Vec<C> {
    re.synthesize(coeffs, 1).into_iter().zip(im.synthesize(coeffs, 1)).map(|(a, b)| C::new(a, b)).collect()
}

fn ward_plan(spec: &CorrelatorSpec, model: &FieldModel, cfg: &WardConfig) -> Result<WardPlan> {
    let b = model.basis();
    let surf = b.surface();
    let s = model.scales();
    let s2: Vec<f64> = s.iter().map(|v| v * v).collect();
    let m = b.len();
    let nj = spec.insertions.len();
    let x: Vec<C> = spec.insertions.iter().map(|i| i.point).collect();
    let alpha: Vec<f64> = spec.insertions.iter().map(|i| i.alpha).collect();
    let delta = alpha.iter().map(|a| conformal_weight(*a, spec.gamma)).collect::<Result<Vec<_>>>()?;
    let dsig_x: Vec<C> = x.iter().map(|z| round_sigma_derivatives(*z).0).collect();
    let gx = PointMatrix::derivatives(b, &x);
    let ex = PointMatrix::at_points(b, &x);
    let row = |p: &PointMatrix, r: usize| p.values()[r * m..(r + 1) * m].to_vec();
    // s²∘∂e(x_j), real and imaginary parts.
    let dcoef: Vec<(Vec<f64>, Vec<f64>)> = (0..nj)
        .map(|j| {
            let re = row(&gx[0], j).iter().zip(&s2).map(|(a, b)| a * b).collect();
            let im = row(&gx[1], j).iter().zip(&s2).map(|(a, b)| a * b).collect();
            (re, im)
        })
        .collect();
    let ecoef: Vec<Vec<f64>> = (0..nj).map(|k| row(&ex, k).iter().zip(&s2).map(|(a, b)| a * b).collect()).collect();
    let gauss: Vec<C> = (0..nj)
        .map(|j| {
            (0..nj)
                .filter(|k| *k != j)
                .map(|k| alpha[k] * cdot(&dcoef[j].0, &dcoef[j].1, &row(&ex, k)))
                .sum()
        })
        .collect();
    let quad = model.quadrature();
    let dc1_quad: Vec<Vec<C>> = dcoef
        .iter()
        .map(|(re, im)| {
            let a = quad.synthesize(b, re, 1);
            let c = quad.synthesize(b, im, 1);
            a.into_iter().zip(c).map(|(a, b)| C::new(a, b)).collect()
        })
        .collect();

    // Patch nodes.
    let (gl_t, gl_w) = gauss_legendre(cfg.radial);
    let mut interior = Vec::new();
    let mut omega = Vec::new();
    let mut owner = Vec::new();
    let mut boundary = Vec::new();
    let mut bweight = Vec::new();
    let mut patches = Vec::new();
    for j in 0..nj {
        for &r in &cfg.radii {
            let start = interior.len();
            for (t, w) in gl_t.iter().zip(&gl_w) {
                let rho = r * t;
                for a in 0..cfg.angular {
                    let th = 2.0 * PI * (a as f64 + 0.5) / cfg.angular as f64;
                    let z = x[j] + C::from_polar(rho, th);
                    interior.push(z);
                    owner.push(j);
                    omega.push(r * w * rho * (2.0 * PI / cfg.angular as f64) * round_sigma(z.re, z.im).exp());
                }
            }
            let bstart = boundary.len();
            for a in 0..cfg.boundary {
                let th = 2.0 * PI * a as f64 / cfg.boundary as f64;
                let z = x[j] + C::from_polar(r, th);
                boundary.push(z);
                let dzbar = C::new(0.0, -r) * C::from_polar(1.0, -th) * (2.0 * PI / cfg.boundary as f64);
                bweight.push(C::new(0.0, 0.5) * round_sigma(z.re, z.im).exp() * dzbar);
            }
            patches.push(Patch { j, range: (start, interior.len()), brange: (bstart, boundary.len()) });
        }
    }
    for z in interior.iter().chain(&boundary) {
        surf.check_point(*z)?;
    }
    let vals = PointMatrix::at_points(b, &interior);
    let der = PointMatrix::derivatives(b, &interior);
    let [d_re, d_im, _, _] = der;
    let n_interior = interior.len();
    let mut dc1 = vec![zero(); n_interior];
    let mut sym = vec![zero(); n_interior];
    let mut oth = vec![zero(); n_interior];
    for j in 0..nj {
        // ∂₁C(x_j, z) = Σ s_n² ∂e_n(x_j) e_n(z).
        let c1_re = vals.synthesize(&dcoef[j].0, 1);
        let c1_im = vals.synthesize(&dcoef[j].1, 1);
        let c1: Vec<C> = c1_re.into_iter().zip(c1_im).map(|(a, b)| C::new(a, b)).collect();
        // ∂_zC(z, x_j) at every interior node.
        let dzc = synth_complex(&d_re, &d_im, &ecoef[j]);
        for q in 0..n_interior {
            if owner[q] == j {
                dc1[q] = c1[q];
                sym[q] = c1[q] + dzc[q];
            } else {
                oth[q] += alpha[j] * spec.gamma * dzc[q];
            }
        }
    }
    let dsig: Vec<C> = interior.iter().map(|z| round_sigma_derivatives(*z).0).collect();
    let mut values = PointMatrix::at_points(b, &interior.iter().chain(&boundary).copied().collect::<Vec<_>>());
    values.scale_modes(s);
    let (mut dh_re, mut dh_im) = (d_re, d_im);
    dh_re.scale_modes(&s2);
    dh_im.scale_modes(&s2);
    let [mut gr, mut gi, _, _] = gx;
    gr.scale_modes(s);
    gi.scale_modes(s);
    let mut lhs_points = cfg.z_points.clone();
    let contour = cfg.contour.map(|c| {
        for k in 0..c.nodes {
            lhs_points.push(x[c.insertion] + C::from_polar(c.radius, 2.0 * PI * k as f64 / c.nodes as f64));
        }
        (c.insertion, c.radius, c.nodes)
    });
    let se = SeFieldOp::new(b, s, spec.q(), &lhs_points)?;
    Ok(WardPlan {
        nj,
        alpha,
        delta,
        x,
        dsig_x,
        gauss,
        dc1_quad,
        patches,
        omega,
        dc1,
        sym,
        oth,
        dsig,
        bweight,
        n_interior,
        values,
        dh: [dh_re, dh_im],
        grad_x: [gr, gi],
        se,
        nz: cfg.z_points.len(),
        contour,
    })
}

fn validate_ward(spec: &CorrelatorSpec, model: &FieldModel, cfg: &WardConfig, samples: usize) -> Result<()> {
    let b = model.basis();
    if b.kind() != SurfaceKind::Sphere || spec.kind != SurfaceKind::Sphere {
        return Err(Error::UnsupportedSurface { op: "ward_n1_check", surface: b.kind().name() });
    }
    if model.has_weyl() {
        return Err(Error::Config("the Ward check uses the round reference metric".into()));
    }
    if samples < 2 {
        return Err(Error::Config("at least two samples are needed".into()));
    }
    spec.validate(b)?;
    if cfg.radii.is_empty() || cfg.radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config("excision radii must be positive".into()));
    }
    if cfg.radial < 2 || cfg.angular < 8 || cfg.boundary < 8 {
        return Err(Error::Config("patch quadrature needs radial ≥ 2, angular ≥ 8, boundary ≥ 8".into()));
    }
    let s = b.surface();
    let min = 8.0 * s.grid_spacing();
    let rmax = cfg.radii.iter().fold(0.0f64, |a, r| a.max(*r));
    let ins = &spec.insertions;
    for (i, a) in ins.iter().enumerate() {
        for c in ins.iter().skip(i + 1) {
            if (a.point - c.point).norm() <= rmax {
                return Err(Error::Config(format!(
                    "excision radius {rmax} reaches from {} to {}",
                    a.point, c.point
                )));
            }
        }
    }
    let mut eval: Vec<C> = cfg.z_points.clone();
    if let Some(c) = cfg.contour {
        if c.insertion >= ins.len() || c.nodes < 8 || !(c.radius > 0.0) {
            return Err(Error::Config("contour needs a valid insertion index, radius > 0 and ≥ 8 nodes".into()));
        }
        let x0 = spec.canonical().insertions[c.insertion].point;
        for (k, other) in spec.insertions.iter().enumerate() {
            if other.point != x0 && (other.point - x0).norm() <= c.radius {
                return Err(Error::Config(format!("contour around {x0} encloses insertion {k}")));
            }
        }
        eval.extend((0..c.nodes).map(|k| x0 + C::from_polar(c.radius, 2.0 * PI * k as f64 / c.nodes as f64)));
    }
    for z in &eval {
        s.check_point(*z)?;
        for a in ins {
            let d = s.distance(*z, a.point);
            if d < min {
                return Err(Error::Config(format!(
                    "evaluation point {z} is {d:.4} from insertion {}, below 8 grid spacings ({min:.4})",
                    a.point
                )));
            }
        }
    }
    Ok(())
}

/// Checks `⟨𝒯(z) ΠV⟩ = Σ_j [Δ_j/(z−x_j)² + (z−x_j)^{-1} ∂_{x_j}] ⟨ΠV⟩` on the
/// sphere. The `x_j`-derivatives come from Gaussian integration by parts; the
/// potential integral near each `x_j` is excised at every radius of the
/// config and replaced by its ball identity (field-gradient flux through the
/// circle, the other insertions and the chaos self-interaction).
pub fn ward_n1_check(
    spec: &CorrelatorSpec,
    model: &FieldModel,
    cfg: &WardConfig,
    samples: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<WardReport> {
    validate_ward(spec, model, cfg, samples)?;
    let spec = spec.canonical();
    let p = model.prepare(&spec)?;
    let plan = ward_plan(&spec, model, cfg)?;
    let b = model.basis();
    let m = b.len();
    let g = spec.gamma;
    let s = p.s;
    let nr = cfg.radii.len();
    let nj = plan.nj;
    let quad = model.quadrature();
    let qmat = quad
        .matrix()
        .ok_or_else(|| Error::Config("the Ward check needs a matrix quadrature".into()))?;
    let c0 = -0.5 * g * g * model.variance() + 0.5 * g * g * model.remainder();
    let has_contour = plan.contour.is_some();
    let nlhs = plan.se.points().len();
    let width = plan.nz + usize::from(has_contour) + nj * (2 + nr);
    let off_full = plan.nz + usize::from(has_contour);
    let off_pv = off_full + nj;
    let off_direct = off_pv + nj * nr;

    let chunks: Vec<(Vec<f64>, Vec<C>)> = par::map_chunks(samples, CHUNK, par::default_workers(), |r| {
        let batch = model.batch(seed, r.start as u64, r.len());
        let len = r.len();
        let mut rows = batch.all_coeffs().to_vec();
        if sampler == Sampler::Girsanov {
            for row in rows.chunks_exact_mut(m) {
                row.iter_mut().zip(&p.l).for_each(|(a, l)| *a += l);
            }
        }
        let mut lw = Vec::with_capacity(len);
        let mut dens = Vec::with_capacity(len * quad.len());
        let mut log_m = Vec::with_capacity(len);
        for i in 0..len {
            let (w, lm) = model.log_weight(&p, &batch, i, sampler);
            lw.push(w);
            log_m.push(lm);
            let xn = batch.nodes_of(i);
            for k in 0..xn.len() {
                let xv = xn[k] + if sampler == Sampler::Girsanov { p.h[k] } else { 0.0 };
                dens.push((g * xv + p.node_offset[k] - lm).exp());
            }
        }
        let rho_hat = qmat.project(&dens, len);
        let dh_re = plan.dh[0].synthesize(&rho_hat, len);
        let dh_im = plan.dh[1].synthesize(&rho_hat, len);
        let xt = plan.values.synthesize(&rows, len);
        let gr = plan.grad_x[0].synthesize(&rows, len);
        let gi = plan.grad_x[1].synthesize(&rows, len);
        let t = plan.se.evaluate(&rows, len);
        let nq = quad.len();
        let npatch = plan.values.rows();
        let mut out = Vec::with_capacity(len * width);
        for i in 0..len {
            let tv = &t[i * nlhs..(i + 1) * nlhs];
            out.extend_from_slice(&tv[..plan.nz]);
            if let Some((c, _, nodes)) = plan.contour {
                let vals = &tv[plan.nz..];
                let acc: C = (0..nodes).map(|k| (plan.se.points()[plan.nz + k] - plan.x[c]).powi(2) * vals[k]).sum();
                out.push(acc / nodes as f64);
            }
            let pd = &dens[i * nq..(i + 1) * nq];
            let full: Vec<C> = (0..nj).map(|j| s * cdot_c(&plan.dc1_quad[j], pd)).collect();
            let y = |j: usize, integral: C| plan.alpha[j] * (plan.gauss[j] - g * integral) + plan.delta[j] * plan.dsig_x[j];
            for j in 0..nj {
                out.push(y(j, full[j]));
            }
            let f = |q: usize| s * (g * xt[i * npatch + q] + c0 - log_m[i]).exp();
            let mut pv = vec![zero(); nj * nr];
            for (pi, patch) in plan.patches.iter().enumerate() {
                let (j, ri) = (patch.j, pi % nr);
                let (mut i_in, mut k1, mut sflux, mut oth, mut dbl) = (zero(), zero(), zero(), zero(), zero());
                for q in patch.range.0..patch.range.1 {
                    let fw = plan.omega[q] * f(q);
                    let dh = C::new(dh_re[i * plan.n_interior + q], dh_im[i * plan.n_interior + q]);
                    i_in += fw * plan.dc1[q];
                    k1 += fw * plan.sym[q];
                    sflux -= fw * plan.dsig[q];
                    oth += fw * plan.oth[q];
                    dbl += fw * dh;
                }
                for q in patch.brange.0..patch.brange.1 {
                    sflux += plan.bweight[q] * f(plan.n_interior + q);
                }
                let jball = (sflux - oth + g * g * (s + 1.0) * dbl) / (plan.alpha[j] * g);
                pv[j * nr + ri] = y(j, full[j] - i_in + (k1 - jball));
            }
            out.extend_from_slice(&pv);
            for j in 0..nj {
                let grad = C::new(gr[i * nj + j], gi[i * nj + j]);
                out.push(plan.alpha[j] * grad + plan.delta[j] * plan.dsig_x[j]);
            }
        }
        vec![(lw, out)]
    });
    let lw: Vec<f64> = chunks.iter().flat_map(|c| c.0.iter().copied()).collect();
    let rows: Vec<C> = chunks.into_iter().flat_map(|c| c.1).collect();
    if let Some(i) = lw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { sample: i });
    }
    if let Some(i) = rows.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::NonFinite { sample: i / width });
    }
    let mx = lw.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let w: Vec<f64> = lw.iter().map(|l| (l - mx).exp()).collect();
    let ess = {
        let s1 = pairwise_sum(&w);
        s1 * s1 / pairwise_sum(&w.iter().map(|x| x * x).collect::<Vec<_>>())
    };
    let col = |k: usize| -> Vec<C> { (0..samples).map(|i| rows[i * width + k]).collect() };
    let est = |v: &[C]| weighted_mean(&w, v);
    let rhs_of = |z: C, off: usize| -> Vec<C> {
        (0..samples)
            .map(|i| {
                (0..nj)
                    .map(|j| {
                        let d = z - plan.x[j];
                        plan.delta[j] / (d * d) + rows[i * width + off + j] / d
                    })
                    .sum()
            })
            .collect()
    };
    let finest = off_pv + (nr - 1);
    let mut points = Vec::with_capacity(plan.nz);
    for (l, &z) in cfg.z_points.iter().enumerate() {
        let lhs_v = col(l);
        // PV derivatives at the smallest radius are stored with stride `nr`.
        let rhs_v: Vec<C> = (0..samples)
            .map(|i| {
                (0..nj)
                    .map(|j| {
                        let d = z - plan.x[j];
                        plan.delta[j] / (d * d) + rows[i * width + finest + j * nr] / d
                    })
                    .sum()
            })
            .collect();
        let diff: Vec<C> = lhs_v.iter().zip(&rhs_v).map(|(a, b)| a - b).collect();
        let (lhs, rhs, difference) = (est(&lhs_v), est(&rhs_v), est(&diff));
        let scale = rhs.value.norm();
        points.push(WardPoint {
            z,
            lhs,
            rhs,
            rhs_direct: est(&rhs_of(z, off_direct)),
            difference,
            rel_dev: difference.value.norm() / scale,
            rel_err: difference.stderr / scale,
        });
    }
    let mut pv = Vec::with_capacity(nr);
    let mut pv_consistent = true;
    for (ri, &radius) in cfg.radii.iter().enumerate() {
        let derivatives = (0..nj).map(|j| est(&col(off_pv + j * nr + ri))).collect();
        let mut z_next = Vec::new();
        if ri + 1 < nr {
            for j in 0..nj {
                let a = col(off_pv + j * nr + ri);
                let c = col(off_pv + j * nr + ri + 1);
                let d: Vec<C> = a.iter().zip(&c).map(|(a, c)| a - c).collect();
                let zs = est(&d).z_score(zero());
                pv_consistent &= zs < 3.0;
                z_next.push(zs);
            }
        }
        pv.push(PvEntry { radius, derivatives, z_next });
    }
    let derivatives = (0..nj)
        .map(|j| {
            let a = col(off_full + j);
            let c = col(off_direct + j);
            let d: Vec<C> = a.iter().zip(&c).map(|(a, c)| a - c).collect();
            DerivativeEntry { point: plan.x[j], ibp: est(&a), direct: est(&c), z_score: est(&d).z_score(zero()) }
        })
        .collect();
    let contour = plan.contour.map(|(c, radius, _)| {
        let measured = est(&col(plan.nz));
        let predicted = plan.delta[c];
        ContourEstimate {
            insertion: plan.x[c],
            radius,
            measured,
            predicted,
            rel_dev: (measured.value - predicted).norm() / predicted.abs(),
        }
    });
    let global = (0..3)
        .map(|k| {
            let v: Vec<C> = (0..samples)
                .map(|i| {
                    (0..nj)
                        .map(|j| {
                            let (x, dj) = (plan.x[j], rows[i * width + off_full + j]);
                            match k {
                                0 => dj,
                                1 => x * dj + plan.delta[j],
                                _ => x * x * dj + 2.0 * x * plan.delta[j],
                            }
                        })
                        .sum()
                })
                .collect();
            est(&v)
        })
        .collect();
    let max_rel_dev = points.iter().map(|p| p.rel_dev).fold(0.0, f64::max);
    Ok(WardReport {
        points,
        pv,
        pv_consistent,
        derivatives,
        contour,
        global,
        max_rel_dev,
        samples,
        seed,
        ess,
        regularization: RegularizationRecord::of(model, sampler),
    })
}

fn cdot_c(a: &[C], v: &[f64]) -> C {
    let re: Vec<f64> = a.iter().zip(v).map(|(a, v)| a.re * v).collect();
    let im: Vec<f64> = a.iter().zip(v).map(|(a, v)| a.im * v).collect();
    C::new(pairwise_sum(&re), pairwise_sum(&im))
}

/// `Estimate` pair of real and imaginary parts.
pub fn split(e: &ComplexEstimate) -> (Estimate, Estimate) {
    let s = e.stderr / std::f64::consts::SQRT_2;
    (Estimate::new(e.value.re, s), Estimate::new(e.value.im, s))
}
