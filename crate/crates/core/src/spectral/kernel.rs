//! Closed-form zero-mean Green functions.
//!
//! Torus (unit square, `τ = i`):
//! `G(d) = −ln|θ₁(πd)| + π(Im d)² + S − π/12`, `S = Σ_{n≥1} ln(1 − e^{−2πn})`.
//!
//! Sphere (round, area `4π`):
//! `G(x, z) = −½ ln(1 − p(x)·p(z)) + ½(ln 2 − 1)`
//!        `= −ln|x − z| + ½ln(1+|x|²) + ½ln(1+|z|²) − ½` in the primary chart.

use crate::geometry::{torus_displacement, Chart, LocalPoint, SurfaceKind};
use crate::jet::Jet2;
use num_complex::Complex64;
use std::f64::consts::PI;

const THETA_TERMS: usize = 7;

fn theta_sum() -> f64 {
    (1..60).map(|n| (1.0 - (-2.0 * PI * n as f64).exp()).ln()).sum()
}

/// Diagonal remainder `m = lim (G(x,y) + ln d(x,y))` on the unit torus.
pub fn torus_diagonal_constant() -> f64 {
    -(2.0 * PI).ln() + PI / 6.0 - 2.0 * theta_sum()
}

/// Diagonal remainder on the round unit sphere.
pub fn sphere_diagonal_constant() -> f64 {
    std::f64::consts::LN_2 - 0.5
}

/// `θ₁(w), θ₁'(w), θ₁''(w)` for nome `q = e^{−π}`.
fn theta1(w: Complex64) -> (Complex64, Complex64, Complex64) {
    let mut t0 = Complex64::new(0.0, 0.0);
    let mut t1 = Complex64::new(0.0, 0.0);
    let mut t2 = Complex64::new(0.0, 0.0);
    for n in 0..THETA_TERMS {
        let nf = n as f64;
        let c = 2.0 * (-PI * (nf + 0.5) * (nf + 0.5)).exp() * if n % 2 == 0 { 1.0 } else { -1.0 };
        let k = 2.0 * nf + 1.0;
        let (s, co) = ((k * w).sin(), (k * w).cos());
        t0 += c * s;
        t1 += c * k * co;
        t2 -= c * k * k * s;
    }
    (t0, t1, t2)
}

/// Value, `∂_d G` and `∂_d² G` of the torus Green function at displacement `d`.
/// (`∂_d∂_d̄ G = π/2` away from the lattice.)
pub fn torus_green_derivatives(d: Complex64) -> (f64, Complex64, Complex64) {
    let d = torus_displacement(d, Complex64::new(0.0, 0.0));
    let (t0, t1, t2) = theta1(PI * d);
    let y = d.im;
    let g = -t0.norm().ln() + PI * y * y + theta_sum() - PI / 12.0;
    let r1 = t1 / t0;
    let dg = -0.5 * PI * r1 - Complex64::new(0.0, PI * y);
    let d2g = -0.5 * PI * PI * (t2 / t0 - r1 * r1) - Complex64::new(0.5 * PI, 0.0);
    (g, dg, d2g)
}

pub fn torus_green(d: Complex64) -> f64 {
    torus_green_derivatives(d).0
}

/// Torus Green function as a jet in the displacement.
pub fn torus_green_jet(d: Complex64) -> Jet2 {
    let (g, dg, d2g) = torus_green_derivatives(d);
    let lap4 = 2.0 * (0.5 * PI); // 2∂∂̄G
    Jet2 {
        v: g,
        dx: 2.0 * dg.re,
        dy: -2.0 * dg.im,
        dxx: 2.0 * d2g.re + lap4,
        dyy: lap4 - 2.0 * d2g.re,
        dxy: -2.0 * d2g.im,
    }
}

/// Sphere Green function between primary-chart points.
pub fn sphere_green(x: Complex64, z: Complex64) -> f64 {
    -(x - z).norm().ln() + 0.5 * (1.0 + x.norm_sqr()).ln() + 0.5 * (1.0 + z.norm_sqr()).ln() - 0.5
}

/// Sphere Green function in terms of `t = p(x)·p(z)`.
pub fn sphere_green_t(t: f64) -> f64 {
    -0.5 * (1.0 - t).ln() + 0.5 * (std::f64::consts::LN_2 - 1.0)
}

/// `G(x, ·)` as a jet in the local coordinates of `lp` (sphere).
pub fn sphere_green_local_jet(x: Complex64, lp: &LocalPoint) -> Jet2 {
    let (u, v) = (Jet2::var_x(lp.w.re), Jet2::var_y(lp.w.im));
    let cx = 0.5 * (1.0 + x.norm_sqr()).ln() - 0.5;
    let r2 = u * u + v * v;
    let q = match lp.chart {
        Chart::Primary => {
            let (a, b) = (u + (-x.re), v + (-x.im));
            a * a + b * b
        }
        Chart::Secondary => {
            // 1 − x̄w
            let (a, b) = (x.re, x.im);
            let re = (u.scale(-a) - v.scale(b)) + 1.0;
            let im = (v.scale(a) - u.scale(b)).scale(-1.0);
            re * re + im * im
        }
    };
    q.ln().scale(-0.5) + (r2 + 1.0).ln().scale(0.5) + cx
}

/// Exact zero-mean Green function between primary-chart points.
pub fn exact_green(kind: SurfaceKind, x: Complex64, y: Complex64) -> f64 {
    match kind {
        SurfaceKind::Torus => torus_green(y - x),
        SurfaceKind::Sphere => sphere_green(x, y),
    }
}

/// `G(x, ·)` as a jet in the local coordinates of `lp`.
pub fn exact_green_jet(kind: SurfaceKind, x: Complex64, lp: &LocalPoint) -> Jet2 {
    match kind {
        SurfaceKind::Torus => torus_green_jet(lp.w - x),
        SurfaceKind::Sphere => sphere_green_local_jet(x, lp),
    }
}

/// `∂_x G(x, z)` with respect to the first argument, holomorphic part
/// (primary chart). Sphere: `−1/(2(x−z)) + x̄/(2(1+|x|²))`.
pub fn exact_green_dx1(kind: SurfaceKind, x: Complex64, z: Complex64) -> Complex64 {
    match kind {
        SurfaceKind::Torus => torus_green_derivatives(x - z).1,
        SurfaceKind::Sphere => -0.5 / (x - z) + 0.5 * x.conj() / (1.0 + x.norm_sqr()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::legendre;

    #[test]
    fn torus_matches_fourier_series() {
        // Direct lattice sum over the square |k|∞ ≤ 200.
        let d = Complex64::new(0.31, -0.17);
        let mut s = 0.0;
        let k = 200i32;
        for kx in -k..=k {
            for ky in -k..=k {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let k2 = (kx * kx + ky * ky) as f64;
                s += (2.0 * PI * (kx as f64 * d.re + ky as f64 * d.im)).cos() / (2.0 * PI * k2);
            }
        }
        assert!((s - torus_green(d)).abs() < 1e-5, "{s} vs {}", torus_green(d));
    }

    #[test]
    fn torus_is_periodic_and_even() {
        let d = Complex64::new(0.2, 0.37);
        let g = torus_green(d);
        assert!((torus_green(d + Complex64::new(1.0, 0.0)) - g).abs() < 1e-12);
        assert!((torus_green(d + Complex64::new(0.0, 1.0)) - g).abs() < 1e-12);
        assert!((torus_green(-d) - g).abs() < 1e-12);
    }

    #[test]
    fn torus_jet_matches_differences() {
        let d = Complex64::new(0.23, 0.11);
        let j = torus_green_jet(d);
        let h = 1e-5;
        let g = |a: f64, b: f64| torus_green(d + Complex64::new(a, b));
        let dx = (g(h, 0.0) - g(-h, 0.0)) / (2.0 * h);
        let dy = (g(0.0, h) - g(0.0, -h)) / (2.0 * h);
        let dxx = (g(h, 0.0) - 2.0 * g(0.0, 0.0) + g(-h, 0.0)) / (h * h);
        let dxy = (g(h, h) - g(h, -h) - g(-h, h) + g(-h, -h)) / (4.0 * h * h);
        assert!((j.dx - dx).abs() < 1e-7);
        assert!((j.dy - dy).abs() < 1e-7);
        assert!((j.dxx - dxx).abs() < 1e-3);
        assert!((j.dxy - dxy).abs() < 1e-3);
        assert!((j.laplacian() - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn torus_diagonal_limit() {
        let r = 1e-4;
        let g = torus_green(Complex64::from_polar(r, 0.7));
        assert!((g + r.ln() - torus_diagonal_constant()).abs() < 1e-6);
    }

    #[test]
    fn sphere_forms_agree() {
        let (x, z) = (Complex64::new(0.3, -0.4), Complex64::new(-1.1, 0.6));
        let p = crate::geometry::sphere_point(x);
        let q = crate::geometry::sphere_point(z);
        let t = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
        assert!((sphere_green(x, z) - sphere_green_t(t)).abs() < 1e-13);
        // Legendre series Σ (2l+1)/(2l(l+1)) P_l(t)
        let pl = legendre(20000, t);
        let s: f64 = (1..=20000).map(|l| (2 * l + 1) as f64 / (2.0 * (l * (l + 1)) as f64) * pl[l]).sum();
        assert!((s - sphere_green_t(t)).abs() < 1e-3);
        // secondary chart
        let w = 1.0 / z.conj();
        let lp = LocalPoint { chart: Chart::Secondary, w };
        assert!((sphere_green_local_jet(x, &lp).v - sphere_green(x, z)).abs() < 1e-13);
        let lp0 = LocalPoint::primary(z);
        assert!((sphere_green_local_jet(x, &lp0).v - sphere_green(x, z)).abs() < 1e-13);
    }

    #[test]
    fn sphere_first_argument_derivative() {
        let (x, z) = (Complex64::new(0.3, -0.4), Complex64::new(-1.1, 0.6));
        let h = 1e-6;
        let gx = (sphere_green(x + h, z) - sphere_green(x - h, z)) / (2.0 * h);
        let gy = (sphere_green(x + Complex64::new(0.0, h), z) - sphere_green(x - Complex64::new(0.0, h), z)) / (2.0 * h);
        let want = Complex64::new(0.5 * gx, -0.5 * gy);
        assert!((exact_green_dx1(SurfaceKind::Sphere, x, z) - want).norm() < 1e-8);
    }
}
