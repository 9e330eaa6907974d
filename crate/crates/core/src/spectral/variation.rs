//! First and second variations of the Green function under inverse-metric
//! perturbations `g^{ab} ↦ g^{ab} + ε f^{ab}`.
//!
//! First variation (reference metric, exact kernel):
//!
//! `δG(x,y) = −(1/2π) ∫ f₀^{ab} ∂_a G(x,·) ∂_b G(·,y) dv + (1/2v) ∫ tr_g f (G(x,·) + G(·,y)) dv`
//!
//! where `f₀` is the traceless part. The kernel is singular at `x` and `y`;
//! a smooth partition of unity isolates two polar patches (integrated with
//! `r = R s²` and Gauss–Legendre panels), and the smooth remainder is
//! integrated on a fine node grid.

use super::kernel::{exact_green_jet, torus_green_jet};
use super::SpectralBasis;
use crate::error::{Error, Result};
use crate::geometry::{
    make_surface, round_sigma, smooth_step, Chart, LocalPoint, Surface, SurfaceKind, TensorField2,
};
use crate::jet::Jet2;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Quadrature controls for [`green_variation`].
#[derive(Debug, Clone, Copy)]
pub struct VariationOptions {
    /// Largest polar patch radius (chart units).
    pub max_patch_radius: f64,
    /// Angular trapezoid points in a patch.
    pub angular: usize,
    /// Gauss–Legendre nodes per radial panel.
    pub radial: usize,
    /// Smallest fine-grid size for the remainder.
    pub min_grid: usize,
    /// Largest fine-grid size for the remainder.
    pub max_grid: usize,
}

impl Default for VariationOptions {
    fn default() -> Self {
        Self { max_patch_radius: 0.25, angular: 128, radial: 16, min_grid: 256, max_grid: 2048 }
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        xs.push(0.5 * (1.0 - t));
        ws.push(1.0 / ((1.0 - t * t) * dp * dp));
    }
    (xs, ws)
}

/// Patch profile: 1 on `r ≤ R/2`, 0 on `r ≥ R`.
fn profile(r: f64, radius: f64) -> f64 {
    1.0 - smooth_step(4.0 * r / radius - 3.0)
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    chart: Chart,
    center: Complex64,
    radius: f64,
}

impl Patch {
    fn around(kind: SurfaceKind, p: Complex64, radius: f64) -> Self {
        match kind {
            SurfaceKind::Sphere if p.norm() > 1.0 => {
                Patch { chart: Chart::Secondary, center: 1.0 / p.conj(), radius }
            }
            _ => Patch { chart: Chart::Primary, center: p, radius },
        }
    }

    /// Partition weight at a node given in local coordinates.
    fn weight(&self, kind: SurfaceKind, lp: &LocalPoint) -> f64 {
        let w = if lp.chart == self.chart { lp.w } else { 1.0 / lp.w.conj() };
        let d = match kind {
            SurfaceKind::Torus => crate::geometry::torus_displacement(w, self.center),
            SurfaceKind::Sphere => w - self.center,
        };
        profile(d.norm(), self.radius)
    }
}

fn sigma_at(kind: SurfaceKind, lp: &LocalPoint) -> f64 {
    match kind {
        SurfaceKind::Torus => 0.0,
        SurfaceKind::Sphere => round_sigma(lp.w.re, lp.w.im),
    }
}

fn green_jet(kind: SurfaceKind, x: Complex64, lp: &LocalPoint) -> Jet2 {
    match kind {
        SurfaceKind::Torus => torus_green_jet(lp.w - x),
        SurfaceKind::Sphere => exact_green_jet(kind, x, lp),
    }
}

/// Integrand density with respect to `dv_g`.
fn density(kind: SurfaceKind, volume: f64, f: &TensorField2, x: Complex64, y: Complex64, lp: &LocalPoint) -> f64 {
    let gx = green_jet(kind, x, lp);
    let gy = green_jet(kind, y, lp);
    let (re, im, tr) = f.local_jets(kind, lp);
    let (re, im, tr) = (re.v, im.v, tr.v);
    let grad = 0.5 * re * (gx.dx * gy.dx - gx.dy * gy.dy) + 0.5 * im * (gx.dx * gy.dy + gx.dy * gy.dx);
    let mut out = -grad / (2.0 * PI);
    if tr != 0.0 {
        let sigma = sigma_at(kind, lp);
        out += sigma.exp() * tr * (gx.v + gy.v) / (2.0 * volume);
    }
    out
}

fn fine_grid(kind: SurfaceKind, radius: f64, opts: &VariationOptions) -> Result<Surface> {
    let cells_per_unit = match kind {
        SurfaceKind::Torus => 32.0 / radius,
        SurfaceKind::Sphere => 128.0 / radius,
    };
    let n = (cells_per_unit.ceil() as usize).next_power_of_two().max(opts.min_grid);
    if n > opts.max_grid {
        return Err(Error::Resolution { scale: radius, limit: cells_per_unit / opts.max_grid as f64 * radius });
    }
    make_surface(kind, n)
}

/// `∂_ε|₀ G_{g+εf}(x, y)` for the reference metric of `b`'s surface.
pub fn green_variation(b: &SpectralBasis, f: &TensorField2, x: Complex64, y: Complex64) -> Result<f64> {
    green_variation_with(b.surface(), f, x, y, &VariationOptions::default())
}

pub fn green_variation_with(
    s: &Surface,
    f: &TensorField2,
    x: Complex64,
    y: Complex64,
    opts: &VariationOptions,
) -> Result<f64> {
    let kind = s.kind();
    if s.weyl().is_some() {
        return Err(Error::UnsupportedSurface {
            op: "green_variation (exact kernel needs the reference metric)",
            surface: "Weyl-transformed surface",
        });
    }
    s.check_point(x)?;
    s.check_point(y)?;
    let dist = s.distance(x, y);
    if dist < 1e-12 {
        return Err(Error::Diagonal);
    }
    if f.is_zero() {
        return Ok(0.0);
    }
    let volume = match kind {
        SurfaceKind::Torus => 1.0,
        SurfaceKind::Sphere => 4.0 * PI,
    };
    let radius = match kind {
        SurfaceKind::Torus => opts.max_patch_radius.min(dist / 3.0),
        SurfaceKind::Sphere => opts.max_patch_radius.min(dist / 6.0),
    };
    let patches = [Patch::around(kind, x, radius), Patch::around(kind, y, radius)];

    // remainder
    let grid = fine_grid(kind, radius, opts)?;
    let terms: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|nd| {
            let w = 1.0 - patches[0].weight(kind, &nd.local) - patches[1].weight(kind, &nd.local);
            if w <= 0.0 {
                0.0
            } else {
                nd.weight * w * density(kind, volume, f, x, y, &nd.local)
            }
        })
        .collect();
    let mut total = crate::stats::pairwise_sum(&terms);

    // polar patches
    let (gs, gw) = gauss_legendre(opts.radial);
    let s_split = 0.5f64.sqrt();
    let panels = [(0.0, s_split * 0.5), (s_split * 0.5, s_split), (s_split, 0.8), (0.8, 0.9), (0.9, 1.0)];
    for p in &patches {
        let mut acc = Vec::new();
        for &(s0, s1) in &panels {
            for (sn, sw) in gs.iter().zip(&gw) {
                let sv = s0 + (s1 - s0) * sn;
                let r = p.radius * sv * sv;
                let dr = 2.0 * p.radius * sv * (s1 - s0) * sw;
                let rho = profile(r, p.radius);
                if rho == 0.0 {
                    continue;
                }
                let mut ring = 0.0;
                for j in 0..opts.angular {
                    let th = 2.0 * PI * (j as f64 + 0.5) / opts.angular as f64;
                    let w = p.center + Complex64::from_polar(r, th);
                    let lp = LocalPoint { chart: p.chart, w };
                    let sigma = sigma_at(kind, &lp);
                    ring += sigma.exp() * density(kind, volume, f, x, y, &lp);
                }
                acc.push(ring * 2.0 * PI / opts.angular as f64 * rho * r * dr);
            }
        }
        total += crate::stats::pairwise_sum(&acc);
    }
    Ok(total)
}

/// Mixed second variation `∂²_{ε₁ε₂} G_{g+ε₁f₁+ε₂f₂}(x, y)` for traceless
/// `f₁`, `f₂` with disjoint supports avoiding `x` and `y`:
///
/// `(1/(2π)²) ∬ f₁^{ab}(z) f₂^{cd}(w) [∂_cG(x,w) ∂_{w_d}∂_{z_a}G(w,z) ∂_bG(z,y)
///                                   + ∂_aG(x,z) ∂_{z_b}∂_{w_c}G(z,w) ∂_dG(w,y)] dv(z) dv(w)`.
///
/// Quadrature on a primary-chart grid of size `n` (torus: the unit square;
/// sphere: the box `[-2, 2]²`, so the supports must lie inside it).
pub fn green_second_variation(
    s: &Surface,
    f1: &TensorField2,
    f2: &TensorField2,
    x: Complex64,
    y: Complex64,
    n: usize,
) -> Result<f64> {
    let kind = s.kind();
    if s.distance(x, y) < 1e-12 {
        return Err(Error::Diagonal);
    }
    if !f1.zzbar.is_zero() || !f2.zzbar.is_zero() {
        return Err(Error::Domain("second variation is implemented for traceless perturbations".into()));
    }
    let (lo, span) = match kind {
        SurfaceKind::Torus => (Complex64::new(0.0, 0.0), 1.0),
        SurfaceKind::Sphere => (Complex64::new(-2.0, -2.0), 4.0),
    };
    let h = span / n as f64;
    struct Pt {
        z: Complex64,
        wt: f64,
        /// `f^{ab}∂_bG(·, y)` and `f^{ab}∂_aG(x, ·)` (primary chart).
        to_y: [f64; 2],
        to_x: [f64; 2],
    }
    let mut pts1 = Vec::new();
    let mut pts2 = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let z = lo + Complex64::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            let (a1, _) = f1.components(kind, z);
            let (a2, _) = f2.components(kind, z);
            if a1.norm() > 0.0 && a2.norm() > 0.0 {
                return Err(Error::Domain("perturbation supports overlap".into()));
            }
            for (a, pts) in [(a1, &mut pts1), (a2, &mut pts2)] {
                if a.norm() == 0.0 {
                    continue;
                }
                if s.distance(z, x) < 2.0 * h || s.distance(z, y) < 2.0 * h {
                    return Err(Error::Domain("perturbation support contains an evaluation point".into()));
                }
                let sigma = match kind {
                    SurfaceKind::Torus => 0.0,
                    SurfaceKind::Sphere => round_sigma(z.re, z.im),
                };
                let lp = LocalPoint::primary(z);
                let gx = green_jet(kind, x, &lp);
                let gy = green_jet(kind, y, &lp);
                // f₀ Cartesian: xx = ½Re, yy = −½Re, xy = ½Im
                let (fxx, fxy) = (0.5 * a.re, 0.5 * a.im);
                let apply = |v: [f64; 2]| [fxx * v[0] + fxy * v[1], fxy * v[0] - fxx * v[1]];
                pts.push(Pt {
                    z,
                    wt: h * h * sigma.exp(),
                    to_y: apply([gy.dx, gy.dy]),
                    to_x: apply([gx.dx, gx.dy]),
                });
            }
        }
    }
    let rows: Vec<f64> = pts2
        .iter()
        .map(|w| {
            let mut acc = 0.0;
            for z in &pts1 {
                let m = mixed_hessian(kind, w.z, z.z);
                // P(w)ᵀ M(w,z) Q(z) + S(w)ᵀ M(w,z) R(z)
                let q = [m[0][0] * z.to_y[0] + m[0][1] * z.to_y[1], m[1][0] * z.to_y[0] + m[1][1] * z.to_y[1]];
                let r = [m[0][0] * z.to_x[0] + m[0][1] * z.to_x[1], m[1][0] * z.to_x[0] + m[1][1] * z.to_x[1]];
                acc += z.wt * (w.to_x[0] * q[0] + w.to_x[1] * q[1] + w.to_y[0] * r[0] + w.to_y[1] * r[1]);
            }
            w.wt * acc
        })
        .collect();
    Ok(crate::stats::pairwise_sum(&rows) / (4.0 * PI * PI))
}

/// `M_{da} = ∂_{w_d} ∂_{z_a} G(w, z)` (primary chart).
fn mixed_hessian(kind: SurfaceKind, w: Complex64, z: Complex64) -> [[f64; 2]; 2] {
    match kind {
        SurfaceKind::Torus => {
            let j = torus_green_jet(z - w);
            [[-j.dxx, -j.dxy], [-j.dxy, -j.dyy]]
        }
        SurfaceKind::Sphere => {
            // −Hess_d(−ln|d|) with d = w − z
            let d = w - z;
            let r2 = d.norm_sqr();
            let r4 = r2 * r2;
            [
                [(r2 - 2.0 * d.re * d.re) / r4, -2.0 * d.re * d.im / r4],
                [-2.0 * d.re * d.im / r4, (r2 - 2.0 * d.im * d.im) / r4],
            ]
        }
    }
}
