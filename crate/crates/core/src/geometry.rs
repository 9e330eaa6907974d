//! Surfaces, conformal charts, smooth fields and tensor calculus.
//!
//! The torus is the flat unit square `[0,1)²` with `σ ≡ 0`. The sphere is the
//! round unit sphere covered by two stereographic charts: the primary chart
//! `z` and the secondary chart `w = 1/z̄` (an orientation-reversing chart in
//! which the metric has the same form `4|dw|²/(1+|w|²)²`). Quadrature uses the
//! cell midpoints of an `n×n` grid on the box `[-2,2]²` in each chart, glued
//! by a smooth partition of unity `χ(z) + χ(1/z̄) = 1` supported in
//! `1/2 ≤ |z| ≤ 2`.
//!
//! Public points are always primary-chart coordinates.

use crate::error::{Error, Result};
use crate::harmonics;
use crate::jet::{Jet2, Scalar};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Half-width of the chart box on the sphere.
pub const SPHERE_BOX: f64 = 2.0;

/// Insertion and evaluation points on the sphere must satisfy `|z| < CHART_GUARD`.
pub const CHART_GUARD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Sphere,
    Torus,
}

impl SurfaceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SurfaceKind::Sphere => "sphere",
            SurfaceKind::Torus => "torus",
        }
    }

    pub fn euler_characteristic(&self) -> i32 {
        match self {
            SurfaceKind::Sphere => 2,
            SurfaceKind::Torus => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    Primary,
    /// `w = 1/z̄` on the sphere.
    Secondary,
}

/// A point expressed in one chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPoint {
    pub chart: Chart,
    pub w: Complex64,
}

impl LocalPoint {
    pub fn primary(z: Complex64) -> Self {
        Self { chart: Chart::Primary, w: z }
    }

    /// Primary-chart coordinates as jets in the local coordinates.
    pub fn xy_jets(&self) -> (Jet2, Jet2) {
        let (u, v) = (Jet2::var_x(self.w.re), Jet2::var_y(self.w.im));
        match self.chart {
            Chart::Primary => (u, v),
            Chart::Secondary => {
                let inv = (u * u + v * v).recip();
                (u * inv, v * inv)
            }
        }
    }

    pub fn to_primary(&self) -> Complex64 {
        match self.chart {
            Chart::Primary => self.w,
            Chart::Secondary => 1.0 / self.w.conj(),
        }
    }
}

/// One quadrature node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    /// Local chart position.
    pub local: LocalPoint,
    /// Primary-chart coordinate (torus: position in `[0,1)²`).
    pub z: Complex64,
    /// Unit vector on the sphere; `(x, y, 0)` on the torus.
    pub p: [f64; 3],
    /// Volume weight `dv_g` of the cell (already includes the partition of unity).
    pub weight: f64,
    /// Conformal factor in the local chart.
    pub sigma: f64,
}

/// A discretized compact surface with its metric `e^σ|dz|²`.
#[derive(Debug, Clone)]
pub struct Surface {
    kind: SurfaceKind,
    n: usize,
    nodes: Vec<Node>,
    weyl: Option<WeylFactor>,
    volume: f64,
}

/// Stereographic projection of a primary-chart point.
pub fn sphere_point(z: Complex64) -> [f64; 3] {
    let r2 = z.norm_sqr();
    let d = 1.0 / (1.0 + r2);
    [2.0 * z.re * d, 2.0 * z.im * d, (r2 - 1.0) * d]
}

/// Inverse of [`sphere_point`]; the north pole `(0,0,1)` maps to infinity.
pub fn sphere_chart(p: [f64; 3]) -> Complex64 {
    Complex64::new(p[0], p[1]) / (1.0 - p[2])
}

/// Conformal factor of the round metric in a stereographic chart.
pub fn round_sigma<S: Scalar>(x: S, y: S) -> S {
    (S::cst(1.0) + x * x + y * y).ln_().mul_f(-2.0) + S::cst(4.0f64.ln())
}

pub fn smooth_step(u: f64) -> f64 {
    let f = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = f(1.0 + u);
        a / (a + f(1.0 - u))
    }
}

/// Partition of unity for the primary chart: 1 on `|z| ≤ 1/2`, 0 on `|z| ≥ 2`,
/// and `χ(z) + χ(1/z̄) = 1`.
pub fn chart_partition(z: Complex64) -> f64 {
    let r = z.norm();
    if r == 0.0 {
        return 1.0;
    }
    1.0 - smooth_step(r.ln() / std::f64::consts::LN_2)
}

/// Build a surface on an `n×n` grid per chart.
pub fn make_surface(kind: SurfaceKind, n: usize) -> Result<Surface> {
    if n < 16 || !n.is_power_of_two() {
        return Err(Error::Config(format!(
            "grid size must be a power of two and at least 16, got {n}"
        )));
    }
    let nodes = match kind {
        SurfaceKind::Torus => torus_nodes(n),
        SurfaceKind::Sphere => sphere_nodes(n),
    };
    let volume = crate::stats::pairwise_sum(&nodes.iter().map(|x| x.weight).collect::<Vec<_>>());
    Ok(Surface { kind, n, nodes, weyl: None, volume })
}

fn torus_nodes(n: usize) -> Vec<Node> {
    let h = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let z = Complex64::new(ix as f64 * h, iy as f64 * h);
            out.push(Node {
                local: LocalPoint::primary(z),
                z,
                p: [z.re, z.im, 0.0],
                weight: h * h,
                sigma: 0.0,
            });
        }
    }
    out
}

fn sphere_nodes(n: usize) -> Vec<Node> {
    let h = 2.0 * SPHERE_BOX / n as f64;
    let mut out = Vec::new();
    for chart in [Chart::Primary, Chart::Secondary] {
        for iy in 0..n {
            for ix in 0..n {
                let w = Complex64::new(
                    -SPHERE_BOX + (ix as f64 + 0.5) * h,
                    -SPHERE_BOX + (iy as f64 + 0.5) * h,
                );
                let chi = chart_partition(w);
                if chi <= 0.0 {
                    continue;
                }
                let r2 = w.norm_sqr();
                let local = LocalPoint { chart, w };
                let z = local.to_primary();
                out.push(Node {
                    local,
                    z,
                    p: sphere_point(z),
                    weight: h * h * 4.0 / ((1.0 + r2) * (1.0 + r2)) * chi,
                    sigma: round_sigma(w.re, w.im),
                });
            }
        }
    }
    out
}

impl Surface {
    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn weights(&self) -> Vec<f64> {
        self.nodes.iter().map(|x| x.weight).collect()
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn euler_characteristic(&self) -> i32 {
        self.kind.euler_characteristic()
    }

    /// The Weyl factor relative to the reference metric, if any.
    pub fn weyl(&self) -> Option<&WeylFactor> {
        self.weyl.as_ref()
    }

    /// Upper bound on the geodesic distance between neighbouring nodes.
    pub fn grid_spacing(&self) -> f64 {
        let base = match self.kind {
            SurfaceKind::Torus => 1.0 / self.n as f64,
            SurfaceKind::Sphere => 2.0 * 2.0 * SPHERE_BOX / self.n as f64,
        };
        let stretch = self.weyl.as_ref().map_or(1.0, |w| (0.5 * w.sup_norm()).exp());
        base * stretch
    }

    /// Conformal factor jet at a local point (reference metric plus Weyl factor).
    pub fn sigma_jet(&self, lp: &LocalPoint) -> Jet2 {
        let base = match self.kind {
            SurfaceKind::Torus => Jet2::ZERO,
            SurfaceKind::Sphere => round_sigma(Jet2::var_x(lp.w.re), Jet2::var_y(lp.w.im)),
        };
        match &self.weyl {
            None => base,
            Some(om) => {
                let (x, y) = lp.xy_jets();
                base + om.field.eval(self.kind, x, y)
            }
        }
    }

    /// Scalar curvature `K = −e^{−σ}Δσ` (2 on the round sphere).
    pub fn curvature_at(&self, lp: &LocalPoint) -> f64 {
        let s = self.sigma_jet(lp);
        -(-s.v).exp() * s.laplacian()
    }

    /// Sample a field at every node.
    pub fn sample_field(&self, f: &ScalarField) -> Vec<f64> {
        self.nodes.iter().map(|nd| f.value(self.kind, nd.z)).collect()
    }

    /// Quadrature of nodal values against `dv_g`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.nodes.len());
        let terms: Vec<f64> = self.nodes.iter().zip(values).map(|(n, v)| n.weight * v).collect();
        crate::stats::pairwise_sum(&terms)
    }

    /// Check the chart guard for a public point.
    pub fn check_point(&self, z: Complex64) -> Result<()> {
        match self.kind {
            SurfaceKind::Sphere if z.norm() >= CHART_GUARD || !z.is_finite() => {
                Err(Error::ChartGuard { re: z.re, im: z.im })
            }
            SurfaceKind::Torus if !z.is_finite() => Err(Error::ChartGuard { re: z.re, im: z.im }),
            _ => Ok(()),
        }
    }

    /// Geodesic distance of the reference metric.
    pub fn distance(&self, a: Complex64, b: Complex64) -> f64 {
        match self.kind {
            SurfaceKind::Torus => torus_displacement(a, b).norm(),
            SurfaceKind::Sphere => {
                let (p, q) = (sphere_point(a), sphere_point(b));
                let c = (p[0] * q[0] + p[1] * q[1] + p[2] * q[2]).clamp(-1.0, 1.0);
                c.acos()
            }
        }
    }

    /// Text header describing the surface.
    pub fn header(&self) -> String {
        format!(
            "kind={}\nn={}\nnodes={}\nvolume={:.12}\nweyl={}\n",
            self.kind.name(),
            self.n,
            self.nodes.len(),
            self.volume,
            self.weyl.as_ref().map_or("none".to_string(), |w| format!("band_limit:{}", w.band_limit)),
        )
    }

    /// Row-major CSV of nodal values: `chart,u,v,z_re,z_im,weight,value`.
    pub fn write_csv<W: std::io::Write>(&self, values: &[f64], mut out: W) -> std::io::Result<()> {
        writeln!(out, "chart,u,v,z_re,z_im,weight,value")?;
        for (nd, v) in self.nodes.iter().zip(values) {
            let c = if nd.local.chart == Chart::Primary { 0 } else { 1 };
            writeln!(
                out,
                "{c},{},{},{},{},{},{}",
                nd.local.w.re, nd.local.w.im, nd.z.re, nd.z.im, nd.weight, v
            )?;
        }
        Ok(())
    }
}

/// Minimal-image displacement `a − b` on the unit torus, in `[-½,½)²`.
pub fn torus_displacement(a: Complex64, b: Complex64) -> Complex64 {
    let wrap = |t: f64| t - (t + 0.5).floor();
    Complex64::new(wrap(a.re - b.re), wrap(a.im - b.im))
}

/// Rescale the metric: `g ↦ e^ω g`.
pub fn weyl_transform(s: &Surface, omega: &WeylFactor) -> Surface {
    let mut nodes = s.nodes.clone();
    for nd in nodes.iter_mut() {
        let w = omega.field.value(s.kind, nd.z);
        nd.weight *= w.exp();
        nd.sigma += w;
    }
    let volume = crate::stats::pairwise_sum(&nodes.iter().map(|x| x.weight).collect::<Vec<_>>());
    let weyl = match &s.weyl {
        None => omega.clone(),
        Some(prev) => WeylFactor {
            field: ScalarField::Sum(vec![prev.field.clone(), omega.field.clone()]),
            band_limit: prev.band_limit.max(omega.band_limit),
        },
    };
    Surface { kind: s.kind, n: s.n, nodes, weyl: Some(weyl), volume }
}

// ---------------------------------------------------------------------------
// Smooth fields

/// `a cos(2πk·x) + b sin(2πk·x)` on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub k: [i32; 2],
    pub a: f64,
    pub b: f64,
}

/// `c · Y_lm` on the sphere (real harmonics, negative `m` = sine type).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTerm {
    pub l: usize,
    pub m: i64,
    pub c: f64,
}

/// A Möbius map `z ↦ (az + b)/(cz + d)` normalized to `ad − bc = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl Mobius {
    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Result<Self> {
        let det = a * d - b * c;
        if det.norm() < 1e-14 {
            return Err(Error::Domain("degenerate Möbius map".into()));
        }
        let s = det.sqrt();
        Ok(Self { a: a / s, b: b / s, c: c / s, d: d / s })
    }

    pub fn identity() -> Self {
        let (o, z) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        Self { a: o, b: z, c: z, d: o }
    }

    /// Rotation of the sphere by `theta` about the axis through `±i` in the chart.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = (0.5 * theta).sin_cos();
        Self {
            a: Complex64::new(c, 0.0),
            b: Complex64::new(-s, 0.0),
            c: Complex64::new(s, 0.0),
            d: Complex64::new(c, 0.0),
        }
    }

    /// `z ↦ λz`.
    pub fn dilation(lambda: f64) -> Self {
        let r = lambda.sqrt();
        Self {
            a: Complex64::new(r, 0.0),
            b: Complex64::new(0.0, 0.0),
            c: Complex64::new(0.0, 0.0),
            d: Complex64::new(1.0 / r, 0.0),
        }
    }

    pub fn apply(&self, z: Complex64) -> Complex64 {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    pub fn derivative(&self, z: Complex64) -> Complex64 {
        let q = self.c * z + self.d;
        1.0 / (q * q)
    }

    pub fn is_isometry(&self) -> bool {
        (self.d - self.a.conj()).norm() < 1e-12 && (self.c + self.b.conj()).norm() < 1e-12
    }

    /// `ω_ψ` with `ψ*g = e^{ω_ψ} g` for the round metric,
    /// `ω_ψ = 2 ln(1+|z|²) − 2 ln(|az+b|² + |cz+d|²)`.
    pub fn omega<S: Scalar>(&self, x: S, y: S) -> S {
        let lin = |p: Complex64, q: Complex64| {
            let re = x.mul_f(p.re) - y.mul_f(p.im) + S::cst(q.re);
            let im = x.mul_f(p.im) + y.mul_f(p.re) + S::cst(q.im);
            re * re + im * im
        };
        let top = lin(self.a, self.b) + lin(self.c, self.d);
        (S::cst(1.0) + x * x + y * y).ln_().mul_f(2.0) - top.ln_().mul_f(2.0)
    }
}

/// A smooth real function on the surface, given in primary-chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Zero,
    Constant(f64),
    /// Torus trigonometric polynomial.
    Fourier(Vec<FourierTerm>),
    /// Sphere harmonic expansion.
    Harmonics(Vec<HarmonicTerm>),
    /// `A exp(1 − 1/(1 − |z−c|²/R²))` inside the chart disk `|z − c| < R`
    /// (periodized on the torus).
    Bump { center: Complex64, radius: f64, amplitude: f64 },
    /// `ω_ψ` of a Möbius map on the sphere.
    MobiusFactor(Mobius),
    /// `e^{c σ₀}` for the reference conformal factor `σ₀`.
    SigmaPower(f64),
    Sum(Vec<ScalarField>),
    Product(Box<ScalarField>, Box<ScalarField>),
    Scaled(f64, Box<ScalarField>),
}

impl ScalarField {
    /// Evaluate at primary-chart coordinates `(x, y)` (values or jets).
    pub fn eval<S: Scalar>(&self, kind: SurfaceKind, x: S, y: S) -> S {
        match self {
            ScalarField::Zero => S::cst(0.0),
            ScalarField::Constant(c) => S::cst(*c),
            ScalarField::Fourier(terms) => {
                let mut acc = S::cst(0.0);
                for t in terms {
                    let ph = (x.mul_f(t.k[0] as f64) + y.mul_f(t.k[1] as f64)).mul_f(2.0 * PI);
                    if t.a != 0.0 {
                        acc = acc + ph.cos_().mul_f(t.a);
                    }
                    if t.b != 0.0 {
                        acc = acc + ph.sin_().mul_f(t.b);
                    }
                }
                acc
            }
            ScalarField::Harmonics(terms) => {
                let lmax = terms.iter().map(|t| t.l).max().unwrap_or(0);
                let r2 = x * x + y * y;
                let d = (S::cst(1.0) + r2).recip_();
                let (px, py, pz) = ((x * d).mul_f(2.0), (y * d).mul_f(2.0), (r2 - S::cst(1.0)) * d);
                let ys = harmonics::real_harmonics(lmax, px, py, pz);
                let mut acc = S::cst(0.0);
                for t in terms {
                    acc = acc + ys[harmonics::lm_index(t.l, t.m)].mul_f(t.c);
                }
                acc
            }
            ScalarField::Bump { center, radius, amplitude } => {
                let (mut cx, mut cy) = (center.re, center.im);
                if kind == SurfaceKind::Torus {
                    cx += (x.val() - cx + 0.5).floor();
                    cy += (y.val() - cy + 0.5).floor();
                }
                let dx = x - S::cst(cx);
                let dy = y - S::cst(cy);
                let s = (dx * dx + dy * dy).mul_f(1.0 / (radius * radius));
                let u = s.val();
                if u >= 1.0 {
                    return S::cst(0.0);
                }
                // φ(u) = exp(1 − 1/(1−u))
                let q = 1.0 / (1.0 - u);
                let phi = (1.0 - q).exp();
                let d1 = -phi * q * q;
                let d2 = phi * (q * q * q * q - 2.0 * q * q * q);
                s.apply(phi, d1, d2).mul_f(*amplitude)
            }
            ScalarField::MobiusFactor(m) => m.omega(x, y),
            ScalarField::SigmaPower(c) => match kind {
                SurfaceKind::Torus => S::cst(1.0),
                SurfaceKind::Sphere => round_sigma(x, y).mul_f(*c).exp_(),
            },
            ScalarField::Sum(fs) => {
                fs.iter().fold(S::cst(0.0), |acc, f| acc + f.eval(kind, x, y))
            }
            ScalarField::Product(a, b) => a.eval(kind, x, y) * b.eval(kind, x, y),
            ScalarField::Scaled(c, f) => f.eval(kind, x, y).mul_f(*c),
        }
    }

    pub fn value(&self, kind: SurfaceKind, z: Complex64) -> f64 {
        self.eval(kind, z.re, z.im)
    }

    /// Jet with respect to the local coordinates of `lp`.
    pub fn local_jet(&self, kind: SurfaceKind, lp: &LocalPoint) -> Jet2 {
        let (x, y) = lp.xy_jets();
        self.eval(kind, x, y)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarField::Zero => true,
            ScalarField::Constant(c) => *c == 0.0,
            ScalarField::Fourier(t) => t.iter().all(|t| t.a == 0.0 && t.b == 0.0),
            ScalarField::Harmonics(t) => t.iter().all(|t| t.c == 0.0),
            ScalarField::Bump { amplitude, .. } => *amplitude == 0.0,
            ScalarField::Sum(fs) => fs.iter().all(|f| f.is_zero()),
            ScalarField::Product(a, b) => a.is_zero() || b.is_zero(),
            ScalarField::Scaled(c, f) => *c == 0.0 || f.is_zero(),
            ScalarField::MobiusFactor(m) => m.is_isometry(),
            ScalarField::SigmaPower(_) => false,
        }
    }

    /// Highest Fourier `|k|∞` or harmonic degree present, if band-limited.
    pub fn band_limit(&self) -> Option<usize> {
        match self {
            ScalarField::Zero | ScalarField::Constant(_) => Some(0),
            ScalarField::Fourier(t) => {
                Some(t.iter().map(|t| t.k[0].unsigned_abs().max(t.k[1].unsigned_abs()) as usize).max().unwrap_or(0))
            }
            ScalarField::Harmonics(t) => Some(t.iter().map(|t| t.l).max().unwrap_or(0)),
            ScalarField::Sum(fs) => {
                fs.iter().try_fold(0, |acc, f| f.band_limit().map(|b| acc.max(b)))
            }
            ScalarField::Scaled(_, f) => f.band_limit(),
            ScalarField::Product(a, b) => Some(a.band_limit()? + b.band_limit()?),
            _ => None,
        }
    }
}

/// A conformal factor `ω` for the Weyl action.
#[derive(Debug, Clone, PartialEq)]
pub struct WeylFactor {
    pub field: ScalarField,
    /// Declared band limit (`|k|∞` or harmonic degree); 0 for constants.
    pub band_limit: usize,
}

impl WeylFactor {
    pub fn new(field: ScalarField) -> Self {
        let band_limit = field.band_limit().unwrap_or(usize::MAX);
        Self { field, band_limit }
    }

    pub fn constant(c: f64) -> Self {
        Self { field: ScalarField::Constant(c), band_limit: 0 }
    }

    pub fn zero() -> Self {
        Self { field: ScalarField::Zero, band_limit: 0 }
    }

    /// Crude sup-norm bound from the coefficients (exact for constants).
    pub fn sup_norm(&self) -> f64 {
        fn bound(f: &ScalarField) -> f64 {
            match f {
                ScalarField::Zero => 0.0,
                ScalarField::Constant(c) => c.abs(),
                ScalarField::Fourier(t) => t.iter().map(|t| t.a.abs() + t.b.abs()).sum(),
                ScalarField::Harmonics(t) => t
                    .iter()
                    .map(|t| t.c.abs() * ((2 * t.l + 1) as f64 / (4.0 * PI)).sqrt())
                    .sum(),
                ScalarField::Bump { amplitude, .. } => amplitude.abs(),
                ScalarField::Sum(fs) => fs.iter().map(bound).sum(),
                ScalarField::Product(a, b) => bound(a) * bound(b),
                ScalarField::Scaled(c, f) => c.abs() * bound(f),
                ScalarField::MobiusFactor(m) => {
                    // |ω_ψ| ≤ 2 ln of the largest singular value squared.
                    let s = m.a.norm_sqr() + m.b.norm_sqr() + m.c.norm_sqr() + m.d.norm_sqr();
                    2.0 * s.ln().abs()
                }
                ScalarField::SigmaPower(_) => f64::INFINITY,
            }
        }
        bound(&self.field)
    }
}

// ---------------------------------------------------------------------------
// Symmetric 2-tensors

/// A symmetric `(2,0)`-tensor in the primary chart: the complex component
/// `f^{zz} = f^{xx} − f^{yy} + 2i f^{xy}` and the real trace component
/// `f^{zz̄} = f^{xx} + f^{yy}`. Used as a perturbation of the inverse metric.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField2 {
    pub zz_re: ScalarField,
    pub zz_im: ScalarField,
    pub zzbar: ScalarField,
}

/// Real Cartesian components `(f^{xx}, f^{xy}, f^{yy})` as jets.
#[derive(Debug, Clone, Copy)]
pub struct CartesianJets {
    pub xx: Jet2,
    pub xy: Jet2,
    pub yy: Jet2,
}

impl TensorField2 {
    pub fn zero() -> Self {
        Self { zz_re: ScalarField::Zero, zz_im: ScalarField::Zero, zzbar: ScalarField::Zero }
    }

    pub fn traceless(re: ScalarField, im: ScalarField) -> Self {
        Self { zz_re: re, zz_im: im, zzbar: ScalarField::Zero }
    }

    /// `f^{ab} = φ g^{ab}` for the reference metric, i.e. `f^{zz̄} = 2φ e^{−σ₀}`.
    pub fn pure_trace(phi: ScalarField) -> Self {
        Self {
            zz_re: ScalarField::Zero,
            zz_im: ScalarField::Zero,
            zzbar: ScalarField::Scaled(
                2.0,
                Box::new(ScalarField::Product(Box::new(phi), Box::new(ScalarField::SigmaPower(-1.0)))),
            ),
        }
    }

    pub fn add(&self, o: &TensorField2) -> TensorField2 {
        let s = |a: &ScalarField, b: &ScalarField| ScalarField::Sum(vec![a.clone(), b.clone()]);
        TensorField2 {
            zz_re: s(&self.zz_re, &o.zz_re),
            zz_im: s(&self.zz_im, &o.zz_im),
            zzbar: s(&self.zzbar, &o.zzbar),
        }
    }

    pub fn scale(&self, c: f64) -> TensorField2 {
        let s = |a: &ScalarField| ScalarField::Scaled(c, Box::new(a.clone()));
        TensorField2 { zz_re: s(&self.zz_re), zz_im: s(&self.zz_im), zzbar: s(&self.zzbar) }
    }

    pub fn is_zero(&self) -> bool {
        self.zz_re.is_zero() && self.zz_im.is_zero() && self.zzbar.is_zero()
    }

    /// Primary-chart components at a point.
    pub fn components(&self, kind: SurfaceKind, z: Complex64) -> (Complex64, f64) {
        (
            Complex64::new(self.zz_re.value(kind, z), self.zz_im.value(kind, z)),
            self.zzbar.value(kind, z),
        )
    }

    /// Complex components expressed in the local chart of `lp`, as jets in
    /// the local coordinates: `(Re f^{ww}, Im f^{ww}, f^{ww̄})`.
    pub fn local_jets(&self, kind: SurfaceKind, lp: &LocalPoint) -> (Jet2, Jet2, Jet2) {
        let (x, y) = lp.xy_jets();
        let re = self.zz_re.eval(kind, x, y);
        let im = self.zz_im.eval(kind, x, y);
        let tr = self.zzbar.eval(kind, x, y);
        match lp.chart {
            Chart::Primary => (re, im, tr),
            Chart::Secondary => {
                // w = 1/z̄: f^{ww} = conj(f^{zz}) w⁴, f^{ww̄} = f^{zz̄}|w|⁴.
                let (u, v) = (Jet2::var_x(lp.w.re), Jet2::var_y(lp.w.im));
                let (w2r, w2i) = (u * u - v * v, (u * v).scale(2.0));
                let (w4r, w4i) = (w2r * w2r - w2i * w2i, (w2r * w2i).scale(2.0));
                let (cr, ci) = (re, -im);
                let r2 = u * u + v * v;
                (cr * w4r - ci * w4i, cr * w4i + ci * w4r, tr * r2 * r2)
            }
        }
    }

    /// Cartesian components in the local chart.
    pub fn cartesian_jets(&self, kind: SurfaceKind, lp: &LocalPoint) -> CartesianJets {
        let (re, im, tr) = self.local_jets(kind, lp);
        CartesianJets { xx: (tr + re).scale(0.5), yy: (tr - re).scale(0.5), xy: im.scale(0.5) }
    }

    /// Split `f = f^tf + ½ tr_g(f) g`. Returns the traceless part and the
    /// trace part (as a tensor). Exact: the trace part is the `f^{zz̄}` component.
    pub fn trace_split(&self) -> (TensorField2, TensorField2) {
        (
            TensorField2 { zz_re: self.zz_re.clone(), zz_im: self.zz_im.clone(), zzbar: ScalarField::Zero },
            TensorField2 { zz_re: ScalarField::Zero, zz_im: ScalarField::Zero, zzbar: self.zzbar.clone() },
        )
    }

    /// `tr_g f = g_{ab} f^{ab} = e^σ f^{zz̄}` at a point.
    pub fn trace(&self, s: &Surface, z: Complex64) -> f64 {
        let sigma = s.sigma_jet(&LocalPoint::primary(z)).v;
        sigma.exp() * self.zzbar.value(s.kind(), z)
    }

    /// Nodes where the tensor does not vanish.
    pub fn support_mask(&self, s: &Surface) -> Vec<bool> {
        s.nodes()
            .iter()
            .map(|nd| {
                let (zz, tr) = self.components(s.kind(), nd.z);
                zz.norm() > 0.0 || tr != 0.0
            })
            .collect()
    }
}

/// `(f, h)_g = ½ ∫ e^{2σ} f^{zz} conj(h^{zz}) dv_g` for traceless tensors
/// (primary chart; the torus only needs one chart).
pub fn traceless_inner(s: &Surface, f: &TensorField2, h: &TensorField2) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for nd in s.nodes() {
        let (fz, _) = f.components(s.kind(), nd.z);
        let (hz, _) = h.components(s.kind(), nd.z);
        let (f_loc, h_loc) = match nd.local.chart {
            Chart::Primary => (fz, hz),
            Chart::Secondary => {
                let w4 = nd.local.w.powi(4);
                (fz.conj() * w4, hz.conj() * w4)
            }
        };
        acc += 0.5 * (2.0 * nd.sigma).exp() * f_loc * h_loc.conj() * nd.weight;
    }
    acc
}

// ---------------------------------------------------------------------------
// Operations

/// `A(ω, g) = (1/48π) ∫ (½|dω|²_g + K_g ω) dv_g` by quadrature.
pub fn anomaly_functional(omega: &WeylFactor, s: &Surface) -> f64 {
    let terms: Vec<f64> = s
        .nodes()
        .iter()
        .map(|nd| {
            let w = omega.field.local_jet(s.kind(), &nd.local);
            let sig = s.sigma_jet(&nd.local);
            let k = -(-sig.v).exp() * sig.laplacian();
            let grad = (-sig.v).exp() * w.grad_sq();
            nd.weight * (0.5 * grad + k * w.v)
        })
        .collect();
    crate::stats::pairwise_sum(&terms) / (48.0 * PI)
}

/// `(1/48π) ∫ ⟨dω₁, dω₂⟩_g dv_g`, the bilinear part of the anomaly.
pub fn anomaly_cross_term(a: &WeylFactor, b: &WeylFactor, s: &Surface) -> f64 {
    let terms: Vec<f64> = s
        .nodes()
        .iter()
        .map(|nd| {
            let ja = a.field.local_jet(s.kind(), &nd.local);
            let jb = b.field.local_jet(s.kind(), &nd.local);
            let sig = s.sigma_jet(&nd.local);
            nd.weight * (-sig.v).exp() * (ja.dx * jb.dx + ja.dy * jb.dy)
        })
        .collect();
    crate::stats::pairwise_sum(&terms) / (48.0 * PI)
}

/// First variation of the scalar curvature for a lower-index metric
/// perturbation `g_ε = g + ε h`, at one local point:
/// `−½K tr_g h + ∇^a∇^b h_ab − Δ_g tr_g h`.
///
/// `h` is given by its Cartesian jets in the local chart, `sigma` is the local
/// conformal factor jet.
pub fn curvature_variation_lower(sigma: Jet2, hxx: Jet2, hxy: Jet2, hyy: Jet2) -> f64 {
    let e = (-sigma.v).exp();
    let k = -e * sigma.laplacian();
    let t = hxx + hyy;
    // div₀ h: (∂_x h_xx + ∂_y h_xy, ∂_x h_xy + ∂_y h_yy)
    let dh = [hxx.dx + hxy.dy, hxy.dx + hyy.dy];
    // ∂_a of dh_a
    let ddh = hxx.dxx + 2.0 * hxy.dxy + hyy.dyy;
    let sg = [sigma.dx, sigma.dy];
    let tg = [t.dx, t.dy];
    // ∇^a∇^b h_ab = e^{−σ} ∂_a[e^{−σ}(dh_a − ½ ∂_aσ T)]
    let mut inner = ddh - 0.5 * sigma.laplacian() * t.v;
    for a in 0..2 {
        inner += -sg[a] * (dh[a] - 0.5 * sg[a] * t.v) - 0.5 * sg[a] * tg[a];
    }
    let divdiv = e * e * inner;
    // Δ_g (e^{−σ} T) = e^{−σ} Δ₀(e^{−σ} T)
    let lap_tr = e * e
        * (t.laplacian() - 2.0 * (sg[0] * tg[0] + sg[1] * tg[1])
            + (sigma.grad_sq() - sigma.laplacian()) * t.v);
    -0.5 * k * e * t.v + divdiv - lap_tr
}

/// First variation of the scalar curvature under `g^{ab} ↦ g^{ab} + ε f^{ab}`,
/// one value per node. The lower-index perturbation is
/// `δg_ab = −g_ac g_bd f^{cd} = −e^{2σ} f^{ab}` in a conformal chart.
pub fn curvature_variation(s: &Surface, f: &TensorField2) -> Vec<f64> {
    s.nodes().iter().map(|nd| curvature_variation_at(s, f, &nd.local)).collect()
}

pub fn curvature_variation_at(s: &Surface, f: &TensorField2, lp: &LocalPoint) -> f64 {
    let sigma = s.sigma_jet(lp);
    let c = f.cartesian_jets(s.kind(), lp);
    let e2 = sigma.scale(2.0).exp().scale(-1.0);
    curvature_variation_lower(sigma, e2 * c.xx, e2 * c.xy, e2 * c.yy)
}

/// Split a traceless torus tensor into the divergence-free part `f_m` (the
/// constant `f^{zz}` mode) and the remainder `f_d`.
pub fn tensor_decompose(
    s: &Surface,
    f: &TensorField2,
    allow_sphere: bool,
) -> Result<(TensorField2, TensorField2)> {
    match s.kind() {
        SurfaceKind::Sphere => {
            if allow_sphere {
                Ok((f.clone(), TensorField2::zero()))
            } else {
                Err(Error::UnsupportedSurface { op: "tensor_decompose", surface: "sphere" })
            }
        }
        SurfaceKind::Torus => {
            let (fm_re, fm_im) = torus_constant_mode(s, f);
            let fm = TensorField2::traceless(ScalarField::Constant(fm_re), ScalarField::Constant(fm_im));
            let fd = TensorField2::traceless(
                ScalarField::Sum(vec![f.zz_re.clone(), ScalarField::Constant(-fm_re)]),
                ScalarField::Sum(vec![f.zz_im.clone(), ScalarField::Constant(-fm_im)]),
            );
            Ok((fd, fm))
        }
    }
}

/// Mean of `f^{zz}` over the torus (exact for trigonometric polynomials).
pub fn torus_constant_mode(s: &Surface, f: &TensorField2) -> (f64, f64) {
    fn exact(field: &ScalarField) -> Option<f64> {
        match field {
            ScalarField::Zero => Some(0.0),
            ScalarField::Constant(c) => Some(*c),
            ScalarField::Fourier(t) => Some(t.iter().filter(|t| t.k == [0, 0]).map(|t| t.a).sum()),
            ScalarField::Sum(fs) => fs.iter().map(exact).sum(),
            ScalarField::Scaled(c, f) => exact(f).map(|v| c * v),
            _ => None,
        }
    }
    let quad = |field: &ScalarField| {
        exact(field).unwrap_or_else(|| s.integrate(&s.sample_field(field)) / s.volume())
    };
    (quad(&f.zz_re), quad(&f.zz_im))
}

/// `Q = 2/γ + γ/2`.
pub fn background_charge(gamma: f64) -> f64 {
    2.0 / gamma + 0.5 * gamma
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 2.0 {
        Ok(())
    } else {
        Err(Error::Parameter { name: "gamma", value: gamma, reason: "must lie in (0, 2)" })
    }
}

/// `Δ_α = (α/2)(Q − α/2)`.
pub fn conformal_weight(alpha: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(0.5 * alpha * (background_charge(gamma) - 0.5 * alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_bad_resolution() {
        assert!(matches!(make_surface(SurfaceKind::Torus, 17), Err(Error::Config(_))));
        assert!(matches!(make_surface(SurfaceKind::Sphere, 8), Err(Error::Config(_))));
    }

    #[test]
    fn volumes() {
        let t = make_surface(SurfaceKind::Torus, 64).unwrap();
        assert_relative_eq!(t.volume(), 1.0, epsilon = 1e-14);
        let s = make_surface(SurfaceKind::Sphere, 128).unwrap();
        assert!((s.volume() / (4.0 * PI) - 1.0).abs() < 1e-6, "{}", s.volume());
    }

    #[test]
    fn partition_of_unity() {
        for r in [0.3, 0.7, 1.0, 1.3, 1.9, 2.5] {
            let z = Complex64::from_polar(r, 0.4);
            let w = 1.0 / z.conj();
            assert_relative_eq!(chart_partition(z) + chart_partition(w), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn sphere_curvature_is_two() {
        let s = make_surface(SurfaceKind::Sphere, 32).unwrap();
        for nd in s.nodes().iter().step_by(37) {
            assert_relative_eq!(s.curvature_at(&nd.local), 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn gauss_bonnet() {
        let s = make_surface(SurfaceKind::Sphere, 128).unwrap();
        let k: Vec<f64> = s.nodes().iter().map(|n| s.curvature_at(&n.local)).collect();
        assert!((s.integrate(&k) / (8.0 * PI) - 1.0).abs() < 1e-5);
        let t = make_surface(SurfaceKind::Torus, 32).unwrap();
        let k: Vec<f64> = t.nodes().iter().map(|n| t.curvature_at(&n.local)).collect();
        assert_eq!(t.integrate(&k), 0.0);
    }

    #[test]
    fn weyl_on_sphere_preserves_gauss_bonnet() {
        let s = make_surface(SurfaceKind::Sphere, 128).unwrap();
        let om = WeylFactor::new(ScalarField::Harmonics(vec![
            HarmonicTerm { l: 1, m: 0, c: 0.4 },
            HarmonicTerm { l: 2, m: 1, c: -0.3 },
        ]));
        let s2 = weyl_transform(&s, &om);
        let k: Vec<f64> = s2.nodes().iter().map(|n| s2.curvature_at(&n.local)).collect();
        assert!((s2.integrate(&k) / (8.0 * PI) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn constant_anomaly() {
        let s = make_surface(SurfaceKind::Sphere, 128).unwrap();
        let c = 0.7;
        assert!((anomaly_functional(&WeylFactor::constant(c), &s) - c / 6.0).abs() < 1e-6);
        let t = make_surface(SurfaceKind::Torus, 32).unwrap();
        assert_eq!(anomaly_functional(&WeylFactor::constant(c), &t), 0.0);
        assert_eq!(anomaly_functional(&WeylFactor::zero(), &s), 0.0);
    }

    #[test]
    fn weyl_constant_scales_volume() {
        let t = make_surface(SurfaceKind::Torus, 64).unwrap();
        let t4 = weyl_transform(&t, &WeylFactor::constant(4f64.ln()));
        assert_relative_eq!(t4.volume(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn mobius_omega_matches_definition() {
        let m = Mobius::dilation(2.0);
        for z in [Complex64::new(0.3, 0.1), Complex64::new(-1.2, 0.7)] {
            let w = m.apply(z);
            let want = (m.derivative(z).norm_sqr() * (1.0 + z.norm_sqr()).powi(2)
                / (1.0 + w.norm_sqr()).powi(2))
            .ln();
            assert_relative_eq!(m.omega(z.re, z.im), want, epsilon = 1e-12);
        }
        let r = Mobius::rotation(0.9);
        assert!(r.is_isometry());
        assert!(r.omega(0.4, -0.2).abs() < 1e-12);
    }

    #[test]
    fn conformal_weights() {
        let g = 1.3;
        let q = background_charge(g);
        assert_eq!(conformal_weight(0.0, g).unwrap(), 0.0);
        assert_relative_eq!(conformal_weight(g, g).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(conformal_weight(q, g).unwrap(), q * q / 4.0, epsilon = 1e-14);
        assert!(conformal_weight(1.0, 2.0).is_err());
    }

    #[test]
    fn torus_traceless_curvature_variation_matches_fourier() {
        // h_ab = −f^{ab}; K' = ∂_a∂_b h_ab − Δ tr h; for traceless f with
        // f^{zz} = e^{2πi k·x}: f^{xx} = −f^{yy} = ½cos, f^{xy} = ½sin.
        let t = make_surface(SurfaceKind::Torus, 16).unwrap();
        let k = [1, 2];
        let f = TensorField2::traceless(
            ScalarField::Fourier(vec![FourierTerm { k, a: 1.0, b: 0.0 }]),
            ScalarField::Fourier(vec![FourierTerm { k, a: 0.0, b: 1.0 }]),
        );
        let kv = curvature_variation(&t, &f);
        let (kx, ky) = (2.0 * PI * k[0] as f64, 2.0 * PI * k[1] as f64);
        for (nd, v) in t.nodes().iter().zip(&kv) {
            let ph = kx * nd.z.re + ky * nd.z.im;
            // −(∂xx f^xx + 2∂xy f^xy + ∂yy f^yy)
            let want = -(-0.5 * kx * kx * ph.cos() + 2.0 * (-0.5 * kx * ky * ph.sin())
                - (-0.5 * ky * ky * ph.cos()));
            assert!((v - want).abs() < 1e-9 * (kx * kx + ky * ky), "{v} vs {want}");
        }
        let c = TensorField2::traceless(ScalarField::Constant(0.3), ScalarField::Constant(-0.2));
        assert!(curvature_variation(&t, &c).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn sphere_pure_trace_variation_matches_conformal_difference() {
        // g^{ab}_ε = (1 + εφ) g^{ab}  ⇔  g_ε = e^{ω_ε} g with ω_ε = −ln(1+εφ).
        let s = make_surface(SurfaceKind::Sphere, 16).unwrap();
        let phi = ScalarField::Harmonics(vec![
            HarmonicTerm { l: 1, m: 1, c: 0.8 },
            HarmonicTerm { l: 3, m: -2, c: 0.5 },
        ]);
        let f = TensorField2::pure_trace(phi.clone());
        let eps = 1e-3;
        let curv = |e: f64, lp: &LocalPoint| {
            let (x, y) = lp.xy_jets();
            let om = (phi.eval(SurfaceKind::Sphere, x, y).scale(e) + 1.0).ln().scale(-1.0);
            let sig = s.sigma_jet(lp) + om;
            -(-sig.v).exp() * sig.laplacian()
        };
        for nd in s.nodes().iter().step_by(41) {
            let fd = (curv(eps, &nd.local) - curv(-eps, &nd.local)) / (2.0 * eps);
            let v = curvature_variation_at(&s, &f, &nd.local);
            assert!((v - fd).abs() < 1e-3 * fd.abs().max(1e-2), "{v} vs {fd}");
        }
    }

    #[test]
    fn decomposition_is_a_projection_pair() {
        let t = make_surface(SurfaceKind::Torus, 32).unwrap();
        let f = TensorField2::traceless(
            ScalarField::Sum(vec![
                ScalarField::Constant(1.0),
                ScalarField::Fourier(vec![FourierTerm { k: [1, -1], a: 0.5, b: 0.2 }]),
            ]),
            ScalarField::Fourier(vec![FourierTerm { k: [0, 2], a: 0.3, b: 0.0 }]),
        );
        let (fd, fm) = tensor_decompose(&t, &f, false).unwrap();
        assert!(traceless_inner(&t, &fd, &fm).norm() < 1e-12);
        let (fdd, fdm) = tensor_decompose(&t, &fd, false).unwrap();
        assert!(fdm.components(SurfaceKind::Torus, Complex64::new(0.1, 0.2)).0.norm() < 1e-15);
        let z = Complex64::new(0.37, 0.81);
        assert!((fdd.components(SurfaceKind::Torus, z).0 - fd.components(SurfaceKind::Torus, z).0).norm() < 1e-15);
        let (mfd, mfm) = tensor_decompose(&t, &fm, false).unwrap();
        assert!(mfd.components(SurfaceKind::Torus, z).0.norm() < 1e-15);
        assert_eq!(mfm.components(SurfaceKind::Torus, z).0, Complex64::new(1.0, 0.0));
        let s = make_surface(SurfaceKind::Sphere, 16).unwrap();
        assert!(matches!(tensor_decompose(&s, &f, false), Err(Error::UnsupportedSurface { .. })));
        assert!(tensor_decompose(&s, &f, true).is_ok());
    }

    #[test]
    fn trace_split_is_idempotent() {
        let f = TensorField2 {
            zz_re: ScalarField::Constant(0.2),
            zz_im: ScalarField::Constant(0.1),
            zzbar: ScalarField::Constant(0.5),
        };
        let (tf, tr) = f.trace_split();
        let (tf2, tr2) = tf.trace_split();
        assert!(tr2.is_zero());
        assert_eq!(tf2, tf);
        assert!(!tr.is_zero());
    }
}
