//! Laplace–Beltrami eigenbases, zero-mean Green functions, Poisson solves and
//! circle-averaged kernels.
//!
//! Normalization: `(1/2π) Δ_g G = −δ + 1/v`, so `G = 2π Σ e_n e_n / λ_n` and a
//! field with covariance `G` is `X = Σ √(2π/λ_n) a_n e_n`.
//!
//! Torus truncation uses the square `|k|∞ ≤ K`; sphere truncation `l ≤ L`.

pub mod fd;
pub mod kernel;
pub mod variation;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::geometry::{torus_displacement, sphere_point, Surface, SurfaceKind, WeylFactor};
use crate::harmonics::{self, legendre};
use crate::jet::Jet2;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

pub use variation::{green_second_variation, green_variation, VariationOptions};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Default truncations.
pub const DEFAULT_TORUS_CUTOFF: usize = 64;
pub const DEFAULT_SPHERE_CUTOFF: usize = 64;

/// Points per circle in circle averages.
pub const CIRCLE_POINTS: usize = 64;

/// Nodal mode matrices larger than this many entries are never stored.
const MATRIX_LIMIT: usize = 40_000_000;

/// Per-mode damping applied to sampled fields, `X = Σ τ_n √(2π/λ_n) a_n e_n`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Taper {
    /// Plain truncation, `τ_n = 1`.
    #[default]
    Sharp,
    /// Heat factor `τ_n = e^{−λ_n t/2}` with `t = c/λ_max`, so the field
    /// covariance is the heat-smoothed Green function. Off the diagonal it
    /// differs from `G` by the constant `2πt/v` plus terms of order
    /// `e^{−d²/4t}`, which keeps kernel derivatives accurate.
    Heat { c: f64 },
}

impl Taper {
    /// `τ_n` for every mode of `b`.
    pub fn weights(&self, b: &SpectralBasis) -> Vec<f64> {
        match *self {
            Taper::Sharp => vec![1.0; b.len()],
            Taper::Heat { c } => {
                let lmax = b.eigenvalues().iter().fold(0.0f64, |a, l| a.max(*l));
                let t = c / lmax;
                b.eigenvalues().iter().map(|l| (-0.5 * l * t).exp()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `√2 cos(2πk·x)` or `√2 sin(2πk·x)` for `k` in the upper half-lattice.
    Torus { k: [i32; 2], sine: bool },
    /// Real spherical harmonic `Y_lm`.
    Sphere { l: usize, m: i64 },
}

/// Orthonormal eigenbasis of `−Δ_g` without the constant mode.
#[derive(Debug)]
pub struct SpectralBasis {
    surface: Arc<Surface>,
    modes: Vec<Mode>,
    eigenvalues: Vec<f64>,
    /// Largest `|k|∞` or `l` present.
    cutoff: usize,
    harmonic_index: Vec<usize>,
    fft: Option<Fft2>,
    node_matrix: OnceLock<Option<Arc<Vec<f64>>>>,
}

fn torus_half_lattice(k: i32) -> Vec<[i32; 2]> {
    let mut out = Vec::new();
    for kx in 0..=k {
        for ky in -k..=k {
            if kx > 0 || ky > 0 {
                out.push([kx, ky]);
            }
        }
    }
    out
}

fn torus_eigenvalue(k: [i32; 2]) -> f64 {
    4.0 * PI * PI * (k[0] * k[0] + k[1] * k[1]) as f64
}

fn check_reference(s: &Surface) -> Result<()> {
    if s.weyl().is_some() {
        return Err(Error::UnsupportedSurface {
            op: "build_basis (closed-form eigenfunctions need the reference metric)",
            surface: "Weyl-transformed surface",
        });
    }
    Ok(())
}

/// First `n_modes` eigenmodes in ascending eigenvalue order.
pub fn build_basis(s: &Surface, n_modes: usize) -> Result<SpectralBasis> {
    if n_modes < 8 {
        return Err(Error::Config(format!("mode count must be at least 8, got {n_modes}")));
    }
    check_reference(s)?;
    let mut cand: Vec<(f64, Mode)> = match s.kind() {
        SurfaceKind::Torus => {
            let k = ((n_modes as f64).sqrt() as i32) + 2;
            torus_half_lattice(k)
                .into_iter()
                .flat_map(|k| {
                    let l = torus_eigenvalue(k);
                    [(l, Mode::Torus { k, sine: false }), (l, Mode::Torus { k, sine: true })]
                })
                .collect()
        }
        SurfaceKind::Sphere => {
            let lmax = (n_modes as f64).sqrt() as usize + 1;
            (1..=lmax)
                .flat_map(|l| (-(l as i64)..=l as i64).map(move |m| ((l * (l + 1)) as f64, Mode::Sphere { l, m })))
                .collect()
        }
    };
    cand.sort_by(|a, b| a.0.total_cmp(&b.0));
    cand.truncate(n_modes);
    Ok(SpectralBasis::from_modes(s, cand.into_iter().map(|c| c.1).collect()))
}

/// All modes with `|k|∞ ≤ cutoff` (torus) or `1 ≤ l ≤ cutoff` (sphere).
pub fn build_basis_cutoff(s: &Surface, cutoff: usize) -> Result<SpectralBasis> {
    if cutoff < 2 {
        return Err(Error::Config(format!("cutoff must be at least 2, got {cutoff}")));
    }
    check_reference(s)?;
    let mut modes: Vec<(f64, Mode)> = match s.kind() {
        SurfaceKind::Torus => torus_half_lattice(cutoff as i32)
            .into_iter()
            .flat_map(|k| {
                let l = torus_eigenvalue(k);
                [(l, Mode::Torus { k, sine: false }), (l, Mode::Torus { k, sine: true })]
            })
            .collect(),
        SurfaceKind::Sphere => (1..=cutoff)
            .flat_map(|l| (-(l as i64)..=l as i64).map(move |m| ((l * (l + 1)) as f64, Mode::Sphere { l, m })))
            .collect(),
    };
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(SpectralBasis::from_modes(s, modes.into_iter().map(|c| c.1).collect()))
}

impl SpectralBasis {
    fn from_modes(s: &Surface, modes: Vec<Mode>) -> Self {
        let eigenvalues = modes
            .iter()
            .map(|m| match m {
                Mode::Torus { k, .. } => torus_eigenvalue(*k),
                Mode::Sphere { l, .. } => (l * (l + 1)) as f64,
            })
            .collect();
        let cutoff = modes
            .iter()
            .map(|m| match m {
                Mode::Torus { k, .. } => k[0].unsigned_abs().max(k[1].unsigned_abs()) as usize,
                Mode::Sphere { l, .. } => *l,
            })
            .max()
            .unwrap_or(0);
        let harmonic_index = modes
            .iter()
            .map(|m| match m {
                Mode::Sphere { l, m } => harmonics::lm_index(*l, *m),
                Mode::Torus { .. } => 0,
            })
            .collect();
        let fft = (s.kind() == SurfaceKind::Torus).then(|| Fft2::new(s.n()));
        Self {
            surface: Arc::new(s.clone()),
            modes,
            eigenvalues,
            cutoff,
            harmonic_index,
            fft,
            node_matrix: OnceLock::new(),
        }
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    pub fn kind(&self) -> SurfaceKind {
        self.surface.kind()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// All mode values at a primary-chart point.
    pub fn eval_modes(&self, z: Complex64) -> Vec<f64> {
        match self.kind() {
            SurfaceKind::Torus => {
                let k = self.cutoff as i32;
                let ex = Complex64::from_polar(1.0, 2.0 * PI * z.re);
                let ey = Complex64::from_polar(1.0, 2.0 * PI * z.im);
                let px = powers(ex, k);
                let py = powers(ey, k);
                self.modes
                    .iter()
                    .map(|m| match m {
                        Mode::Torus { k: kk, sine } => {
                            let e = px[(kk[0] + k) as usize] * py[(kk[1] + k) as usize];
                            std::f64::consts::SQRT_2 * if *sine { e.im } else { e.re }
                        }
                        Mode::Sphere { .. } => unreachable!(),
                    })
                    .collect()
            }
            SurfaceKind::Sphere => {
                let p = sphere_point(z);
                self.eval_modes_sphere(p)
            }
        }
    }

    /// Mode values at a unit vector (sphere only).
    pub fn eval_modes_sphere(&self, p: [f64; 3]) -> Vec<f64> {
        let y = harmonics::real_harmonics(self.cutoff, p[0], p[1], p[2]);
        self.harmonic_index.iter().map(|&i| y[i]).collect()
    }

    /// Mode jets in the primary chart at `z`.
    pub fn eval_mode_jets(&self, z: Complex64) -> Vec<Jet2> {
        let (x, y) = (Jet2::var_x(z.re), Jet2::var_y(z.im));
        match self.kind() {
            SurfaceKind::Torus => self
                .modes
                .iter()
                .map(|m| match m {
                    Mode::Torus { k, sine } => {
                        let ph = (x.scale(k[0] as f64) + y.scale(k[1] as f64)).scale(2.0 * PI);
                        let (s, c) = ph.v.sin_cos();
                        let j = if *sine { ph.compose(s, c, -s) } else { ph.compose(c, -s, -c) };
                        j.scale(std::f64::consts::SQRT_2)
                    }
                    Mode::Sphere { .. } => unreachable!(),
                })
                .collect(),
            SurfaceKind::Sphere => {
                let r2 = x * x + y * y;
                let d = (r2 + 1.0).recip();
                let (px, py, pz) = ((x * d).scale(2.0), (y * d).scale(2.0), (r2 + (-1.0)) * d);
                let ys = harmonics::real_harmonics(self.cutoff, px, py, pz);
                self.harmonic_index.iter().map(|&i| ys[i]).collect()
            }
        }
    }

    /// Node-major matrix of mode values (`nodes × modes`), if small enough.
    pub fn node_matrix(&self) -> Option<Arc<Vec<f64>>> {
        self.node_matrix
            .get_or_init(|| {
                let nn = self.surface.nodes().len();
                if nn * self.len() > MATRIX_LIMIT {
                    return None;
                }
                let mut m = Vec::with_capacity(nn * self.len());
                for nd in self.surface.nodes() {
                    m.extend(self.eval_node(nd));
                }
                Some(Arc::new(m))
            })
            .clone()
    }

    fn eval_node(&self, nd: &crate::geometry::Node) -> Vec<f64> {
        match self.kind() {
            SurfaceKind::Torus => self.eval_modes(nd.z),
            SurfaceKind::Sphere => self.eval_modes_sphere(nd.p),
        }
    }

    /// Synthesize `Σ c_n e_n` at every node.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.len());
        if let Some(fft) = &self.fft {
            let n = fft.n();
            let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
            let r = std::f64::consts::FRAC_1_SQRT_2;
            for (m, c) in self.modes.iter().zip(coeffs) {
                if let Mode::Torus { k, sine } = m {
                    let v = if *sine { Complex64::new(0.0, -c * r) } else { Complex64::new(c * r, 0.0) };
                    buf[fft.bin(k[0], k[1])] += v;
                    buf[fft.bin(-k[0], -k[1])] += v.conj();
                }
            }
            fft.inverse(&mut buf);
            return buf.iter().map(|v| v.re).collect();
        }
        match self.node_matrix() {
            Some(mat) => {
                let nm = self.len();
                mat.chunks_exact(nm).map(|row| dot(row, coeffs)).collect()
            }
            None => self.surface.nodes().iter().map(|nd| dot(&self.eval_node(nd), coeffs)).collect(),
        }
    }

    /// Quadrature projections `∫ f e_n dv_g` of nodal values. On the torus,
    /// modes at or above the grid Nyquist frequency are set to zero.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        let nodes = self.surface.nodes();
        assert_eq!(values.len(), nodes.len());
        if let Some(fft) = &self.fft {
            return self.torus_project(fft, values);
        }
        let mut out = vec![0.0; self.len()];
        let mat = self.node_matrix();
        for (i, (nd, v)) in nodes.iter().zip(values).enumerate() {
            let wv = nd.weight * v;
            if wv == 0.0 {
                continue;
            }
            match &mat {
                Some(m) => {
                    let row = &m[i * self.len()..(i + 1) * self.len()];
                    for (o, e) in out.iter_mut().zip(row) {
                        *o += wv * e;
                    }
                }
                None => {
                    for (o, e) in out.iter_mut().zip(self.eval_node(nd)) {
                        *o += wv * e;
                    }
                }
            }
        }
        out
    }

    fn torus_project(&self, fft: &Fft2, values: &[f64]) -> Vec<f64> {
        let n = fft.n();
        let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        fft.forward(&mut buf);
        let s = std::f64::consts::SQRT_2 / (n * n) as f64;
        let nyquist = (n / 2) as u32;
        self.modes
            .iter()
            .map(|m| match m {
                Mode::Torus { k, .. } if k[0].unsigned_abs().max(k[1].unsigned_abs()) >= nyquist => 0.0,
                Mode::Torus { k, sine } => {
                    let f = buf[fft.bin(k[0], k[1])];
                    if *sine {
                        -s * f.im
                    } else {
                        s * f.re
                    }
                }
                Mode::Sphere { .. } => unreachable!(),
            })
            .collect()
    }

    /// Projections `∫ f e_n dv_g` of a function given pointwise, on a
    /// quadrature grid fine enough for every mode of the basis (reference
    /// metric weights).
    pub fn project_fn<F: Fn(Complex64) -> f64 + Sync>(&self, f: F) -> Vec<f64> {
        let n = self.surface.n();
        match self.kind() {
            SurfaceKind::Torus => {
                let m = n.max((4 * self.cutoff).next_power_of_two());
                let fft = Fft2::new(m);
                let h = 1.0 / m as f64;
                let values: Vec<f64> = (0..m * m)
                    .map(|i| f(Complex64::new((i % m) as f64 * h, (i / m) as f64 * h)))
                    .collect();
                self.torus_project(&fft, &values)
            }
            SurfaceKind::Sphere => {
                if n >= 2 * self.cutoff {
                    let values: Vec<f64> = self.surface.nodes().iter().map(|nd| f(nd.z)).collect();
                    return self.project(&values);
                }
                let grid = crate::geometry::make_surface(SurfaceKind::Sphere, (2 * self.cutoff).next_power_of_two())
                    .expect("power-of-two grid");
                let nodes = grid.nodes();
                let parts = crate::par::map_chunks(nodes.len(), 512, crate::par::default_workers(), |r| {
                    let mut acc = vec![0.0; self.len()];
                    for nd in &nodes[r] {
                        let wv = nd.weight * f(nd.z);
                        for (o, e) in acc.iter_mut().zip(self.eval_modes_sphere(nd.p)) {
                            *o += wv * e;
                        }
                    }
                    vec![acc]
                });
                let mut out = vec![0.0; self.len()];
                for p in parts {
                    for (o, v) in out.iter_mut().zip(p) {
                        *o += v;
                    }
                }
                out
            }
        }
    }

    /// `∫ f dv_g` on the same grid as [`project_fn`](Self::project_fn).
    pub fn integrate_fn<F: Fn(Complex64) -> f64>(&self, f: F) -> f64 {
        let n = self.surface.n();
        let grid;
        let s = match self.kind() {
            SurfaceKind::Torus if n < 4 * self.cutoff => {
                grid = crate::geometry::make_surface(SurfaceKind::Torus, (4 * self.cutoff).next_power_of_two())
                    .expect("power-of-two grid");
                &grid
            }
            SurfaceKind::Sphere if n < 2 * self.cutoff => {
                grid = crate::geometry::make_surface(SurfaceKind::Sphere, (2 * self.cutoff).next_power_of_two())
                    .expect("power-of-two grid");
                &grid
            }
            _ => self.surface(),
        };
        let values: Vec<f64> = s.nodes().iter().map(|nd| f(nd.z)).collect();
        s.integrate(&values)
    }

    /// Truncated Green function `2π Σ e_n(x)e_n(y)/λ_n`.
    pub fn green(&self, x: Complex64, y: Complex64) -> Result<f64> {
        self.green_with(x, y, None)
    }

    fn green_with(&self, x: Complex64, y: Complex64, mult: Option<&[f64]>) -> Result<f64> {
        let ex = self.eval_modes(x);
        let ey = self.eval_modes(y);
        let terms: Vec<f64> = (0..self.len())
            .map(|n| {
                let m = mult.map_or(1.0, |m| m[n] * m[n]);
                2.0 * PI * m * ex[n] * ey[n] / self.eigenvalues[n]
            })
            .collect();
        Ok(crate::stats::pairwise_sum(&terms))
    }

    /// Per-mode multipliers of the `M`-point circle average at radius `δ`.
    ///
    /// Torus: `(1/M) Σ_j cos(2πδ k·u_j)`. Sphere: geodesic circles, whose
    /// average multiplies `Y_lm` by `P_l(cos δ)` (exact for `l < M`).
    pub fn circle_multipliers(&self, delta: f64) -> Vec<f64> {
        match self.kind() {
            SurfaceKind::Torus => {
                let dirs: Vec<(f64, f64)> = (0..CIRCLE_POINTS)
                    .map(|j| (2.0 * PI * j as f64 / CIRCLE_POINTS as f64).sin_cos())
                    .collect();
                self.modes
                    .iter()
                    .map(|m| match m {
                        Mode::Torus { k, .. } => {
                            let s: f64 = dirs
                                .iter()
                                .map(|(sn, cs)| (2.0 * PI * delta * (k[0] as f64 * cs + k[1] as f64 * sn)).cos())
                                .sum();
                            s / CIRCLE_POINTS as f64
                        }
                        Mode::Sphere { .. } => unreachable!(),
                    })
                    .collect()
            }
            SurfaceKind::Sphere => {
                let p = legendre(self.cutoff, delta.cos());
                self.modes
                    .iter()
                    .map(|m| match m {
                        Mode::Sphere { l, .. } => p[*l],
                        Mode::Torus { .. } => unreachable!(),
                    })
                    .collect()
            }
        }
    }

    /// Smallest circle radius this basis resolves.
    pub fn min_circle_radius(&self) -> f64 {
        2.0 * self.surface.grid_spacing()
    }

    /// Double circle average of the truncated Green function; on the diagonal
    /// this is the regularized variance `Var X_δ(x)`.
    pub fn circle_averaged_green(&self, x: Complex64, y: Complex64, delta: f64) -> Result<f64> {
        let limit = self.min_circle_radius();
        if !(delta > limit) {
            return Err(Error::Resolution { scale: delta, limit });
        }
        let m = self.circle_multipliers(delta);
        self.green_with(x, y, Some(&m))
    }

    /// `Σ 2π m_n² e_n(x)² / λ_n` for arbitrary multipliers.
    pub fn regularized_variance(&self, x: Complex64, multipliers: &[f64]) -> f64 {
        let e = self.eval_modes(x);
        let terms: Vec<f64> = (0..self.len())
            .map(|n| 2.0 * PI * multipliers[n] * multipliers[n] * e[n] * e[n] / self.eigenvalues[n])
            .collect();
        crate::stats::pairwise_sum(&terms)
    }

    /// Solve `Δ_g u = −2πρ` with `u` mean-zero.
    pub fn poisson_solve(&self, rho: &[f64]) -> PoissonSolution {
        let s = self.surface();
        let mean = s.integrate(rho) / s.volume();
        let centred: Vec<f64> = rho.iter().map(|r| r - mean).collect();
        let c = self.project(&centred);
        let coeffs: Vec<f64> = c.iter().zip(&self.eigenvalues).map(|(c, l)| 2.0 * PI * c / l).collect();
        let u = self.synthesize(&coeffs);
        PoissonSolution { u, removed_mean: mean, projected: mean.abs() > 1e-12 * rho.iter().fold(0.0f64, |a, b| a.max(b.abs())) }
    }

    /// `∫ G(x, z) h(z) dv_g(z)` for nodal `h`, using the truncated series.
    pub fn green_potential(&self, h: &[f64]) -> GreenPotential {
        let c = self.project(h);
        GreenPotential {
            coeffs: c.iter().zip(&self.eigenvalues).map(|(c, l)| 2.0 * PI * c / l).collect(),
            projections: c,
        }
    }
}

fn powers(e: Complex64, k: i32) -> Vec<Complex64> {
    let n = (2 * k + 1) as usize;
    let mut out = vec![Complex64::new(1.0, 0.0); n];
    let inv = e.conj();
    for j in 1..=k as usize {
        out[k as usize + j] = out[k as usize + j - 1] * e;
        out[k as usize - j] = out[k as usize - j + 1] * inv;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of [`SpectralBasis::poisson_solve`].
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub u: Vec<f64>,
    /// Mean of `ρ` that was projected out before solving.
    pub removed_mean: f64,
    /// True if the input had a non-negligible mean (a warning condition).
    pub projected: bool,
}

/// Spectral coefficients of `∫ G(·, z) h(z) dv(z)`.
#[derive(Debug, Clone)]
pub struct GreenPotential {
    /// Coefficients of the potential, `2π ĥ_n / λ_n`.
    pub coeffs: Vec<f64>,
    /// Projections `ĥ_n = ∫ h e_n dv`.
    pub projections: Vec<f64>,
}

impl GreenPotential {
    pub fn at(&self, b: &SpectralBasis, x: Complex64) -> f64 {
        dot(&b.eval_modes(x), &self.coeffs)
    }

    /// `∬ G(x,z) h(x) h(z)`.
    pub fn energy(&self) -> f64 {
        dot(&self.coeffs, &self.projections)
    }
}

/// Spectral value of the diagonal remainder `m_g`, from the heat-kernel
/// regularized variance `Σ 2π e^{−λt} e_n(x)²/λ_n + ½ln(4t) − γ_E/2`
/// extrapolated to `t → 0` (homogeneous surfaces: independent of `x`).
pub fn diagonal_remainder(kind: SurfaceKind) -> f64 {
    static TORUS: OnceLock<f64> = OnceLock::new();
    static SPHERE: OnceLock<f64> = OnceLock::new();
    match kind {
        SurfaceKind::Torus => *TORUS.get_or_init(|| {
            let k = 160i32;
            let lmax = torus_eigenvalue([k, 0]);
            let f = |t: f64| {
                let mut terms = Vec::new();
                for kx in -k..=k {
                    for ky in -k..=k {
                        if kx == 0 && ky == 0 {
                            continue;
                        }
                        let l = torus_eigenvalue([kx, ky]);
                        terms.push(2.0 * PI * (-l * t).exp() / l);
                    }
                }
                crate::stats::pairwise_sum(&terms) + 0.5 * (4.0 * t).ln() - 0.5 * EULER_GAMMA
            };
            let t = 80.0 / lmax;
            2.0 * f(t / 2.0) - f(t)
        }),
        SurfaceKind::Sphere => *SPHERE.get_or_init(|| {
            let lext = 6000usize;
            let f = |t: f64| {
                let terms: Vec<f64> = (1..=lext)
                    .map(|l| {
                        let lam = (l * (l + 1)) as f64;
                        (2 * l + 1) as f64 / (2.0 * lam) * (-lam * t).exp()
                    })
                    .collect();
                crate::stats::pairwise_sum(&terms) + 0.5 * (4.0 * t).ln() - 0.5 * EULER_GAMMA
            };
            let t = 200.0 / (lext * lext) as f64;
            // error ≈ a t + b t²: three-level Richardson
            let (f1, f2, f4) = (f(t), f(t / 2.0), f(t / 4.0));
            (8.0 * f4 - 6.0 * f2 + f1) / 3.0
        }),
    }
}

/// Green function of `e^ω g` assembled from `G_g` with the four-term formula
///
/// `G'(x,y) = G(x,y) − (1/v') ∫G(x,z)dv'(z) − (1/v') ∫G(y,z)dv'(z)
///            + (1/v'²) ∬ G(z,z') dv'(z) dv'(z')`, `dv' = e^ω dv`.
///
/// The pointwise term uses the closed-form kernel; only the smooth averages
/// go through the basis.
pub fn green_weyl(b: &SpectralBasis, omega: &WeylFactor, x: Complex64, y: Complex64) -> Result<f64> {
    let w = WeylGreen::new(b, omega);
    w.value(b, x, y)
}

/// Precomputed data for repeated [`green_weyl`] evaluations.
#[derive(Debug, Clone)]
pub struct WeylGreen {
    potential: GreenPotential,
    volume: f64,
}

impl WeylGreen {
    pub fn new(b: &SpectralBasis, omega: &WeylFactor) -> Self {
        let kind = b.kind();
        let h = |z: Complex64| omega.field.value(kind, z).exp();
        let volume = b.integrate_fn(h);
        let projections = b.project_fn(h);
        let coeffs = projections.iter().zip(b.eigenvalues()).map(|(c, l)| 2.0 * PI * c / l).collect();
        Self { potential: GreenPotential { coeffs, projections }, volume }
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// `(1/v')∫G(x,z) dv'(z)`.
    pub fn mean_at(&self, b: &SpectralBasis, x: Complex64) -> f64 {
        self.potential.at(b, x) / self.volume
    }

    /// `(1/v'²)∬G dv' dv'`.
    pub fn double_mean(&self) -> f64 {
        self.potential.energy() / (self.volume * self.volume)
    }

    pub fn value(&self, b: &SpectralBasis, x: Complex64, y: Complex64) -> Result<f64> {
        if b.surface().distance(x, y) < 1e-12 {
            return Err(Error::Diagonal);
        }
        let g = kernel::exact_green(b.kind(), x, y);
        Ok(g - self.mean_at(b, x) - self.mean_at(b, y) + self.double_mean())
    }

    /// Correction `G'(x,x) − G(x,x)` of the diagonal (finite).
    pub fn diagonal_shift(&self, b: &SpectralBasis, x: Complex64) -> f64 {
        -2.0 * self.mean_at(b, x) + self.double_mean()
    }
}

/// A Green function for a possibly Weyl-transformed reference metric.
#[derive(Debug, Clone)]
pub struct GreenOperator {
    basis: Arc<SpectralBasis>,
    weyl: Option<WeylGreen>,
}

impl GreenOperator {
    pub fn new(basis: Arc<SpectralBasis>) -> Self {
        Self { basis, weyl: None }
    }

    pub fn with_weyl(basis: Arc<SpectralBasis>, omega: &WeylFactor) -> Self {
        let weyl = Some(WeylGreen::new(&basis, omega));
        Self { basis, weyl }
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn value(&self, x: Complex64, y: Complex64) -> Result<f64> {
        if self.basis.surface().distance(x, y) < 1e-12 {
            return Err(Error::Diagonal);
        }
        match &self.weyl {
            None => Ok(kernel::exact_green(self.basis.kind(), x, y)),
            Some(w) => w.value(&self.basis, x, y),
        }
    }

    /// `G(x, ·)` sampled at the nodes (CSV export helper).
    pub fn kernel_row(&self, x: Complex64) -> Vec<f64> {
        let s = self.basis.surface();
        s.nodes()
            .iter()
            .map(|nd| {
                if s.distance(nd.z, x) < 1e-12 {
                    f64::NAN
                } else {
                    self.value(x, nd.z).unwrap_or(f64::NAN)
                }
            })
            .collect()
    }
}

/// Shortest chart displacement used for torus kernels.
pub fn displacement(kind: SurfaceKind, a: Complex64, b: Complex64) -> Complex64 {
    match kind {
        SurfaceKind::Torus => torus_displacement(a, b),
        SurfaceKind::Sphere => a - b,
    }
}
