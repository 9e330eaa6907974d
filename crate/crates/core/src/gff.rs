//! Karhunen–Loève sampling of the zero-mean Gaussian free field.
//!
//! A sample stores i.i.d. standard normal coefficients `a_n`; the field is
//! `X = Σ τ_n √(2π/λ_n) a_n e_n` with the taper `τ` chosen by the caller
//! (plain truncation unless stated otherwise).

use crate::error::{Error, Result};
use crate::geometry::{sphere_point, SurfaceKind};
use crate::rng::{fill_normals, StreamId};
use crate::spectral::{SpectralBasis, Taper, CIRCLE_POINTS};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

/// Standard normal coefficients drawn from one stream.
pub fn sample_coefficients(n_modes: usize, stream: StreamId) -> Vec<f64> {
    let mut a = vec![0.0; n_modes];
    fill_normals(&mut stream.rng(), &mut a);
    a
}

/// `τ_n √(2π/λ_n)` for every mode.
pub fn field_scales(b: &SpectralBasis, taper: Taper) -> Vec<f64> {
    taper
        .weights(b)
        .iter()
        .zip(b.eigenvalues())
        .map(|(t, l)| t * (2.0 * PI / l).sqrt())
        .collect()
}

/// One realization of the truncated field.
#[derive(Debug, Clone)]
pub struct GffSample {
    coeffs: Vec<f64>,
    basis: Arc<SpectralBasis>,
    stream: Option<StreamId>,
}

/// Draw the sample with the given stream provenance.
pub fn sample_gff(b: &Arc<SpectralBasis>, stream: StreamId) -> GffSample {
    GffSample { coeffs: sample_coefficients(b.len(), stream), basis: Arc::clone(b), stream: Some(stream) }
}

impl GffSample {
    /// A sample with prescribed coefficients (no random provenance).
    pub fn from_coefficients(b: &Arc<SpectralBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != b.len() {
            return Err(Error::Config(format!(
                "expected {} coefficients, got {}",
                b.len(),
                coeffs.len()
            )));
        }
        Ok(Self { coeffs, basis: Arc::clone(b), stream: None })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn stream(&self) -> Option<StreamId> {
        self.stream
    }

    /// Expansion coefficients of the field, `√(2π/λ_n) a_n`.
    pub fn field_coefficients(&self) -> Vec<f64> {
        self.tapered_coefficients(Taper::Sharp)
    }

    pub fn tapered_coefficients(&self, taper: Taper) -> Vec<f64> {
        field_scales(&self.basis, taper).iter().zip(&self.coeffs).map(|(s, a)| s * a).collect()
    }

    /// `X(z)` at a primary-chart point.
    pub fn value(&self, z: Complex64) -> f64 {
        dot(&self.basis.eval_modes(z), &self.field_coefficients())
    }

    /// `X` at every node of the basis surface.
    pub fn nodal_values(&self) -> Vec<f64> {
        self.basis.synthesize(&self.field_coefficients())
    }

    /// `(X, f)_g` for nodal values `f`: the constant part of `f` is removed
    /// before projecting, so pairing with constants is exactly zero.
    pub fn pair(&self, f: &[f64]) -> f64 {
        dot(&centred_projection(&self.basis, f), &self.field_coefficients())
    }

    /// Average of `X` over the circle of radius `δ` around `x`, using
    /// [`CIRCLE_POINTS`] equispaced points (geodesic circles on the sphere).
    pub fn circle_average(&self, x: Complex64, delta: f64) -> Result<f64> {
        let limit = self.basis.min_circle_radius();
        if delta < limit {
            return Err(Error::Resolution { scale: delta, limit });
        }
        self.basis.surface().check_point(x)?;
        let c = self.field_coefficients();
        let vals: Vec<f64> = circle_mode_values(&self.basis, x, delta)
            .iter()
            .map(|e| dot(e, &c))
            .collect();
        Ok(crate::stats::pairwise_sum(&vals) / vals.len() as f64)
    }

    /// Circle-averaged field at every node, via the per-mode multipliers.
    pub fn circle_averaged_nodal(&self, delta: f64) -> Result<Vec<f64>> {
        let limit = self.basis.min_circle_radius();
        if delta < limit {
            return Err(Error::Resolution { scale: delta, limit });
        }
        let m = self.basis.circle_multipliers(delta);
        let c: Vec<f64> = self.field_coefficients().iter().zip(&m).map(|(c, m)| c * m).collect();
        Ok(self.basis.synthesize(&c))
    }

    /// Coefficient CSV: `mode,eigenvalue,a_n`.
    pub fn write_coefficients_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "mode,eigenvalue,coefficient")?;
        for (i, (l, a)) in self.basis.eigenvalues().iter().zip(&self.coeffs).enumerate() {
            writeln!(out, "{i},{l},{a}")?;
        }
        Ok(())
    }

    /// Nodal field snapshot in the surface CSV layout.
    pub fn write_field_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        self.basis.surface().write_csv(&self.nodal_values(), out)
    }
}

/// Mode projections of `f − f̄`.
pub fn centred_projection(b: &SpectralBasis, f: &[f64]) -> Vec<f64> {
    let s = b.surface();
    let mean = s.integrate(f) / s.volume();
    let centred: Vec<f64> = f.iter().map(|v| v - mean).collect();
    b.project(&centred)
}

/// Mode values at the circle points around `x`.
pub fn circle_mode_values(b: &SpectralBasis, x: Complex64, delta: f64) -> Vec<Vec<f64>> {
    let angles = (0..CIRCLE_POINTS).map(|j| 2.0 * PI * j as f64 / CIRCLE_POINTS as f64);
    match b.kind() {
        SurfaceKind::Torus => angles.map(|t| b.eval_modes(x + Complex64::from_polar(delta, t))).collect(),
        SurfaceKind::Sphere => {
            let p = sphere_point(x);
            let (e1, e2) = tangent_frame(p);
            let (sd, cd) = delta.sin_cos();
            angles
                .map(|t| {
                    let (s, c) = t.sin_cos();
                    let q = [0, 1, 2].map(|i| cd * p[i] + sd * (c * e1[i] + s * e2[i]));
                    b.eval_modes_sphere(q)
                })
                .collect()
        }
    }
}

/// Orthonormal tangent vectors at a unit vector `p`.
pub fn tangent_frame(p: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = if p[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let d = a[0] * p[0] + a[1] * p[1] + a[2] * p[2];
    let mut e1 = [a[0] - d * p[0], a[1] - d * p[1], a[2] - d * p[2]];
    let n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|v| *v /= n);
    let e2 = [
        p[1] * e1[2] - p[2] * e1[1],
        p[2] * e1[0] - p[0] * e1[2],
        p[0] * e1[1] - p[1] * e1[0],
    ];
    (e1, e2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Batched evaluation

/// A dense `points × modes` matrix of mode values (and optionally the
/// holomorphic derivatives `∂_z e_n`, `∂_z² e_n` in the primary chart).
#[derive(Debug, Clone)]
pub struct PointMatrix {
    rows: usize,
    modes: usize,
    values: Vec<f64>,
}

impl PointMatrix {
    pub fn new(rows: usize, modes: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * modes);
        Self { rows, modes, values }
    }

    /// Mode values at primary-chart points.
    pub fn at_points(b: &SpectralBasis, points: &[Complex64]) -> Self {
        let mut values = Vec::with_capacity(points.len() * b.len());
        for z in points {
            values.extend(b.eval_modes(*z));
        }
        Self::new(points.len(), b.len(), values)
    }

    /// Real and imaginary parts of `∂_z e_n` and `∂_z² e_n`, as four matrices.
    pub fn derivatives(b: &SpectralBasis, points: &[Complex64]) -> [Self; 4] {
        let (mut d_re, mut d_im, mut dd_re, mut dd_im) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for z in points {
            for j in b.eval_mode_jets(*z) {
                let (d, dd) = (j.dz(), j.dzz());
                d_re.push(d.re);
                d_im.push(d.im);
                dd_re.push(dd.re);
                dd_im.push(dd.im);
            }
        }
        let r = points.len();
        let m = b.len();
        [Self::new(r, m, d_re), Self::new(r, m, d_im), Self::new(r, m, dd_re), Self::new(r, m, dd_im)]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-wise scaling of the mode axis (e.g. by field scales).
    pub fn scale_modes(&mut self, s: &[f64]) {
        for row in self.values.chunks_exact_mut(self.modes) {
            for (v, s) in row.iter_mut().zip(s) {
                *v *= s;
            }
        }
    }

    /// `out[b][r] = Σ_n coeffs[b][n] M[r][n]` for a batch of coefficient rows.
    pub fn synthesize(&self, coeffs: &[f64], batch: usize) -> Vec<f64> {
        synthesize_rows(&self.values, self.rows, self.modes, coeffs, batch)
    }

    /// `out[b][n] = Σ_r values[b][r] M[r][n]`.
    pub fn project(&self, values: &[f64], batch: usize) -> Vec<f64> {
        assert_eq!(values.len(), batch * self.rows);
        let mut out = vec![0.0; batch * self.modes];
        if batch == 0 || self.rows == 0 {
            return out;
        }
        // SAFETY: all slices have the lengths implied by the dimensions and strides.
        unsafe {
            matrixmultiply::dgemm(
                batch,
                self.rows,
                self.modes,
                1.0,
                values.as_ptr(),
                self.rows as isize,
                1,
                self.values.as_ptr(),
                self.modes as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                self.modes as isize,
                1,
            );
        }
        out
    }
}

/// Batched synthesis against a row-major `rows × modes` matrix.
pub fn synthesize_rows(mat: &[f64], rows: usize, modes: usize, coeffs: &[f64], batch: usize) -> Vec<f64> {
    assert_eq!(mat.len(), rows * modes);
    assert_eq!(coeffs.len(), batch * modes);
    let mut out = vec![0.0; batch * rows];
    if batch == 0 || rows == 0 {
        return out;
    }
    // SAFETY: all slices have the lengths implied by the dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            batch,
            modes,
            rows,
            1.0,
            coeffs.as_ptr(),
            modes as isize,
            1,
            mat.as_ptr(),
            1,
            modes as isize,
            0.0,
            out.as_mut_ptr(),
            rows as isize,
            1,
        );
    }
    out
}

/// Field values at every node for a batch of expansion-coefficient rows.
/// Uses the FFT on the torus and the cached node matrix on the sphere.
pub fn nodal_batch(b: &SpectralBasis, coeffs: &[f64], batch: usize) -> Vec<f64> {
    let m = b.len();
    match (b.kind(), b.node_matrix()) {
        (SurfaceKind::Sphere, Some(mat)) => {
            synthesize_rows(&mat, b.surface().nodes().len(), m, coeffs, batch)
        }
        _ => coeffs.chunks_exact(m).flat_map(|c| b.synthesize(c)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_surface, ScalarField};
    use crate::spectral::build_basis_cutoff;

    fn torus(k: usize) -> Arc<SpectralBasis> {
        Arc::new(build_basis_cutoff(&make_surface(SurfaceKind::Torus, 64).unwrap(), k).unwrap())
    }

    #[test]
    fn sampling_is_deterministic() {
        let b = torus(8);
        let s1 = sample_gff(&b, StreamId::new(11, 5));
        let s2 = sample_gff(&b, StreamId::new(11, 5));
        let s3 = sample_gff(&b, StreamId::new(11, 6));
        assert_eq!(s1.coefficients(), s2.coefficients());
        assert_ne!(s1.coefficients(), s3.coefficients());
    }

    #[test]
    fn pairing_with_modes_and_constants() {
        let b = torus(8);
        let s = sample_gff(&b, StreamId::new(3, 0));
        assert_eq!(s.pair(&vec![1.0; b.surface().nodes().len()]), 0.0);
        let c = s.field_coefficients();
        for n in [0, 5, 40] {
            let e: Vec<f64> = b.surface().nodes().iter().map(|nd| b.eval_modes(nd.z)[n]).collect();
            assert!((s.pair(&e) - c[n]).abs() < 1e-10);
        }
    }

    #[test]
    fn nodal_values_reproduce_coefficients() {
        let b = torus(12);
        let s = sample_gff(&b, StreamId::new(9, 1));
        let proj = b.project(&s.nodal_values());
        for (p, c) in proj.iter().zip(s.field_coefficients()) {
            assert!((p - c).abs() < 1e-8);
        }
    }

    #[test]
    fn circle_average_matches_multipliers() {
        for kind in [SurfaceKind::Torus, SurfaceKind::Sphere] {
            let s = make_surface(kind, 64).unwrap();
            let b = Arc::new(build_basis_cutoff(&s, 10).unwrap());
            let g = sample_gff(&b, StreamId::new(1, 2));
            let x = Complex64::new(0.3, -0.2);
            let delta = 0.3;
            let direct = g.circle_average(x, delta).unwrap();
            let m = b.circle_multipliers(delta);
            let c: Vec<f64> = g.field_coefficients().iter().zip(&m).map(|(c, m)| c * m).collect();
            let via = dot(&b.eval_modes(x), &c);
            assert!((direct - via).abs() < 1e-10, "{kind:?}: {direct} vs {via}");
        }
    }

    #[test]
    fn smooth_field_circle_average_is_pointwise() {
        let b = torus(16);
        // only the lowest mode pair
        let mut a = vec![0.0; b.len()];
        a[0] = 1.0;
        let g = GffSample::from_coefficients(&b, a).unwrap();
        let x = Complex64::new(0.2, 0.7);
        let avg = g.circle_average(x, 1.0 / 32.0).unwrap();
        assert!((avg - g.value(x)).abs() < 0.01 * g.value(x).abs().max(0.1));
    }

    #[test]
    fn resolution_error() {
        let b = torus(8);
        let g = sample_gff(&b, StreamId::new(1, 0));
        assert!(matches!(g.circle_average(Complex64::new(0.1, 0.1), 0.01), Err(Error::Resolution { .. })));
    }

    #[test]
    fn batched_synthesis_matches_single() {
        let s = make_surface(SurfaceKind::Sphere, 32).unwrap();
        let b = Arc::new(build_basis_cutoff(&s, 6).unwrap());
        let g1 = sample_gff(&b, StreamId::new(4, 0));
        let g2 = sample_gff(&b, StreamId::new(4, 1));
        let mut c = g1.field_coefficients();
        c.extend(g2.field_coefficients());
        let both = nodal_batch(&b, &c, 2);
        let n = s.nodes().len();
        let single = g2.nodal_values();
        for i in 0..n {
            assert!((both[n + i] - single[i]).abs() < 1e-12);
        }
        let pts = [Complex64::new(0.1, 0.4), Complex64::new(-2.0, 1.0)];
        let pm = PointMatrix::at_points(&b, &pts);
        let v = pm.synthesize(&c, 2);
        assert!((v[2] - g2.value(pts[0])).abs() < 1e-12);
        let proj = pm.project(&[1.0, 0.0, 0.0, 2.0], 2);
        let e1 = b.eval_modes(pts[1]);
        assert!((proj[b.len() + 3] - 2.0 * e1[3]).abs() < 1e-12);
    }

    #[test]
    fn heat_taper_shrinks_high_modes() {
        let b = torus(8);
        let w = Taper::Heat { c: 4.0 }.weights(&b);
        let top = b.eigenvalues().iter().cloned().fold(0.0f64, f64::max);
        for (t, l) in w.iter().zip(b.eigenvalues()) {
            assert!((t - (-2.0 * l / top).exp()).abs() < 1e-14);
        }
        let _ = ScalarField::Zero;
    }
}
