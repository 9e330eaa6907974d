//! Liouville correlation functions by Monte Carlo.
//!
//! The zero mode is integrated in closed form,
//! `∫ e^{(Σα−Qχ)c} e^{−μ e^{γc} M} dc = Γ(s) (μM)^{−s} / γ`, `s = (Σα − Qχ)/γ`,
//! so each field sample `a` contributes the weight
//!
//! `W(a) = Π_j V_j(a) · e^{−(Q/4π)∫K X dv} · Γ(s)(μM(a))^{−s}/γ`
//!
//! where `V_j` are Wick-normalized insertions and `M` the Wick-normalized
//! chaos mass. The insertions and the curvature term are linear in `a`, say
//! `a·L + const`, so they can also be absorbed by a Girsanov shift `a → a + L`.
//!
//! A Weyl-transformed reference `e^ω g` is handled on the same samples:
//! the zero-mean field of the new metric is `X − mean_{e^ω g}(X)`.

use crate::error::{Error, Result};
use crate::geometry::{
    anomaly_functional, background_charge, check_gamma, conformal_weight, Mobius, SurfaceKind,
    WeylFactor,
};
use crate::gff::{field_scales, sample_coefficients, PointMatrix};
use crate::gmc::homogeneous_variance;
use crate::par;
use crate::rng::StreamId;
use crate::spectral::{diagonal_remainder, SpectralBasis, Taper};
use crate::stats::{pairwise_sum, variance, Estimate};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Samples per work chunk.
const CHUNK: usize = 32;

/// A primary field `V_α(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub point: Complex64,
    pub alpha: f64,
}

impl Insertion {
    pub fn new(point: Complex64, alpha: f64) -> Self {
        Self { point, alpha }
    }
}

/// Insertions and couplings of a correlation function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorSpec {
    pub kind: SurfaceKind,
    pub gamma: f64,
    pub mu: f64,
    pub insertions: Vec<Insertion>,
}

impl CorrelatorSpec {
    /// Checks `γ ∈ (0,2)` and `μ > 0`; Seiberg bounds are checked separately.
    pub fn new(kind: SurfaceKind, gamma: f64, mu: f64, insertions: Vec<Insertion>) -> Result<Self> {
        check_gamma(gamma)?;
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Domain(format!(
                "cosmological constant μ must be positive and finite (got {mu}); the zero-mode integral diverges otherwise"
            )));
        }
        for ins in &insertions {
            if !ins.alpha.is_finite() || !ins.point.is_finite() {
                return Err(Error::Config("insertion with non-finite point or weight".into()));
            }
        }
        Ok(Self { kind, gamma, mu, insertions })
    }

    pub fn q(&self) -> f64 {
        background_charge(self.gamma)
    }

    pub fn chi(&self) -> f64 {
        self.kind.euler_characteristic() as f64
    }

    pub fn alpha_sum(&self) -> f64 {
        self.insertions.iter().map(|i| i.alpha).sum()
    }

    /// `s = (Σα − Qχ)/γ`.
    pub fn s_exponent(&self) -> f64 {
        (self.alpha_sum() - self.q() * self.chi()) / self.gamma
    }

    /// Conformal weights `Δ_{α_j}`.
    pub fn weights(&self) -> Vec<f64> {
        self.insertions
            .iter()
            .map(|i| conformal_weight(i.alpha, self.gamma).expect("γ checked at construction"))
            .collect()
    }

    /// The same spec with insertions sorted by `(Re x, Im x, α)`.
    pub fn canonical(&self) -> Self {
        let mut s = self.clone();
        s.insertions.sort_by(|a, b| {
            a.point
                .re
                .total_cmp(&b.point.re)
                .then(a.point.im.total_cmp(&b.point.im))
                .then(a.alpha.total_cmp(&b.alpha))
        });
        s
    }

    /// The spec with every insertion moved by `ψ`.
    pub fn moved(&self, psi: &Mobius) -> Self {
        let mut s = self.clone();
        for i in &mut s.insertions {
            i.point = psi.apply(i.point);
        }
        s
    }

    /// Seiberg bounds, chart guard and insertion separation (≥ 4 grid spacings).
    pub fn validate(&self, b: &SpectralBasis) -> Result<()> {
        if b.kind() != self.kind {
            return Err(Error::Config(format!(
                "spec is for the {} but the basis is on the {}",
                self.kind.name(),
                b.kind().name()
            )));
        }
        let rep = seiberg_check(self);
        if !rep.holds {
            return Err(Error::Domain(format!(
                "Seiberg bounds violated: Σα = {:.4}, Qχ = {:.4}, α < Q = {:.4} per insertion: {:?}",
                rep.alpha_sum, rep.q_chi, rep.q, rep.alpha_bounds
            )));
        }
        let s = b.surface();
        let min = 4.0 * s.grid_spacing();
        for (i, a) in self.insertions.iter().enumerate() {
            s.check_point(a.point)?;
            for c in &self.insertions[i + 1..] {
                let d = s.distance(a.point, c.point);
                if d < min {
                    return Err(Error::Config(format!(
                        "insertions {} and {} are {d:.4} apart, below 4 grid spacings ({min:.4})",
                        a.point, c.point
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of [`seiberg_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeibergReport {
    pub alpha_sum: f64,
    pub q: f64,
    pub q_chi: f64,
    /// `Σα > Qχ`.
    pub sum_bound: bool,
    /// `α_j < Q` per insertion.
    pub alpha_bounds: Vec<bool>,
    pub holds: bool,
}

pub fn seiberg_check(spec: &CorrelatorSpec) -> SeibergReport {
    let q = spec.q();
    let q_chi = q * spec.chi();
    let alpha_sum = spec.alpha_sum();
    let sum_bound = alpha_sum > q_chi;
    let alpha_bounds: Vec<bool> = spec.insertions.iter().map(|i| i.alpha < q).collect();
    let holds = sum_bound && alpha_bounds.iter().all(|b| *b);
    SeibergReport { alpha_sum, q, q_chi, sum_bound, alpha_bounds, holds }
}

/// `ln[Γ(s)(μM)^{−s}/γ]`.
pub fn zero_mode_log(s: f64, mu: f64, mass: f64, gamma: f64) -> f64 {
    libm::lgamma(s) - s * (mu * mass).ln() - gamma.ln()
}

/// `∫ e^{γsc} e^{−μ M e^{γc}} dc` by composite Simpson quadrature (oracle for
/// [`zero_mode_log`]).
pub fn zero_mode_quadrature(s: f64, mu: f64, mass: f64, gamma: f64) -> f64 {
    let peak = (s / (mu * mass)).ln() / gamma;
    let lo = peak - 60.0 / (gamma * s);
    let hi = peak + 5.0 / gamma;
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let f = |c: f64| (gamma * s * c - mu * mass * (gamma * c).exp()).exp();
    let terms: Vec<f64> = (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * f(lo + i as f64 * h)
        })
        .collect();
    pairwise_sum(&terms) * h / 3.0
}

/// How samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Plain field samples; insertions enter as `e^{a·L}`.
    Direct,
    /// Samples shifted by the insertion potential; weights carry `e^{|L|²/2}`.
    #[default]
    Girsanov,
}

/// Quadrature nodes for the chaos mass and how to synthesize fields on them.
#[derive(Debug, Clone)]
pub struct Quadrature {
    points: Vec<Complex64>,
    weights: Vec<f64>,
    matrix: Option<PointMatrix>,
}

impl Quadrature {
    /// The surface grid. Uses the FFT on the torus and a node matrix
    /// (without zero-weight nodes) on the sphere.
    pub fn grid(b: &SpectralBasis) -> Self {
        let s = b.surface();
        match b.kind() {
            SurfaceKind::Torus => Self {
                points: s.nodes().iter().map(|n| n.z).collect(),
                weights: s.weights(),
                matrix: None,
            },
            SurfaceKind::Sphere => {
                let keep: Vec<_> = s.nodes().iter().filter(|n| n.weight > 0.0).collect();
                let mut values = Vec::with_capacity(keep.len() * b.len());
                for n in &keep {
                    values.extend(b.eval_modes_sphere(n.p));
                }
                Self {
                    points: keep.iter().map(|n| n.z).collect(),
                    weights: keep.iter().map(|n| n.weight).collect(),
                    matrix: Some(PointMatrix::new(keep.len(), b.len(), values)),
                }
            }
        }
    }

    /// Arbitrary primary-chart points with weights.
    pub fn from_points(b: &SpectralBasis, points: Vec<Complex64>, weights: Vec<f64>) -> Self {
        assert_eq!(points.len(), weights.len());
        let matrix = Some(PointMatrix::at_points(b, &points));
        Self { points, weights, matrix }
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mode values at the nodes, when synthesis is not done by FFT.
    pub fn matrix(&self) -> Option<&PointMatrix> {
        self.matrix.as_ref()
    }

    /// Field values for a batch of expansion-coefficient rows.
    pub fn synthesize(&self, b: &SpectralBasis, coeffs: &[f64], batch: usize) -> Vec<f64> {
        match &self.matrix {
            Some(m) => m.synthesize(coeffs, batch),
            None => coeffs.chunks_exact(b.len()).flat_map(|c| b.synthesize(c)).collect(),
        }
    }
}

/// Weyl-factor data for a transformed reference metric `e^ω g`.
#[derive(Debug, Clone)]
struct WeylData {
    omega: WeylFactor,
    /// `s_n p_n`, `p_n = (1/v')∫ e_n e^ω dv`: `mean'(X) = a·sp`.
    mean_vec: Vec<f64>,
    /// Curvature-term vector per unit `Q`: `−(1/4π) s_n (λ_n ω̂_n − K₀ v p_n)`.
    curvature: Vec<f64>,
    /// `ω` at the quadrature nodes.
    node_omega: Vec<f64>,
}

/// The sampled field: basis, taper, optional Weyl factor and mass quadrature.
#[derive(Debug, Clone)]
pub struct FieldModel {
    basis: Arc<SpectralBasis>,
    taper: Taper,
    scales: Vec<f64>,
    variance: f64,
    remainder: f64,
    quad: Arc<Quadrature>,
    weyl: Option<WeylData>,
}

impl FieldModel {
    pub fn new(basis: &Arc<SpectralBasis>, taper: Taper) -> Self {
        let quad = Arc::new(Quadrature::grid(basis));
        Self::with_quadrature(basis, taper, quad)
    }

    pub fn with_quadrature(basis: &Arc<SpectralBasis>, taper: Taper, quad: Arc<Quadrature>) -> Self {
        let tau = taper.weights(basis);
        Self {
            basis: Arc::clone(basis),
            taper,
            scales: field_scales(basis, taper),
            variance: homogeneous_variance(basis, &tau),
            remainder: diagonal_remainder(basis.kind()),
            quad,
            weyl: None,
        }
    }

    /// The same field model for the metric `e^ω g` (same samples).
    pub fn weyl(&self, omega: &WeylFactor) -> Self {
        let b = &self.basis;
        let kind = b.kind();
        let e = |z: Complex64| omega.field.value(kind, z).exp();
        let vol = b.integrate_fn(e);
        let p: Vec<f64> = b.project_fn(e).iter().map(|x| x / vol).collect();
        let omega_hat = b.project_fn(|z| omega.field.value(kind, z));
        let k0 = match kind {
            SurfaceKind::Torus => 0.0,
            SurfaceKind::Sphere => 2.0,
        };
        let v = b.surface().volume();
        let curvature = (0..b.len())
            .map(|n| -self.scales[n] * (b.eigenvalues()[n] * omega_hat[n] - k0 * v * p[n]) / (4.0 * PI))
            .collect();
        let mean_vec = p.iter().zip(&self.scales).map(|(p, s)| p * s).collect();
        let node_omega = self.quad.points.iter().map(|z| omega.field.value(kind, *z)).collect();
        let mut out = self.clone();
        out.weyl = Some(WeylData { omega: omega.clone(), mean_vec, curvature, node_omega });
        out
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn taper(&self) -> Taper {
        self.taper
    }

    /// `τ_n √(2π/λ_n)`.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Pointwise variance of the sampled field.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn remainder(&self) -> f64 {
        self.remainder
    }

    pub fn quadrature(&self) -> &Arc<Quadrature> {
        &self.quad
    }

    pub fn has_weyl(&self) -> bool {
        self.weyl.is_some()
    }

    fn omega_at(&self, z: Complex64) -> f64 {
        self.weyl.as_ref().map_or(0.0, |w| w.omega.field.value(self.basis.kind(), z))
    }

    /// Precompute everything that depends on the spec.
    pub fn prepare(&self, spec: &CorrelatorSpec) -> Result<Prepared> {
        spec.validate(&self.basis)?;
        let spec = spec.canonical();
        let g = spec.gamma;
        let q = spec.q();
        let s = spec.s_exponent();
        let m = self.basis.len();
        let mut l = vec![0.0; m];
        let mut constant = 0.0;
        for ins in &spec.insertions {
            let e = self.basis.eval_modes(ins.point);
            let a = ins.alpha;
            match &self.weyl {
                None => l.iter_mut().zip(&e).zip(&self.scales).for_each(|((l, e), s)| *l += a * s * e),
                Some(w) => l
                    .iter_mut()
                    .zip(&e)
                    .zip(&self.scales)
                    .zip(&w.mean_vec)
                    .for_each(|(((l, e), s), p)| *l += a * (s * e - p)),
            }
            let om = self.omega_at(ins.point);
            constant += -0.5 * a * a * self.variance + 0.5 * a * a * (self.remainder + 0.5 * om);
        }
        if let Some(w) = &self.weyl {
            l.iter_mut().zip(&w.curvature).for_each(|(l, k)| *l += q * k);
        }
        constant += libm::lgamma(s) - g.ln() - s * spec.mu.ln();
        let node_offset: Vec<f64> = (0..self.quad.len())
            .map(|i| {
                let om = self.weyl.as_ref().map_or(0.0, |w| w.node_omega[i]);
                self.quad.weights[i].ln() + om - 0.5 * g * g * self.variance
                    + 0.5 * g * g * (self.remainder + 0.5 * om)
            })
            .collect();
        let lc: Vec<f64> = l.iter().zip(&self.scales).map(|(l, s)| l * s).collect();
        let h = self.quad.synthesize(&self.basis, &lc, 1);
        let h_mean = self.weyl.as_ref().map_or(0.0, |w| dot(&l, &w.mean_vec));
        let l_norm2 = dot(&l, &l);
        Ok(Prepared { spec, s, l, l_norm2, h, h_mean, constant, node_offset })
    }

    /// Draw `count` samples starting at index `first` and synthesize them on the
    /// quadrature nodes.
    pub fn batch(&self, root: u64, first: u64, count: usize) -> SampleBatch {
        let m = self.basis.len();
        let mut a = Vec::with_capacity(count * m);
        for i in 0..count {
            a.extend(sample_coefficients(m, StreamId::new(root, first + i as u64)));
        }
        let c: Vec<f64> = a.chunks_exact(m).flat_map(|r| r.iter().zip(&self.scales).map(|(a, s)| a * s)).collect();
        let nodes = self.quad.synthesize(&self.basis, &c, count);
        SampleBatch { first, len: count, modes: m, nodes_per_sample: self.quad.len(), a, nodes }
    }

    /// Log-weights of the samples in `batch` for one prepared spec.
    pub fn log_weights(&self, p: &Prepared, batch: &SampleBatch, sampler: Sampler) -> Vec<f64> {
        (0..batch.len).map(|i| self.log_weight(p, batch, i, sampler).0).collect()
    }

    /// `mean_{e^ω g}(X)` of sample `i` (zero without a Weyl factor).
    fn weyl_mean(&self, batch: &SampleBatch, i: usize) -> f64 {
        self.weyl.as_ref().map_or(0.0, |w| dot(batch.coeffs_of(i), &w.mean_vec))
    }

    /// Girsanov shift (if any) and field mean to subtract for sample `i`.
    fn shift_and_mean<'a>(&self, p: &'a Prepared, batch: &SampleBatch, i: usize, sampler: Sampler) -> (Option<&'a [f64]>, f64) {
        let mean = self.weyl_mean(batch, i);
        match sampler {
            Sampler::Direct => (None, mean),
            Sampler::Girsanov => (Some(&p.h), mean + p.h_mean),
        }
    }

    /// `(ln W, ln M)` of sample `i` of the batch.
    pub fn log_weight(&self, p: &Prepared, batch: &SampleBatch, i: usize, sampler: Sampler) -> (f64, f64) {
        let g = p.spec.gamma;
        let x = batch.nodes_of(i);
        let lin = match sampler {
            Sampler::Direct => dot(batch.coeffs_of(i), &p.l),
            Sampler::Girsanov => 0.5 * p.l_norm2,
        };
        let (shift, mean) = self.shift_and_mean(p, batch, i, sampler);
        let log_m = log_sum_exp_by(x.len(), |k| {
            let xv = x[k] + shift.map_or(0.0, |h| h[k]) - mean;
            g * xv + p.node_offset[k]
        });
        (lin + p.constant - p.s * log_m, log_m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln Σ_k e^{f(k)}` with max subtraction and pairwise summation.
pub fn log_sum_exp_by<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    let v: Vec<f64> = (0..n).map(f).collect();
    log_sum_exp(&v)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    if !mx.is_finite() {
        return mx;
    }
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    mx + pairwise_sum(&e).ln()
}

/// Spec-dependent data for a [`FieldModel`].
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Canonically ordered spec.
    pub spec: CorrelatorSpec,
    pub s: f64,
    /// Linear functional of the insertions and curvature term in `a`.
    pub l: Vec<f64>,
    pub l_norm2: f64,
    /// Girsanov shift of the field at the quadrature nodes.
    pub h: Vec<f64>,
    /// `L·sp`: mean of the shift in the transformed metric.
    pub h_mean: f64,
    pub constant: f64,
    /// Per-node `ln w + ω − ½γ²Var + ½γ²(m̂ + ω/2)`.
    pub node_offset: Vec<f64>,
}

/// A batch of coefficient vectors and their nodal fields (unshifted).
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub first: u64,
    pub len: usize,
    modes: usize,
    nodes_per_sample: usize,
    a: Vec<f64>,
    nodes: Vec<f64>,
}

impl SampleBatch {
    pub fn coeffs_of(&self, i: usize) -> &[f64] {
        &self.a[i * self.modes..(i + 1) * self.modes]
    }

    pub fn nodes_of(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.nodes_per_sample..(i + 1) * self.nodes_per_sample]
    }

    pub fn all_coeffs(&self) -> &[f64] {
        &self.a
    }
}

/// Regularization metadata attached to estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationRecord {
    pub surface: SurfaceKind,
    pub resolution: usize,
    pub cutoff: usize,
    pub modes: usize,
    pub taper: Taper,
    pub sampler: Sampler,
}

impl RegularizationRecord {
    pub fn of(model: &FieldModel, sampler: Sampler) -> Self {
        let b = model.basis();
        Self {
            surface: b.kind(),
            resolution: b.surface().n(),
            cutoff: b.cutoff(),
            modes: b.len(),
            taper: model.taper(),
            sampler,
        }
    }
}

/// Monte Carlo estimate of the expectation part of a correlator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorEstimate {
    /// `ln E[W]`.
    pub log_estimate: f64,
    /// Delta-method error of `ln E[W]`.
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
    /// Effective sample size `(ΣW)²/ΣW²`.
    pub ess: f64,
    /// Heavy-tail warning: `max α_j` within `γ/2` of `Q` or ESS below 1% of samples.
    pub tail_risk: bool,
    pub regularization: RegularizationRecord,
}

/// Mean of `e^{ℓ_i}` in log form with its delta-method error and ESS.
pub fn log_mean_exp(logs: &[f64]) -> (Estimate, f64) {
    let mx = logs.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
    let e = Estimate::of_mean(&w);
    let s1 = pairwise_sum(&w);
    let s2 = pairwise_sum(&w.iter().map(|x| x * x).collect::<Vec<_>>());
    (Estimate::new(e.value.ln() + mx, e.stderr / e.value), s1 * s1 / s2)
}

/// Paired `ln(mean e^{a}) − ln(mean e^{b})` with delta-method error.
pub fn log_ratio_paired(a: &[f64], b: &[f64]) -> Estimate {
    let ma = a.iter().fold(f64::NEG_INFINITY, |x, y| x.max(*y));
    let mb = b.iter().fold(f64::NEG_INFINITY, |x, y| x.max(*y));
    let wa: Vec<f64> = a.iter().map(|l| (l - ma).exp()).collect();
    let wb: Vec<f64> = b.iter().map(|l| (l - mb).exp()).collect();
    let r = crate::stats::log_ratio_of_means(&wa, &wb);
    Estimate::new(r.value + ma - mb, r.stderr)
}

fn check_finite(logs: &[f64]) -> Result<()> {
    match logs.iter().position(|l| !l.is_finite()) {
        Some(i) => Err(Error::NonFinite { sample: i }),
        None => Ok(()),
    }
}

/// Log-weights for several prepared specs on shared samples `0..samples`.
/// The models must share basis, taper and quadrature (as [`FieldModel::weyl`]
/// derivatives do).
pub fn shared_log_weights(
    models: &[(&FieldModel, &Prepared)],
    samples: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<Vec<Vec<f64>>> {
    let base = models[0].0;
    let rows: Vec<Vec<f64>> = par::map_chunks(samples, CHUNK, par::default_workers(), |r| {
        let batch = base.batch(seed, r.start as u64, r.len());
        (0..batch.len)
            .map(|i| models.iter().map(|(m, p)| m.log_weight(p, &batch, i, sampler).0).collect())
            .collect()
    });
    let out: Vec<Vec<f64>> = (0..models.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
    for o in &out {
        check_finite(o)?;
    }
    Ok(out)
}

/// `E[W]` for one spec.
pub fn correlator_mc(
    spec: &CorrelatorSpec,
    model: &FieldModel,
    samples: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<CorrelatorEstimate> {
    let p = model.prepare(spec)?;
    let logs = shared_log_weights(&[(model, &p)], samples, seed, sampler)?.remove(0);
    let (e, ess) = log_mean_exp(&logs);
    let q = spec.q();
    let max_alpha = spec.insertions.iter().fold(f64::NEG_INFINITY, |a, i| a.max(i.alpha));
    Ok(CorrelatorEstimate {
        log_estimate: e.value,
        stderr: e.stderr,
        samples,
        seed,
        ess,
        tail_risk: max_alpha > q - 0.5 * spec.gamma || ess < 0.01 * samples as f64,
        regularization: RegularizationRecord::of(model, sampler),
    })
}

/// Both sides of the KPZ identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KpzReport {
    /// `(Σα − χQ)/(μγ)`.
    pub predicted: f64,
    /// `∫⟨V_γ(z)ΠV⟩dv(z) / ⟨ΠV⟩` from the samples.
    pub lhs_over_base: Estimate,
    /// `lhs_over_base / predicted`.
    pub ratio: Estimate,
    pub samples: usize,
    pub seed: u64,
    pub regularization: RegularizationRecord,
}

/// Relative error floor added to exactly-cancelling ratios (rounding).
pub const ROUNDING_FLOOR: f64 = 64.0 * f64::EPSILON;

/// KPZ identity. For every sample the left side inserts `V_γ(z)` at each
/// quadrature node `z` (shifting `s → s+1`) and sums with the node weights;
/// the right side is the base weight times `(Σα − χQ)/(μγ)`.
pub fn kpz_check(
    spec: &CorrelatorSpec,
    model: &FieldModel,
    samples: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<KpzReport> {
    let p = model.prepare(spec)?;
    let g = spec.gamma;
    let s = p.s;
    let extra = libm::lgamma(s + 1.0) - libm::lgamma(s) - spec.mu.ln();
    let pairs: Vec<(f64, f64)> = par::map_chunks(samples, CHUNK, par::default_workers(), |r| {
        let batch = model.batch(seed, r.start as u64, r.len());
        (0..batch.len)
            .map(|i| {
                let (lw, log_m) = model.log_weight(&p, &batch, i, sampler);
                let x = batch.nodes_of(i);
                let (shift, mean) = model.shift_and_mean(&p, &batch, i, sampler);
                // Σ_z w_z V_γ(z) · Γ(s+1)(μM)^{−s−1}/Γ(s)(μM)^{−s}, term by term.
                let terms: Vec<f64> = (0..x.len())
                    .map(|k| {
                        let xv = x[k] + shift.map_or(0.0, |h| h[k]) - mean;
                        (lw + g * xv + p.node_offset[k] + extra - log_m).exp()
                    })
                    .collect();
                (pairwise_sum(&terms), lw)
            })
            .collect()
    });
    let lws: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    check_finite(&lws)?;
    let mx = lws.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let scale = (-mx).exp();
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0 * scale).collect();
    let rhs: Vec<f64> = lws.iter().map(|l| (l - mx).exp()).collect();
    let r = crate::stats::ratio_of_means(&lhs, &rhs);
    let r = Estimate::new(r.value, r.stderr + ROUNDING_FLOOR * r.value.abs());
    let predicted = s / spec.mu;
    // s/μ is (Σα − χQ)/(μγ) since s already carries 1/γ
    Ok(KpzReport {
        predicted,
        lhs_over_base: r,
        ratio: Estimate::new(r.value / predicted, r.stderr / predicted.abs()),
        samples,
        seed,
        regularization: RegularizationRecord::of(model, sampler),
    })
}

/// Measured and predicted log-ratio of two correlators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub measured: Estimate,
    pub predicted: f64,
    /// Anomaly part `6Q²A(ω, g)` of the prediction.
    pub anomaly: f64,
    /// `Σ Δ_j ω(x_j)`.
    pub weight_term: f64,
    pub z_score: f64,
    pub samples: usize,
    pub seed: u64,
    pub regularization: RegularizationRecord,
}

/// `ln E_{e^ω g}[W] − ln E_g[W]` on coupled samples against
/// `6Q² A(ω, g) − Σ Δ_j ω(x_j)`.
pub fn weyl_covariance_check(
    spec: &CorrelatorSpec,
    omega: &WeylFactor,
    model: &FieldModel,
    samples: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<CovarianceReport> {
    let b = model.basis();
    let moved = model.weyl(omega);
    let p0 = model.prepare(spec)?;
    let p1 = moved.prepare(spec)?;
    let logs = shared_log_weights(&[(model, &p0), (&moved, &p1)], samples, seed, sampler)?;
    let measured = log_ratio_paired(&logs[1], &logs[0]);
    let q = spec.q();
    let anomaly = 6.0 * q * q * anomaly_functional(omega, b.surface());
    let weight_term: f64 = spec
        .insertions
        .iter()
        .zip(spec.weights())
        .map(|(i, d)| d * omega.field.value(b.kind(), i.point))
        .sum();
    let predicted = anomaly - weight_term;
    Ok(CovarianceReport {
        measured,
        predicted,
        anomaly,
        weight_term,
        z_score: measured.z_score(predicted, 0.0),
        samples,
        seed,
        regularization: RegularizationRecord::of(model, sampler),
    })
}

/// `ln E[W](ψx) − ln E[W](x)` on the sphere against
/// `6Q² A(ω_ψ, g) − Σ Δ_j ω_ψ(x_j)`, with `ψ*g = e^{ω_ψ} g`.
pub fn mobius_covariance_check(
    spec: &CorrelatorSpec,
    psi: &Mobius,
    model: &FieldModel,
    samples: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<CovarianceReport> {
    let b = model.basis();
    if b.kind() != SurfaceKind::Sphere {
        return Err(Error::UnsupportedSurface { op: "mobius_covariance_check", surface: b.kind().name() });
    }
    let moved = spec.moved(psi);
    for i in &moved.insertions {
        b.surface().check_point(i.point).map_err(|_| {
            Error::Config(format!("moved insertion {} leaves the chart guard region", i.point))
        })?;
    }
    let p0 = model.prepare(spec)?;
    let p1 = model.prepare(&moved)?;
    let logs = shared_log_weights(&[(model, &p0), (model, &p1)], samples, seed, sampler)?;
    let measured = log_ratio_paired(&logs[1], &logs[0]);
    let q = spec.q();
    let omega = WeylFactor::new(crate::geometry::ScalarField::MobiusFactor(*psi));
    let anomaly = 6.0 * q * q * anomaly_functional(&omega, b.surface());
    let weight_term: f64 = spec
        .insertions
        .iter()
        .zip(spec.weights())
        .map(|(i, d)| d * psi.omega(i.point.re, i.point.im))
        .sum();
    let predicted = anomaly - weight_term;
    Ok(CovarianceReport {
        measured,
        predicted,
        anomaly,
        weight_term,
        z_score: measured.z_score(predicted, 0.0),
        samples,
        seed,
        regularization: RegularizationRecord::of(model, sampler),
    })
}

/// Sample variance of log-weights (diagnostic for sampler choice).
pub fn log_weight_spread(logs: &[f64]) -> f64 {
    variance(logs).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_surface, FourierTerm, ScalarField};
    use crate::spectral::build_basis_cutoff;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn torus_model(k: usize) -> FieldModel {
        let b = Arc::new(build_basis_cutoff(&make_surface(SurfaceKind::Torus, 32).unwrap(), k).unwrap());
        FieldModel::new(&b, Taper::Sharp)
    }

    #[test]
    fn seiberg_examples() {
        let t = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![Insertion::new(c(0.5, 0.5), 0.5)]).unwrap();
        assert!(seiberg_check(&t).holds);
        let ins = |a: f64| vec![Insertion::new(c(0.0, 0.0), a), Insertion::new(c(1.0, 0.0), a), Insertion::new(c(0.0, 1.0), a)];
        let s = CorrelatorSpec::new(SurfaceKind::Sphere, 1.0, 1.0, ins(1.0)).unwrap();
        assert!(!seiberg_check(&s).holds);
        let s = CorrelatorSpec::new(SurfaceKind::Sphere, 1.5, 1.0, ins(2.0)).unwrap();
        let r = seiberg_check(&s);
        assert!(r.holds);
        assert!((r.q - (2.0 / 1.5 + 0.75)).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_mu() {
        let e = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 0.0, vec![]);
        assert!(matches!(e, Err(Error::Domain(_))));
    }

    #[test]
    fn zero_mode_closed_form_matches_quadrature() {
        for (s, mu, m, g) in [(0.5, 1.0, 1.3, 1.0), (1.22, 2.0, 0.4, 1.5), (40.0, 1.0, 3.0, 0.2)] {
            let closed = zero_mode_log(s, mu, m, g);
            let quad = zero_mode_quadrature(s, mu, m, g).ln();
            assert!((closed - quad).abs() < 1e-9, "{closed} vs {quad}");
        }
    }

    #[test]
    fn direct_and_girsanov_agree_at_easy_parameters() {
        let model = torus_model(8);
        let spec = CorrelatorSpec::new(SurfaceKind::Torus, 0.5, 1.0, vec![Insertion::new(c(0.3, 0.4), 0.3)]).unwrap();
        let d = correlator_mc(&spec, &model, 4000, 1, Sampler::Direct).unwrap();
        let g = correlator_mc(&spec, &model, 4000, 2, Sampler::Girsanov).unwrap();
        let z = (d.log_estimate - g.log_estimate) / (d.stderr.hypot(g.stderr));
        assert!(z.abs() < 4.0, "z = {z}");
    }

    #[test]
    fn permutation_is_bit_identical() {
        let model = torus_model(6);
        let a = Insertion::new(c(0.2, 0.3), 0.4);
        let b = Insertion::new(c(0.7, 0.6), 0.3);
        let s1 = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![a, b]).unwrap();
        let s2 = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![b, a]).unwrap();
        let e1 = correlator_mc(&s1, &model, 200, 9, Sampler::Girsanov).unwrap();
        let e2 = correlator_mc(&s2, &model, 200, 9, Sampler::Girsanov).unwrap();
        assert_eq!(e1.log_estimate.to_bits(), e2.log_estimate.to_bits());
    }

    #[test]
    fn constant_weyl_shift_is_exact_per_sample() {
        let model = torus_model(8);
        let spec = CorrelatorSpec::new(
            SurfaceKind::Torus,
            1.0,
            1.0,
            vec![Insertion::new(c(0.3, 0.4), 0.5), Insertion::new(c(0.7, 0.1), 0.2)],
        )
        .unwrap();
        let cst = 0.7;
        let moved = model.weyl(&WeylFactor::constant(cst));
        let p0 = model.prepare(&spec).unwrap();
        let p1 = moved.prepare(&spec).unwrap();
        let logs = shared_log_weights(&[(&model, &p0), (&moved, &p1)], 64, 3, Sampler::Direct).unwrap();
        let want = -cst * spec.weights().iter().sum::<f64>();
        for (a, b) in logs[1].iter().zip(&logs[0]) {
            assert!((a - b - want).abs() < 1e-10, "{} vs {want}", a - b);
        }
    }

    #[test]
    fn zero_weyl_is_identity() {
        let model = torus_model(6);
        let spec = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![Insertion::new(c(0.3, 0.4), 0.5)]).unwrap();
        let r = weyl_covariance_check(&spec, &WeylFactor::zero(), &model, 64, 1, Sampler::Girsanov).unwrap();
        assert!(r.measured.value.abs() < 1e-12);
        assert_eq!(r.predicted, 0.0);
    }

    #[test]
    fn kpz_is_exact_per_sample() {
        let model = torus_model(8);
        let spec = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![Insertion::new(c(0.5, 0.5), 0.5)]).unwrap();
        let r = kpz_check(&spec, &model, 256, 4, Sampler::Girsanov).unwrap();
        assert!((r.predicted - 0.5).abs() < 1e-15);
        assert!(r.ratio.within(1.0, 0.0, 3.0), "{:?}", r.ratio);
    }

    #[test]
    fn band_limited_weyl_quick() {
        let model = torus_model(8);
        let spec = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![Insertion::new(c(0.5, 0.5), 0.5)]).unwrap();
        let om = WeylFactor::new(ScalarField::Fourier(vec![FourierTerm { k: [1, 0], a: 0.3, b: 0.1 }]));
        let r = weyl_covariance_check(&spec, &om, &model, 4000, 5, Sampler::Girsanov).unwrap();
        assert!(r.z_score.abs() < 4.0, "{r:?}");
    }

    #[test]
    fn validation_errors() {
        let model = torus_model(6);
        let close = CorrelatorSpec::new(
            SurfaceKind::Torus,
            1.0,
            1.0,
            vec![Insertion::new(c(0.3, 0.4), 0.5), Insertion::new(c(0.3, 0.41), 0.5)],
        )
        .unwrap();
        assert!(matches!(model.prepare(&close), Err(Error::Config(_))));
        let none = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![]).unwrap();
        assert!(matches!(model.prepare(&none), Err(Error::Domain(_))));
    }
}
