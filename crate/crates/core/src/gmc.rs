//! Gaussian multiplicative chaos built from circle-averaged field samples.
//!
//! Cell masses use the Wick normalization
//! `exp(γX_δ − ½γ²Var X_δ) · e^{½γ² m̂} · w`, where `m̂` is the spectral
//! diagonal remainder of the surface, so that `E[mass(A)] = ∫_A e^{½γ²m̂} dv`
//! holds exactly at every truncation.

use crate::error::{Error, Result};
use crate::geometry::{check_gamma, Surface, SurfaceKind};
use crate::gff::{nodal_batch, sample_coefficients, GffSample};
use crate::par;
use crate::rng::StreamId;
use crate::spectral::{diagonal_remainder, SpectralBasis};
use crate::stats::{hill_tail_index, pairwise_sum, Estimate};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// A union of grid cells, stored as a node mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    mask: Vec<bool>,
}

impl Region {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn whole(s: &Surface) -> Self {
        Self { mask: vec![true; s.nodes().len()] }
    }

    /// Nodes whose primary-chart coordinate satisfies `pred`.
    pub fn from_predicate<F: Fn(Complex64) -> bool>(s: &Surface, pred: F) -> Self {
        Self { mask: s.nodes().iter().map(|n| pred(n.z)).collect() }
    }

    /// Axis-aligned chart square `|Re(z−c)|, |Im(z−c)| < h` (torus-periodic on the torus).
    pub fn square(s: &Surface, center: Complex64, half: f64) -> Self {
        let kind = s.kind();
        Self::from_predicate(s, |z| {
            let d = crate::spectral::displacement(kind, z, center);
            d.re.abs() < half && d.im.abs() < half
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn union(&self, o: &Region) -> Region {
        Region { mask: self.mask.iter().zip(&o.mask).map(|(a, b)| *a || *b).collect() }
    }

    pub fn difference(&self, o: &Region) -> Region {
        Region { mask: self.mask.iter().zip(&o.mask).map(|(a, b)| *a && !*b).collect() }
    }

    pub fn is_disjoint(&self, o: &Region) -> bool {
        !self.mask.iter().zip(&o.mask).any(|(a, b)| *a && *b)
    }

    /// `∫_A e^{½γ²m̂} dv`: the exact first moment of `mass(A)`.
    pub fn first_moment(&self, s: &Surface, gamma: f64) -> f64 {
        let d = (0.5 * gamma * gamma * diagonal_remainder(s.kind())).exp();
        d * self.volume(s)
    }

    pub fn volume(&self, s: &Surface) -> f64 {
        let w: Vec<f64> = s.nodes().iter().zip(&self.mask).filter(|(_, m)| **m).map(|(n, _)| n.weight).collect();
        pairwise_sum(&w)
    }
}

/// What was subtracted in the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// `Var X_δ(x)` (constant on the homogeneous reference surfaces).
    pub variance: f64,
    /// Diagonal remainder `m̂` entering `e^{½γ²m̂}`.
    pub remainder: f64,
}

/// Reusable per-(basis, γ, δ) data for building measures.
#[derive(Debug, Clone)]
pub struct GmcSetup {
    basis: Arc<SpectralBasis>,
    gamma: f64,
    delta: f64,
    multipliers: Vec<f64>,
    scales: Vec<f64>,
    norm: Normalization,
}

/// Smallest admissible δ: two grid spacings and `4/N`, `N` the cutoff.
pub fn delta_floor(b: &SpectralBasis) -> f64 {
    b.min_circle_radius().max(4.0 / b.cutoff() as f64)
}

/// `Var X_δ` on a homogeneous surface: `(1/v) Σ 2π m_n² / λ_n`, since
/// `Σ_{modes of one eigenspace} e_n(x)²` is constant there.
pub fn homogeneous_variance(b: &SpectralBasis, multipliers: &[f64]) -> f64 {
    let terms: Vec<f64> = multipliers
        .iter()
        .zip(b.eigenvalues())
        .map(|(m, l)| 2.0 * PI * m * m / l)
        .collect();
    let volume = match b.kind() {
        SurfaceKind::Torus => 1.0,
        SurfaceKind::Sphere => 4.0 * PI,
    };
    pairwise_sum(&terms) / volume
}

impl GmcSetup {
    pub fn new(b: &Arc<SpectralBasis>, gamma: f64, delta: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Self::new_unchecked(b, gamma, delta)
    }

    /// As [`GmcSetup::new`] but accepting `γ = 0` (diagnostics only).
    fn new_unchecked(b: &Arc<SpectralBasis>, gamma: f64, delta: f64) -> Result<Self> {
        let limit = delta_floor(b);
        if !(delta >= limit * (1.0 - 1e-12)) {
            return Err(Error::Resolution { scale: delta, limit });
        }
        let multipliers = b.circle_multipliers(delta);
        let scales = multipliers
            .iter()
            .zip(b.eigenvalues())
            .map(|(m, l)| m * (2.0 * PI / l).sqrt())
            .collect();
        let norm = Normalization {
            variance: homogeneous_variance(b, &multipliers),
            remainder: diagonal_remainder(b.kind()),
        };
        Ok(Self { basis: Arc::clone(b), gamma, delta, multipliers, scales, norm })
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    /// Masses from standard-normal coefficients `a`.
    pub fn masses_from(&self, a: &[f64]) -> Vec<f64> {
        let c: Vec<f64> = a.iter().zip(&self.scales).map(|(a, s)| a * s).collect();
        let x = self.basis.synthesize(&c);
        self.masses_from_field(&x)
    }

    /// Masses from nodal values of `X_δ`.
    pub fn masses_from_field(&self, x: &[f64]) -> Vec<f64> {
        let g = self.gamma;
        let shift = -0.5 * g * g * self.norm.variance + 0.5 * g * g * self.norm.remainder;
        x.iter()
            .zip(self.basis.surface().nodes())
            .map(|(x, n)| (g * x + shift).exp() * n.weight)
            .collect()
    }

    pub fn measure(&self, sample: &GffSample) -> GmcMeasure {
        GmcMeasure {
            masses: self.masses_from(sample.coefficients()),
            gamma: self.gamma,
            delta: self.delta,
            normalization: self.norm,
            stream: sample.stream(),
        }
    }

    /// Masses of several regions for a batch of samples `root, first..first+count`.
    pub fn region_masses(&self, regions: &[Region], root: u64, first: u64, count: usize) -> Vec<Vec<f64>> {
        let m = self.basis.len();
        let mut coeffs = Vec::with_capacity(count * m);
        for i in 0..count {
            let a = sample_coefficients(m, StreamId::new(root, first + i as u64));
            coeffs.extend(a.iter().zip(&self.scales).map(|(a, s)| a * s));
        }
        let x = nodal_batch(&self.basis, &coeffs, count);
        let nn = self.basis.surface().nodes().len();
        x.chunks_exact(nn)
            .map(|xi| {
                let mass = self.masses_from_field(xi);
                regions.iter().map(|r| masked_sum(&mass, r)).collect()
            })
            .collect()
    }

    /// `C_δ(x_i, x_j) = Σ 2π m_n² e_n(x_i) e_n(x_j)/λ_n` for the nodes of `r`,
    /// as rows over all nodes.
    fn covariance_rows(&self, r: &Region) -> Vec<(usize, Vec<f64>)> {
        let b = &self.basis;
        let s = b.surface();
        let w2: Vec<f64> = self
            .multipliers
            .iter()
            .zip(b.eigenvalues())
            .map(|(m, l)| 2.0 * PI * m * m / l)
            .collect();
        let idx: Vec<usize> = (0..r.mask.len()).filter(|i| r.mask[*i]).collect();
        par::map_indices(idx.len(), par::default_workers(), |k| {
            let i = idx[k];
            let e = b.eval_modes(s.nodes()[i].z);
            let c: Vec<f64> = e.iter().zip(&w2).map(|(e, w)| e * w).collect();
            (i, b.synthesize(&c))
        })
    }

    /// `E[mass(A)²] = e^{γ²m̂} Σ_{i,j∈A} w_i w_j e^{γ² C_δ(x_i,x_j)}`.
    pub fn second_moment(&self, r: &Region) -> f64 {
        let g2 = self.gamma * self.gamma;
        let nodes = self.basis.surface().nodes();
        let rows = self.covariance_rows(r);
        let per_row: Vec<f64> = rows
            .iter()
            .map(|(i, row)| {
                let t: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| r.mask[*j])
                    .map(|(j, c)| nodes[j].weight * (g2 * c).exp())
                    .collect();
                nodes[*i].weight * pairwise_sum(&t)
            })
            .collect();
        (g2 * self.norm.remainder).exp() * pairwise_sum(&per_row)
    }
}

fn masked_sum(mass: &[f64], r: &Region) -> f64 {
    let v: Vec<f64> = mass.iter().zip(&r.mask).filter(|(_, m)| **m).map(|(x, _)| *x).collect();
    pairwise_sum(&v)
}

/// Cell masses of the chaos measure at one scale.
#[derive(Debug, Clone)]
pub struct GmcMeasure {
    masses: Vec<f64>,
    gamma: f64,
    delta: f64,
    normalization: Normalization,
    stream: Option<StreamId>,
}

/// `G^γ_δ` for one sample. Requires `0 < γ < 2` and `δ ≥ delta_floor`.
pub fn gmc_measure(sample: &GffSample, gamma: f64, delta: f64) -> Result<GmcMeasure> {
    Ok(GmcSetup::new(sample.basis(), gamma, delta)?.measure(sample))
}

impl GmcMeasure {
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn stream(&self) -> Option<StreamId> {
        self.stream
    }

    pub fn total(&self) -> f64 {
        pairwise_sum(&self.masses)
    }

    pub fn mass(&self, r: &Region) -> f64 {
        masked_sum(&self.masses, r)
    }

    pub fn write_csv<W: std::io::Write>(&self, s: &Surface, out: W) -> std::io::Result<()> {
        s.write_csv(&self.masses, out)
    }
}

/// Moment comparison record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub order: u32,
    pub gamma: f64,
    pub delta: f64,
    pub estimate: Estimate,
    pub oracle: f64,
    pub z_score: f64,
}

/// MC first and second moments of region masses against the exact oracles.
pub fn moment_study(
    setup: &GmcSetup,
    region: &Region,
    samples: usize,
    root: u64,
    second: bool,
) -> Vec<MomentReport> {
    let chunk = 64;
    let masses: Vec<f64> = par::map_chunks(samples, chunk, par::default_workers(), |r| {
        setup
            .region_masses(std::slice::from_ref(region), root, r.start as u64, r.len())
            .into_iter()
            .map(|v| v[0])
            .collect()
    });
    let s = setup.basis().surface();
    let mut out = Vec::new();
    let first = Estimate::of_mean(&masses);
    let o1 = region.first_moment(s, setup.gamma);
    out.push(MomentReport {
        order: 1,
        gamma: setup.gamma,
        delta: setup.delta,
        estimate: first,
        oracle: o1,
        z_score: first.z_score(o1, 0.0),
    });
    if second {
        let sq: Vec<f64> = masses.iter().map(|m| m * m).collect();
        let e = Estimate::of_mean(&sq);
        let o2 = setup.second_moment(region);
        out.push(MomentReport { order: 2, gamma: setup.gamma, delta: setup.delta, estimate: e, oracle: o2, z_score: e.z_score(o2, 0.0) });
    }
    out
}

/// Total-mass trajectory across a δ schedule for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub gamma: f64,
    pub deltas: Vec<f64>,
    pub masses: Vec<f64>,
    /// `mass(δ_{k+1}) − mass(δ_k)`.
    pub increments: Vec<f64>,
    /// True when the last increment is not smaller than the first.
    pub not_stabilizing: bool,
}

fn check_schedule(b: &SpectralBasis, gamma: f64, deltas: &[f64]) -> Result<()> {
    if !(0.0..2.0).contains(&gamma) {
        return Err(Error::Parameter { name: "gamma", value: gamma, reason: "must lie in [0, 2)" });
    }
    if deltas.len() < 2 {
        return Err(Error::Config("δ schedule needs at least two scales".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("δ schedule must be decreasing".into()));
    }
    let limit = delta_floor(b);
    let last = *deltas.last().unwrap();
    if last < limit * (1.0 - 1e-12) {
        return Err(Error::Resolution { scale: last, limit });
    }
    Ok(())
}

/// Masses over the schedule for one sample; `γ = 0` is allowed.
pub fn gmc_convergence_diagnostic(sample: &GffSample, gamma: f64, deltas: &[f64]) -> Result<ConvergenceReport> {
    check_schedule(sample.basis(), gamma, deltas)?;
    let masses = deltas
        .iter()
        .map(|d| Ok(GmcSetup::new_unchecked(sample.basis(), gamma, *d)?.masses_from(sample.coefficients())))
        .map(|m: Result<Vec<f64>>| m.map(|m| pairwise_sum(&m)))
        .collect::<Result<Vec<f64>>>()?;
    let increments: Vec<f64> = masses.windows(2).map(|w| w[1] - w[0]).collect();
    let not_stabilizing = increments.last().unwrap().abs() >= increments[0].abs() && increments[0] != 0.0;
    Ok(ConvergenceReport { gamma, deltas: deltas.to_vec(), masses, increments, not_stabilizing })
}

/// Multi-sample convergence study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub gamma: f64,
    pub deltas: Vec<f64>,
    /// Mean total mass per scale.
    pub mean_mass: Vec<Estimate>,
    /// Mean `|increment|` per step.
    pub mean_abs_increment: Vec<Estimate>,
    /// Mean `|increment|` shrinks step to step.
    pub monotone: bool,
    /// Hill tail index of the finest-scale total mass.
    pub tail_index: f64,
    /// Tail index below 2 (infinite variance regime).
    pub heavy_tail: bool,
}

pub fn convergence_study(
    b: &Arc<SpectralBasis>,
    gamma: f64,
    deltas: &[f64],
    samples: usize,
    root: u64,
) -> Result<ConvergenceStudy> {
    check_schedule(b, gamma, deltas)?;
    let setups = deltas
        .iter()
        .map(|d| GmcSetup::new_unchecked(b, gamma, *d))
        .collect::<Result<Vec<_>>>()?;
    let per_sample: Vec<Vec<f64>> = par::map_indices(samples, par::default_workers(), |i| {
        let a = sample_coefficients(b.len(), StreamId::new(root, i as u64));
        setups.iter().map(|s| pairwise_sum(&s.masses_from(&a))).collect()
    });
    let k = deltas.len();
    let col = |j: usize| per_sample.iter().map(|v| v[j]).collect::<Vec<f64>>();
    let mean_mass = (0..k).map(|j| Estimate::of_mean(&col(j))).collect();
    let mean_abs_increment: Vec<Estimate> = (0..k - 1)
        .map(|j| {
            let inc: Vec<f64> = per_sample.iter().map(|v| (v[j + 1] - v[j]).abs()).collect();
            Estimate::of_mean(&inc)
        })
        .collect();
    let monotone = mean_abs_increment.windows(2).all(|w| w[1].value <= w[0].value);
    let finest = col(k - 1);
    let tail_index = hill_tail_index(&finest, (samples / 20).max(10));
    Ok(ConvergenceStudy {
        gamma,
        deltas: deltas.to_vec(),
        mean_mass,
        mean_abs_increment,
        monotone,
        tail_index,
        heavy_tail: tail_index < 2.0,
    })
}
