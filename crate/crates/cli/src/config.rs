//! Experiment configuration: TOML in, validated before any compute.

use lcft::geometry::{FourierTerm, HarmonicTerm};
use lcft::lcft::Sampler;
use lcft::spectral::Taper;
use lcft::{Complex64, Mobius, ScalarField, SurfaceKind, TensorField2, WeylFactor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};

/// Largest grid the runner accepts (memory guard for the nodal matrices).
pub const MAX_RESOLUTION: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GreenVariation,
    GffCov,
    GmcMoment,
    Kpz,
    Weyl,
    Mobius,
    Beltrami,
    WardN1,
    Killing,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::GreenVariation,
        Self::GffCov,
        Self::GmcMoment,
        Self::Kpz,
        Self::Weyl,
        Self::Mobius,
        Self::Beltrami,
        Self::WardN1,
        Self::Killing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GreenVariation => "green-variation",
            Self::GffCov => "gff-cov",
            Self::GmcMoment => "gmc-moment",
            Self::Kpz => "kpz",
            Self::Weyl => "weyl",
            Self::Mobius => "mobius",
            Self::Beltrami => "beltrami",
            Self::WardN1 => "ward-n1",
            Self::Killing => "killing",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Self::GreenVariation => "metric derivative of the Green function against finite differences (torus)",
            Self::GffCov => "Monte Carlo covariance of field pairings against the Green quadrature",
            Self::GmcMoment => "chaos mass moments of a region; optional δ-convergence series",
            Self::Kpz => "KPZ identity ratio on shared samples",
            Self::Weyl => "Weyl covariance of a correlator under a band-limited conformal factor (torus)",
            Self::Mobius => "Möbius covariance of a sphere correlator",
            Self::Beltrami => "linearized Beltrami solve by Neumann series (torus)",
            Self::WardN1 => "single-insertion Ward identity for the stress-energy field (sphere)",
            Self::Killing => "inverse conformal Killing operator identities (torus)",
        }
    }

    fn surface(self) -> Option<SurfaceKind> {
        match self {
            Self::GreenVariation | Self::Weyl | Self::Beltrami | Self::Killing => Some(SurfaceKind::Torus),
            Self::Mobius | Self::WardN1 => Some(SurfaceKind::Sphere),
            _ => None,
        }
    }

    fn needs_spec(self) -> bool {
        matches!(self, Self::Kpz | Self::Weyl | Self::Mobius | Self::WardN1)
    }

    fn is_monte_carlo(self) -> bool {
        matches!(self, Self::GffCov | Self::GmcMoment | Self::Kpz | Self::Weyl | Self::Mobius | Self::WardN1)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scalar field spec. Exactly one form per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ScalarSpec {
    Constant(f64),
    Fourier(Vec<FourierTerm>),
    Harmonics(Vec<HarmonicTerm>),
    Bump { center: [f64; 2], radius: f64, amplitude: f64 },
}

impl ScalarSpec {
    pub fn field(&self) -> ScalarField {
        match self {
            Self::Constant(c) => ScalarField::Constant(*c),
            Self::Fourier(t) => ScalarField::Fourier(t.clone()),
            Self::Harmonics(t) => ScalarField::Harmonics(t.clone()),
            Self::Bump { center, radius, amplitude } => ScalarField::Bump {
                center: Complex64::new(center[0], center[1]),
                radius: *radius,
                amplitude: *amplitude,
            },
        }
    }

    fn check(&self, kind: SurfaceKind, key: &str, errs: &mut Vec<ValidationError>) {
        let finite = |v: f64| v.is_finite();
        match self {
            Self::Constant(c) if !finite(*c) => errs.push(ValidationError::new(key, "constant must be finite")),
            Self::Fourier(t) => {
                if kind != SurfaceKind::Torus {
                    errs.push(ValidationError::new(key, "fourier terms are only defined on the torus"));
                }
                for (i, term) in t.iter().enumerate() {
                    if !finite(term.a) || !finite(term.b) {
                        errs.push(ValidationError::new(format!("{key}.fourier[{i}]"), "coefficients must be finite"));
                    }
                    if term.k.iter().any(|k| k.abs() > 64) {
                        errs.push(ValidationError::new(format!("{key}.fourier[{i}].k"), "|k| must be at most 64"));
                    }
                }
            }
            Self::Harmonics(t) => {
                if kind != SurfaceKind::Sphere {
                    errs.push(ValidationError::new(key, "harmonic terms are only defined on the sphere"));
                }
                for (i, term) in t.iter().enumerate() {
                    if !finite(term.c) {
                        errs.push(ValidationError::new(format!("{key}.harmonics[{i}].c"), "must be finite"));
                    }
                    if term.l > 64 || term.m.unsigned_abs() as usize > term.l {
                        errs.push(ValidationError::new(format!("{key}.harmonics[{i}]"), "need l ≤ 64 and |m| ≤ l"));
                    }
                }
            }
            Self::Bump { center, radius, amplitude } => {
                if !center.iter().all(|v| finite(*v)) || !finite(*amplitude) {
                    errs.push(ValidationError::new(key, "bump center and amplitude must be finite"));
                }
                if !(*radius > 0.0 && *radius <= 0.5) {
                    errs.push(ValidationError::new(format!("{key}.bump.radius"), "must lie in (0, 0.5]"));
                }
            }
            _ => {}
        }
    }
}

/// A symmetric 2-tensor by its traceless real/imaginary parts and trace part.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub re: Option<ScalarSpec>,
    pub im: Option<ScalarSpec>,
    pub trace: Option<ScalarSpec>,
}

impl TensorSpec {
    pub fn field(&self) -> TensorField2 {
        let part = |s: &Option<ScalarSpec>| s.as_ref().map_or(ScalarField::Zero, ScalarSpec::field);
        let tf = TensorField2::traceless(part(&self.re), part(&self.im));
        match &self.trace {
            Some(t) => tf.add(&TensorField2::pure_trace(t.field())),
            None => tf,
        }
    }

    fn check(&self, kind: SurfaceKind, key: &str, errs: &mut Vec<ValidationError>) {
        if self.re.is_none() && self.im.is_none() && self.trace.is_none() {
            errs.push(ValidationError::new(key, "at least one of re, im, trace is required"));
        }
        for (name, part) in [("re", &self.re), ("im", &self.im), ("trace", &self.trace)] {
            if let Some(p) = part {
                p.check(kind, &format!("{key}.{name}"), errs);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MobiusSpec {
    Rotation { theta: f64 },
    Dilation { lambda: f64 },
}

impl MobiusSpec {
    pub fn map(&self) -> Mobius {
        match *self {
            Self::Rotation { theta } => Mobius::rotation(theta),
            Self::Dilation { lambda } => Mobius::dilation(lambda),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsertionSpec {
    pub at: [f64; 2],
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub center: [f64; 2],
    pub half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub f: ScalarSpec,
    pub h: ScalarSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourConfig {
    pub insertion: usize,
    pub radius: f64,
    #[serde(default = "default_contour_nodes")]
    pub nodes: usize,
}

fn default_contour_nodes() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub kind: Option<SurfaceKind>,
    pub resolution: Option<usize>,
    pub cutoff: Option<usize>,
    #[serde(default)]
    pub taper: Taper,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub gamma: Option<f64>,
    pub mu: Option<f64>,
    #[serde(default)]
    pub insertions: Vec<InsertionSpec>,
    pub omega: Option<ScalarSpec>,
    /// Metric perturbation, Beltrami coefficient, or Killing input.
    pub f: Option<TensorSpec>,
    pub mobius: Option<MobiusSpec>,
    /// Evaluation points: `(x, y)` for green-variation, `z` list for ward-n1.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
    pub region: Option<RegionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    pub samples: Option<usize>,
    #[serde(default)]
    pub sampler: Sampler,
    /// GMC regularization scale; defaults to the basis floor.
    pub delta: Option<f64>,
    /// GMC convergence schedule (decreasing).
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Finite-difference steps for green-variation.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub second_moment: bool,
    /// Excision radius for ward-n1 (halved twice for the PV sweep).
    pub radius: Option<f64>,
    pub contour: Option<ContourConfig>,
    /// Stderr multiple for statistical verdicts.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
    /// Tolerance for deterministic or relative verdicts; per-experiment default when absent.
    pub tolerance: Option<f64>,
}

fn default_sigmas() -> f64 {
    3.0
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            samples: None,
            sampler: Sampler::default(),
            delta: None,
            deltas: Vec::new(),
            epsilons: Vec::new(),
            second_moment: false,
            radius: None,
            contour: None,
            sigmas: default_sigmas(),
            tolerance: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One offending key with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub key: String,
    pub reason: String,
}

impl ValidationError {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { key: key.into(), reason: reason.into() }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.reason)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n  {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<ValidationError>),
}

/// Fully validated parameters with defaults resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: SurfaceKind,
    pub resolution: usize,
    pub cutoff: usize,
    pub samples: usize,
    pub tolerance: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical JSON form: the parsed config with object keys
    /// sorted, so reordering keys in the source does not change it.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config is always representable as JSON");
        hex_digest(value.to_string().as_bytes())
    }

    pub fn omega(&self) -> Option<WeylFactor> {
        self.physics.omega.as_ref().map(|o| WeylFactor::new(o.field()))
    }

    /// Checks every key the experiment reads. Collects all problems.
    pub fn validate(&self) -> Result<Resolved, ConfigError> {
        let mut errs = Vec::new();
        let exp = self.experiment;
        let s = &self.surface;
        let p = &self.physics;
        let nm = &self.numerics;

        let kind = match (s.kind, exp.surface()) {
            (None, Some(k)) => k,
            (None, None) => {
                errs.push(ValidationError::new("surface.kind", "required (sphere or torus)"));
                SurfaceKind::Torus
            }
            (Some(k), Some(req)) if k != req => {
                errs.push(ValidationError::new("surface.kind", format!("{exp} runs on the {} only", req.name())));
                k
            }
            (Some(k), _) => k,
        };
        let resolution = s.resolution.unwrap_or(64);
        if resolution < 16 || !resolution.is_power_of_two() || resolution > MAX_RESOLUTION {
            errs.push(ValidationError::new(
                "surface.resolution",
                format!("must be a power of two in [16, {MAX_RESOLUTION}] (got {resolution})"),
            ));
        }
        let cutoff = s.cutoff.unwrap_or(16);
        if cutoff == 0 || cutoff > resolution / 2 {
            errs.push(ValidationError::new("surface.cutoff", format!("must lie in [1, resolution/2 = {}]", resolution / 2)));
        }
        if let Taper::Heat { c } = s.taper {
            if !(c > 0.0 && c.is_finite()) {
                errs.push(ValidationError::new("surface.taper.c", "must be positive and finite"));
            }
        }

        let samples = nm.samples.unwrap_or(0);
        if exp.is_monte_carlo() {
            match nm.samples {
                None => errs.push(ValidationError::new("numerics.samples", format!("required for {exp}"))),
                Some(n) if !(2..=10_000_000).contains(&n) => {
                    errs.push(ValidationError::new("numerics.samples", "must lie in [2, 10⁷]"))
                }
                _ => {}
            }
        }
        if !(nm.sigmas > 0.0 && nm.sigmas.is_finite()) {
            errs.push(ValidationError::new("numerics.sigmas", "must be positive"));
        }
        // Statistical experiments judge by `sigmas`; the rest by this.
        let tolerance = nm.tolerance.unwrap_or(match exp {
            ExperimentKind::GreenVariation => 1e-3,
            ExperimentKind::Beltrami => 1e-6,
            ExperimentKind::Killing => 1e-8,
            ExperimentKind::WardN1 => 0.25,
            _ => 0.0,
        });
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            errs.push(ValidationError::new("numerics.tolerance", "must be non-negative"));
        }

        if exp.needs_spec() {
            self.check_spec(kind, &mut errs);
        }
        let point_ok = |z: [f64; 2]| {
            z.iter().all(|v| v.is_finite())
                && match kind {
                    SurfaceKind::Torus => z.iter().all(|v| (0.0..1.0).contains(v)),
                    SurfaceKind::Sphere => z[0].hypot(z[1]) <= lcft::geometry::CHART_GUARD,
                }
        };
        for (i, z) in p.points.iter().enumerate() {
            if !point_ok(*z) {
                errs.push(ValidationError::new(format!("physics.points[{i}]"), "outside the chart domain"));
            }
        }

        match exp {
            ExperimentKind::GreenVariation => {
                self.require_f(kind, &mut errs);
                if p.points.len() != 2 {
                    errs.push(ValidationError::new("physics.points", "exactly two points (x, y) are required"));
                } else if p.points[0] == p.points[1] {
                    errs.push(ValidationError::new("physics.points", "x and y must differ"));
                }
                if nm.epsilons.iter().any(|e| !(*e > 0.0 && *e < 0.5)) {
                    errs.push(ValidationError::new("numerics.epsilons", "every ε must lie in (0, 0.5)"));
                }
            }
            ExperimentKind::GffCov => {
                if p.pairs.is_empty() {
                    errs.push(ValidationError::new("physics.pairs", "at least one (f, h) pair is required"));
                }
                for (i, pair) in p.pairs.iter().enumerate() {
                    pair.f.check(kind, &format!("physics.pairs[{i}].f"), &mut errs);
                    pair.h.check(kind, &format!("physics.pairs[{i}].h"), &mut errs);
                }
            }
            ExperimentKind::GmcMoment => {
                self.check_gamma(&mut errs);
                match &p.region {
                    None => errs.push(ValidationError::new("physics.region", "required for gmc-moment")),
                    Some(r) => {
                        if !(r.half > 0.0 && r.half.is_finite()) || !r.center.iter().all(|v| v.is_finite()) {
                            errs.push(ValidationError::new("physics.region", "need finite center and half > 0"));
                        }
                    }
                }
                if let Some(d) = nm.delta {
                    if !(d > 0.0 && d < 1.0) {
                        errs.push(ValidationError::new("numerics.delta", "must lie in (0, 1)"));
                    }
                }
                if nm.deltas.len() == 1 {
                    errs.push(ValidationError::new("numerics.deltas", "a convergence schedule needs at least two scales"));
                }
                if nm.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) || nm.deltas.windows(2).any(|w| w[1] >= w[0]) {
                    errs.push(ValidationError::new("numerics.deltas", "must be strictly decreasing values in (0, 1)"));
                }
            }
            ExperimentKind::Weyl => match &p.omega {
                None => errs.push(ValidationError::new("physics.omega", "required for weyl")),
                Some(o) => {
                    o.check(kind, "physics.omega", &mut errs);
                    if let ScalarSpec::Bump { .. } = o {
                        errs.push(ValidationError::new("physics.omega", "must be band-limited (fourier or constant)"));
                    }
                }
            },
            ExperimentKind::Mobius => {
                match p.mobius {
                    None => errs.push(ValidationError::new("physics.mobius", "required for mobius")),
                    Some(MobiusSpec::Rotation { theta }) if !theta.is_finite() => {
                        errs.push(ValidationError::new("physics.mobius.theta", "must be finite"))
                    }
                    Some(MobiusSpec::Dilation { lambda }) if !(lambda > 0.0 && lambda.is_finite()) => {
                        errs.push(ValidationError::new("physics.mobius.lambda", "must be positive"))
                    }
                    _ => {}
                }
                if let Some(m) = p.mobius {
                    let psi = m.map();
                    for (i, ins) in p.insertions.iter().enumerate() {
                        let w = psi.apply(Complex64::new(ins.at[0], ins.at[1]));
                        if !(w.norm() <= lcft::geometry::CHART_GUARD) {
                            errs.push(ValidationError::new(
                                format!("physics.insertions[{i}]"),
                                "the moved point leaves the chart guard region",
                            ));
                        }
                    }
                }
            }
            ExperimentKind::Beltrami | ExperimentKind::Killing => self.require_f(kind, &mut errs),
            ExperimentKind::WardN1 => {
                if p.points.is_empty() {
                    errs.push(ValidationError::new("physics.points", "at least one z-point is required"));
                }
                match nm.radius {
                    None => errs.push(ValidationError::new("numerics.radius", "required for ward-n1")),
                    Some(r) if !(r > 0.0 && r < 1.0) => {
                        errs.push(ValidationError::new("numerics.radius", "must lie in (0, 1)"))
                    }
                    _ => {}
                }
                if let Some(c) = &nm.contour {
                    if c.insertion >= p.insertions.len() {
                        errs.push(ValidationError::new("numerics.contour.insertion", "index out of range"));
                    }
                    if !(c.radius > 0.0 && c.radius.is_finite()) || c.nodes < 8 {
                        errs.push(ValidationError::new("numerics.contour", "need radius > 0 and at least 8 nodes"));
                    }
                }
            }
            ExperimentKind::Kpz => {}
        }

        if errs.is_empty() {
            Ok(Resolved { kind, resolution, cutoff, samples, tolerance })
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    fn check_gamma(&self, errs: &mut Vec<ValidationError>) {
        match self.physics.gamma {
            None => errs.push(ValidationError::new("physics.gamma", format!("required for {}", self.experiment))),
            Some(g) if !(g > 0.0 && g < 2.0) => errs.push(ValidationError::new("physics.gamma", "must lie in (0, 2)")),
            _ => {}
        }
    }

    fn require_f(&self, kind: SurfaceKind, errs: &mut Vec<ValidationError>) {
        match &self.physics.f {
            None => errs.push(ValidationError::new("physics.f", format!("required for {}", self.experiment))),
            Some(f) => f.check(kind, "physics.f", errs),
        }
    }

    fn check_spec(&self, kind: SurfaceKind, errs: &mut Vec<ValidationError>) {
        let p = &self.physics;
        self.check_gamma(errs);
        match p.mu {
            None => errs.push(ValidationError::new("physics.mu", format!("required for {}", self.experiment))),
            Some(m) if !(m > 0.0 && m.is_finite()) => errs.push(ValidationError::new("physics.mu", "must be positive")),
            _ => {}
        }
        if p.insertions.is_empty() {
            errs.push(ValidationError::new("physics.insertions", "at least one insertion is required"));
        }
        for (i, ins) in p.insertions.iter().enumerate() {
            let ok = ins.at.iter().all(|v| v.is_finite())
                && match kind {
                    SurfaceKind::Torus => ins.at.iter().all(|v| (0.0..1.0).contains(v)),
                    SurfaceKind::Sphere => ins.at[0].hypot(ins.at[1]) <= lcft::geometry::CHART_GUARD,
                };
            if !ok {
                errs.push(ValidationError::new(format!("physics.insertions[{i}].at"), "outside the chart domain"));
            }
            if !ins.alpha.is_finite() {
                errs.push(ValidationError::new(format!("physics.insertions[{i}].alpha"), "must be finite"));
            }
        }
        for i in 0..p.insertions.len() {
            for j in 0..i {
                if p.insertions[i].at == p.insertions[j].at {
                    errs.push(ValidationError::new(format!("physics.insertions[{i}].at"), "coincides with another insertion"));
                }
            }
        }
        if let (Some(g), Some(m)) = (p.gamma, p.mu) {
            if g > 0.0 && g < 2.0 && m > 0.0 && m.is_finite() && !p.insertions.is_empty() {
                if let Ok(spec) = self.spec_for(kind) {
                    let r = lcft::lcft::seiberg_check(&spec);
                    if !r.sum_bound {
                        errs.push(ValidationError::new(
                            "physics.insertions",
                            format!("Seiberg bound Σα = {:.4} > Qχ = {:.4} fails", r.alpha_sum, r.q_chi),
                        ));
                    }
                    for (i, ok) in r.alpha_bounds.iter().enumerate() {
                        if !ok {
                            errs.push(ValidationError::new(
                                format!("physics.insertions[{i}].alpha"),
                                format!("must be below Q = {:.4}", r.q),
                            ));
                        }
                    }
                }
            }
        }
    }

    /// The correlator spec (after validation).
    pub fn spec_for(&self, kind: SurfaceKind) -> lcft::Result<lcft::lcft::CorrelatorSpec> {
        let p = &self.physics;
        let ins = p
            .insertions
            .iter()
            .map(|i| lcft::lcft::Insertion::new(Complex64::new(i.at[0], i.at[1]), i.alpha))
            .collect();
        lcft::lcft::CorrelatorSpec::new(kind, p.gamma.unwrap_or(f64::NAN), p.mu.unwrap_or(f64::NAN), ins)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
