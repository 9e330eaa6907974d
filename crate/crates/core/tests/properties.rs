//! Randomized invariants across modules.

use lcft::geometry::{anomaly_cross_term, FourierTerm, HarmonicTerm};
use lcft::gff::sample_coefficients;
use lcft::gmc::{GmcSetup, Region};
use lcft::lcft::{weyl_covariance_check, CorrelatorSpec, FieldModel, Insertion, Sampler};
use lcft::rng::StreamId;
use lcft::spectral::{build_basis_cutoff, green_variation, SpectralBasis, Taper};
use lcft::stats::{covariance, shape_moments, variance};
use lcft::ward::{CauchyKernelOp, KillingInverse, TorusFourier};
use lcft::{anomaly_functional, make_surface, Complex64, ScalarField, SurfaceKind, TensorField2, WeylFactor};
use proptest::prelude::*;
use std::sync::{Arc, OnceLock};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn torus_basis() -> &'static Arc<SpectralBasis> {
    static B: OnceLock<Arc<SpectralBasis>> = OnceLock::new();
    B.get_or_init(|| Arc::new(build_basis_cutoff(&make_surface(SurfaceKind::Torus, 64).unwrap(), 8).unwrap()))
}

fn sphere_basis() -> &'static Arc<SpectralBasis> {
    static B: OnceLock<Arc<SpectralBasis>> = OnceLock::new();
    B.get_or_init(|| Arc::new(build_basis_cutoff(&make_surface(SurfaceKind::Sphere, 64).unwrap(), 12).unwrap()))
}

fn fourier_field() -> impl Strategy<Value = ScalarField> {
    prop::collection::vec((-3..=3i32, 0..=3i32, -0.5..0.5f64, -0.5..0.5f64), 1..4).prop_map(|v| {
        ScalarField::Fourier(v.into_iter().map(|(kx, ky, a, b)| FourierTerm { k: [kx, ky], a, b }).collect())
    })
}

fn harmonic_field() -> impl Strategy<Value = ScalarField> {
    prop::collection::vec((1..=4usize, -4..=4i64, -0.4..0.4f64), 1..4).prop_map(|v| {
        ScalarField::Harmonics(v.into_iter().map(|(l, m, c)| HarmonicTerm { l, m: m.clamp(-(l as i64), l as i64), c }).collect())
    })
}

fn unit_point() -> impl Strategy<Value = Complex64> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| c(x, y))
}

fn chart_point() -> impl Strategy<Value = Complex64> {
    (0.0..3.0f64, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| Complex64::from_polar(r, t))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn green_is_symmetric(x in unit_point(), y in unit_point(), u in chart_point(), v in chart_point()) {
        let t = torus_basis();
        prop_assume!(t.surface().distance(x, y) > 1e-6);
        prop_assert!((t.green(x, y).unwrap() - t.green(y, x).unwrap()).abs() < 1e-10);
        let s = sphere_basis();
        prop_assume!(s.surface().distance(u, v) > 1e-6);
        prop_assert!((s.green(u, v).unwrap() - s.green(v, u).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn anomaly_is_quadratic_plus_linear(w1 in harmonic_field(), w2 in harmonic_field()) {
        let s = sphere_basis().surface();
        let (a, b) = (WeylFactor::new(w1.clone()), WeylFactor::new(w2.clone()));
        let sum = WeylFactor::new(ScalarField::Sum(vec![w1, w2]));
        let lhs = anomaly_functional(&sum, s) - anomaly_functional(&a, s) - anomaly_functional(&b, s)
            + anomaly_functional(&WeylFactor::zero(), s);
        let cross = anomaly_cross_term(&a, &b, s);
        prop_assert!((lhs - cross).abs() < 1e-10 * (1.0 + cross.abs()), "{lhs} vs {cross}");
    }

    #[test]
    fn dbar_inverts_cauchy_on_band_limited_torus_data(re in fourier_field(), im in fourier_field()) {
        let n = 32;
        let tf = TorusFourier::new(n).unwrap();
        let pts = tf.points();
        let f: Vec<Complex64> = pts
            .iter()
            .map(|z| c(re.value(SurfaceKind::Torus, *z), im.value(SurfaceKind::Torus, *z)))
            .collect();
        let m = tf.mean(&f);
        let f: Vec<Complex64> = f.iter().map(|v| v - m).collect();
        let u = CauchyKernelOp::torus(n).unwrap().transform(&f, false).unwrap().u;
        let back = tf.dbar(&u);
        let err = back.iter().zip(&f).fold(0.0f64, |a, (b, f)| a.max((b - f).norm()));
        prop_assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn killing_inverse_is_orthogonal_to_moduli(re in fourier_field(), im in fourier_field()) {
        let k = KillingInverse::new(32).unwrap();
        let f = k.sample(&TensorField2::traceless(re, im));
        let sol = k.apply(&f);
        let leak = k.fourier().mean(&k.p_sharp(&sol.u)).norm();
        prop_assert!(leak < 1e-10, "{leak}");
    }

    #[test]
    fn gmc_masses_are_nonnegative_and_additive(cx in 0.0..1.0f64, cy in 0.0..1.0f64, half in 0.05..0.3f64, seed in any::<u64>()) {
        let b = torus_basis();
        let s = b.surface();
        let setup = GmcSetup::new(b, 1.0, lcft::gmc::delta_floor(b)).unwrap();
        let a = Region::square(s, c(cx, cy), half);
        let rest = Region::whole(s).difference(&a);
        prop_assert!(a.is_disjoint(&rest));
        let masses = setup.region_masses(&[a.clone(), rest, Region::whole(s)], seed, 0, 2);
        for m in masses {
            prop_assert!(m.iter().all(|v| *v >= 0.0));
            prop_assert!((m[0] + m[1] - m[2]).abs() <= 1e-12 * m[2]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn green_variation_is_linear(a in fourier_field(), b in fourier_field(), t in fourier_field()) {
        let basis = torus_basis();
        let (x, y) = (c(0.21, 0.33), c(0.68, 0.74));
        let f1 = TensorField2::traceless(a, ScalarField::Zero);
        let f2 = TensorField2::traceless(ScalarField::Zero, b).add(&TensorField2::pure_trace(t));
        let v1 = green_variation(basis, &f1, x, y).unwrap();
        let v2 = green_variation(basis, &f2, x, y).unwrap();
        let v12 = green_variation(basis, &f1.add(&f2), x, y).unwrap();
        prop_assert!((v12 - v1 - v2).abs() < 1e-10 * (1.0 + v12.abs()), "{v12} vs {}", v1 + v2);
    }
}

#[test]
fn pairings_are_gaussian() {
    let b = torus_basis();
    let s = b.surface();
    let f = s.sample_field(&ScalarField::Bump { center: c(0.4, 0.6), radius: 0.3, amplitude: 1.0 });
    let xs: Vec<f64> = (0..10_000)
        .map(|i| lcft::gff::sample_gff(b, StreamId::new(3, i)).pair(&f))
        .collect();
    let (skew, kurt) = shape_moments(&xs);
    assert!(skew.value.abs() < 5.0 * skew.stderr, "skewness {skew:?}");
    assert!(kurt.value.abs() < 5.0 * kurt.stderr, "excess kurtosis {kurt:?}");
}

#[test]
fn distinct_streams_are_uncorrelated() {
    let n = 4096;
    let samples = 2000;
    let rows: Vec<Vec<f64>> = (0..samples).map(|i| sample_coefficients(n, StreamId::new(9, i))).collect();
    let bound = 3.0 / (n as f64).sqrt();
    for (i, j) in [(0, 1), (1, 2), (10, 11), (0, 1999), (500, 1500)] {
        let r = covariance(&rows[i], &rows[j]) / (variance(&rows[i]) * variance(&rows[j])).sqrt();
        assert!(r.abs() < bound, "streams {i},{j}: {r}");
    }
    // Coefficient k across samples against coefficient k' across samples.
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let bound = 3.0 / (samples as f64).sqrt();
    for (k, l) in [(0, 1), (5, 900), (100, 4000)] {
        let (a, b) = (col(k), col(l));
        let r = covariance(&a, &b) / (variance(&a) * variance(&b)).sqrt();
        assert!(r.abs() < bound, "coefficients {k},{l}: {r}");
    }
}

/// Halving ω halves the insertion term and quarters the torus anomaly.
#[test]
fn weyl_terms_scale_with_omega() {
    let b = Arc::new(build_basis_cutoff(&make_surface(SurfaceKind::Torus, 32).unwrap(), 8).unwrap());
    let model = FieldModel::new(&b, Taper::Sharp);
    let spec = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![Insertion::new(c(0.5, 0.5), 0.5)]).unwrap();
    let omega = |a: f64| WeylFactor::new(ScalarField::Fourier(vec![FourierTerm { k: [1, 0], a, b: 0.5 * a }]));
    let full = weyl_covariance_check(&spec, &omega(0.2), &model, 20_000, 4, Sampler::Girsanov).unwrap();
    let half = weyl_covariance_check(&spec, &omega(0.1), &model, 20_000, 4, Sampler::Girsanov).unwrap();
    assert!((full.weight_term - 2.0 * half.weight_term).abs() < 1e-12);
    assert!((full.anomaly - 4.0 * half.anomaly).abs() < 1e-10 * full.anomaly.abs().max(1.0));
    // Measured log-ratio minus the anomaly must be linear in ω.
    let diff = (full.measured.value - full.anomaly) - 2.0 * (half.measured.value - half.anomaly);
    let err = full.measured.stderr + 2.0 * half.measured.stderr;
    assert!(diff.abs() < 4.0 * err, "measured {:?} vs {:?}", full.measured, half.measured);
}
