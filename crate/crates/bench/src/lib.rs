//! Shared fixtures for the benchmarks.

use lcft::lcft::{CorrelatorSpec, FieldModel, Insertion};
use lcft::spectral::{build_basis_cutoff, SpectralBasis, Taper};
use lcft::{make_surface, Complex64, SurfaceKind};
use std::sync::Arc;

pub fn basis(kind: SurfaceKind, n: usize, cutoff: usize) -> Arc<SpectralBasis> {
    Arc::new(build_basis_cutoff(&make_surface(kind, n).expect("valid grid"), cutoff).expect("valid cutoff"))
}

/// Torus model and single-insertion spec used by the correlator benches.
pub fn torus_correlator(n: usize, cutoff: usize) -> (FieldModel, CorrelatorSpec) {
    let model = FieldModel::new(&basis(SurfaceKind::Torus, n, cutoff), Taper::Sharp);
    let spec = CorrelatorSpec::new(SurfaceKind::Torus, 1.0, 1.0, vec![Insertion::new(Complex64::new(0.5, 0.5), 0.5)])
        .expect("valid spec");
    (model, spec)
}

/// Smooth complex test data on an `n × n` torus grid.
pub fn torus_data(n: usize) -> Vec<Complex64> {
    let tau = 2.0 * std::f64::consts::PI;
    (0..n * n)
        .map(|k| {
            let (x, y) = ((k % n) as f64 / n as f64, (k / n) as f64 / n as f64);
            Complex64::new((tau * x).cos() * 0.1, (tau * (x + 2.0 * y)).sin() * 0.05)
        })
        .collect()
}
