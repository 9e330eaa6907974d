//! Numerical Liouville conformal field theory on the round sphere and the
//! flat torus: Gaussian free fields, multiplicative chaos, correlators,
//! Green-function perturbation theory and Ward-identity checks.

pub mod error;
pub mod fft;
pub mod geometry;
pub mod gff;
pub mod gmc;
pub mod harmonics;
pub mod jet;
pub mod lcft;
pub mod par;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod ward;

pub use error::{Error, Result};
pub use geometry::{
    anomaly_functional, conformal_weight, curvature_variation, make_surface, tensor_decompose,
    weyl_transform, Mobius, ScalarField, Surface, SurfaceKind, TensorField2, WeylFactor,
};
pub use num_complex::Complex64;
