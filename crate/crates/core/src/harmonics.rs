//! Real spherical harmonics as polynomials in the embedding coordinates.
//!
//! `Y_lm(p) = q̄_l^m(p_z) · Re/Im (p_x + i p_y)^m`, where `q̄` is the
//! normalized associated Legendre function with the `sin^m θ` factor removed.
//! Written over [`Scalar`], so the same code yields values or exact chart
//! derivatives.

use crate::jet::Scalar;

/// Flat index of `(l, m)`, `-l ≤ m ≤ l`, counting from `l = 0`.
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// All real harmonics with `l ≤ lmax` at the unit vector `(px, py, pz)`,
/// ordered by [`lm_index`]. Negative `m` are the sine harmonics.
/// Orthonormal in `L²` of the unit sphere.
pub fn real_harmonics<S: Scalar>(lmax: usize, px: S, py: S, pz: S) -> Vec<S> {
    let n = (lmax + 1) * (lmax + 1);
    let mut out = vec![S::cst(0.0); n];
    let four_pi = 4.0 * std::f64::consts::PI;
    // (px + i py)^m
    let mut re = S::cst(1.0);
    let mut im = S::cst(0.0);
    // q̄_m^m without the √2
    let mut qmm = (1.0 / four_pi).sqrt();
    for m in 0..=lmax {
        if m > 0 {
            let (r, i) = (re * px - im * py, re * py + im * px);
            re = r;
            im = i;
            let mf = m as f64;
            qmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
        }
        let norm = if m == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
        let mf = m as f64;
        let mut q_prev = S::cst(0.0);
        let mut q = S::cst(qmm * norm);
        for l in m..=lmax {
            if l > m {
                let lf = l as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
                let q_next = (pz * q - q_prev.mul_f(b)).mul_f(a);
                q_prev = q;
                q = q_next;
            }
            if m == 0 {
                out[l * l + l] = q;
            } else {
                out[l * l + l + m] = q * re;
                out[l * l + l - m] = q * im;
            }
        }
    }
    out
}

/// Legendre polynomials `P_0..=P_lmax` at `t`.
pub fn legendre(lmax: usize, t: f64) -> Vec<f64> {
    let mut p = vec![0.0; lmax + 1];
    p[0] = 1.0;
    if lmax >= 1 {
        p[1] = t;
    }
    for l in 2..=lmax {
        let lf = l as f64;
        p[l] = ((2.0 * lf - 1.0) * t * p[l - 1] - (lf - 1.0) * p[l - 2]) / lf;
    }
    p
}

/// Legendre polynomials and their first two derivatives at `t`.
pub fn legendre_with_derivatives(lmax: usize, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = legendre(lmax, t);
    let mut d1 = vec![0.0; lmax + 1];
    let mut d2 = vec![0.0; lmax + 1];
    // P'_l = l P_{l-1} + t P'_{l-1};  P''_l = (l+1) P'_{l-1} + t P''_{l-1}
    for l in 1..=lmax {
        let lf = l as f64;
        d1[l] = lf * p[l - 1] + t * d1[l - 1];
        d2[l] = (lf + 1.0) * d1[l - 1] + t * d2[l - 1];
    }
    (p, d1, d2)
}
