//! Second-order jets in two real variables.
//!
//! A [`Jet2`] carries a value together with its gradient and Hessian with
//! respect to the chart coordinates `(x, y)`. Arithmetic propagates the
//! derivatives exactly, which is how curvature, Green-function derivatives
//! and stress-tensor terms are evaluated without finite differencing.

use num_complex::Complex64;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 { v: 0.0, dx: 0.0, dy: 0.0, dxx: 0.0, dxy: 0.0, dyy: 0.0 };

    pub fn constant(v: f64) -> Self {
        Self { v, ..Self::ZERO }
    }

    /// The coordinate function `x` at the point `x0`.
    pub fn var_x(x0: f64) -> Self {
        Self { v: x0, dx: 1.0, ..Self::ZERO }
    }

    pub fn var_y(y0: f64) -> Self {
        Self { v: y0, dy: 1.0, ..Self::ZERO }
    }

    pub fn scale(self, c: f64) -> Self {
        Self {
            v: c * self.v,
            dx: c * self.dx,
            dy: c * self.dy,
            dxx: c * self.dxx,
            dxy: c * self.dxy,
            dyy: c * self.dyy,
        }
    }

    /// `f(self)` given `f`, `f'` and `f''` at `self.v`.
    pub fn compose(self, f: f64, f1: f64, f2: f64) -> Self {
        Self {
            v: f,
            dx: f1 * self.dx,
            dy: f1 * self.dy,
            dxx: f1 * self.dxx + f2 * self.dx * self.dx,
            dxy: f1 * self.dxy + f2 * self.dx * self.dy,
            dyy: f1 * self.dyy + f2 * self.dy * self.dy,
        }
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e)
    }

    pub fn ln(self) -> Self {
        let v = self.v;
        self.compose(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    pub fn recip(self) -> Self {
        let v = self.v;
        self.compose(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    pub fn powi(self, n: i32) -> Self {
        let v = self.v;
        let nf = n as f64;
        self.compose(v.powi(n), nf * v.powi(n - 1), nf * (nf - 1.0) * v.powi(n - 2))
    }

    pub fn laplacian(&self) -> f64 {
        self.dxx + self.dyy
    }

    /// `∂_z = ½(∂_x − i∂_y)`.
    pub fn dz(&self) -> Complex64 {
        Complex64::new(0.5 * self.dx, -0.5 * self.dy)
    }

    /// `∂_z² = ¼(∂_xx − 2i∂_xy − ∂_yy)`.
    pub fn dzz(&self) -> Complex64 {
        Complex64::new(0.25 * (self.dxx - self.dyy), -0.5 * self.dxy)
    }

    /// `∂_z∂_z̄ = ¼Δ`.
    pub fn dzzbar(&self) -> f64 {
        0.25 * self.laplacian()
    }

    pub fn grad_sq(&self) -> f64 {
        self.dx * self.dx + self.dy * self.dy
    }
}

/// Arithmetic shared by plain values and jets, so field formulas are
/// written once and differentiated for free.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(&self) -> f64;
    fn mul_f(self, c: f64) -> Self;
    fn exp_(self) -> Self;
    fn ln_(self) -> Self;
    fn sin_(self) -> Self;
    fn cos_(self) -> Self;
    fn recip_(self) -> Self;
    /// `f(self)` for a scalar function with known first two derivatives.
    fn apply(self, f: f64, f1: f64, f2: f64) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(&self) -> f64 {
        *self
    }
    fn mul_f(self, c: f64) -> Self {
        self * c
    }
    fn exp_(self) -> Self {
        self.exp()
    }
    fn ln_(self) -> Self {
        self.ln()
    }
    fn sin_(self) -> Self {
        self.sin()
    }
    fn cos_(self) -> Self {
        self.cos()
    }
    fn recip_(self) -> Self {
        1.0 / self
    }
    fn apply(self, f: f64, _f1: f64, _f2: f64) -> Self {
        f
    }
}

impl Scalar for Jet2 {
    fn cst(v: f64) -> Self {
        Jet2::constant(v)
    }
    fn val(&self) -> f64 {
        self.v
    }
    fn mul_f(self, c: f64) -> Self {
        self.scale(c)
    }
    fn exp_(self) -> Self {
        self.exp()
    }
    fn ln_(self) -> Self {
        self.ln()
    }
    fn sin_(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(s, c, -s)
    }
    fn cos_(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(c, -s, -c)
    }
    fn recip_(self) -> Self {
        self.recip()
    }
    fn apply(self, f: f64, f1: f64, f2: f64) -> Self {
        self.compose(f, f1, f2)
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            dx: self.dx + o.dx,
            dy: self.dy + o.dy,
            dxx: self.dxx + o.dxx,
            dxy: self.dxy + o.dxy,
            dyy: self.dyy + o.dyy,
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        self + o.scale(-1.0)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            dx: self.dx * o.v + self.v * o.dx,
            dy: self.dy * o.v + self.v * o.dy,
            dxx: self.dxx * o.v + 2.0 * self.dx * o.dx + self.v * o.dxx,
            dxy: self.dxy * o.v + self.dx * o.dy + self.dy * o.dx + self.v * o.dxy,
            dyy: self.dyy * o.v + 2.0 * self.dy * o.dy + self.v * o.dyy,
        }
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(mut self, c: f64) -> Jet2 {
        self.v += c;
        self
    }
}

impl std::iter::Sum for Jet2 {
    fn sum<I: Iterator<Item = Jet2>>(iter: I) -> Jet2 {
        iter.fold(Jet2::ZERO, |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(Jet2, Jet2) -> Jet2, x0: f64, y0: f64) {
        let j = f(Jet2::var_x(x0), Jet2::var_y(y0));
        let v = |x: f64, y: f64| f(Jet2::constant(x), Jet2::constant(y)).v;
        let h = 1e-4;
        let dx = (v(x0 + h, y0) - v(x0 - h, y0)) / (2.0 * h);
        let dy = (v(x0, y0 + h) - v(x0, y0 - h)) / (2.0 * h);
        let dxx = (v(x0 + h, y0) - 2.0 * v(x0, y0) + v(x0 - h, y0)) / (h * h);
        let dyy = (v(x0, y0 + h) - 2.0 * v(x0, y0) + v(x0, y0 - h)) / (h * h);
        let dxy = (v(x0 + h, y0 + h) - v(x0 + h, y0 - h) - v(x0 - h, y0 + h) + v(x0 - h, y0 - h))
            / (4.0 * h * h);
        for (a, b) in [(j.dx, dx), (j.dy, dy), (j.dxx, dxx), (j.dxy, dxy), (j.dyy, dyy)] {
            assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        fd_check(|x, y| (x * x + y * y + 1.0).ln(), 0.3, -0.7);
        fd_check(|x, y| (x * y).exp() * (x + y.powi(3)).recip().scale(2.0), 0.4, 0.9);
        fd_check(|x, y| (x * x + y * y + 1.0).powi(-2), 1.1, 0.2);
    }

    #[test]
    fn complex_derivatives_of_zbar_squared() {
        // |z|² has ∂_z = z̄ and ∂_z² = 0.
        let (x, y) = (Jet2::var_x(0.3), Jet2::var_y(0.5));
        let r2 = x * x + y * y;
        assert!((r2.dz() - Complex64::new(0.3, -0.5)).norm() < 1e-15);
        assert!(r2.dzz().norm() < 1e-15);
        assert!((r2.dzzbar() - 1.0).abs() < 1e-15);
    }
}
