//! Reductions and Monte Carlo error bars.

use serde::{Deserialize, Serialize};

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample covariance (two-pass).
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    pairwise_sum(&prods) / (n - 1) as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    covariance(xs, xs)
}

/// A value with a one-sigma Monte Carlo error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }

    /// Sample mean and its standard error.
    pub fn of_mean(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        Self::new(mean(xs), (variance(xs) / n).sqrt())
    }

    /// Deviation from `target` in units of the combined error.
    pub fn z_score(&self, target: f64, target_err: f64) -> f64 {
        let err = (self.stderr * self.stderr + target_err * target_err).sqrt();
        if err == 0.0 {
            if self.value == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - target) / err
        }
    }

    pub fn within(&self, target: f64, target_err: f64, sigmas: f64) -> bool {
        self.z_score(target, target_err).abs() <= sigmas
    }
}

/// `ln(mean(a))` with delta-method error.
pub fn log_mean(a: &[f64]) -> Estimate {
    let e = Estimate::of_mean(a);
    Estimate::new(e.value.ln(), e.stderr / e.value.abs())
}

/// `mean(a) / mean(b)` from paired samples, delta-method error.
pub fn ratio_of_means(a: &[f64], b: &[f64]) -> Estimate {
    let n = a.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let r = ma / mb;
    let rel2 = variance(a) / (n * ma * ma) + variance(b) / (n * mb * mb)
        - 2.0 * covariance(a, b) / (n * ma * mb);
    Estimate::new(r, r.abs() * rel2.max(0.0).sqrt())
}

/// `ln(mean(a) / mean(b))` from paired samples, delta-method error.
pub fn log_ratio_of_means(a: &[f64], b: &[f64]) -> Estimate {
    let r = ratio_of_means(a, b);
    Estimate::new(r.value.ln(), r.stderr / r.value.abs())
}

/// Sample skewness and excess kurtosis with their large-sample standard errors.
pub fn shape_moments(xs: &[f64]) -> (Estimate, Estimate) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let c = |p: i32| mean(&xs.iter().map(|x| (x - m).powi(p)).collect::<Vec<_>>());
    let m2 = c(2);
    let skew = c(3) / m2.powf(1.5);
    let kurt = c(4) / (m2 * m2) - 3.0;
    (Estimate::new(skew, (6.0 / n).sqrt()), Estimate::new(kurt, (24.0 / n).sqrt()))
}

/// Hill estimate of the tail index from the `k` largest values.
pub fn hill_tail_index(xs: &[f64], k: usize) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| *x > 0.0).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(v.len().saturating_sub(1));
    if k == 0 {
        return f64::NAN;
    }
    let xk = v[k].ln();
    let s: f64 = v[..k].iter().map(|x| x.ln() - xk).sum();
    k as f64 / s
}
