//! Gauss–Legendre rules.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;

/// `n`-point Gauss–Legendre nodes and weights on `[lo, hi]`.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "quadrature needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    for i in 0..n.div_ceil(2) {
        // Newton from the Chebyshev-like initial guess
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = mid - half * t;
        x[n - 1 - i] = mid + half * t;
        w[i] = half * wi;
        w[n - 1 - i] = half * wi;
    }
    (x, w)
}

/// `P_n(t)` and `P_n'(t)` by the three-term recurrence.
fn legendre(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5, -1.0, 2.0);
        // degree 9 is exact for 5 nodes
        let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        let exact = (2f64.powi(10) - 1.0) / 10.0;
        assert!((approx - exact).abs() < 1e-11 * exact.abs());
        let total: f64 = w.iter().sum();
        assert!((total - 3.0).abs() < 1e-14);
    }

    #[test]
    fn integrates_gaussian() {
        let (x, w) = gauss_legendre(80, -8.0, 8.0);
        let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * (-x * x / 2.0).exp()).sum();
        assert!((approx - (2.0 * PI).sqrt()).abs() < 1e-13);
    }
}
