//! Per-coordinate Gaussian feature bases and their orthonormalization.
//!
//! Non-periodic coordinates live on `[-1, 1]` with centers `-1 + 2j/(p-1)`; periodic
//! coordinates live on `[-pi, pi)` with centers `-pi + 2 pi j / p` and periodized
//! (image-summed) Gaussians. The orthonormalizer is a `q x p` matrix `T` mapping the raw
//! features to `q <= p` functions that are orthonormal in `L2` of the domain.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};

/// Eigen-directions of the Gram matrix below this fraction of the largest eigenvalue are
/// dropped. Directions kept at `lambda / lambda_max = f` carry rounding errors of roughly
/// `1e-16 / f` into the orthonormal Gram, so the floor sets the attainable orthonormality.
pub const GRAM_EIGEN_FLOOR: f64 = 1e-6;

/// Periodized sums stop once the added image term is below this.
pub const IMAGE_SUM_TOL: f64 = 1e-14;

/// Trapezoidal nodes used for the periodic Gram matrix.
pub const PERIODIC_GRAM_NODES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub p: usize,
    pub delta: f64,
    pub periodic: bool,
    pub centers: Vec<f64>,
    pub orthonormalizer: Matrix,
}

impl BasisSpec {
    /// Raw Gaussian basis (identity orthonormalizer).
    pub fn new(p: usize, delta: f64, periodic: bool) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(invalid!("basis width must be positive, got {delta}"));
        }
        let centers: Vec<f64> = if periodic {
            if p == 0 {
                return Err(invalid!("periodic basis needs p >= 1"));
            }
            (0..p).map(|j| -PI + 2.0 * PI * j as f64 / p as f64).collect()
        } else {
            if p < 2 {
                return Err(invalid!("non-periodic basis needs p >= 2, got {p}"));
            }
            let mut c: Vec<f64> =
                (0..p).map(|j| -1.0 + 2.0 * j as f64 / (p - 1) as f64).collect();
            c[p - 1] = 1.0;
            c
        };
        Ok(BasisSpec { p, delta, periodic, centers, orthonormalizer: Matrix::identity(p) })
    }

    /// Raw basis followed by orthonormalization.
    pub fn orthonormal(p: usize, delta: f64, periodic: bool) -> Result<Self> {
        Self::new(p, delta, periodic)?.orthonormalize()
    }

    /// Number of (transformed) basis functions.
    pub fn len(&self) -> usize {
        self.orthonormalizer.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> (f64, f64) {
        if self.periodic {
            (-PI, PI)
        } else {
            (-1.0, 1.0)
        }
    }

    /// Raw Gaussian values `psi_j(z)`.
    pub fn eval_raw(&self, z: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.p];
        self.eval_raw_into(z, &mut v, None);
        v
    }

    /// Raw values and (optionally) derivatives.
    pub fn eval_raw_into(&self, z: f64, vals: &mut [f64], mut derivs: Option<&mut [f64]>) {
        let inv2 = 1.0 / (2.0 * self.delta * self.delta);
        let invd2 = 1.0 / (self.delta * self.delta);
        for (j, &c) in self.centers.iter().enumerate() {
            let (v, dv) = if self.periodic {
                periodized(z - c, inv2, invd2)
            } else {
                let u = z - c;
                let e = (-u * u * inv2).exp();
                (e, -u * invd2 * e)
            };
            vals[j] = v;
            if let Some(d) = derivs.as_deref_mut() {
                d[j] = dv;
            }
        }
    }

    /// Orthonormalized values and first derivatives.
    pub fn eval_ortho_and_deriv(&self, z: f64) -> (Vec<f64>, Vec<f64>) {
        let mut raw = vec![0.0; self.p];
        let mut draw = vec![0.0; self.p];
        self.eval_raw_into(z, &mut raw, Some(&mut draw));
        (self.orthonormalizer.matvec(&raw), self.orthonormalizer.matvec(&draw))
    }

    pub fn eval_ortho(&self, z: f64) -> Vec<f64> {
        self.orthonormalizer.matvec(&self.eval_raw(z))
    }

    /// Gram matrix of the raw Gaussians over the domain: closed form (erf) on `[-1, 1]`,
    /// trapezoidal rule for the periodized case.
    pub fn raw_gram(&self) -> Matrix {
        let p = self.p;
        let mut g = Matrix::zeros(p, p);
        if self.periodic {
            let n = PERIODIC_GRAM_NODES;
            let h = 2.0 * PI / n as f64;
            let mut rows = vec![0.0; n * p];
            for k in 0..n {
                let th = -PI + h * k as f64;
                self.eval_raw_into(th, &mut rows[k * p..(k + 1) * p], None);
            }
            for i in 0..p {
                for j in i..p {
                    let s: f64 = (0..n).map(|k| rows[k * p + i] * rows[k * p + j]).sum();
                    g.set(i, j, h * s);
                    g.set(j, i, h * s);
                }
            }
        } else {
            let d = self.delta;
            let pref = 0.5 * d * PI.sqrt();
            for i in 0..p {
                for j in i..p {
                    let (ci, cj) = (self.centers[i], self.centers[j]);
                    let mid = 0.5 * (ci + cj);
                    let v = (-(ci - cj) * (ci - cj) / (4.0 * d * d)).exp()
                        * pref
                        * (libm::erf((1.0 - mid) / d) - libm::erf((-1.0 - mid) / d));
                    g.set(i, j, v);
                    g.set(j, i, v);
                }
            }
        }
        g
    }

    /// Gram matrix of the current (transformed) functions.
    pub fn gram(&self) -> Matrix {
        let t = &self.orthonormalizer;
        t.matmul(&self.raw_gram()).matmul(&t.transpose())
    }

    /// Symmetric (Löwdin) orthonormalization of the current functions. Eigen-directions
    /// below `GRAM_EIGEN_FLOOR * lambda_max` are dropped; when any are dropped the kept
    /// directions are orthonormalized canonically (`Lambda^{-1/2} Q^T`). Fails when fewer
    /// than `ceil(p / 4)` directions survive.
    pub fn orthonormalize(&self) -> Result<BasisSpec> {
        let gram = self.gram();
        let q = gram.rows;
        let (lam, vecs) = symmetric_eigen(&gram);
        let lmax = lam.first().copied().unwrap_or(0.0);
        let retained = if lmax > 0.0 {
            lam.iter().take_while(|&&l| l > GRAM_EIGEN_FLOOR * lmax).count()
        } else {
            0
        };
        if retained == 0 || retained < self.p.div_ceil(4) {
            return Err(Error::IllConditionedBasis { p: self.p, delta: self.delta, retained });
        }
        let mut step = Matrix::zeros(retained, q);
        if retained == q {
            for i in 0..q {
                for j in 0..q {
                    let s: f64 =
                        (0..q).map(|k| vecs.get(i, k) * vecs.get(j, k) / lam[k].sqrt()).sum();
                    step.set(i, j, s);
                }
            }
        } else {
            for k in 0..retained {
                for j in 0..q {
                    step.set(k, j, vecs.get(j, k) / lam[k].sqrt());
                }
            }
        }
        let mut out = self.clone();
        out.orthonormalizer = step.matmul(&self.orthonormalizer);
        Ok(out)
    }
}

/// Image sum `sum_l exp(-(u + 2 pi l)^2 / (2 delta^2))` and its derivative in `u`.
#[inline]
fn periodized(u: f64, inv2: f64, invd2: f64) -> (f64, f64) {
    let two_pi = 2.0 * PI;
    let term = |s: f64| {
        let e = (-s * s * inv2).exp();
        (e, -s * invd2 * e)
    };
    let (mut v, mut dv) = term(u);
    let mut l = 1.0;
    loop {
        let (a, da) = term(u + two_pi * l);
        let (b, db) = term(u - two_pi * l);
        v += a + b;
        dv += da + db;
        if l >= 2.0 && a < IMAGE_SUM_TOL && b < IMAGE_SUM_TOL {
            break;
        }
        l += 1.0;
    }
    (v, dv)
}
