//! Analytic benchmark potentials with exact gradients.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

/// One Gaussian-like term of the Müller–Brown surface:
/// `A exp(a (x - x0)^2 + b (x - x0)(y - y0) + c (y - y0)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuellerTerm {
    pub amp: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub x0: f64,
    pub y0: f64,
}

/// The standard Müller–Brown parameter set.
pub const MUELLER_STANDARD: [MuellerTerm; 4] = [
    MuellerTerm { amp: -200.0, a: -1.0, b: 0.0, c: -10.0, x0: 1.0, y0: 0.0 },
    MuellerTerm { amp: -100.0, a: -1.0, b: 0.0, c: -10.0, x0: 0.0, y0: 0.5 },
    MuellerTerm { amp: -170.0, a: -6.5, b: 11.0, c: -6.5, x0: -0.5, y0: 1.5 },
    MuellerTerm { amp: 15.0, a: 0.7, b: 0.6, c: 0.7, x0: -1.0, y0: 1.0 },
];

fn mueller_standard() -> Vec<MuellerTerm> {
    MUELLER_STANDARD.to_vec()
}

fn one() -> f64 {
    1.0
}

fn default_bond_k() -> f64 {
    100.0
}

/// `amplitude * (1 + cos(order * theta - phase))` acting on every bend angle of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleTerm {
    pub order: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// An energy landscape `U: R^d -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// Sum of four anisotropic exponentials in the plane.
    MuellerBrown {
        #[serde(default = "mueller_standard")]
        terms: Vec<MuellerTerm>,
    },
    /// `barrier * (x^2 - 1)^2`.
    #[serde(rename = "double_well_1d")]
    DoubleWell1D {
        #[serde(default = "one")]
        barrier: f64,
    },
    /// `scale * prod_i |x - c_i|^2`; the minima sit exactly at the centers.
    #[serde(rename = "multi_well_2d")]
    MultiWell2D { centers: Vec<[f64; 2]>, scale: f64 },
    /// Planar bead chain: harmonic bonds plus cosine series in the bend angles.
    PeriodicChain {
        beads: usize,
        #[serde(default = "default_bond_k")]
        bond_k: f64,
        #[serde(default = "one")]
        bond_length: f64,
        angle_terms: Vec<AngleTerm>,
    },
}

impl PotentialSpec {
    pub fn mueller_brown() -> Self {
        PotentialSpec::MuellerBrown { terms: mueller_standard() }
    }

    pub fn double_well() -> Self {
        PotentialSpec::DoubleWell1D { barrier: 1.0 }
    }

    /// Configuration-space dimension.
    pub fn dim(&self) -> usize {
        match self {
            PotentialSpec::MuellerBrown { .. } | PotentialSpec::MultiWell2D { .. } => 2,
            PotentialSpec::DoubleWell1D { .. } => 1,
            PotentialSpec::PeriodicChain { beads, .. } => 2 * beads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::MuellerBrown { terms } if terms.is_empty() => {
                Err(invalid!("Müller–Brown potential needs at least one term"))
            }
            PotentialSpec::MultiWell2D { centers, scale } => {
                if centers.is_empty() {
                    Err(invalid!("multi-well potential needs at least one center"))
                } else if !(*scale > 0.0) {
                    Err(invalid!("multi-well scale must be positive"))
                } else {
                    Ok(())
                }
            }
            PotentialSpec::PeriodicChain { beads, bond_k, bond_length, .. } => {
                if *beads < 3 {
                    Err(invalid!("periodic chain needs at least 3 beads, got {beads}"))
                } else if !(*bond_k >= 0.0) || !(*bond_length > 0.0) {
                    Err(invalid!("bond stiffness must be >= 0 and bond length > 0"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            PotentialSpec::MuellerBrown { terms } => terms
                .iter()
                .map(|t| {
                    let dx = x[0] - t.x0;
                    let dy = x[1] - t.y0;
                    t.amp * (t.a * dx * dx + t.b * dx * dy + t.c * dy * dy).exp()
                })
                .sum(),
            PotentialSpec::DoubleWell1D { barrier } => {
                let s = x[0] * x[0] - 1.0;
                barrier * s * s
            }
            PotentialSpec::MultiWell2D { centers, scale } => {
                scale * centers.iter().map(|c| sq_dist(x, c)).product::<f64>()
            }
            PotentialSpec::PeriodicChain { bond_k, bond_length, angle_terms, .. } => {
                chain_energy(x, *bond_k, *bond_length, angle_terms, None)?
            }
        })
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g)?;
        Ok(g)
    }

    /// Writes `grad U(x)` into `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), out.len())?;
        match self {
            PotentialSpec::MuellerBrown { terms } => {
                out[0] = 0.0;
                out[1] = 0.0;
                for t in terms {
                    let dx = x[0] - t.x0;
                    let dy = x[1] - t.y0;
                    let e = t.amp * (t.a * dx * dx + t.b * dx * dy + t.c * dy * dy).exp();
                    out[0] += e * (2.0 * t.a * dx + t.b * dy);
                    out[1] += e * (t.b * dx + 2.0 * t.c * dy);
                }
            }
            PotentialSpec::DoubleWell1D { barrier } => {
                out[0] = 4.0 * barrier * x[0] * (x[0] * x[0] - 1.0);
            }
            PotentialSpec::MultiWell2D { centers, scale } => {
                // product rule; avoids dividing by a vanishing distance at a center
                out[0] = 0.0;
                out[1] = 0.0;
                for (i, ci) in centers.iter().enumerate() {
                    let others: f64 = centers
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, c)| sq_dist(x, c))
                        .product();
                    out[0] += 2.0 * (x[0] - ci[0]) * others;
                    out[1] += 2.0 * (x[1] - ci[1]) * others;
                }
                out[0] *= scale;
                out[1] *= scale;
            }
            PotentialSpec::PeriodicChain { bond_k, bond_length, angle_terms, .. } => {
                out.iter_mut().for_each(|g| *g = 0.0);
                chain_energy(x, *bond_k, *bond_length, angle_terms, Some(out))?;
            }
        }
        Ok(())
    }
}

fn sq_dist(x: &[f64], c: &[f64; 2]) -> f64 {
    let dx = x[0] - c[0];
    let dy = x[1] - c[1];
    dx * dx + dy * dy
}

/// Signed bend angle between consecutive bonds `b1`, `b2` and its partial derivatives
/// with respect to the two bond vectors. Returns `None` for a zero-length bond.
pub(crate) fn bend_angle(b1: [f64; 2], b2: [f64; 2]) -> Option<(f64, [f64; 2], [f64; 2])> {
    let n1 = b1[0] * b1[0] + b1[1] * b1[1];
    let n2 = b2[0] * b2[0] + b2[1] * b2[1];
    if n1 == 0.0 || n2 == 0.0 {
        return None;
    }
    let cr = b1[0] * b2[1] - b1[1] * b2[0];
    let dt = b1[0] * b2[0] + b1[1] * b2[1];
    let mut theta = cr.atan2(dt);
    if theta >= PI {
        theta = -PI;
    }
    let den = cr * cr + dt * dt;
    let dc = dt / den;
    let dd = -cr / den;
    // d cross / d b1 = (b2y, -b2x), d dot / d b1 = b2
    let g1 = [dc * b2[1] + dd * b2[0], -dc * b2[0] + dd * b2[1]];
    // d cross / d b2 = (-b1y, b1x), d dot / d b2 = b1
    let g2 = [-dc * b1[1] + dd * b1[0], dc * b1[0] + dd * b1[1]];
    Some((theta, g1, g2))
}

fn chain_energy(
    x: &[f64],
    bond_k: f64,
    bond_length: f64,
    angle_terms: &[AngleTerm],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let n = x.len() / 2;
    let bead = |i: usize| [x[2 * i], x[2 * i + 1]];
    let bond = |i: usize| {
        let (a, b) = (bead(i), bead(i + 1));
        [b[0] - a[0], b[1] - a[1]]
    };
    let mut e = 0.0;
    for i in 0..n - 1 {
        let b = bond(i);
        let len = (b[0] * b[0] + b[1] * b[1]).sqrt();
        let dl = len - bond_length;
        e += 0.5 * bond_k * dl * dl;
        if let Some(g) = grad.as_deref_mut() {
            if len > 0.0 {
                let f = bond_k * dl / len;
                for c in 0..2 {
                    g[2 * (i + 1) + c] += f * b[c];
                    g[2 * i + c] -= f * b[c];
                }
            }
        }
    }
    for i in 1..n - 1 {
        let (theta, g1, g2) = bend_angle(bond(i - 1), bond(i))
            .ok_or_else(|| invalid!("zero-length bond next to bead {i}"))?;
        let mut de = 0.0;
        for t in angle_terms {
            let k = t.order as f64;
            e += t.amplitude * (1.0 + (k * theta - t.phase).cos());
            de -= t.amplitude * k * (k * theta - t.phase).sin();
        }
        if let Some(g) = grad.as_deref_mut() {
            for c in 0..2 {
                g[2 * (i - 1) + c] -= de * g1[c];
                g[2 * i + c] += de * (g1[c] - g2[c]);
                g[2 * (i + 1) + c] += de * g2[c];
            }
        }
    }
    Ok(e)
}

/// A converged local minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub energy: f64,
}

/// Outcome of a minimum search: the deduplicated minima plus the starts that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaSearch {
    pub minima: Vec<Minimum>,
    pub failed_starts: Vec<usize>,
}

pub const MINIMUM_GRAD_TOL: f64 = 1e-8;
pub const MINIMUM_DEDUP_DIST: f64 = 1e-3;
const MAX_DESCENT_ITERS: usize = 200_000;

/// Damped gradient descent with Armijo backtracking from every start; converged points
/// (gradient norm <= 1e-8) are deduplicated at distance 1e-3 and sorted by energy.
pub fn locate_minima(spec: &PotentialSpec, starts: &[Vec<f64>]) -> Result<MinimaSearch> {
    if starts.is_empty() {
        return Err(invalid!("locate_minima needs at least one start"));
    }
    let mut minima: Vec<Minimum> = Vec::new();
    let mut failed = Vec::new();
    for (idx, start) in starts.iter().enumerate() {
        match descend(spec, start)? {
            Some(m) => {
                let dup = minima.iter().any(|k| {
                    k.point
                        .iter()
                        .zip(&m.point)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                        < MINIMUM_DEDUP_DIST
                });
                if !dup {
                    minima.push(m);
                }
            }
            None => failed.push(idx),
        }
    }
    minima.sort_by(|a, b| a.energy.partial_cmp(&b.energy).unwrap_or(core::cmp::Ordering::Equal));
    Ok(MinimaSearch { minima, failed_starts: failed })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn descend(spec: &PotentialSpec, start: &[f64]) -> Result<Option<Minimum>> {
    let d = spec.dim();
    check_dim(d, start.len())?;
    let mut x = start.to_vec();
    let mut e = spec.energy(&x)?;
    let mut g = spec.gradient(&x)?;
    let mut step = 1e-3;
    let mut trial = vec![0.0; d];
    for _ in 0..MAX_DESCENT_ITERS {
        let gn = norm(&g);
        if !gn.is_finite() || !e.is_finite() {
            return Ok(None);
        }
        if gn <= MINIMUM_GRAD_TOL {
            return Ok(Some(Minimum { point: x, energy: e }));
        }
        // Armijo backtracking, then let the step grow again
        loop {
            for i in 0..d {
                trial[i] = x[i] - step * g[i];
            }
            let et = spec.energy(&trial)?;
            let sufficient = et <= e - 1e-4 * step * gn * gn;
            // near the minimum the decrease drops below the energy's rounding; fall back to
            // requiring a smaller gradient at no higher energy (up to rounding)
            let flat = !sufficient
                && et <= e + 4.0 * f64::EPSILON * e.abs()
                && norm(&spec.gradient(&trial)?) < gn;
            if et.is_finite() && (sufficient || flat) {
                x.copy_from_slice(&trial);
                e = et;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                // no decrease representable: accept if the gradient is tiny in relative terms
                return Ok(None);
            }
        }
        spec.gradient_into(&x, &mut g)?;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn double_well_values() {
        let dw = PotentialSpec::double_well();
        assert_eq!(dw.energy(&[1.0]).unwrap(), 0.0);
        assert_eq!(dw.energy(&[0.0]).unwrap(), 1.0);
        assert_eq!(dw.gradient(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(dw.gradient(&[2.0]).unwrap(), vec![24.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mb = PotentialSpec::mueller_brown();
        assert!(matches!(
            mb.energy(&[0.0]),
            Err(crate::Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(mb.gradient(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn double_well_minima() {
        let dw = PotentialSpec::double_well();
        let res = locate_minima(&dw, &[vec![-2.0], vec![2.0]]).unwrap();
        assert_eq!(res.minima.len(), 2);
        let mut xs: Vec<f64> = res.minima.iter().map(|m| m.point[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] + 1.0).abs() < 1e-9 && (xs[1] - 1.0).abs() < 1e-9);
        assert!(res.minima.iter().all(|m| m.energy.abs() < 1e-16));
    }

    #[test]
    fn multi_well_minima_at_centers() {
        let centers = vec![[-1.0, 0.0], [1.0, 0.5], [0.0, 1.5]];
        let spec = PotentialSpec::MultiWell2D { centers: centers.clone(), scale: 1.0 };
        let mut starts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                starts.push(vec![-2.0 + 0.8 * i as f64, -1.0 + 0.6 * j as f64]);
            }
        }
        let res = locate_minima(&spec, &starts).unwrap();
        assert_eq!(res.minima.len(), centers.len());
        for c in &centers {
            assert!(res
                .minima
                .iter()
                .any(|m| ((m.point[0] - c[0]).powi(2) + (m.point[1] - c[1]).powi(2)).sqrt() < 1e-6));
        }
    }

    #[test]
    fn empty_starts_rejected() {
        assert!(locate_minima(&PotentialSpec::double_well(), &[]).is_err());
    }

    #[test]
    fn mueller_grid_search_finds_three_minima() {
        let spec = PotentialSpec::mueller_brown();
        let mut starts = Vec::new();
        for i in 0..7 {
            for j in 0..7 {
                starts.push(vec![-1.5 + 2.7 * i as f64 / 6.0, -0.5 + 2.5 * j as f64 / 6.0]);
            }
        }
        let res = locate_minima(&spec, &starts).unwrap();
        assert!(res.failed_starts.is_empty());
        let want = [(-0.558, 1.442, -146.70), (0.623, 0.028, -108.17), (-0.050, 0.467, -80.77)];
        assert_eq!(res.minima.len(), 3);
        for (m, w) in res.minima.iter().zip(want) {
            assert!((m.point[0] - w.0).abs() < 1e-3 && (m.point[1] - w.1).abs() < 1e-3, "{m:?}");
            assert!((m.energy - w.2).abs() < 1e-2, "{m:?}");
        }
    }

    #[test]
    fn chain_rejects_coincident_beads() {
        let spec = PotentialSpec::PeriodicChain {
            beads: 3,
            bond_k: 1.0,
            bond_length: 1.0,
            angle_terms: vec![AngleTerm { order: 1, amplitude: 1.0, phase: 0.0 }],
        };
        assert!(spec.energy(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
        assert!(spec.energy(&[0.0, 0.0, 1.0, 0.0, 2.0, 0.0]).is_ok());
    }
}
