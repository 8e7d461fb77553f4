//! Collective-variable maps `xi: R^d -> R^m` and their Jacobians.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::linalg::Matrix;
use crate::potentials::bend_angle;

/// Wraps an angle into `[-pi, pi)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut t = theta - two_pi * libm::floor((theta + PI) / two_pi);
    if t >= PI {
        t -= two_pi;
    }
    if t < -PI {
        t = -PI;
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CvMap {
    /// `xi(x) = x`.
    Identity { dim: usize },
    /// Selected configuration coordinates, in the given order.
    CoordinateSubset { dim: usize, indices: Vec<usize> },
    /// Signed bend angles of a planar bead chain (`2 * beads` coordinates, `beads - 2`
    /// angles). The straight chain has angle 0; a chain folded back onto itself maps to `-pi`.
    ChainAngles { beads: usize },
}

impl CvMap {
    /// Configuration dimension `d`.
    pub fn input_dim(&self) -> usize {
        match self {
            CvMap::Identity { dim } | CvMap::CoordinateSubset { dim, .. } => *dim,
            CvMap::ChainAngles { beads } => 2 * beads,
        }
    }

    /// CV dimension `m`.
    pub fn output_dim(&self) -> usize {
        match self {
            CvMap::Identity { dim } => *dim,
            CvMap::CoordinateSubset { indices, .. } => indices.len(),
            CvMap::ChainAngles { beads } => beads.saturating_sub(2),
        }
    }

    pub fn periodic_mask(&self) -> Vec<bool> {
        let periodic = matches!(self, CvMap::ChainAngles { .. });
        vec![periodic; self.output_dim()]
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CvMap::Identity { dim } if *dim == 0 => Err(invalid!("identity CV needs dim >= 1")),
            CvMap::CoordinateSubset { dim, indices } => {
                if indices.is_empty() {
                    return Err(invalid!("coordinate subset is empty"));
                }
                if let Some(bad) = indices.iter().find(|&&i| i >= *dim) {
                    return Err(invalid!("coordinate index {bad} out of range for dim {dim}"));
                }
                Ok(())
            }
            CvMap::ChainAngles { beads } if *beads < 3 => {
                Err(invalid!("chain angles need at least 3 beads, got {beads}"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.output_dim()];
        self.eval_into(x, &mut z)?;
        Ok(z)
    }

    pub fn eval_into(&self, x: &[f64], z: &mut [f64]) -> Result<()> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.output_dim(), z.len())?;
        match self {
            CvMap::Identity { .. } => z.copy_from_slice(x),
            CvMap::CoordinateSubset { indices, .. } => {
                for (o, &i) in z.iter_mut().zip(indices) {
                    *o = x[i];
                }
            }
            CvMap::ChainAngles { beads } => {
                for i in 1..beads - 1 {
                    let (theta, _, _) = chain_bend(x, i)?;
                    z[i - 1] = theta;
                }
            }
        }
        Ok(())
    }

    /// `m x d` Jacobian; row `k` is the gradient of CV coordinate `k`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        check_dim(self.input_dim(), x.len())?;
        let (m, d) = (self.output_dim(), self.input_dim());
        let mut jac = Matrix::zeros(m, d);
        match self {
            CvMap::Identity { .. } => jac = Matrix::identity(d),
            CvMap::CoordinateSubset { indices, .. } => {
                for (k, &i) in indices.iter().enumerate() {
                    jac.set(k, i, 1.0);
                }
            }
            CvMap::ChainAngles { beads } => {
                for i in 1..beads - 1 {
                    let (_, g1, g2) = chain_bend(x, i)?;
                    for c in 0..2 {
                        jac.set(i - 1, 2 * (i - 1) + c, -g1[c]);
                        jac.set(i - 1, 2 * i + c, g1[c] - g2[c]);
                        jac.set(i - 1, 2 * (i + 1) + c, g2[c]);
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Accumulates `out += J(x)^T v` without forming the Jacobian for the cheap maps.
    pub fn pullback_add(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.output_dim(), v.len())?;
        check_dim(self.input_dim(), out.len())?;
        match self {
            CvMap::Identity { .. } => {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += vi;
                }
            }
            CvMap::CoordinateSubset { indices, .. } => {
                for (&i, vi) in indices.iter().zip(v) {
                    out[i] += vi;
                }
            }
            CvMap::ChainAngles { .. } => {
                let jac = self.jacobian(x)?;
                for k in 0..jac.rows {
                    for (o, j) in out.iter_mut().zip(jac.row(k)) {
                        *o += v[k] * j;
                    }
                }
            }
        }
        Ok(())
    }
}

fn chain_bend(x: &[f64], i: usize) -> Result<(f64, [f64; 2], [f64; 2])> {
    let b1 = [x[2 * i] - x[2 * i - 2], x[2 * i + 1] - x[2 * i - 1]];
    let b2 = [x[2 * i + 2] - x[2 * i], x[2 * i + 3] - x[2 * i + 1]];
    bend_angle(b1, b2).ok_or_else(|| invalid!("zero-length bond next to bead {i}"))
}

/// Planar chain with unit bonds whose bend angles are `angles`, starting at the origin
/// along direction `heading`.
pub fn chain_from_angles(angles: &[f64], heading: f64) -> Vec<f64> {
    let mut x = vec![0.0, 0.0];
    let mut dir = heading;
    let (mut px, mut py) = (0.0, 0.0);
    for step in 0..=angles.len() {
        if step > 0 {
            dir += angles[step - 1];
        }
        px += libm::cos(dir);
        py += libm::sin(dir);
        x.push(px);
        x.push(py);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_subset() {
        let id = CvMap::Identity { dim: 2 };
        assert_eq!(id.eval(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
        assert_eq!(id.jacobian(&[0.3, -0.7]).unwrap(), Matrix::identity(2));
        let sub = CvMap::CoordinateSubset { dim: 3, indices: vec![1] };
        assert_eq!(sub.eval(&[1.0, 2.0, 3.0]).unwrap(), vec![2.0]);
        let j = sub.jacobian(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(j.data, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn collinear_chain_angles() {
        let cv = CvMap::ChainAngles { beads: 3 };
        assert_eq!(cv.eval(&[0.0, 0.0, 1.0, 0.0, 2.0, 0.0]).unwrap(), vec![0.0]);
        // folded back: mapped to -pi
        assert_eq!(cv.eval(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap(), vec![-PI]);
        assert!(cv.eval(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn chain_angles_recover_construction() {
        let angles = [0.4, -2.5, 3.0];
        let x = chain_from_angles(&angles, 0.3);
        let cv = CvMap::ChainAngles { beads: 5 };
        let z = cv.eval(&x).unwrap();
        for (a, b) in z.iter().zip(&angles) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        for k in -50..50 {
            let t = wrap_angle(0.37 * k as f64);
            assert!((-PI..PI).contains(&t));
        }
    }

    #[test]
    fn dimension_checks() {
        let id = CvMap::Identity { dim: 2 };
        assert!(id.eval(&[1.0]).is_err());
        assert!(id.jacobian(&[1.0, 2.0, 3.0]).is_err());
        assert!(CvMap::CoordinateSubset { dim: 2, indices: vec![2] }.validate().is_err());
    }
}
