//! Full coefficient tensors for small `m`: assembly from a fitted model, direct
//! evaluation, and the dense projection of a weighted dataset.

use alloc::vec;
use alloc::vec::Vec;

use super::FhtModel;
use super::tree::DimensionTree;
use crate::basis::BasisSpec;
use crate::error::{check_dim, invalid, Result};
use crate::history::HistoryDataset;

/// Row-major coefficient tensor over the tensor-product orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Refuses to materialize more than this many coefficients.
pub const DENSE_LIMIT: usize = 1 << 24;

fn checked_size(dims: &[usize]) -> Result<usize> {
    let mut n: usize = 1;
    for &d in dims {
        n = n.checked_mul(d).filter(|&n| n <= DENSE_LIMIT).ok_or_else(|| {
            invalid!("dense tensor with dims {dims:?} exceeds {DENSE_LIMIT} entries")
        })?;
    }
    Ok(n)
}

impl FhtModel {
    /// Contracts all cores into the full coefficient tensor, axes in coordinate order.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let tree = self.tree();
        let q: Vec<usize> = self.bases().iter().map(BasisSpec::len).collect();
        checked_size(&q)?;
        // frame coefficients per node: (prod q over node coords) x r_n, row-major
        let mut frames: Vec<Vec<f64>> = vec![Vec::new(); tree.nodes.len()];
        for id in tree.bottom_up() {
            let node = &tree.nodes[id];
            let core = self.core(id);
            frames[id] = match node.children {
                None => core.data.clone(),
                Some([a, b]) => {
                    let (ra, rb, rn) = (core.dims[0], core.dims[1], core.dims[2]);
                    let na: usize = tree.nodes[a].coords.iter().map(|&k| q[k]).product();
                    let nb: usize = tree.nodes[b].coords.iter().map(|&k| q[k]).product();
                    let (fa, fb) = (&frames[a], &frames[b]);
                    let mut out = vec![0.0; na * nb * rn];
                    for ia in 0..na {
                        for al in 0..ra {
                            let x = fa[ia * ra + al];
                            if x == 0.0 {
                                continue;
                            }
                            for ib in 0..nb {
                                for be in 0..rb {
                                    let y = x * fb[ib * rb + be];
                                    let base = (al * rb + be) * rn;
                                    let row = (ia * nb + ib) * rn;
                                    for th in 0..rn {
                                        out[row + th] += y * core.data[base + th];
                                    }
                                }
                            }
                        }
                    }
                    out
                }
            };
        }
        let order = &tree.nodes[DimensionTree::ROOT].coords;
        let root = core::mem::take(&mut frames[DimensionTree::ROOT]);
        Ok(DenseTensor { data: permute_axes(&root, order, &q), dims: q })
    }
}

/// Reorders a tensor whose axes follow `order` into natural coordinate order.
fn permute_axes(src: &[f64], order: &[usize], q: &[usize]) -> Vec<f64> {
    if order.iter().enumerate().all(|(i, &k)| i == k) {
        return src.to_vec();
    }
    let m = q.len();
    let mut stride = vec![0; m];
    let mut s = 1;
    for k in (0..m).rev() {
        stride[k] = s;
        s *= q[k];
    }
    let mut out = vec![0.0; src.len()];
    let mut idx = vec![0; m];
    for v in src {
        let dst: usize = order.iter().zip(&idx).map(|(&k, &i)| i * stride[k]).sum();
        out[dst] = *v;
        for pos in (0..m).rev() {
            idx[pos] += 1;
            if idx[pos] < q[order[pos]] {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}

fn contract(t: &DenseTensor, phi: &[Vec<f64>]) -> f64 {
    let mut cur = t.data.clone();
    for k in (0..t.dims.len()).rev() {
        let q = t.dims[k];
        cur = cur.chunks(q).map(|c| c.iter().zip(&phi[k]).map(|(a, b)| a * b).sum()).collect();
    }
    cur[0]
}

/// Evaluates `sum C[j] prod_k phi_{j_k}(z_k)` directly.
pub fn evaluate_dense(t: &DenseTensor, bases: &[BasisSpec], z: &[f64]) -> Result<f64> {
    check_dim(t.dims.len(), bases.len())?;
    check_dim(t.dims.len(), z.len())?;
    let phi: Vec<Vec<f64>> = bases.iter().zip(z).map(|(b, &x)| b.eval_ortho(x)).collect();
    for (k, p) in phi.iter().enumerate() {
        check_dim(t.dims[k], p.len())?;
    }
    Ok(contract(t, &phi))
}

/// Weighted projection `C = sum_l w_l phi(z_l)^{(x)}` onto the orthonormal tensor basis,
/// the least-squares coefficient tensor of the empirical measure.
pub fn dense_projection(ds: &HistoryDataset, bases: &[BasisSpec]) -> Result<DenseTensor> {
    check_dim(ds.m, bases.len())?;
    let dims: Vec<usize> = bases.iter().map(BasisSpec::len).collect();
    let size = checked_size(&dims)?;
    let mut data = vec![0.0; size];
    let mut buf = vec![0.0; size];
    for i in 0..ds.len() {
        let z = ds.sample(i);
        buf[0] = ds.weights[i];
        let mut len = 1;
        for (k, b) in bases.iter().enumerate() {
            let phi = b.eval_ortho(z[k]);
            // expand in place from the back so earlier entries are read before overwritten
            for a in (0..len).rev() {
                let x = buf[a];
                for (j, p) in phi.iter().enumerate().rev() {
                    buf[a * phi.len() + j] = x * p;
                }
            }
            len *= phi.len();
        }
        for (d, v) in data.iter_mut().zip(&buf) {
            *d += v;
        }
    }
    Ok(DenseTensor { dims, data })
}
