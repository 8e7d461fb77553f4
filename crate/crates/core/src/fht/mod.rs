//! Functional hierarchical tensor (FHT) densities.
//!
//! A density on the unit box is expanded in per-coordinate orthonormal bases with a
//! coefficient tensor stored in hierarchical Tucker form along a [`DimensionTree`]:
//!
//! * leaf `k` carries a core `G_k` of shape `q_k x r_k`, defining frame functions
//!   `f_k(z_k) = G_k^T phi_k(z_k)`;
//! * internal node `n` with children `a, b` carries `G_n` of shape `r_a x r_b x r_n`,
//!   defining `f_n = sum G_n(alpha, beta, .) f_a(alpha) f_b(beta)`;
//! * the root has `r = 1` and its single frame function is the density.
//!
//! Evaluation contracts leaf-to-root and costs `O(m)` for fixed basis size and rank. The
//! gradient is computed by one reverse (root-to-leaf) sweep.

mod dense;
mod fit;
mod sketch;
mod tree;

pub use dense::{dense_projection, evaluate_dense, DenseTensor};
pub use fit::{
    estimate_b, estimate_moment, fit, fit_features, FeatureBatch, FitOptions, PINV_CUTOFF,
    RANK_CUTOFF,
};
pub use sketch::SketchSpec;
pub use tree::{DimensionTree, TreeNode};

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{check_dim, Result};
use crate::linalg::Matrix;
use crate::quadrature::gauss_legendre;

/// Local core tensor, row-major with shape `dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Core {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Sketch-compressed interface factors of a non-root node: `node` spans the node's
/// sketched frame (`U Sigma`), `complement` the complement side (`V`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceFactors {
    pub node: Matrix,
    pub complement: Matrix,
}

/// Serializable content of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhtModelParts {
    pub tree: DimensionTree,
    pub bases: Vec<BasisSpec>,
    pub cores: Vec<Core>,
    pub ranks: Vec<usize>,
    pub factors: Vec<Option<InterfaceFactors>>,
    pub sketch_seed: u64,
    pub oversampling: usize,
}

#[derive(Debug, Clone)]
struct EvalPlan {
    /// Leaf maps `G_k^T T_k` acting directly on the raw Gaussians.
    leaf_maps: Vec<Option<Matrix>>,
    offsets: Vec<usize>,
    total: usize,
    bottom_up: Vec<usize>,
    max_p: usize,
    max_rank: usize,
}

/// Fitted FHT density on the unit box (periodic coordinates on `[-pi, pi)`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "FhtModelParts", into = "FhtModelParts")]
pub struct FhtModel {
    parts: FhtModelParts,
    plan: EvalPlan,
}

impl PartialEq for FhtModel {
    fn eq(&self, other: &Self) -> bool {
        self.parts == other.parts
    }
}

impl From<FhtModelParts> for FhtModel {
    fn from(parts: FhtModelParts) -> Self {
        let plan = EvalPlan::new(&parts);
        FhtModel { parts, plan }
    }
}

impl From<FhtModel> for FhtModelParts {
    fn from(m: FhtModel) -> Self {
        m.parts
    }
}

impl EvalPlan {
    fn new(parts: &FhtModelParts) -> Self {
        let tree = &parts.tree;
        let mut offsets = Vec::with_capacity(tree.nodes.len());
        let mut total = 0;
        for &r in &parts.ranks {
            offsets.push(total);
            total += r;
        }
        let leaf_maps = tree
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| {
                if !node.is_leaf() {
                    return None;
                }
                let core = &parts.cores[id];
                let g = Matrix::from_row_major(core.dims[0], core.dims[1], core.data.clone());
                Some(g.transpose().matmul(&parts.bases[node.coords[0]].orthonormalizer))
            })
            .collect();
        let max_p = parts.bases.iter().map(|b| b.p).max().unwrap_or(0);
        let max_rank = parts.ranks.iter().copied().max().unwrap_or(0);
        EvalPlan { leaf_maps, offsets, total, bottom_up: tree.bottom_up(), max_p, max_rank }
    }
}

impl FhtModel {
    pub fn parts(&self) -> &FhtModelParts {
        &self.parts
    }

    pub fn into_parts(self) -> FhtModelParts {
        self.parts
    }

    pub fn m(&self) -> usize {
        self.parts.tree.m()
    }

    pub fn tree(&self) -> &DimensionTree {
        &self.parts.tree
    }

    pub fn bases(&self) -> &[BasisSpec] {
        &self.parts.bases
    }

    pub fn ranks(&self) -> &[usize] {
        &self.parts.ranks
    }

    pub fn core(&self, node: usize) -> &Core {
        &self.parts.cores[node]
    }

    /// Replaces a core (shape must match) and rebuilds the evaluation plan.
    pub fn with_core(mut self, node: usize, core: Core) -> Self {
        assert_eq!(self.parts.cores[node].dims, core.dims, "core shape mismatch");
        self.parts.cores[node] = core;
        self.plan = EvalPlan::new(&self.parts);
        self
    }

    /// Density value at `z` (unit-box coordinates).
    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.m(), z.len())?;
        let mut vals = vec![0.0; self.plan.total];
        let mut raw = vec![0.0; self.plan.max_p];
        Ok(self.forward(&mut vals, |k, leaf_map, out| {
            let b = &self.parts.bases[k];
            b.eval_raw_into(z[k], &mut raw[..b.p], None);
            leaf_map.matvec_into(&raw[..b.p], out);
        }))
    }

    /// Density value and gradient with respect to the unit-box coordinates.
    pub fn value_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let m = self.m();
        check_dim(m, z.len())?;
        check_dim(m, grad.len())?;
        let p = self.plan.max_p;
        let mut raw = vec![0.0; m * p];
        let mut draw = vec![0.0; m * p];
        let mut vals = vec![0.0; self.plan.total];
        let value = self.forward(&mut vals, |k, leaf_map, out| {
            let b = &self.parts.bases[k];
            let (r, d) = (&mut raw[k * p..k * p + b.p], &mut draw[k * p..k * p + b.p]);
            b.eval_raw_into(z[k], r, Some(d));
            leaf_map.matvec_into(r, out);
        });
        let mut adj = vec![0.0; self.plan.total];
        adj[self.plan.offsets[DimensionTree::ROOT]] = 1.0;
        let mut own = vec![0.0; self.plan.max_rank];
        let tree = &self.parts.tree;
        for (id, node) in tree.nodes.iter().enumerate() {
            let off = self.plan.offsets[id];
            match node.children {
                Some([a, b]) => {
                    let core = &self.parts.cores[id];
                    let (ra, rb, rn) = (core.dims[0], core.dims[1], core.dims[2]);
                    let (oa, ob) = (self.plan.offsets[a], self.plan.offsets[b]);
                    let own = &mut own[..rn];
                    own.copy_from_slice(&adj[off..off + rn]);
                    for al in 0..ra {
                        let va = vals[oa + al];
                        let rows = &core.data[al * rb * rn..(al + 1) * rb * rn];
                        let mut acc_a = 0.0;
                        for (be, row) in rows.chunks_exact(rn).enumerate() {
                            let s = crate::linalg::dot(row, own);
                            acc_a += s * vals[ob + be];
                            adj[ob + be] += s * va;
                        }
                        adj[oa + al] = acc_a;
                    }
                }
                None => {
                    let k = node.coords[0];
                    let b = &self.parts.bases[k];
                    let lm = self.plan.leaf_maps[id].as_ref().expect("leaf map");
                    let d = &draw[k * p..k * p + b.p];
                    let mut g = 0.0;
                    for r in 0..lm.rows {
                        g += adj[off + r] * crate::linalg::dot(lm.row(r), d);
                    }
                    grad[k] = g;
                }
            }
        }
        Ok(value)
    }

    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.m()];
        self.value_and_gradient(z, &mut g)?;
        Ok(g)
    }

    /// Leaf-to-root contraction; `leaf(k, map, out)` fills the frame values of leaf `k`.
    fn forward(
        &self,
        vals: &mut [f64],
        mut leaf: impl FnMut(usize, &Matrix, &mut [f64]),
    ) -> f64 {
        let tree = &self.parts.tree;
        let mut acc = vec![0.0; self.plan.max_rank];
        for &id in &self.plan.bottom_up {
            let node = &tree.nodes[id];
            let off = self.plan.offsets[id];
            let r = self.parts.ranks[id];
            debug_assert_eq!(r, self.parts.cores[id].dims.last().copied().unwrap_or(0));
            match node.children {
                None => {
                    let lm = self.plan.leaf_maps[id].as_ref().expect("leaf map");
                    leaf(node.coords[0], lm, &mut vals[off..off + r]);
                }
                Some([a, b]) => {
                    let core = &self.parts.cores[id];
                    let (ra, rb, rn) = (core.dims[0], core.dims[1], core.dims[2]);
                    let (oa, ob) = (self.plan.offsets[a], self.plan.offsets[b]);
                    let acc = &mut acc[..rn];
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for al in 0..ra {
                        let va = vals[oa + al];
                        if va == 0.0 {
                            continue;
                        }
                        let rows = &core.data[al * rb * rn..(al + 1) * rb * rn];
                        for (row, vb) in rows.chunks_exact(rn).zip(&vals[ob..ob + rb]) {
                            let w = va * vb;
                            for (o, c) in acc.iter_mut().zip(row) {
                                *o += w * c;
                            }
                        }
                    }
                    vals[off..off + rn].copy_from_slice(acc);
                }
            }
        }
        vals[self.plan.offsets[DimensionTree::ROOT]]
    }

    /// Integral of the density over the unit box (periodic coordinates over `[-pi, pi)`).
    pub fn integral(&self) -> f64 {
        let leaf_integrals: Vec<Vec<f64>> = self
            .parts
            .bases
            .iter()
            .map(|b| {
                let (lo, hi) = b.domain();
                let (x, w) = gauss_legendre(200, lo, hi);
                let mut acc = vec![0.0; b.p];
                let mut buf = vec![0.0; b.p];
                for (xi, wi) in x.iter().zip(&w) {
                    b.eval_raw_into(*xi, &mut buf, None);
                    for (a, v) in acc.iter_mut().zip(&buf) {
                        *a += wi * v;
                    }
                }
                acc
            })
            .collect();
        let mut vals = vec![0.0; self.plan.total];
        self.forward(&mut vals, |k, lm, out| lm.matvec_into(&leaf_integrals[k], out))
    }
}
