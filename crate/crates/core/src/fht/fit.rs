//! Sketched moment estimation and core solves.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::sketch::SketchSpec;
use super::tree::DimensionTree;
use super::{Core, FhtModel, FhtModelParts, InterfaceFactors};
use crate::basis::BasisSpec;
use crate::error::{check_dim, invalid, Error, Result};
use crate::history::HistoryDataset;
use crate::linalg::{numerical_rank, pinv, svd, Matrix};

/// Relative singular-value threshold for rank truncation of the sketched moments.
pub const RANK_CUTOFF: f64 = 1e-10;
/// Relative singular-value cutoff of the mode-wise pseudo-inverses.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub oversampling: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { oversampling: 5, seed: 0 }
    }
}

/// Weighted samples already expressed in the per-coordinate orthonormal bases:
/// `features[k]` is row-major `n x q_k`. Weights may be negative, which lets a known
/// coefficient tensor be fed in as a signed combination of basis-vector "samples".
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub q: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl FeatureBatch {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn validate(&self) -> Result<()> {
        check_dim(self.q.len(), self.features.len())?;
        for (k, f) in self.features.iter().enumerate() {
            check_dim(self.len() * self.q[k], f.len())?;
        }
        Ok(())
    }
}

/// Running sums of every sketched moment the fit needs.
struct Moments<'a> {
    tree: &'a DimensionTree,
    sketch: SketchSpec,
    /// `Z_n`, `width x complement_width`, for non-root nodes.
    z: Vec<Option<Matrix>>,
    /// Leaf `B_k`, `q_k x complement_width`; for a root leaf, the mean feature vector.
    leaf_b: Vec<Option<Matrix>>,
    /// Internal `B_n`, `width x width x complement_width`, row-major.
    node_b: Vec<Option<Vec<f64>>>,
    s: Vec<Vec<f64>>,
    comp: Vec<Vec<f64>>,
    kron: Vec<f64>,
    bottom_up: Vec<usize>,
}

impl<'a> Moments<'a> {
    fn new(tree: &'a DimensionTree, q: &[usize], opts: FitOptions) -> Self {
        let sketch = SketchSpec::draw(tree, q, opts.oversampling, opts.seed);
        let l = sketch.width;
        let n = tree.nodes.len();
        let mut z = Vec::with_capacity(n);
        let mut leaf_b = Vec::with_capacity(n);
        let mut node_b = Vec::with_capacity(n);
        for (id, node) in tree.nodes.iter().enumerate() {
            let cw = sketch.complement_width(id);
            z.push((id != DimensionTree::ROOT).then(|| Matrix::zeros(l, cw)));
            match node.children {
                None => {
                    leaf_b.push(Some(Matrix::zeros(q[node.coords[0]], cw)));
                    node_b.push(None);
                }
                Some(_) => {
                    leaf_b.push(None);
                    node_b.push(Some(vec![0.0; l * l * cw]));
                }
            }
        }
        Moments {
            tree,
            s: vec![vec![0.0; l]; n],
            comp: (0..n).map(|id| vec![0.0; sketch.complement_width(id)]).collect(),
            kron: vec![0.0; l * l],
            sketch,
            z,
            leaf_b,
            node_b,
            bottom_up: tree.bottom_up(),
        }
    }

    fn add(&mut self, phi: &[&[f64]], w: f64) {
        let tree = self.tree;
        let l = self.sketch.width;
        for &id in &self.bottom_up {
            if id == DimensionTree::ROOT {
                continue;
            }
            let map = self.sketch.node_maps[id].as_ref().expect("non-root sketch");
            match tree.nodes[id].children {
                None => map.matvec_into(phi[tree.nodes[id].coords[0]], &mut self.s[id]),
                Some([a, b]) => {
                    kron_into(&self.s[a], &self.s[b], &mut self.kron);
                    map.matvec_into(&self.kron, &mut self.s[id]);
                }
            }
        }
        self.comp[DimensionTree::ROOT][0] = 1.0;
        for id in 1..tree.nodes.len() {
            let parent = tree.nodes[id].parent.expect("non-root has a parent");
            let sib = tree.sibling(id).expect("non-root has a sibling");
            let cw_parent = self.comp[parent].len();
            let buf = &mut self.kron[..cw_parent * l];
            kron_into(&self.comp[parent], &self.s[sib], buf);
            let map = self.sketch.complement_maps[id].as_ref().expect("non-root sketch");
            map.matvec_into(buf, &mut self.comp[id]);
        }
        for (id, node) in tree.nodes.iter().enumerate() {
            let comp = &self.comp[id];
            if let Some(z) = self.z[id].as_mut() {
                outer_add(z, w, &self.s[id], comp);
            }
            match node.children {
                None => {
                    let b = self.leaf_b[id].as_mut().expect("leaf moment");
                    outer_add(b, w, phi[node.coords[0]], comp);
                }
                Some([a, b]) => {
                    let acc = self.node_b[id].as_mut().expect("node moment");
                    let cw = comp.len();
                    for (i, sa) in self.s[a].iter().enumerate() {
                        let wa = w * sa;
                        for (j, sb) in self.s[b].iter().enumerate() {
                            let wab = wa * sb;
                            let base = (i * l + j) * cw;
                            for (c, v) in comp.iter().enumerate() {
                                acc[base + c] += wab * v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn solve(self, bases: &[BasisSpec]) -> Result<FhtModel> {
        let tree = self.tree;
        let n = tree.nodes.len();
        let l = self.sketch.width;
        let mut ranks = vec![0; n];
        let mut factors: Vec<Option<InterfaceFactors>> = vec![None; n];
        ranks[DimensionTree::ROOT] = 1;
        for id in 0..n {
            let Some(z) = self.z[id].as_ref() else { continue };
            let dec = svd(z);
            let r = numerical_rank(&dec.s, RANK_CUTOFF).min(tree.rank_cap);
            if r == 0 {
                return Err(Error::DegenerateFit { node: id });
            }
            let mut a = Matrix::zeros(z.rows, r);
            let mut f = Matrix::zeros(z.cols, r);
            for t in 0..r {
                for i in 0..z.rows {
                    a.set(i, t, dec.u.get(i, t) * dec.s[t]);
                }
                for c in 0..z.cols {
                    f.set(c, t, dec.v.get(c, t));
                }
            }
            ranks[id] = r;
            factors[id] = Some(InterfaceFactors { node: a, complement: f });
        }
        let mut cores = Vec::with_capacity(n);
        for (id, node) in tree.nodes.iter().enumerate() {
            let rn = ranks[id];
            let core = match node.children {
                None => {
                    let b = self.leaf_b[id].as_ref().expect("leaf moment");
                    let g = match &factors[id] {
                        Some(fac) => b.matmul(&pinv(&fac.complement.transpose(), PINV_CUTOFF)),
                        None => b.clone(),
                    };
                    Core { dims: vec![g.rows, g.cols], data: g.data }
                }
                Some([a, b]) => {
                    let raw = self.node_b[id].as_ref().expect("node moment");
                    let cw = self.sketch.complement_width(id);
                    let pa = pinv(&factors[a].as_ref().expect("child factors").node, PINV_CUTOFF);
                    let pb = pinv(&factors[b].as_ref().expect("child factors").node, PINV_CUTOFF);
                    let pf = match &factors[id] {
                        Some(fac) => pinv(&fac.complement, PINV_CUTOFF),
                        None => Matrix::identity(1),
                    };
                    let data = mode_product3(raw, [l, l, cw], [&pa, &pb, &pf]);
                    Core { dims: vec![ranks[a], ranks[b], rn], data }
                }
            };
            cores.push(core);
        }
        Ok(FhtModel::from(FhtModelParts {
            tree: tree.clone(),
            bases: bases.to_vec(),
            cores,
            ranks,
            factors,
            sketch_seed: self.sketch.seed,
            oversampling: self.sketch.oversampling,
        }))
    }
}

fn kron_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), a.len() * b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i * b.len() + j] = x * y;
        }
    }
}

fn outer_add(m: &mut Matrix, w: f64, u: &[f64], v: &[f64]) {
    for (i, x) in u.iter().enumerate() {
        let wx = w * x;
        let row = &mut m.data[i * v.len()..(i + 1) * v.len()];
        for (r, y) in row.iter_mut().zip(v) {
            *r += wx * y;
        }
    }
}

/// `T x_1 P_0 x_2 P_1 x_3 P_2` for a row-major 3-tensor of shape `dims`.
fn mode_product3(t: &[f64], dims: [usize; 3], p: [&Matrix; 3]) -> Vec<f64> {
    let [d0, d1, d2] = dims;
    let (r0, r1, r2) = (p[0].rows, p[1].rows, p[2].rows);
    // contract the last mode first: d0 x d1 x r2
    let mut t2 = vec![0.0; d0 * d1 * r2];
    for ij in 0..d0 * d1 {
        for c in 0..r2 {
            t2[ij * r2 + c] = crate::linalg::dot(&t[ij * d2..(ij + 1) * d2], p[2].row(c));
        }
    }
    // d0 x r1 x r2
    let mut t1 = vec![0.0; d0 * r1 * r2];
    for i in 0..d0 {
        for b in 0..r1 {
            for j in 0..d1 {
                let w = p[1].get(b, j);
                for c in 0..r2 {
                    t1[(i * r1 + b) * r2 + c] += w * t2[(i * d1 + j) * r2 + c];
                }
            }
        }
    }
    let mut out = vec![0.0; r0 * r1 * r2];
    for a in 0..r0 {
        for i in 0..d0 {
            let w = p[0].get(a, i);
            for bc in 0..r1 * r2 {
                out[a * r1 * r2 + bc] += w * t1[i * r1 * r2 + bc];
            }
        }
    }
    out
}

fn check_bases(tree: &DimensionTree, bases: &[BasisSpec]) -> Result<()> {
    check_dim(tree.m(), bases.len())?;
    if let Some(k) = bases.iter().position(|b| b.is_empty()) {
        return Err(invalid!("basis for coordinate {k} is empty"));
    }
    Ok(())
}

fn check_count(tree: &DimensionTree, opts: FitOptions, have: usize) -> Result<()> {
    let needed = tree.rank_cap + opts.oversampling;
    if have == 0 {
        return Err(Error::EmptyDataset("no samples to fit".into()));
    }
    if have < needed {
        return Err(Error::InsufficientSamples { needed, have });
    }
    Ok(())
}

/// Fits an FHT density to a weighted dataset whose samples are already on the unit box
/// (periodic coordinates on `[-pi, pi)`).
pub fn fit(
    ds: &HistoryDataset,
    tree: &DimensionTree,
    bases: &[BasisSpec],
    opts: FitOptions,
) -> Result<FhtModel> {
    check_bases(tree, bases)?;
    check_dim(tree.m(), ds.m)?;
    check_count(tree, opts, ds.len())?;
    let q: Vec<usize> = bases.iter().map(BasisSpec::len).collect();
    let mut moments = Moments::new(tree, &q, opts);
    let max_p = bases.iter().map(|b| b.p).max().unwrap_or(0);
    let mut raw = vec![0.0; max_p];
    let mut phi: Vec<Vec<f64>> = q.iter().map(|&qk| vec![0.0; qk]).collect();
    for i in 0..ds.len() {
        let z = ds.sample(i);
        for (k, b) in bases.iter().enumerate() {
            b.eval_raw_into(z[k], &mut raw[..b.p], None);
            b.orthonormalizer.matvec_into(&raw[..b.p], &mut phi[k]);
        }
        let refs: Vec<&[f64]> = phi.iter().map(Vec::as_slice).collect();
        moments.add(&refs, ds.weights[i]);
    }
    moments.solve(bases)
}

/// Fits from precomputed orthonormal features.
pub fn fit_features(
    batch: &FeatureBatch,
    tree: &DimensionTree,
    bases: &[BasisSpec],
    opts: FitOptions,
) -> Result<FhtModel> {
    check_bases(tree, bases)?;
    batch.validate()?;
    check_dim(tree.m(), batch.q.len())?;
    for (k, b) in bases.iter().enumerate() {
        check_dim(b.len(), batch.q[k])?;
    }
    check_count(tree, opts, batch.len())?;
    let mut moments = Moments::new(tree, &batch.q, opts);
    for i in 0..batch.len() {
        let refs: Vec<&[f64]> = batch
            .features
            .iter()
            .zip(&batch.q)
            .map(|(f, &qk)| &f[i * qk..(i + 1) * qk])
            .collect();
        moments.add(&refs, batch.weights[i]);
    }
    moments.solve(bases)
}

/// Weighted sketched moment `sum_l w_l left_l right_l^T` for row-major sketch outputs.
pub fn estimate_moment(left: &Matrix, right: &Matrix, weights: &[f64]) -> Result<Matrix> {
    check_dim(left.rows, right.rows)?;
    check_dim(left.rows, weights.len())?;
    let mut out = Matrix::zeros(left.cols, right.cols);
    for (i, &w) in weights.iter().enumerate() {
        outer_add(&mut out, w, left.row(i), right.row(i));
    }
    Ok(out)
}

/// Weighted three-way sketched moment, row-major `a.cols x b.cols x f.cols`. An empty
/// complement group is passed as a single column of ones.
pub fn estimate_b(a: &Matrix, b: &Matrix, f: &Matrix, weights: &[f64]) -> Result<Vec<f64>> {
    check_dim(a.rows, b.rows)?;
    check_dim(a.rows, f.rows)?;
    check_dim(a.rows, weights.len())?;
    let (la, lb, lf) = (a.cols, b.cols, f.cols);
    let mut out = vec![0.0; la * lb * lf];
    for (s, &w) in weights.iter().enumerate() {
        for (i, x) in a.row(s).iter().enumerate() {
            for (j, y) in b.row(s).iter().enumerate() {
                let wxy = w * x * y;
                for (c, v) in f.row(s).iter().enumerate() {
                    out[(i * lb + j) * lf + c] += wxy * v;
                }
            }
        }
    }
    Ok(out)
}
