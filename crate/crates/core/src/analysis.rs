//! Post-processing: fixed-bias reweighting, histogram free-energy surfaces, reference
//! surfaces from the potential, difference maps, basin transitions and block bootstrap.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cv::CvMap;
use crate::error::{check_dim, invalid, Error, Result};
use crate::potentials::PotentialSpec;
use crate::quadrature::gauss_legendre;

/// Normalized weights `w_i ~ exp(beta V_i)`, shifted by the largest `V` before
/// exponentiating.
pub fn reweight_weights(bias_values: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(invalid!("inverse temperature must be positive, got {beta}"));
    }
    if let Some(v) = bias_values.iter().find(|v| !v.is_finite()) {
        return Err(invalid!("non-finite bias value {v}"));
    }
    let Some(vmax) = bias_values.iter().copied().reduce(f64::max) else {
        return Ok(Vec::new());
    };
    let mut w: Vec<f64> = bias_values.iter().map(|v| (beta * (v - vmax)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Uniform grid of `bins` cells over `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FesAxis {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

/// Bins per axis unless configured otherwise.
pub const DEFAULT_BINS: usize = 64;

fn default_bins() -> usize {
    DEFAULT_BINS
}

impl FesAxis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let a = FesAxis { lo, hi, bins };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() || self.bins == 0 {
            return Err(invalid!("bad FES axis [{}, {}) with {} bins", self.lo, self.hi, self.bins));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x < self.hi) {
            return None;
        }
        Some((((x - self.lo) / self.width()) as usize).min(self.bins - 1))
    }
}

/// Free energy on a grid, row-major with the last axis fastest. Undefined bins hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FesGrid {
    pub axes: Vec<FesAxis>,
    pub values: Vec<f64>,
    pub defined: Vec<bool>,
}

impl FesGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Per-axis bin indices of flat index `i`.
    pub fn unravel(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            idx[k] = i % a.bins;
            i /= a.bins;
        }
        idx
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        self.unravel(i).iter().zip(&self.axes).map(|(&j, a)| a.center(j)).collect()
    }

    fn flat(&self, z: &[f64]) -> Option<usize> {
        let mut i = 0;
        for (a, &x) in self.axes.iter().zip(z) {
            i = i * a.bins + a.bin_of(x)?;
        }
        Some(i)
    }

    /// Builds a grid from raw free energies, shifting the defined minimum to 0.
    fn aligned(axes: Vec<FesAxis>, mut values: Vec<f64>, defined: Vec<bool>) -> Result<Self> {
        let fmin = values
            .iter()
            .zip(&defined)
            .filter(|(_, &d)| d)
            .map(|(v, _)| *v)
            .reduce(f64::min)
            .ok_or_else(|| Error::EmptyDataset("every bin of the FES grid is empty".to_string()))?;
        for (v, &d) in values.iter_mut().zip(&defined) {
            *v = if d { *v - fmin } else { f64::NAN };
        }
        Ok(FesGrid { axes, values, defined })
    }
}

fn check_axes(axes: &[FesAxis]) -> Result<usize> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(invalid!("FES grids are 1D or 2D, got {} axes", axes.len()));
    }
    let mut n: usize = 1;
    for a in axes {
        a.validate()?;
        n = n.checked_mul(a.bins).ok_or_else(|| invalid!("FES grid too large"))?;
    }
    Ok(n)
}

/// Weighted histogram of `subset` coordinates of row-major `m`-column snapshots, turned
/// into `F = -(1/beta) ln rho` and aligned to minimum 0. Samples outside the axes are
/// dropped; empty bins are undefined. Equal positive weights are counted as plain counts.
pub fn fes_histogram(
    snapshots: &[f64],
    m: usize,
    weights: &[f64],
    axes: &[FesAxis],
    subset: &[usize],
    beta: f64,
) -> Result<FesGrid> {
    let n = check_axes(axes)?;
    check_dim(axes.len(), subset.len())?;
    if m == 0 || !snapshots.len().is_multiple_of(m) {
        return Err(invalid!("{} snapshot values do not form rows of {m}", snapshots.len()));
    }
    check_dim(snapshots.len() / m, weights.len())?;
    if let Some(&k) = subset.iter().find(|&&k| k >= m) {
        return Err(invalid!("coordinate {k} out of range for m = {m}"));
    }
    if !(beta > 0.0) {
        return Err(invalid!("inverse temperature must be positive, got {beta}"));
    }
    let mut hist = vec![0.0; n];
    let mut z = vec![0.0; subset.len()];
    let unit = all_equal(weights) && weights.first().is_some_and(|&w| w > 0.0);
    let grid = FesGrid { axes: axes.to_vec(), values: Vec::new(), defined: Vec::new() };
    for (row, &w) in snapshots.chunks(m).zip(weights) {
        for (zk, &k) in z.iter_mut().zip(subset) {
            *zk = row[k];
        }
        if let Some(i) = grid.flat(&z) {
            hist[i] += if unit { 1.0 } else { w };
        }
    }
    let defined: Vec<bool> = hist.iter().map(|&h| h > 0.0).collect();
    let values = hist.iter().map(|&h| -h.ln() / beta).collect();
    FesGrid::aligned(axes.to_vec(), values, defined)
}

fn require_identity(potential: &PotentialSpec, cv: &CvMap) -> Result<usize> {
    let CvMap::Identity { dim } = *cv else {
        return Err(invalid!("reference FES needs the identity CV map"));
    };
    check_dim(potential.dim(), dim)?;
    if dim > 2 {
        return Err(invalid!("reference FES supports d <= 2, got {dim}"));
    }
    Ok(dim)
}

/// `F_ref = U - min U` at the bin centers (identity CV, all coordinates on the grid).
pub fn reference_fes_quadrature(
    potential: &PotentialSpec,
    cv: &CvMap,
    axes: &[FesAxis],
) -> Result<FesGrid> {
    let d = require_identity(potential, cv)?;
    let n = check_axes(axes)?;
    check_dim(d, axes.len())?;
    let grid = FesGrid { axes: axes.to_vec(), values: Vec::new(), defined: Vec::new() };
    let values: Vec<f64> = (0..n).map(|i| potential.energy(&grid.center(i))).collect::<Result<_>>()?;
    let defined = values.iter().map(|v| v.is_finite()).collect();
    FesGrid::aligned(grid.axes, values, defined)
}

/// Gauss-Legendre nodes per bin and per coordinate in [`reference_fes_binned`].
pub const BIN_NODES: usize = 8;

/// Free energy of the Gibbs measure integrated over each bin,
/// `F = -(1/beta) ln int_bin exp(-beta U)`, aligned to minimum 0. Coordinates outside
/// `subset` are integrated over `ranges` (one `(lo, hi)` per remaining coordinate, in
/// coordinate order) with `nodes` Gauss-Legendre points.
pub fn reference_fes_binned(
    potential: &PotentialSpec,
    cv: &CvMap,
    axes: &[FesAxis],
    subset: &[usize],
    ranges: &[(f64, f64)],
    beta: f64,
    nodes: usize,
) -> Result<FesGrid> {
    let d = require_identity(potential, cv)?;
    let n = check_axes(axes)?;
    check_dim(axes.len(), subset.len())?;
    if subset.iter().any(|&k| k >= d) || (1..subset.len()).any(|i| subset[..i].contains(&subset[i])) {
        return Err(invalid!("bad coordinate subset {subset:?} for d = {d}"));
    }
    check_dim(d - subset.len(), ranges.len())?;
    if !(beta > 0.0) || nodes == 0 {
        return Err(invalid!("binned reference needs beta > 0 and nodes >= 1"));
    }
    let rest: Vec<usize> = (0..d).filter(|k| !subset.contains(k)).collect();
    let rest_rules: Vec<(Vec<f64>, Vec<f64>)> =
        ranges.iter().map(|&(lo, hi)| gauss_legendre(nodes, lo, hi)).collect();
    let grid = FesGrid { axes: axes.to_vec(), values: Vec::new(), defined: Vec::new() };
    // log-integrals first, then one common shift keeps exp in range
    let mut logs = Vec::with_capacity(n);
    let mut x = vec![0.0; d];
    for i in 0..n {
        let idx = grid.unravel(i);
        let rules: Vec<(Vec<f64>, Vec<f64>)> = idx
            .iter()
            .zip(axes)
            .map(|(&j, a)| {
                let lo = a.lo + j as f64 * a.width();
                gauss_legendre(BIN_NODES, lo, lo + a.width())
            })
            .collect();
        let mut terms = Vec::new();
        let all: Vec<&(Vec<f64>, Vec<f64>)> = rules.iter().chain(&rest_rules).collect();
        let dims: Vec<usize> = all.iter().map(|r| r.0.len()).collect();
        let coords: Vec<usize> = subset.iter().chain(&rest).copied().collect();
        let total: usize = dims.iter().product();
        for flat in 0..total {
            let mut rem = flat;
            let mut logw = 0.0;
            for (slot, r) in all.iter().enumerate().rev() {
                let j = rem % dims[slot];
                rem /= dims[slot];
                x[coords[slot]] = r.0[j];
                logw += r.1[j].ln();
            }
            terms.push(logw - beta * potential.energy(&x)?);
        }
        logs.push(log_sum_exp(&terms));
    }
    let values: Vec<f64> = logs.iter().map(|l| -l / beta).collect();
    let defined = values.iter().map(|v| v.is_finite()).collect();
    FesGrid::aligned(axes.to_vec(), values, defined)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `a - b` on bins defined in both grids; undefined elsewhere.
pub fn fes_difference(a: &FesGrid, b: &FesGrid) -> Result<FesGrid> {
    if a.axes != b.axes {
        return Err(invalid!("FES grids have different axes"));
    }
    let defined: Vec<bool> = a.defined.iter().zip(&b.defined).map(|(x, y)| *x && *y).collect();
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .zip(&defined)
        .map(|((x, y), &d)| if d { x - y } else { f64::NAN })
        .collect();
    Ok(FesGrid { axes: a.axes.clone(), values, defined })
}

/// Root-mean-square difference between an estimate and a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FesComparison {
    /// Both grids as aligned (minimum at 0).
    pub rmse: f64,
    /// After subtracting the mean difference over the compared bins.
    pub rmse_shifted: f64,
    pub mean_difference: f64,
    pub bins: usize,
}

/// Compares over bins defined in both grids with `reference <= cutoff`.
pub fn fes_rmse(estimate: &FesGrid, reference: &FesGrid, cutoff: f64) -> Result<FesComparison> {
    let diff = fes_difference(estimate, reference)?;
    let sel: Vec<f64> = diff
        .values
        .iter()
        .zip(&diff.defined)
        .zip(&reference.values)
        .filter(|((_, &d), &r)| d && r <= cutoff)
        .map(|((v, _), _)| *v)
        .collect();
    if sel.is_empty() {
        return Err(Error::EmptyDataset("no bins to compare".to_string()));
    }
    let n = sel.len() as f64;
    let mean = sel.iter().sum::<f64>() / n;
    let rmse = (sel.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let rmse_shifted = (sel.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    Ok(FesComparison { rmse, rmse_shifted, mean_difference: mean, bins: sel.len() })
}

/// Capture disks around metastable states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinSpec {
    pub centers: Vec<Vec<f64>>,
    pub radius: f64,
}

/// Capture radius used for the Mueller-Brown basins.
pub const MUELLER_BASIN_RADIUS: f64 = 0.2;

impl BasinSpec {
    pub fn new(centers: Vec<Vec<f64>>, radius: f64) -> Result<Self> {
        let b = BasinSpec { centers, radius };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(invalid!("capture radius must be positive"));
        }
        let m = self.dim();
        for (i, a) in self.centers.iter().enumerate() {
            check_dim(m, a.len())?;
            for b in &self.centers[i + 1..] {
                if dist2(a, b).sqrt() <= 2.0 * self.radius {
                    return Err(invalid!("basins at {a:?} and {b:?} overlap for radius {}", self.radius));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Basin whose capture disk contains `z`.
    pub fn assign(&self, z: &[f64]) -> Option<usize> {
        let r2 = self.radius * self.radius;
        self.centers.iter().position(|c| dist2(c, z) <= r2)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Transition counts between basins, `pairs[i][j]` for moves from `i` into `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub pairs: Vec<Vec<u64>>,
    pub total: u64,
}

impl TransitionCounts {
    pub fn new(k: usize) -> Self {
        TransitionCounts { pairs: vec![vec![0; k]; k], total: 0 }
    }

    pub fn merge(&mut self, other: &TransitionCounts) {
        for (r, o) in self.pairs.iter_mut().zip(&other.pairs) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
        self.total += other.total;
    }
}

/// Dwell-based transition counter for one trajectory: the state is the last basin entered;
/// entering a different basin counts one transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionTracker {
    pub last: Option<usize>,
    pub counts: TransitionCounts,
}

impl TransitionTracker {
    pub fn new(basins: &BasinSpec) -> Self {
        TransitionTracker { last: None, counts: TransitionCounts::new(basins.len()) }
    }

    #[inline]
    pub fn observe(&mut self, basins: &BasinSpec, z: &[f64]) {
        let Some(j) = basins.assign(z) else { return };
        if let Some(i) = self.last {
            if i != j {
                self.counts.pairs[i][j] += 1;
                self.counts.total += 1;
            }
        }
        self.last = Some(j);
    }
}

/// Counts transitions along a row-major series of `m`-dimensional CV points.
pub fn count_transitions(series: &[f64], m: usize, basins: &BasinSpec) -> Result<TransitionCounts> {
    basins.validate()?;
    check_dim(basins.dim(), m)?;
    if m == 0 || !series.len().is_multiple_of(m) {
        return Err(invalid!("{} series values do not form points of dimension {m}", series.len()));
    }
    let mut t = TransitionTracker::new(basins);
    for z in series.chunks(m) {
        t.observe(basins, z);
    }
    Ok(t.counts)
}

fn all_equal(w: &[f64]) -> bool {
    w.windows(2).all(|p| p[0] == p[1])
}

/// Weighted mean `sum w f / sum w`. Equal weights take the unweighted path, so a constant
/// bias reproduces unweighted estimates exactly.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    check_dim(values.len(), weights.len())?;
    let total: f64 = weights.iter().sum();
    if values.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyDataset("weighted mean of nothing".to_string()));
    }
    if all_equal(weights) {
        return Ok(values.iter().sum::<f64>() / values.len() as f64);
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total)
}

/// Block length for bootstrap error bars on correlated series.
pub const BOOTSTRAP_BLOCK: usize = 1000;

/// Standard error of the weighted mean by the non-overlapping block bootstrap: whole
/// blocks of `block` consecutive samples are drawn with replacement `n_boot` times.
pub fn block_bootstrap_se(
    values: &[f64],
    weights: &[f64],
    block: usize,
    n_boot: usize,
    seed: u64,
) -> Result<f64> {
    check_dim(values.len(), weights.len())?;
    if block == 0 || n_boot < 2 {
        return Err(invalid!("bootstrap needs block >= 1 and at least 2 replicates"));
    }
    let nb = values.len() / block;
    if nb < 2 {
        return Err(Error::InsufficientSamples { needed: 2 * block, have: values.len() });
    }
    // per-block sums of w f and w
    let sums: Vec<(f64, f64)> = (0..nb)
        .map(|b| {
            let r = b * block..(b + 1) * block;
            let wf = values[r.clone()].iter().zip(&weights[r.clone()]).map(|(v, w)| v * w).sum();
            (wf, weights[r].iter().sum())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let est: Vec<f64> = (0..n_boot)
        .map(|_| {
            let (mut a, mut b) = (0.0, 0.0);
            for _ in 0..nb {
                let (wf, w) = sums[rng.random_range(0..nb)];
                a += wf;
                b += w;
            }
            a / b
        })
        .collect();
    let mean = est.iter().sum::<f64>() / n_boot as f64;
    let var = est.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n_boot - 1) as f64;
    Ok(var.sqrt())
}
