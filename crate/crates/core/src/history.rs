//! Weighted path-history measure over accumulated CV snapshots, the affine map onto the
//! unit box used by the density fit, and a one-dimensional `W2` oracle.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::cv::wrap_angle;
use crate::error::{check_dim, invalid, Error, Result};

/// How the history measure weighs snapshots from different bias iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightScheme {
    /// Every snapshot carries weight `1 / N_s`.
    #[default]
    Uniform,
    /// Weight proportional to `exp(-lambda * (latest_stage - stage))`, stages counted in
    /// bias iterations.
    ExpRecency { lambda: f64 },
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightScheme::ExpRecency { lambda } if !(lambda >= 0.0) => {
                Err(invalid!("recency rate must be non-negative, got {lambda}"))
            }
            _ => Ok(()),
        }
    }
}

/// Accumulated CV snapshots (row-major `N_s x m`) with normalized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryDataset {
    pub m: usize,
    pub samples: Vec<f64>,
    pub weights: Vec<f64>,
    /// `[start, end)` sample ranges contributed by each stage, in order.
    pub stages: Vec<(usize, usize)>,
}

impl HistoryDataset {
    pub fn new(m: usize) -> Self {
        HistoryDataset { m, samples: Vec::new(), weights: Vec::new(), stages: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.m..(i + 1) * self.m]
    }

    /// Appends one stage of snapshots (row-major, `m` columns) and recomputes all weights.
    pub fn append_stage(&mut self, new_samples: &[f64], scheme: WeightScheme) -> Result<()> {
        scheme.validate()?;
        if self.m == 0 || !new_samples.len().is_multiple_of(self.m) {
            return Err(invalid!(
                "stage samples ({} values) do not split into rows of {}",
                new_samples.len(),
                self.m
            ));
        }
        let start = self.len();
        self.samples.extend_from_slice(new_samples);
        let end = start + new_samples.len() / self.m;
        self.stages.push((start, end));
        self.weights.resize(end, 0.0);
        self.reweight(scheme)
    }

    /// Recomputes the weights over the full history.
    pub fn reweight(&mut self, scheme: WeightScheme) -> Result<()> {
        scheme.validate()?;
        let n = self.len();
        if n == 0 {
            return Ok(());
        }
        match scheme {
            WeightScheme::Uniform => self.weights.iter_mut().for_each(|w| *w = 1.0 / n as f64),
            WeightScheme::ExpRecency { lambda } => {
                let latest = self.stages.len() - 1;
                let mut total = 0.0;
                for (s, &(a, b)) in self.stages.iter().enumerate() {
                    let age = (latest - s) as f64;
                    // 0 * inf must not poison the latest stage
                    let w = if age == 0.0 { 1.0 } else { (-lambda * age).exp() };
                    for i in a..b {
                        self.weights[i] = w;
                    }
                    total += w * (b - a) as f64;
                }
                self.weights.iter_mut().for_each(|w| *w /= total);
            }
        }
        Ok(())
    }

    /// Weighted average of `f` over the history measure.
    pub fn expectation(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.sample(i))).sum()
    }
}

/// Affine map of every non-periodic coordinate onto `[-1, 1]`; periodic coordinates are
/// only wrapped into `[-pi, pi)` and carry unit Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaleMap {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl RescaleMap {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, periodic: Vec<bool>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != periodic.len() {
            return Err(invalid!("rescale bounds and periodic mask lengths differ"));
        }
        for k in 0..lo.len() {
            if !periodic[k] && !(hi[k] > lo[k]) {
                return Err(invalid!("degenerate rescale bounds on coordinate {k}: [{}, {}]", lo[k], hi[k]));
            }
        }
        Ok(RescaleMap { lo, hi, periodic })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Per-coordinate Jacobian `J_k = 2 / (hi_k - lo_k)`, or 1 for periodic coordinates.
    #[inline]
    pub fn jacobian(&self, k: usize) -> f64 {
        if self.periodic[k] {
            1.0
        } else {
            2.0 / (self.hi[k] - self.lo[k])
        }
    }

    pub fn jacobian_product(&self) -> f64 {
        (0..self.dim()).map(|k| self.jacobian(k)).product()
    }

    #[inline]
    pub fn to_unit_into(&self, z: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = if self.periodic[k] {
                wrap_angle(z[k])
            } else {
                2.0 * (z[k] - self.lo[k]) / (self.hi[k] - self.lo[k]) - 1.0
            };
        }
    }

    pub fn to_unit(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        let mut out = vec![0.0; z.len()];
        self.to_unit_into(z, &mut out);
        Ok(out)
    }

    pub fn from_unit(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), u.len())?;
        Ok((0..self.dim())
            .map(|k| {
                if self.periodic[k] {
                    u[k]
                } else {
                    self.lo[k] + 0.5 * (u[k] + 1.0) * (self.hi[k] - self.lo[k])
                }
            })
            .collect())
    }
}

/// Fits bounds `(min - margin * range, max + margin * range)` per non-periodic coordinate;
/// periodic coordinates get the fixed box `[-pi, pi)`.
pub fn fit_rescale(ds: &HistoryDataset, periodic: &[bool], margin: f64) -> Result<RescaleMap> {
    check_dim(ds.m, periodic.len())?;
    if ds.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, have: ds.len() });
    }
    if !(margin >= 0.0) {
        return Err(invalid!("rescale margin must be non-negative, got {margin}"));
    }
    let mut lo = vec![f64::INFINITY; ds.m];
    let mut hi = vec![f64::NEG_INFINITY; ds.m];
    for i in 0..ds.len() {
        for (k, &v) in ds.sample(i).iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    for k in 0..ds.m {
        if periodic[k] {
            lo[k] = -PI;
            hi[k] = PI;
            continue;
        }
        let range = hi[k] - lo[k];
        if !(range > 0.0) {
            return Err(invalid!("coordinate {k} has zero range in the history; cannot rescale"));
        }
        lo[k] -= margin * range;
        hi[k] += margin * range;
    }
    RescaleMap::new(lo, hi, periodic.to_vec())
}

/// Exact `W2` distance between two weighted point sets on the line, via the quantile
/// coupling. Weights are normalized internally.
pub fn wasserstein2_1d(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid!("W2 needs two non-empty point sets"));
    }
    check_dim(a.len(), wa.len())?;
    check_dim(b.len(), wb.len())?;
    let sorted = |x: &[f64], w: &[f64]| {
        let total: f64 = w.iter().sum();
        let mut v: Vec<(f64, f64)> = x.iter().zip(w).map(|(&x, &w)| (x, w / total)).collect();
        v.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap_or(core::cmp::Ordering::Equal));
        v
    };
    let (sa, sb) = (sorted(a, wa), sorted(b, wb));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (sa[0].1, sb[0].1);
    let mut acc = 0.0;
    while i < sa.len() && j < sb.len() {
        let mass = ra.min(rb);
        let d = sa[i].0 - sb[j].0;
        acc += mass * d * d;
        ra -= mass;
        rb -= mass;
        if ra <= 1e-15 {
            i += 1;
            if i < sa.len() {
                ra = sa[i].1;
            }
        }
        if rb <= 1e-15 {
            j += 1;
            if j < sb.len() {
                rb = sb[j].1;
            }
        }
    }
    Ok(acc.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_weights() {
        let mut ds = HistoryDataset::new(1);
        ds.append_stage(&[0.0, 1.0, 2.0, 3.0], WeightScheme::Uniform).unwrap();
        assert_eq!(ds.weights, vec![0.25; 4]);
    }

    #[test]
    fn recency_limits() {
        let mut ds = HistoryDataset::new(1);
        ds.append_stage(&[0.0, 1.0], WeightScheme::Uniform).unwrap();
        ds.append_stage(&[2.0, 3.0, 4.0], WeightScheme::Uniform).unwrap();
        let uni = ds.weights.clone();
        ds.reweight(WeightScheme::ExpRecency { lambda: 0.0 }).unwrap();
        for (a, b) in ds.weights.iter().zip(&uni) {
            assert!((a - b).abs() < 1e-15);
        }
        ds.reweight(WeightScheme::ExpRecency { lambda: 1e3 }).unwrap();
        assert!(ds.weights[..2].iter().all(|&w| w < 1e-12));
        assert!(ds.weights[2..].iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-12));
        ds.reweight(WeightScheme::ExpRecency { lambda: f64::INFINITY }).unwrap();
        assert_eq!(&ds.weights[..2], &[0.0, 0.0]);
        assert!(ds
            .append_stage(&[1.0], WeightScheme::ExpRecency { lambda: -1.0 })
            .is_err());
    }

    #[test]
    fn rescale_examples() {
        let mut ds = HistoryDataset::new(1);
        ds.append_stage(&[0.0, 1.0, 4.0], WeightScheme::Uniform).unwrap();
        let map = fit_rescale(&ds, &[false], 0.0).unwrap();
        assert_eq!(map.to_unit(&[2.0]).unwrap(), vec![0.0]);
        assert_eq!(map.jacobian(0), 0.5);
        let map = fit_rescale(&ds, &[false], 0.05).unwrap();
        assert!((map.lo[0] + 0.2).abs() < 1e-15 && (map.hi[0] - 4.2).abs() < 1e-15);
        let per = fit_rescale(&ds, &[true], 0.05).unwrap();
        assert_eq!((per.lo[0], per.hi[0], per.jacobian(0)), (-PI, PI, 1.0));
    }

    #[test]
    fn rescale_errors() {
        let mut ds = HistoryDataset::new(1);
        ds.append_stage(&[1.0], WeightScheme::Uniform).unwrap();
        assert!(fit_rescale(&ds, &[false], 0.0).is_err());
        ds.append_stage(&[1.0], WeightScheme::Uniform).unwrap();
        assert!(fit_rescale(&ds, &[false], 0.0).is_err());
        assert!(fit_rescale(&ds, &[false], 0.1).is_err());
    }

    #[test]
    fn w2_examples() {
        assert_eq!(wasserstein2_1d(&[0.0], &[1.0], &[1.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein2_1d(&[0.3, 2.0], &[0.5, 0.5], &[0.3, 2.0], &[0.5, 0.5]).unwrap(), 0.0);
        let w = wasserstein2_1d(&[0.0, 1.0], &[0.5, 0.5], &[0.5, 1.5], &[0.5, 0.5]).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
        assert!(wasserstein2_1d(&[], &[], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn w2_matches_brute_force_on_equal_weights() {
        // for equal-size uniform sets the optimal coupling is the sorted matching
        let a = [0.3, -1.2, 2.5, 0.0];
        let b = [1.0, 1.1, -0.4, 3.0];
        let w = [0.25; 4];
        let mut best = f64::INFINITY;
        let perms = permutations(4);
        for p in &perms {
            let c: f64 = (0..4).map(|i| 0.25 * (a[i] - b[p[i]]).powi(2)).sum();
            best = best.min(c);
        }
        let got = wasserstein2_1d(&a, &w, &b, &w).unwrap();
        assert!((got - best.sqrt()).abs() < 1e-14);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn rescale_round_trip(lo in -10.0f64..10.0, span in 0.1f64..20.0, u in -1.0f64..1.0) {
            let map = RescaleMap::new(vec![lo], vec![lo + span], vec![false]).unwrap();
            let z = map.from_unit(&[u]).unwrap();
            let back = map.to_unit(&z).unwrap();
            prop_assert!((back[0] - u).abs() < 1e-12);
        }

        #[test]
        fn history_w2_bounded_by_sup_distance(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60)
        ) {
            // two trajectories sampled on a common uniform time grid
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let w = vec![1.0; x.len()];
            let w2 = wasserstein2_1d(&x, &w, &y, &w).unwrap();
            let sup = pairs.iter().map(|p| (p.0 - p.1).abs()).fold(0.0, f64::max);
            prop_assert!(w2 * w2 <= sup * sup + 1e-12);
        }

        #[test]
        fn uniform_history_is_time_average(
            stages in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 0..20), 1..6)
        ) {
            let mut ds = HistoryDataset::new(1);
            let mut flat = Vec::new();
            for s in &stages {
                ds.append_stage(s, WeightScheme::Uniform).unwrap();
                flat.extend_from_slice(s);
            }
            prop_assume!(!flat.is_empty());
            let f = |z: f64| z * z + z.sin();
            let avg = flat.iter().map(|&z| f(z)).sum::<f64>() / flat.len() as f64;
            prop_assert!((ds.expectation(|s| f(s[0])) - avg).abs() < 1e-12);
            prop_assert!((ds.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
