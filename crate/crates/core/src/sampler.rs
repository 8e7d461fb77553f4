//! The adaptive loop: collect trajectories under the frozen bias, rescale the history,
//! refit the density, rebuild the bias; then production under the final bias.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::analysis::{BasinSpec, TransitionCounts, TransitionTracker, MUELLER_BASIN_RADIUS};
use crate::basis::BasisSpec;
use crate::bias::{Bias, BiasPotential, BiasedForce};
use crate::cv::CvMap;
use crate::dynamics::{advance_walker, DynParams, EnsembleState, WalkerEnsemble, WalkerRng};
use crate::error::{check_dim, invalid, Result};
use crate::fht::{fit, DimensionTree, FhtModel, FitOptions};
use crate::history::{fit_rescale, HistoryDataset, WeightScheme};
use crate::potentials::{locate_minima, PotentialSpec};

/// Integrator settings as configured; `beta = 1 / kt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynConfig {
    pub dt: f64,
    pub gamma: f64,
    pub kt: f64,
    #[serde(default = "one_u32")]
    pub substeps: u32,
    /// Largest drift displacement per substep; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_drift: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub p: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductionConfig {
    #[serde(default = "one_usize")]
    pub n_traj: usize,
    pub n_step: u64,
    pub n_save: u64,
}

impl Default for ProductionConfig {
    fn default() -> Self {
        ProductionConfig { n_traj: 1, n_step: 0, n_save: 1 }
    }
}

/// Metastable basins for transition counting: explicit centers, or the minima found by
/// descent from a uniform grid of starts over `[lo, hi]` (identity CV only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub centers: Vec<Vec<f64>>,
    #[serde(default)]
    pub search: Option<MinimaGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub per_axis: usize,
}

fn one_u32() -> u32 {
    1
}

fn one_usize() -> usize {
    1
}

fn default_radius() -> f64 {
    MUELLER_BASIN_RADIUS
}

fn default_walkers() -> usize {
    8
}

fn default_oversampling() -> usize {
    5
}

fn default_margin() -> f64 {
    0.02
}

/// Everything that determines an adaptive run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub potential: PotentialSpec,
    pub cv: CvMap,
    pub dynamics: DynConfig,
    #[serde(default = "default_walkers")]
    pub walkers: usize,
    /// One start per walker, or a single start shared by all.
    pub start: Vec<Vec<f64>>,
    pub n_step: u64,
    pub n_save: u64,
    pub t_max: usize,
    pub basis: BasisConfig,
    pub rank: usize,
    /// Leaf order of the balanced dimension tree; natural order when absent.
    #[serde(default)]
    pub tree_order: Option<Vec<usize>>,
    /// Sketch seed; derived from `seed` when absent.
    #[serde(default)]
    pub sketch_seed: Option<u64>,
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
    pub eps: f64,
    pub tau: f64,
    pub alpha: f64,
    #[serde(default)]
    pub weights: WeightScheme,
    /// Relative padding of the rescale box around the history.
    #[serde(default = "default_margin")]
    pub margin: f64,
    pub seed: u64,
    #[serde(default)]
    pub basins: Option<BasinConfig>,
    #[serde(default)]
    pub production: ProductionConfig,
}

const TAG_DYNAMICS: u64 = 1;
const TAG_SKETCH: u64 = 2;
const TAG_PRODUCTION: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for `(tag, index)` under `master`.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(master ^ splitmix(tag)) ^ index)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid!("{name} must be positive and finite, got {v}"))
    }
}

impl SimConfig {
    pub fn m(&self) -> usize {
        self.cv.output_dim()
    }

    pub fn d(&self) -> usize {
        self.cv.input_dim()
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.dynamics.kt
    }

    pub fn validate(&self) -> Result<()> {
        self.potential.validate()?;
        self.cv.validate()?;
        check_dim(self.potential.dim(), self.cv.input_dim())?;
        positive("dt", self.dynamics.dt)?;
        positive("gamma", self.dynamics.gamma)?;
        positive("kt", self.dynamics.kt)?;
        self.dyn_params(0)?;
        if self.walkers == 0 {
            return Err(invalid!("need at least one walker"));
        }
        if self.start.len() != 1 && self.start.len() != self.walkers {
            return Err(invalid!("give one start or one per walker ({}), got {}", self.walkers, self.start.len()));
        }
        for s in &self.start {
            check_dim(self.d(), s.len())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(invalid!("start positions must be finite"));
            }
        }
        if self.n_save == 0 || self.n_step < self.n_save {
            return Err(invalid!("need 1 <= n_save <= n_step, got n_save = {}, n_step = {}", self.n_save, self.n_step));
        }
        if self.t_max == 0 || self.rank == 0 {
            return Err(invalid!("t_max and rank must be positive"));
        }
        if self.basis.p < 2 {
            return Err(invalid!("basis needs p >= 2"));
        }
        positive("basis delta", self.basis.delta)?;
        positive("eps", self.eps)?;
        positive("tau", self.tau)?;
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid!("alpha must be non-negative and finite, got {}", self.alpha));
        }
        if !(self.margin >= 0.0) {
            return Err(invalid!("margin must be non-negative"));
        }
        self.weights.validate()?;
        if self.production.n_traj == 0 || self.production.n_save == 0 {
            return Err(invalid!("production needs n_traj >= 1 and n_save >= 1"));
        }
        if let Some(order) = &self.tree_order {
            DimensionTree::balanced_with_order(order, self.rank)?;
            check_dim(self.m(), order.len())?;
        }
        Ok(())
    }

    pub fn dyn_params(&self, seed: u64) -> Result<DynParams> {
        let d = &self.dynamics;
        DynParams::new(d.dt, d.gamma, 1.0 / d.kt, seed)?.with_substeps(d.substeps)?.with_max_drift(d.max_drift)
    }

    pub fn dynamics_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_DYNAMICS, 0)
    }

    pub fn production_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_PRODUCTION, 0)
    }

    /// Sketch seed used for the fit of iteration `t` (1-based).
    pub fn sketch_seed_for(&self, t: usize) -> u64 {
        let base = self.sketch_seed.unwrap_or_else(|| derive_seed(self.seed, TAG_SKETCH, 0));
        derive_seed(base, TAG_SKETCH, t as u64)
    }

    /// Start rows for `n` walkers, cycling through the configured starts.
    pub fn starts(&self, n: usize) -> Vec<f64> {
        (0..n).flat_map(|i| self.start[i % self.start.len()].iter().copied()).collect()
    }

    pub fn tree(&self) -> Result<DimensionTree> {
        match &self.tree_order {
            Some(order) => DimensionTree::balanced_with_order(order, self.rank),
            None => DimensionTree::balanced(self.m(), self.rank),
        }
    }

    pub fn bases(&self) -> Result<Vec<BasisSpec>> {
        let periodic = self.cv.periodic_mask();
        let flat = BasisSpec::orthonormal(self.basis.p, self.basis.delta, false)?;
        let mut ring = None;
        periodic
            .iter()
            .map(|&p| {
                if !p {
                    return Ok(flat.clone());
                }
                if ring.is_none() {
                    ring = Some(BasisSpec::orthonormal(self.basis.p, self.basis.delta, true)?);
                }
                Ok(ring.clone().expect("periodic basis"))
            })
            .collect()
    }

    pub fn resolve_basins(&self) -> Result<Option<BasinSpec>> {
        let Some(b) = &self.basins else { return Ok(None) };
        let centers = if !b.centers.is_empty() {
            b.centers.clone()
        } else if let Some(g) = &b.search {
            if !matches!(self.cv, CvMap::Identity { .. }) {
                return Err(invalid!("basin search needs the identity CV map"));
            }
            check_dim(self.d(), g.lo.len())?;
            check_dim(self.d(), g.hi.len())?;
            if g.per_axis == 0 {
                return Err(invalid!("basin search grid needs per_axis >= 1"));
            }
            let found = locate_minima(&self.potential, &grid_starts(&g.lo, &g.hi, g.per_axis))?;
            found.minima.into_iter().map(|m| m.point).collect()
        } else {
            return Err(invalid!("basins need explicit centers or a search grid"));
        };
        let spec = BasinSpec::new(centers, b.radius)?;
        check_dim(self.m(), spec.dim())?;
        Ok(Some(spec))
    }
}

fn grid_starts(lo: &[f64], hi: &[f64], n: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut x = vec![0.0; d];
            for k in (0..d).rev() {
                let j = flat % n;
                flat /= n;
                x[k] = if n == 1 { 0.5 * (lo[k] + hi[k]) } else { lo[k] + (hi[k] - lo[k]) * j as f64 / (n - 1) as f64 };
            }
            x
        })
        .collect()
}

/// Runs independent per-walker jobs, possibly in parallel. Results come back in input
/// order, so any implementation yields identical output.
pub trait WalkerExecutor {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send;
}

/// Runs jobs one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl WalkerExecutor for Sequential {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        items.into_iter().map(f).collect()
    }
}

/// Everything needed to resume an adaptive run after its last completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunState {
    /// Completed iterations; 0 means no bias has been built yet.
    pub iteration: usize,
    pub ensemble: EnsembleState,
    /// Snapshots in original CV coordinates.
    pub dataset: HistoryDataset,
    pub bias: Bias,
    /// Per-walker transition trackers when basins are configured.
    pub trackers: Vec<TransitionTracker>,
}

/// Per-iteration fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iteration: usize,
    pub dataset_size: usize,
    pub ranks: Vec<usize>,
    /// Integral of the unit-box density, for `m <= 3`.
    pub integral: Option<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rescale_lo: Vec<f64>,
    pub rescale_hi: Vec<f64>,
    /// Evaluations of the previous bias that fell outside its rescale box during the stage.
    pub out_of_domain: u64,
    /// Cumulative transitions over all walkers, when basins are configured.
    pub transitions: Option<u64>,
}

/// Trajectories collected under a frozen bias, awaiting [`Sampler::update`].
pub struct Stage {
    base: usize,
    pub first_step: u64,
    /// Walker-major, time-minor, `m` columns.
    pub snapshots: Vec<f64>,
    pub per_walker: usize,
    walkers: Vec<WalkerOutput>,
}

/// Output of one adaptive iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Global index of the first step of the stage.
    pub first_step: u64,
    /// Walker-major, time-minor, `m` columns.
    pub snapshots: Vec<f64>,
    pub per_walker: usize,
    pub diagnostics: FitDiagnostics,
}

impl IterationRecord {
    /// Global step index of snapshot `k` of a walker.
    pub fn step_of(&self, k: usize, n_save: u64) -> u64 {
        self.first_step + (k as u64 + 1) * n_save - 1
    }
}

struct WalkerJob {
    index: usize,
    x: Vec<f64>,
    rng: WalkerRng,
    tracker: Option<TransitionTracker>,
}

struct WalkerOutput {
    job: WalkerJob,
    snaps: Vec<f64>,
    values: Vec<f64>,
}

struct StageSpec<'a> {
    field: BiasedForce<'a>,
    cv: &'a CvMap,
    record_bias: bool,
    basins: Option<&'a BasinSpec>,
    params: &'a DynParams,
    first_step: u64,
    n_step: u64,
    n_save: u64,
}

fn run_walker(spec: &StageSpec<'_>, mut job: WalkerJob) -> Result<WalkerOutput> {
    let m = spec.cv.output_dim();
    let per = (spec.n_step / spec.n_save) as usize;
    let mut snaps = Vec::with_capacity(per * m);
    let mut values = Vec::with_capacity(if spec.record_bias { per } else { 0 });
    let mut z = vec![0.0; m];
    let first = spec.first_step;
    let tracker = &mut job.tracker;
    advance_walker(job.index, &mut job.x, &mut job.rng, &spec.field, spec.params, first, spec.n_step, |step, x| {
        let save = (step - first + 1).is_multiple_of(spec.n_save);
        if !save && spec.basins.is_none() {
            return Ok(());
        }
        spec.cv.eval_into(x, &mut z)?;
        if let (Some(b), Some(t)) = (spec.basins, tracker.as_mut()) {
            t.observe(b, &z);
        }
        if save {
            snaps.extend_from_slice(&z);
            if spec.record_bias {
                values.push(spec.field.bias.value(&z)?);
            }
        }
        Ok(())
    })?;
    Ok(WalkerOutput { job, snaps, values })
}

/// Adaptive sampler holding the configuration and the resumable run state.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SimConfig,
    params: DynParams,
    bases: Vec<BasisSpec>,
    tree: DimensionTree,
    basins: Option<BasinSpec>,
    state: RunState,
}

/// Points per axis of the probe grid for the density range diagnostic.
const PROBE_PER_AXIS: usize = 21;
/// Probe samples used instead of a grid when `m > 3`.
const PROBE_SAMPLES: usize = 256;

impl Sampler {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let ens = WalkerEnsemble::new(cfg.d(), cfg.starts(cfg.walkers), cfg.dynamics_seed())?;
        let basins = cfg.resolve_basins()?;
        let trackers = basins.as_ref().map_or_else(Vec::new, |b| vec![TransitionTracker::new(b); cfg.walkers]);
        let state = RunState {
            iteration: 0,
            ensemble: ens.to_state(),
            dataset: HistoryDataset::new(cfg.m()),
            bias: Bias::None,
            trackers,
        };
        Self::assemble(cfg, basins, state)
    }

    /// Continues from a saved state of a run with this configuration.
    pub fn resume(cfg: SimConfig, state: RunState) -> Result<Self> {
        cfg.validate()?;
        let basins = cfg.resolve_basins()?;
        check_dim(cfg.d(), state.ensemble.d)?;
        check_dim(cfg.walkers, state.ensemble.rngs.len())?;
        check_dim(cfg.m(), state.dataset.m)?;
        if let Some(m) = state.bias.dim() {
            check_dim(cfg.m(), m)?;
        }
        let expected = if basins.is_some() { cfg.walkers } else { 0 };
        check_dim(expected, state.trackers.len())?;
        if state.iteration > cfg.t_max {
            return Err(invalid!("state is at iteration {} beyond t_max = {}", state.iteration, cfg.t_max));
        }
        Self::assemble(cfg, basins, state)
    }

    fn assemble(cfg: SimConfig, basins: Option<BasinSpec>, state: RunState) -> Result<Self> {
        let params = cfg.dyn_params(cfg.dynamics_seed())?;
        let bases = cfg.bases()?;
        let tree = cfg.tree()?;
        Ok(Sampler { cfg, params, bases, tree, basins, state })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn params(&self) -> &DynParams {
        &self.params
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn into_state(self) -> RunState {
        self.state
    }

    pub fn basins(&self) -> Option<&BasinSpec> {
        self.basins.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.cfg.t_max
    }

    /// Transition counts summed over walkers.
    pub fn transitions(&self) -> Option<TransitionCounts> {
        let b = self.basins.as_ref()?;
        let mut total = TransitionCounts::new(b.len());
        for t in &self.state.trackers {
            total.merge(&t.counts);
        }
        Some(total)
    }

    /// One full iteration. On error the state is left at the last completed iteration.
    pub fn iterate<E: WalkerExecutor>(&mut self, exec: &E) -> Result<IterationRecord> {
        let stage = self.collect(exec)?;
        self.update(stage)
    }

    /// Trajectory collection under the current bias. Leaves the state untouched.
    pub fn collect<E: WalkerExecutor>(&self, exec: &E) -> Result<Stage> {
        if self.is_done() {
            return Err(invalid!("all {} iterations are complete", self.cfg.t_max));
        }
        let cfg = &self.cfg;
        let m = cfg.m();
        let d = cfg.d();
        let ens = &self.state.ensemble;
        let first_step = ens.steps + 1;
        let jobs: Vec<WalkerJob> = (0..cfg.walkers)
            .map(|i| WalkerJob {
                index: i,
                x: ens.positions[i * d..(i + 1) * d].to_vec(),
                rng: WalkerRng::from_state(ens.rngs[i]),
                tracker: self.state.trackers.get(i).cloned(),
            })
            .collect();
        let spec = StageSpec {
            field: BiasedForce::new(&cfg.potential, &cfg.cv, &self.state.bias)?,
            cv: &cfg.cv,
            record_bias: false,
            basins: self.basins.as_ref(),
            params: &self.params,
            first_step,
            n_step: cfg.n_step,
            n_save: cfg.n_save,
        };
        let out: Vec<WalkerOutput> = exec.map(jobs, |job| run_walker(&spec, job)).into_iter().collect::<Result<_>>()?;
        let per_walker = (cfg.n_step / cfg.n_save) as usize;
        let mut snapshots = Vec::with_capacity(per_walker * cfg.walkers * m);
        for o in &out {
            snapshots.extend_from_slice(&o.snaps);
        }
        Ok(Stage { base: self.state.iteration, first_step, snapshots, per_walker, walkers: out })
    }

    /// Rescales the history extended by `stage`, refits the density and rebuilds the bias,
    /// then commits the walkers. On error the state is unchanged.
    pub fn update(&mut self, stage: Stage) -> Result<IterationRecord> {
        if stage.base != self.state.iteration || stage.first_step != self.state.ensemble.steps + 1 {
            return Err(invalid!("stage was collected from a different state"));
        }
        let Stage { first_step, snapshots, per_walker, walkers: out, .. } = stage;
        let cfg = &self.cfg;
        let m = cfg.m();
        let d = cfg.d();
        let iteration = self.state.iteration + 1;
        let mut dataset = self.state.dataset.clone();
        dataset.append_stage(&snapshots, cfg.weights)?;
        let periodic = cfg.cv.periodic_mask();
        let rescale = fit_rescale(&dataset, &periodic, cfg.margin)?;
        let mut unit = HistoryDataset::new(m);
        unit.samples = vec![0.0; dataset.samples.len()];
        for (src, dst) in dataset.samples.chunks(m).zip(unit.samples.chunks_mut(m)) {
            rescale.to_unit_into(src, dst);
        }
        unit.weights = dataset.weights.clone();
        unit.stages = dataset.stages.clone();
        let opts = FitOptions { oversampling: cfg.oversampling, seed: cfg.sketch_seed_for(iteration) };
        let model = fit(&unit, &self.tree, &self.bases, opts)?;
        let (rho_min, rho_max) = probe_range(&model, &unit)?;
        let out_of_domain = match &self.state.bias {
            Bias::Fht(bp) => bp.out_of_domain_count(),
            _ => 0,
        };
        let diagnostics = FitDiagnostics {
            iteration,
            dataset_size: dataset.len(),
            ranks: model.ranks().to_vec(),
            integral: (m <= 3).then(|| model.integral()),
            rho_min,
            rho_max,
            rescale_lo: rescale.lo.clone(),
            rescale_hi: rescale.hi.clone(),
            out_of_domain,
            transitions: None,
        };
        let bias = BiasPotential::new(model, rescale, cfg.eps, cfg.tau, cfg.alpha, cfg.beta())?;

        // commit
        let st = &mut self.state;
        for o in out {
            let i = o.job.index;
            st.ensemble.positions[i * d..(i + 1) * d].copy_from_slice(&o.job.x);
            st.ensemble.rngs[i] = o.job.rng.state();
            if let Some(t) = o.job.tracker {
                st.trackers[i] = t;
            }
        }
        st.ensemble.steps += cfg.n_step;
        st.ensemble.t += cfg.n_step as f64 * cfg.dynamics.dt;
        st.dataset = dataset;
        st.bias = Bias::Fht(bias);
        st.iteration = iteration;
        let mut diagnostics = diagnostics;
        diagnostics.transitions = self.transitions().map(|t| t.total);
        Ok(IterationRecord { iteration, first_step, snapshots, per_walker, diagnostics })
    }
}

fn probe_range(model: &FhtModel, unit: &HistoryDataset) -> Result<(f64, f64)> {
    let m = model.m();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut visit = |z: &[f64]| -> Result<()> {
        let v = model.evaluate(z)?;
        lo = lo.min(v);
        hi = hi.max(v);
        Ok(())
    };
    if m <= 3 {
        let bounds: Vec<(f64, f64)> = model.bases().iter().map(|b| b.domain()).collect();
        let lo_b: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let hi_b: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        for z in grid_starts(&lo_b, &hi_b, PROBE_PER_AXIS) {
            visit(&z)?;
        }
    } else {
        let stride = (unit.len() / PROBE_SAMPLES).max(1);
        for i in (0..unit.len()).step_by(stride).take(PROBE_SAMPLES) {
            visit(unit.sample(i))?;
        }
    }
    Ok((lo, hi))
}

/// Result of a full adaptive run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub bias: Bias,
    /// The bias built at the end of each iteration, in order.
    pub archive: Vec<Bias>,
    pub dataset: HistoryDataset,
    pub diagnostics: Vec<FitDiagnostics>,
    pub transitions: Option<TransitionCounts>,
}

/// Runs all iterations in memory.
pub fn adapt<E: WalkerExecutor>(cfg: SimConfig, exec: &E) -> Result<AdaptOutcome> {
    let mut s = Sampler::new(cfg)?;
    let mut archive = Vec::new();
    let mut diagnostics = Vec::new();
    while !s.is_done() {
        let rec = s.iterate(exec)?;
        archive.push(s.state.bias.clone());
        diagnostics.push(rec.diagnostics);
    }
    let transitions = s.transitions();
    let st = s.into_state();
    Ok(AdaptOutcome { bias: st.bias, archive, dataset: st.dataset, diagnostics, transitions })
}

/// Production snapshots under a frozen bias, trajectory-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionData {
    pub m: usize,
    pub n_traj: usize,
    pub snapshots: Vec<f64>,
    /// Bias value at each snapshot, for reweighting.
    pub bias_values: Vec<f64>,
    pub traj: Vec<usize>,
    pub step: Vec<u64>,
}

impl ProductionData {
    pub fn len(&self) -> usize {
        self.bias_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias_values.is_empty()
    }
}

/// `production.n_traj` independent trajectories of `production.n_step` steps under the
/// frozen bias, started from the configured starts.
pub fn production<E: WalkerExecutor>(cfg: &SimConfig, bias: &Bias, exec: &E) -> Result<ProductionData> {
    cfg.validate()?;
    bias.validate()?;
    if let Some(mb) = bias.dim() {
        if mb != cfg.m() {
            return Err(invalid!("bias acts on {mb} CVs but the configuration has {}", cfg.m()));
        }
    }
    let pc = cfg.production;
    let seed = cfg.production_seed();
    let params = cfg.dyn_params(seed)?;
    let d = cfg.d();
    let starts = cfg.starts(pc.n_traj);
    let jobs: Vec<WalkerJob> = (0..pc.n_traj)
        .map(|i| WalkerJob {
            index: i,
            x: starts[i * d..(i + 1) * d].to_vec(),
            rng: WalkerRng::new(seed, i as u64),
            tracker: None,
        })
        .collect();
    let spec = StageSpec {
        field: BiasedForce::new(&cfg.potential, &cfg.cv, bias)?,
        cv: &cfg.cv,
        record_bias: true,
        basins: None,
        params: &params,
        first_step: 1,
        n_step: pc.n_step,
        n_save: pc.n_save,
    };
    let out: Vec<WalkerOutput> = exec.map(jobs, |job| run_walker(&spec, job)).into_iter().collect::<Result<_>>()?;
    let per = (pc.n_step / pc.n_save) as usize;
    let mut data = ProductionData {
        m: cfg.m(),
        n_traj: pc.n_traj,
        snapshots: Vec::with_capacity(per * pc.n_traj * cfg.m()),
        bias_values: Vec::with_capacity(per * pc.n_traj),
        traj: Vec::with_capacity(per * pc.n_traj),
        step: Vec::with_capacity(per * pc.n_traj),
    };
    for o in out {
        data.snapshots.extend_from_slice(&o.snaps);
        for (k, v) in o.values.into_iter().enumerate() {
            data.bias_values.push(v);
            data.traj.push(o.job.index);
            data.step.push((k as u64 + 1) * pc.n_save);
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests;
