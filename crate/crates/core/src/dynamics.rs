//! Euler-Maruyama integration of overdamped Langevin dynamics for independent walkers.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cv::CvMap;
use crate::error::{check_dim, invalid, Error, Result};
use crate::potentials::PotentialSpec;

/// Integrator parameters. `sigma = sqrt(2 / (beta gamma))`, or 0 at zero temperature.
///
/// One recorded step of length `dt` is integrated as `substeps` Euler-Maruyama updates of
/// length `dt / substeps`, each with fresh noise. Stiff wells (Mueller-Brown at `dt = 0.005`,
/// `gamma = 5`) need `substeps >= 3` for the scheme to be linearly stable.
///
/// With `max_drift` set, a substep is shortened further whenever its drift displacement
/// `h |F|_inf / gamma` would exceed `max_drift`, so steep bias flanks are resolved instead of
/// overshooting. Every recorded step still covers exactly `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynParams {
    pub dt: f64,
    pub gamma: f64,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default = "one")]
    pub substeps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_drift: Option<f64>,
}

/// Substeps allowed within one recorded step before the walker counts as diverged.
pub const MAX_ADAPTIVE_SUBSTEPS: u32 = 1_000_000;

fn one() -> u32 {
    1
}

impl DynParams {
    pub fn new(dt: f64, gamma: f64, beta: f64, seed: u64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid!("inverse temperature must be positive and finite, got {beta}"));
        }
        let mut p = Self::zero_temperature(dt, gamma, seed)?;
        p.beta = beta;
        p.sigma = (2.0 / (beta * gamma)).sqrt();
        Ok(p)
    }

    /// Deterministic gradient flow (`beta = inf`, `sigma = 0`).
    pub fn zero_temperature(dt: f64, gamma: f64, seed: u64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid!("time step must be positive and finite, got {dt}"));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(invalid!("friction must be positive and finite, got {gamma}"));
        }
        Ok(DynParams { dt, gamma, beta: f64::INFINITY, sigma: 0.0, seed, substeps: 1, max_drift: None })
    }

    pub fn with_substeps(mut self, substeps: u32) -> Result<Self> {
        if substeps == 0 {
            return Err(invalid!("substep count must be at least 1"));
        }
        self.substeps = substeps;
        Ok(self)
    }

    pub fn with_max_drift(mut self, max_drift: Option<f64>) -> Result<Self> {
        if let Some(l) = max_drift {
            if !(l > 0.0) || !l.is_finite() {
                return Err(invalid!("max drift must be positive and finite, got {l}"));
            }
        }
        self.max_drift = max_drift;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let check = if self.sigma == 0.0 && self.beta == f64::INFINITY {
            Self::zero_temperature(self.dt, self.gamma, self.seed)
        } else {
            Self::new(self.dt, self.gamma, self.beta, self.seed)
        }?;
        if (check.sigma - self.sigma).abs() > 1e-14 * check.sigma.max(1.0) {
            return Err(invalid!("sigma {} inconsistent with beta and gamma (expected {})", self.sigma, check.sigma));
        }
        check.with_substeps(self.substeps)?.with_max_drift(self.max_drift).map(|_| ())
    }

    /// `k_B T` in energy units.
    pub fn kt(&self) -> f64 {
        1.0 / self.beta
    }
}

/// Anything that supplies the total force `-grad U - J^T grad_z V` at a configuration.
pub trait ForceField {
    fn dim(&self) -> usize;
    fn force_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

impl ForceField for PotentialSpec {
    fn dim(&self) -> usize {
        PotentialSpec::dim(self)
    }

    fn force_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.gradient_into(x, out)?;
        out.iter_mut().for_each(|f| *f = -*f);
        Ok(())
    }
}

/// Serializable position of a walker's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position as `[low, high]` 64-bit halves.
    pub word_pos: [u64; 2],
}

/// Counter-based stream for one walker: the run seed picks the key, the walker index the
/// stream, so walkers never share random numbers and may run in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl WalkerRng {
    pub fn new(seed: u64, walker: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(walker);
        WalkerRng { seed, rng }
    }

    pub fn state(&self) -> RngState {
        let pos = self.rng.get_word_pos();
        RngState { seed: self.seed, stream: self.rng.get_stream(), word_pos: [pos as u64, (pos >> 64) as u64] }
    }

    pub fn from_state(s: RngState) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(s.stream);
        rng.set_word_pos(u128::from(s.word_pos[0]) | (u128::from(s.word_pos[1]) << 64));
        WalkerRng { seed: s.seed, rng }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// `M` walkers in `d` dimensions with their random streams and elapsed time.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerEnsemble {
    pub d: usize,
    /// Row-major `M x d`.
    pub positions: Vec<f64>,
    pub rngs: Vec<WalkerRng>,
    pub t: f64,
    pub steps: u64,
}

impl WalkerEnsemble {
    /// Walkers placed at `starts` (row-major `M x d`), stream `i` for walker `i`.
    pub fn new(d: usize, starts: Vec<f64>, seed: u64) -> Result<Self> {
        if d == 0 || starts.is_empty() || !starts.len().is_multiple_of(d) {
            return Err(invalid!("{} start values do not form walkers of dimension {d}", starts.len()));
        }
        if starts.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("walker start positions must be finite"));
        }
        let m = starts.len() / d;
        let rngs = (0..m as u64).map(|i| WalkerRng::new(seed, i)).collect();
        Ok(WalkerEnsemble { d, positions: starts, rngs, t: 0.0, steps: 0 })
    }

    /// Every walker at the same point.
    pub fn replicated(x0: &[f64], walkers: usize, seed: u64) -> Result<Self> {
        let starts: Vec<f64> = (0..walkers).flat_map(|_| x0.iter().copied()).collect();
        Self::new(x0.len(), starts, seed)
    }

    pub fn walkers(&self) -> usize {
        self.rngs.len()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn rng_states(&self) -> Vec<RngState> {
        self.rngs.iter().map(WalkerRng::state).collect()
    }

    pub fn to_state(&self) -> EnsembleState {
        EnsembleState {
            d: self.d,
            positions: self.positions.clone(),
            rngs: self.rng_states(),
            t: self.t,
            steps: self.steps,
        }
    }

    pub fn from_state(s: EnsembleState) -> Result<Self> {
        if s.d == 0 || s.positions.len() != s.d * s.rngs.len() {
            return Err(invalid!("ensemble state holds {} values for {} walkers of dimension {}", s.positions.len(), s.rngs.len(), s.d));
        }
        Ok(WalkerEnsemble {
            d: s.d,
            positions: s.positions,
            rngs: s.rngs.into_iter().map(WalkerRng::from_state).collect(),
            t: s.t,
            steps: s.steps,
        })
    }
}

/// Serializable snapshot of a [`WalkerEnsemble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleState {
    pub d: usize,
    pub positions: Vec<f64>,
    pub rngs: Vec<RngState>,
    pub t: f64,
    pub steps: u64,
}

/// One step `x += F/gamma h + sigma sqrt(h) N(0, I)` repeated `substeps` times with
/// `h = dt / substeps` (shorter under `max_drift`); `force` is scratch space of length `d`.
#[inline]
pub fn em_step<F: ForceField + ?Sized>(
    x: &mut [f64],
    force: &mut [f64],
    field: &F,
    params: &DynParams,
    rng: &mut WalkerRng,
) -> Result<bool> {
    let k = params.substeps.max(1);
    let base = params.dt / f64::from(k);
    let Some(cap) = params.max_drift else {
        for _ in 0..k {
            field.force_into(x, force)?;
            if !em_update(x, force, base, params, rng) {
                return Ok(false);
            }
        }
        return Ok(true);
    };
    let mut elapsed = 0.0;
    for _ in 0..MAX_ADAPTIVE_SUBSTEPS {
        field.force_into(x, force)?;
        let fmax = force.iter().fold(0.0f64, |a, f| a.max(f.abs()));
        let left = params.dt - elapsed;
        let mut h = base;
        if fmax * h > cap * params.gamma {
            h = cap * params.gamma / fmax;
        }
        // finish the step exactly rather than leave a sliver
        let last = h >= left * (1.0 - 1e-9);
        if last {
            h = left;
        }
        if !em_update(x, force, h, params, rng) {
            return Ok(false);
        }
        if last {
            return Ok(true);
        }
        elapsed += h;
    }
    Ok(false)
}

#[inline]
fn em_update(x: &mut [f64], force: &[f64], h: f64, params: &DynParams, rng: &mut WalkerRng) -> bool {
    let drift = h / params.gamma;
    let noise = params.sigma * h.sqrt();
    let mut finite = true;
    for (xi, fi) in x.iter_mut().zip(force.iter()) {
        let kick = if noise != 0.0 { noise * rng.normal() } else { 0.0 };
        *xi += drift * fi + kick;
        finite &= xi.is_finite() && fi.is_finite();
    }
    finite
}

/// Advances a single walker `n_step` steps. `visit(step, x)` sees the position after every
/// step, with `step` counted from `first_step` (the ensemble's global counter + 1).
#[allow(clippy::too_many_arguments)]
pub fn advance_walker<F: ForceField + ?Sized>(
    walker: usize,
    x: &mut [f64],
    rng: &mut WalkerRng,
    field: &F,
    params: &DynParams,
    first_step: u64,
    n_step: u64,
    mut visit: impl FnMut(u64, &[f64]) -> Result<()>,
) -> Result<()> {
    check_dim(field.dim(), x.len())?;
    let mut force = vec![0.0; x.len()];
    for k in 0..n_step {
        let step = first_step + k;
        if !em_step(x, &mut force, field, params, rng)? {
            return Err(Error::DivergedTrajectory { walker, step });
        }
        visit(step, x)?;
    }
    Ok(())
}

/// Advances every walker one step.
pub fn step<F: ForceField + ?Sized>(
    ens: &mut WalkerEnsemble,
    field: &F,
    params: &DynParams,
) -> Result<()> {
    run_stage(ens, field, None, params, 1, 1).map(|_| ())
}

/// Frozen-bias stage: `n_step` steps for every walker, recording `xi(x)` whenever the
/// stage-local step index is a multiple of `n_save`. Snapshots are walker-major, time-minor,
/// row-major with `m` columns (`d` columns when `cv` is `None`).
pub fn run_stage<F: ForceField + ?Sized>(
    ens: &mut WalkerEnsemble,
    field: &F,
    cv: Option<&CvMap>,
    params: &DynParams,
    n_step: u64,
    n_save: u64,
) -> Result<Vec<f64>> {
    if n_save == 0 {
        return Err(invalid!("snapshot cadence must be positive"));
    }
    check_dim(field.dim(), ens.d)?;
    let m = cv.map_or(ens.d, CvMap::output_dim);
    if let Some(c) = cv {
        check_dim(c.input_dim(), ens.d)?;
    }
    let per_walker = (n_step / n_save) as usize;
    let mut snaps = Vec::with_capacity(per_walker * ens.walkers() * m);
    let first = ens.steps + 1;
    let d = ens.d;
    let mut z = vec![0.0; m];
    for (w, rng) in ens.rngs.iter_mut().enumerate() {
        let x = &mut ens.positions[w * d..(w + 1) * d];
        advance_walker(w, x, rng, field, params, first, n_step, |step, x| {
            if (step - first + 1).is_multiple_of(n_save) {
                match cv {
                    Some(c) => {
                        c.eval_into(x, &mut z)?;
                        snaps.extend_from_slice(&z);
                    }
                    None => snaps.extend_from_slice(x),
                }
            }
            Ok(())
        })?;
    }
    ens.steps += n_step;
    ens.t += n_step as f64 * params.dt;
    Ok(snaps)
}
