//! The subcommands, callable in-process.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pdmv_core::analysis::{
    count_transitions, fes_difference, fes_histogram, fes_rmse, reference_fes_quadrature, reweight_weights, BasinSpec,
    FesGrid, TransitionCounts,
};
use pdmv_core::bias::Bias;
use pdmv_core::fht::{fit, FhtModel, FitOptions};
use pdmv_core::history::{fit_rescale, HistoryDataset, RescaleMap, WeightScheme};
use pdmv_core::sampler::{production as run_production, RunState, Sampler, SimConfig};
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, RunConfigFile};
use crate::error::{CliError, Result};
use crate::exec::Parallel;
use crate::store::{envelope_bytes, read_json, sha256_hex, write_json, DirLock, Manifest};
use crate::table::{self, fmt_f64, read_table, z_columns, TableWriter};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const TRANSITIONS_FILE: &str = "transitions.json";
pub const FINAL_BIAS_FILE: &str = "bias.json";
pub const PRODUCTION_FILE: &str = "production.csv";
pub const FES_FILE: &str = "fes.csv";
pub const REFERENCE_FILE: &str = "fes_reference.csv";
pub const DIFF_FILE: &str = "fes_diff.csv";
pub const DIFF_SUMMARY_FILE: &str = "fes_diff.json";
pub const DENSITY_FILE: &str = "density.json";
pub const DENSITY_GRID_FILE: &str = "density_grid.csv";

pub const CONFIG_FORMAT: &str = "pdmv.config";
pub const CHECKPOINT_FORMAT: &str = "pdmv.checkpoint";
pub const BIAS_FORMAT: &str = "pdmv.bias";
pub const TRANSITIONS_FORMAT: &str = "pdmv.transitions";
pub const FES_SUMMARY_FORMAT: &str = "pdmv.fes-diff";
pub const DENSITY_FORMAT: &str = "pdmv.density";

pub const TRANSITION_DEFINITION: &str = "dwell-based: a series last inside the capture disk of basin i \
counts one transition on first entering the disk of a basin j != i; points outside every disk keep the last assignment";

pub fn bias_file(iteration: usize) -> String {
    format!("bias/iter_{iteration:04}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasFile {
    pub iteration: usize,
    pub bias: Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    config_hash: String,
    state: RunState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionReport {
    pub definition: String,
    pub source: String,
    pub basins: BasinSpec,
    pub total: u64,
    pub pairs: Vec<Vec<u64>>,
    /// Totals per walker or trajectory.
    pub per_series: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FesDiffSummary {
    pub bins: usize,
    pub cutoff_kt: f64,
    /// Both surfaces aligned to minimum zero, in `k_B T`.
    pub rmse_kt: f64,
    /// After removing the mean difference over the compared bins, in `k_B T`.
    pub rmse_shifted_kt: f64,
    pub mean_difference_kt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityFile {
    pub rescale: RescaleMap,
    pub model: FhtModel,
}

pub fn read_bias(path: &Path) -> Result<BiasFile> {
    read_json(path, BIAS_FORMAT)
}

/// Hash of the bias document as it would be written for `iteration`.
pub fn bias_hash(iteration: usize, bias: &Bias) -> Result<String> {
    let doc = BiasFile { iteration, bias: bias.clone() };
    Ok(sha256_hex(&envelope_bytes(BIAS_FORMAT, &doc)?))
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfigFile> {
    let mut cfg = RunConfigFile::load(path)?;
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    Ok(cfg)
}

fn command_label(name: &str, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("{name} --seed {s}"),
        None => name.to_string(),
    }
}

fn write_config(dir: &Path, file: &RunConfigFile) -> Result<()> {
    // the output path is where the run lives, not what it computes
    let mut stored = file.clone();
    stored.output = None;
    write_json(&dir.join(CONFIG_FILE), CONFIG_FORMAT, &stored).map(|_| ())
}

fn record_seeds(manifest: &mut Manifest, sim: &SimConfig) {
    manifest.seeds.insert("master".into(), sim.seed);
    manifest.seeds.insert("dynamics".into(), sim.dynamics_seed());
    manifest.seeds.insert("sketch_first".into(), sim.sketch_seed_for(1));
    manifest.seeds.insert("production".into(), sim.production_seed());
}

/// Drops data lines whose first field (the iteration) exceeds `keep`.
fn truncate_iterations(path: &Path, keep: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        let it = line.split(',').next().and_then(|f| f.parse::<usize>().ok());
        if i == 0 || it.is_some_and(|t| t <= keep) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

fn diagnostics_columns(m: usize, nodes: usize) -> Vec<String> {
    let mut c: Vec<String> = ["iteration", "dataset_size", "integral", "rho_min", "rho_max", "out_of_domain", "transitions"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    c.extend((0..nodes).map(|n| format!("rank_{n}")));
    c.extend((1..=m).map(|k| format!("lo_{k}")));
    c.extend((1..=m).map(|k| format!("hi_{k}")));
    c
}

fn snapshot_columns(m: usize) -> Vec<String> {
    let mut c = vec!["iteration".to_string(), "walker".to_string(), "step".to_string()];
    c.extend(z_columns(m));
    c
}

#[derive(Debug, Clone)]
pub struct AdaptArgs {
    pub config: PathBuf,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resume: bool,
    /// Stop after this many iterations in this invocation (the run stays resumable).
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptSummary {
    pub output: PathBuf,
    pub iterations: usize,
    pub complete: bool,
    pub transitions: Option<TransitionCounts>,
}

/// Runs (or resumes) the adaptive loop, writing snapshots, per-iteration biases,
/// diagnostics, transition counts, a checkpoint and the manifest after every iteration.
pub fn adapt(args: &AdaptArgs) -> Result<AdaptSummary> {
    let file = load_config(&args.config, args.seed)?;
    let dir = file.output_dir(args.output.as_deref())?;
    let _lock = DirLock::acquire(&dir)?;
    let sim = file.sim.clone();
    let chash = config_hash(&sim);
    let label = command_label("adapt", args.seed);
    let ckpt = dir.join(CHECKPOINT_FILE);
    let m = sim.m();
    let snap_cols = snapshot_columns(m);
    let nodes = sim.tree()?.nodes.len();
    let diag_cols = diagnostics_columns(m, nodes);

    let mut manifest;
    let mut sampler = if args.resume {
        let ck: Checkpoint = read_json(&ckpt, CHECKPOINT_FORMAT)?;
        if ck.config_hash != chash {
            return Err(CliError::Usage(format!(
                "{} was written by a different configuration; refusing to resume",
                ckpt.display()
            )));
        }
        let done = ck.state.iteration;
        manifest = Manifest::load_or_new(&dir, &file.name)?;
        manifest.stages.truncate(done);
        truncate_iterations(&dir.join(SNAPSHOTS_FILE), done)?;
        truncate_iterations(&dir.join(DIAGNOSTICS_FILE), done)?;
        info!("resuming {} after iteration {done}", dir.display());
        Sampler::resume(sim.clone(), ck.state)?
    } else {
        if ckpt.exists() {
            return Err(CliError::Usage(format!(
                "{} already holds a run; pass --resume to continue it",
                dir.display()
            )));
        }
        fs::create_dir_all(dir.join("bias")).map_err(|e| CliError::io(&dir, e))?;
        TableWriter::create(&dir.join(SNAPSHOTS_FILE), table::SNAPSHOTS, &snap_cols)?.finish()?;
        TableWriter::create(&dir.join(DIAGNOSTICS_FILE), table::DIAGNOSTICS, &diag_cols)?.finish()?;
        manifest = Manifest { experiment: file.name.clone(), ..Default::default() };
        Sampler::new(sim.clone())?
    };
    fs::create_dir_all(dir.join("bias")).map_err(|e| CliError::io(&dir, e))?;
    write_config(&dir, &file)?;
    record_seeds(&mut manifest, &sim);
    manifest.record(&dir, CONFIG_FILE, &label, &chash)?;

    let mut ran = 0;
    while !sampler.is_done() && args.max_iterations.is_none_or(|k| ran < k) {
        let t = sampler.state().iteration + 1;
        let at_start = bias_hash(t - 1, &sampler.state().bias)?;
        let stage = sampler.collect(&Parallel)?;
        let at_end = bias_hash(t - 1, &sampler.state().bias)?;
        let rec = sampler.update(stage)?;
        ran += 1;

        let mut w = TableWriter::append(&dir.join(SNAPSHOTS_FILE), table::SNAPSHOTS, &snap_cols)?;
        for (i, row) in rec.snapshots.chunks(m).enumerate() {
            let (walker, k) = (i / rec.per_walker, i % rec.per_walker);
            let mut fields = vec![t.to_string(), walker.to_string(), rec.step_of(k, sim.n_save).to_string()];
            fields.extend(row.iter().map(|&v| fmt_f64(v)));
            w.row(&fields)?;
        }
        w.finish()?;

        let d = &rec.diagnostics;
        let mut fields = vec![
            t.to_string(),
            d.dataset_size.to_string(),
            fmt_f64(d.integral.unwrap_or(f64::NAN)),
            fmt_f64(d.rho_min),
            fmt_f64(d.rho_max),
            d.out_of_domain.to_string(),
            d.transitions.map_or_else(|| "NaN".to_string(), |v| v.to_string()),
        ];
        fields.extend(d.ranks.iter().map(|r| r.to_string()));
        fields.extend(d.rescale_lo.iter().chain(&d.rescale_hi).map(|&v| fmt_f64(v)));
        let mut w = TableWriter::append(&dir.join(DIAGNOSTICS_FILE), table::DIAGNOSTICS, &diag_cols)?;
        w.row(&fields)?;
        w.finish()?;

        let rel = bias_file(t);
        write_json(&dir.join(&rel), BIAS_FORMAT, &BiasFile { iteration: t, bias: sampler.state().bias.clone() })?;
        manifest.record(&dir, &rel, &label, &chash)?;
        if let (Some(b), Some(c)) = (sampler.basins(), sampler.transitions()) {
            let per_series = sampler
                .state()
                .trackers
                .iter()
                .enumerate()
                .map(|(i, tr)| (format!("walker_{i}"), tr.counts.total))
                .collect();
            let report = TransitionReport {
                definition: format!("{TRANSITION_DEFINITION}; checked after every integration step"),
                source: "adapt".into(),
                basins: b.clone(),
                total: c.total,
                pairs: c.pairs,
                per_series,
            };
            write_json(&dir.join(TRANSITIONS_FILE), TRANSITIONS_FORMAT, &report)?;
            manifest.record(&dir, TRANSITIONS_FILE, &label, &chash)?;
        }
        write_json(&ckpt, CHECKPOINT_FORMAT, &Checkpoint { config_hash: chash.clone(), state: sampler.state().clone() })?;
        manifest.stages.push(crate::store::StageRecord { iteration: t, bias_at_start: at_start, bias_at_end: at_end });
        for rel in [SNAPSHOTS_FILE, DIAGNOSTICS_FILE, CHECKPOINT_FILE] {
            manifest.record(&dir, rel, &label, &chash)?;
        }
        manifest.save(&dir)?;
        info!(
            "iteration {t}/{}: {} samples, density range [{:.3e}, {:.3e}], transitions {}",
            sim.t_max,
            d.dataset_size,
            d.rho_min,
            d.rho_max,
            d.transitions.map_or_else(|| "-".to_string(), |v| v.to_string())
        );
    }

    let complete = sampler.is_done();
    if complete {
        let t = sampler.state().iteration;
        write_json(
            &dir.join(FINAL_BIAS_FILE),
            BIAS_FORMAT,
            &BiasFile { iteration: t, bias: sampler.state().bias.clone() },
        )?;
        manifest.record(&dir, FINAL_BIAS_FILE, &label, &chash)?;
    }
    manifest.save(&dir)?;
    Ok(AdaptSummary {
        output: dir,
        iterations: sampler.state().iteration,
        complete,
        transitions: sampler.transitions(),
    })
}

#[derive(Debug, Clone)]
pub struct ProductionArgs {
    pub config: PathBuf,
    pub bias: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Production under a frozen bias (the final adaptive bias by default); writes
/// `production.csv` with the bias value next to every snapshot.
pub fn production(args: &ProductionArgs) -> Result<PathBuf> {
    let file = load_config(&args.config, args.seed)?;
    let dir = file.output_dir(args.output.as_deref())?;
    let _lock = DirLock::acquire(&dir)?;
    let sim = &file.sim;
    let bias_path = args.bias.clone().unwrap_or_else(|| dir.join(FINAL_BIAS_FILE));
    let bias = read_bias(&bias_path)?.bias;
    let data = run_production(sim, &bias, &Parallel)?;
    let m = data.m;
    let mut cols = vec!["traj".to_string(), "step".to_string()];
    cols.extend(z_columns(m));
    cols.push("bias".into());
    let out = dir.join(PRODUCTION_FILE);
    let mut w = TableWriter::create(&out, table::PRODUCTION, &cols)?;
    for i in 0..data.len() {
        let mut fields = vec![data.traj[i].to_string(), data.step[i].to_string()];
        fields.extend(data.snapshots[i * m..(i + 1) * m].iter().map(|&v| fmt_f64(v)));
        fields.push(fmt_f64(data.bias_values[i]));
        w.row(&fields)?;
    }
    w.finish()?;
    let chash = config_hash(sim);
    let mut manifest = Manifest::load_or_new(&dir, &file.name)?;
    record_seeds(&mut manifest, sim);
    manifest.record(&dir, PRODUCTION_FILE, &command_label("production", args.seed), &chash)?;
    manifest.save(&dir)?;
    info!("production: {} snapshots from {} trajectories", data.len(), data.n_traj);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeMode {
    Fes,
    Diff,
    Transitions,
}

#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub config: PathBuf,
    pub mode: AnalyzeMode,
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

fn write_grid(path: &Path, schema: &str, grid: &FesGrid, value: &str) -> Result<()> {
    let mut cols = z_columns(grid.axes.len());
    cols.push(value.to_string());
    cols.push("defined".into());
    let mut w = TableWriter::create(path, schema, &cols)?;
    for i in 0..grid.len() {
        let mut fields: Vec<String> = grid.center(i).into_iter().map(fmt_f64).collect();
        fields.push(fmt_f64(grid.values[i]));
        fields.push(u8::from(grid.defined[i]).to_string());
        w.row(&fields)?;
    }
    w.finish()
}

/// Reads a grid written by [`write_grid`], checking it lies on `axes`.
fn read_grid(path: &Path, schema: &str, template: &FesGrid) -> Result<FesGrid> {
    let t = read_table(path, Some(schema))?;
    let k = template.axes.len();
    if t.rows.len() != template.len() || t.columns.len() != k + 2 {
        return Err(CliError::format(path, "grid does not match the configured axes"));
    }
    let mut values = Vec::with_capacity(t.rows.len());
    let mut defined = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let c = template.center(i);
        if row[..k].iter().zip(&c).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs())) {
            return Err(CliError::format(path, format!("row {} is off the configured grid", i + 1)));
        }
        values.push(row[k]);
        defined.push(row[k + 1] != 0.0);
    }
    Ok(FesGrid { axes: template.axes.clone(), values, defined })
}

/// Reweighted FES, difference against a reference, or transition counts from a CSV.
pub fn analyze(args: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let file = load_config(&args.config, None)?;
    let dir = file.output_dir(args.output.as_deref())?;
    let _lock = DirLock::acquire(&dir)?;
    let sim = &file.sim;
    let beta = sim.beta();
    let chash = config_hash(sim);
    let mut manifest = Manifest::load_or_new(&dir, &file.name)?;
    let mut written = Vec::new();
    match args.mode {
        AnalyzeMode::Fes => {
            let fes = file.fes()?;
            let input = args.input.clone().unwrap_or_else(|| dir.join(PRODUCTION_FILE));
            let t = read_table(&input, Some(table::PRODUCTION))?;
            let m = t.z_dim();
            let z = t.z_block(m).ok_or_else(|| CliError::format(&input, "missing z columns"))?;
            let bcol = t.column("bias").ok_or_else(|| CliError::format(&input, "missing bias column"))?;
            let v: Vec<f64> = t.rows.iter().map(|r| r[bcol]).collect();
            let w = reweight_weights(&v, beta)?;
            let grid = fes_histogram(&z, m, &w, &fes.axes, &fes.subset(), beta)?;
            let out = dir.join(FES_FILE);
            write_grid(&out, table::FES, &grid, "F")?;
            manifest.record(&dir, FES_FILE, "analyze --mode fes", &chash)?;
            written.push(out);
        }
        AnalyzeMode::Diff => {
            let fes = file.fes()?;
            let reference = args
                .reference
                .clone()
                .ok_or_else(|| CliError::Usage("diff needs a reference grid (--reference)".into()))?;
            let input = args.input.clone().unwrap_or_else(|| dir.join(FES_FILE));
            let n = fes.axes.iter().map(|a| a.bins).product();
            let template = FesGrid { axes: fes.axes.clone(), values: vec![0.0; n], defined: vec![true; n] };
            let est = read_grid(&input, table::FES, &template)?;
            let refg = read_grid(&reference, table::FES, &template)?;
            let diff = fes_difference(&est, &refg)?;
            let cmp = fes_rmse(&est, &refg, fes.cutoff_kt / beta)?;
            let out = dir.join(DIFF_FILE);
            write_grid(&out, table::FES_DIFF, &diff, "dF")?;
            let summary = FesDiffSummary {
                bins: cmp.bins,
                cutoff_kt: fes.cutoff_kt,
                rmse_kt: cmp.rmse * beta,
                rmse_shifted_kt: cmp.rmse_shifted * beta,
                mean_difference_kt: cmp.mean_difference * beta,
            };
            write_json(&dir.join(DIFF_SUMMARY_FILE), FES_SUMMARY_FORMAT, &summary)?;
            for rel in [DIFF_FILE, DIFF_SUMMARY_FILE] {
                manifest.record(&dir, rel, "analyze --mode diff", &chash)?;
            }
            info!("FES RMSE {:.3} kT over {} bins ({:.3} kT after mean shift)", summary.rmse_kt, cmp.bins, summary.rmse_shifted_kt);
            written.push(out);
            written.push(dir.join(DIFF_SUMMARY_FILE));
        }
        AnalyzeMode::Transitions => {
            let basins = sim
                .resolve_basins()?
                .ok_or_else(|| CliError::Usage("transition counting needs [sim.basins]".into()))?;
            let input = args.input.clone().unwrap_or_else(|| dir.join(SNAPSHOTS_FILE));
            let t = read_table(&input, None)?;
            let m = basins.dim();
            let idx: Vec<usize> = z_columns(m)
                .iter()
                .map(|c| t.column(c))
                .collect::<Option<_>>()
                .ok_or_else(|| CliError::format(&input, format!("needs columns z_1..z_{m}")))?;
            let id = t.column("walker").or_else(|| t.column("traj"));
            let mut series: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for row in &t.rows {
                let key = id.map_or(0, |c| row[c] as u64);
                series.entry(key).or_default().extend(idx.iter().map(|&c| row[c]));
            }
            let mut total = TransitionCounts::new(basins.len());
            let mut per_series = BTreeMap::new();
            for (k, s) in &series {
                let c = count_transitions(s, m, &basins)?;
                per_series.insert(format!("series_{k}"), c.total);
                total.merge(&c);
            }
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
            let rel = format!("transitions_{stem}.json");
            let report = TransitionReport {
                definition: format!("{TRANSITION_DEFINITION}; checked at every recorded snapshot"),
                source: stem.to_string(),
                basins,
                total: total.total,
                pairs: total.pairs,
                per_series,
            };
            write_json(&dir.join(&rel), TRANSITIONS_FORMAT, &report)?;
            manifest.record(&dir, &rel, "analyze --mode transitions", &chash)?;
            written.push(dir.join(rel));
        }
    }
    manifest.save(&dir)?;
    Ok(written)
}

/// Reference FES `U - min U` on the configured grid.
pub fn reference(config: &Path, output: Option<&Path>) -> Result<PathBuf> {
    let file = load_config(config, None)?;
    let dir = file.output_dir(output)?;
    let _lock = DirLock::acquire(&dir)?;
    let fes = file.fes()?;
    let grid = reference_fes_quadrature(&file.sim.potential, &file.sim.cv, &fes.axes)?;
    let out = dir.join(REFERENCE_FILE);
    write_grid(&out, table::FES, &grid, "F")?;
    let mut manifest = Manifest::load_or_new(&dir, &file.name)?;
    manifest.record(&dir, REFERENCE_FILE, "reference", &config_hash(&file.sim))?;
    manifest.save(&dir)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FitDensityArgs {
    pub config: PathBuf,
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    /// Points per axis of an evaluation grid (m <= 2 only).
    pub grid: Option<usize>,
}

/// Standalone density fit of the samples in a CSV, with the configured basis, tree, rank
/// and sketch settings. Uses columns `z_1..z_m` when present, otherwise every column.
pub fn fit_density(args: &FitDensityArgs) -> Result<PathBuf> {
    let file = load_config(&args.config, None)?;
    let dir = file.output_dir(args.output.as_deref())?;
    let _lock = DirLock::acquire(&dir)?;
    let sim = &file.sim;
    let t = read_table(&args.input, None)?;
    let m = sim.m();
    let samples = match t.z_block(m) {
        Some(z) if t.z_dim() == m => z,
        _ if t.columns.len() == m => t.rows.concat(),
        _ => {
            return Err(CliError::format(&args.input, format!("expected {m} sample columns")));
        }
    };
    let mut ds = HistoryDataset::new(m);
    ds.append_stage(&samples, WeightScheme::Uniform)?;
    let rescale = fit_rescale(&ds, &sim.cv.periodic_mask(), sim.margin)?;
    let mut unit = ds.clone();
    for (src, dst) in ds.samples.chunks(m).zip(unit.samples.chunks_mut(m)) {
        rescale.to_unit_into(src, dst);
    }
    let opts = FitOptions { oversampling: sim.oversampling, seed: sim.sketch_seed_for(1) };
    let model = fit(&unit, &sim.tree()?, &sim.bases()?, opts)?;
    let chash = config_hash(sim);
    let mut manifest = Manifest::load_or_new(&dir, &file.name)?;
    let out = dir.join(DENSITY_FILE);
    let doc = DensityFile { rescale, model };
    write_json(&out, DENSITY_FORMAT, &doc)?;
    manifest.record(&dir, DENSITY_FILE, "fit-density", &chash)?;
    if let Some(n) = args.grid {
        if m > 2 || n < 2 {
            return Err(CliError::Usage("--grid needs m <= 2 and at least 2 points per axis".into()));
        }
        let mut cols = z_columns(m);
        cols.push("rho".into());
        let mut w = TableWriter::create(&dir.join(DENSITY_GRID_FILE), table::DENSITY_GRID, &cols)?;
        let jac = doc.rescale.jacobian_product();
        let mut z = vec![0.0; m];
        let mut u = vec![0.0; m];
        for flat in 0..n.pow(m as u32) {
            let mut rest = flat;
            for k in (0..m).rev() {
                let j = rest % n;
                rest /= n;
                let (lo, hi) = (doc.rescale.lo[k], doc.rescale.hi[k]);
                z[k] = lo + (hi - lo) * j as f64 / (n - 1) as f64;
            }
            doc.rescale.to_unit_into(&z, &mut u);
            let rho = doc.model.evaluate(&u)? * jac;
            let mut fields: Vec<String> = z.iter().map(|&v| fmt_f64(v)).collect();
            fields.push(fmt_f64(rho));
            w.row(&fields)?;
        }
        w.finish()?;
        manifest.record(&dir, DENSITY_GRID_FILE, "fit-density", &chash)?;
    }
    manifest.save(&dir)?;
    Ok(out)
}
