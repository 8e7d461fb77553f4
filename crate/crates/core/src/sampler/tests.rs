use super::*;
use crate::dynamics::run_stage;
use crate::potentials::PotentialSpec;
use alloc::vec;
use proptest::prelude::*;

fn dw_config() -> SimConfig {
    SimConfig {
        potential: PotentialSpec::double_well(),
        cv: CvMap::Identity { dim: 1 },
        dynamics: DynConfig { dt: 0.005, gamma: 1.0, kt: 0.5, substeps: 1, max_drift: None },
        walkers: 3,
        start: vec![vec![-1.0]],
        n_step: 400,
        n_save: 4,
        t_max: 3,
        basis: BasisConfig { p: 11, delta: 0.3 },
        rank: 4,
        tree_order: None,
        sketch_seed: None,
        oversampling: 2,
        eps: 0.1,
        tau: 0.1,
        alpha: 1.0,
        weights: WeightScheme::Uniform,
        margin: 0.02,
        seed: 17,
        basins: Some(BasinConfig { radius: 0.3, centers: vec![vec![-1.0], vec![1.0]], search: None }),
        production: ProductionConfig { n_traj: 2, n_step: 200, n_save: 10 },
    }
}

fn mueller_config() -> SimConfig {
    SimConfig {
        potential: PotentialSpec::mueller_brown(),
        cv: CvMap::Identity { dim: 2 },
        dynamics: DynConfig { dt: 0.005, gamma: 5.0, kt: 2.5, substeps: 3, max_drift: Some(0.01) },
        walkers: 2,
        start: vec![vec![-0.558, 1.442], vec![0.623, 0.028]],
        n_step: 300,
        n_save: 3,
        t_max: 2,
        basis: BasisConfig { p: 15, delta: 0.3 },
        rank: 5,
        tree_order: None,
        sketch_seed: Some(5),
        oversampling: 3,
        eps: 0.1,
        tau: 0.1,
        alpha: 16.0,
        weights: WeightScheme::Uniform,
        margin: 0.02,
        seed: 2,
        basins: Some(BasinConfig {
            radius: MUELLER_BASIN_RADIUS,
            centers: vec![],
            search: Some(MinimaGrid { lo: vec![-1.7, -0.5], hi: vec![1.3, 2.3], per_axis: 8 }),
        }),
        production: ProductionConfig::default(),
    }
}

#[test]
fn derived_seeds_differ_by_tag_and_index() {
    let a = derive_seed(1, TAG_DYNAMICS, 0);
    assert_ne!(a, derive_seed(1, TAG_SKETCH, 0));
    assert_ne!(a, derive_seed(1, TAG_DYNAMICS, 1));
    assert_ne!(a, derive_seed(2, TAG_DYNAMICS, 0));
    assert_eq!(a, derive_seed(1, TAG_DYNAMICS, 0));
}

#[test]
fn config_validation_rejects_bad_values() {
    assert!(dw_config().validate().is_ok());
    let mut c = dw_config();
    c.start = vec![vec![0.0], vec![1.0]];
    assert!(c.validate().is_err());
    let mut c = dw_config();
    c.n_save = 0;
    assert!(c.validate().is_err());
    let mut c = dw_config();
    c.n_save = c.n_step + 1;
    assert!(c.validate().is_err());
    let mut c = dw_config();
    c.alpha = -1.0;
    assert!(c.validate().is_err());
    let mut c = dw_config();
    c.eps = 0.0;
    assert!(c.validate().is_err());
    let mut c = dw_config();
    c.dynamics.substeps = 0;
    assert!(c.validate().is_err());
    let mut c = dw_config();
    c.dynamics.max_drift = Some(0.0);
    assert!(c.validate().is_err());
    let mut c = dw_config();
    c.start = vec![vec![0.0, 0.0]];
    assert!(c.validate().is_err());
    let mut c = dw_config();
    c.tree_order = Some(vec![1]);
    assert!(c.validate().is_err());
}

#[test]
fn config_round_trips_through_json() {
    let c = mueller_config();
    let s = serde_json::to_string(&c).unwrap();
    let back: SimConfig = serde_json::from_str(&s).unwrap();
    assert_eq!(back, c);
    let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
    v.as_object_mut().unwrap().insert("bogus".into(), serde_json::Value::Bool(true));
    assert!(serde_json::from_value::<SimConfig>(v).is_err());
}

#[test]
fn basin_search_finds_the_three_mueller_minima() {
    let b = mueller_config().resolve_basins().unwrap().unwrap();
    assert_eq!(b.len(), 3);
    let a = &b.centers[0];
    assert!((a[0] + 0.558).abs() < 1e-2 && (a[1] - 1.442).abs() < 1e-2, "{a:?}");
}

#[test]
fn first_stage_runs_unbiased() {
    let cfg = dw_config();
    let mut s = Sampler::new(cfg.clone()).unwrap();
    assert!(s.state().bias.is_zero());
    let rec = s.iterate(&Sequential).unwrap();
    assert_eq!(rec.iteration, 1);
    assert_eq!(rec.first_step, 1);
    assert_eq!(rec.per_walker, 100);

    let mut ens = WalkerEnsemble::new(1, cfg.starts(cfg.walkers), cfg.dynamics_seed()).unwrap();
    let params = cfg.dyn_params(cfg.dynamics_seed()).unwrap();
    let field = BiasedForce::new(&cfg.potential, &cfg.cv, &Bias::None).unwrap();
    let snaps = run_stage(&mut ens, &field, Some(&cfg.cv), &params, cfg.n_step, cfg.n_save).unwrap();
    assert_eq!(rec.snapshots, snaps);
    assert_eq!(s.state().ensemble, ens.to_state());
    assert!(matches!(s.state().bias, Bias::Fht(_)));
    assert_eq!(rec.diagnostics.dataset_size, 300);
    assert!(rec.diagnostics.rho_max > 0.0);
    let integral = rec.diagnostics.integral.unwrap();
    assert!((integral - 1.0).abs() < 0.05, "{integral}");
}

#[test]
fn zero_alpha_reproduces_unbiased_trajectories_bitwise() {
    let mut cfg = mueller_config();
    cfg.alpha = 0.0;
    cfg.t_max = 3;
    let mut s = Sampler::new(cfg.clone()).unwrap();
    let mut all = Vec::new();
    while !s.is_done() {
        all.push(s.iterate(&Sequential).unwrap().snapshots);
    }
    let mut ens = WalkerEnsemble::new(2, cfg.starts(cfg.walkers), cfg.dynamics_seed()).unwrap();
    let params = cfg.dyn_params(cfg.dynamics_seed()).unwrap();
    let field = BiasedForce::new(&cfg.potential, &cfg.cv, &Bias::None).unwrap();
    for stage in all {
        let snaps = run_stage(&mut ens, &field, Some(&cfg.cv), &params, cfg.n_step, cfg.n_save).unwrap();
        assert!(stage.iter().zip(&snaps).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(stage.len(), snaps.len());
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = mueller_config();
    let mut full = Sampler::new(cfg.clone()).unwrap();
    let r1 = full.iterate(&Sequential).unwrap();
    let r2 = full.iterate(&Sequential).unwrap();

    let mut first = Sampler::new(cfg.clone()).unwrap();
    let q1 = first.iterate(&Sequential).unwrap();
    let saved = serde_json::to_string(first.state()).unwrap();
    let state: RunState = serde_json::from_str(&saved).unwrap();
    assert_eq!(&state, first.state());
    let mut resumed = Sampler::resume(cfg, state).unwrap();
    let q2 = resumed.iterate(&Sequential).unwrap();
    assert_eq!(r1, q1);
    assert_eq!(r2, q2);
    assert_eq!(full.state(), resumed.state());
    assert!(resumed.iterate(&Sequential).is_err());
}

#[test]
fn resume_rejects_mismatched_state() {
    let cfg = mueller_config();
    let state = Sampler::new(cfg.clone()).unwrap().into_state();
    let mut other = cfg.clone();
    other.walkers = 3;
    other.start = vec![vec![0.0, 0.0]];
    assert!(Sampler::resume(other, state.clone()).is_err());
    let mut no_basins = cfg;
    no_basins.basins = None;
    assert!(Sampler::resume(no_basins, state).is_err());
}

#[test]
fn adapt_archives_every_iteration() {
    let out = adapt(dw_config(), &Sequential).unwrap();
    assert_eq!(out.archive.len(), 3);
    assert_eq!(out.diagnostics.len(), 3);
    assert_eq!(out.dataset.len(), 900);
    assert_eq!(out.dataset.stages, vec![(0, 300), (300, 600), (600, 900)]);
    assert_eq!(out.archive.last(), Some(&out.bias));
    let t = out.transitions.unwrap();
    assert_eq!(t.pairs.len(), 2);
}

#[test]
fn failed_iteration_keeps_previous_state() {
    let mut cfg = dw_config();
    // one walker, a handful of snapshots: too few for the sketch
    cfg.walkers = 1;
    cfg.n_step = 8;
    cfg.n_save = 4;
    let mut s = Sampler::new(cfg).unwrap();
    let before = s.state().clone();
    assert!(s.iterate(&Sequential).is_err());
    assert_eq!(s.state(), &before);
}

#[test]
fn production_records_bias_values_and_distinct_noise() {
    let cfg = dw_config();
    let out = adapt(cfg.clone(), &Sequential).unwrap();
    let data = production(&cfg, &out.bias, &Sequential).unwrap();
    assert_eq!(data.len(), 40);
    assert_eq!(data.snapshots.len(), 40);
    assert_eq!(&data.traj[..20], &[0; 20]);
    assert_eq!(data.step[0], 10);
    assert_eq!(data.step[19], 200);
    for (z, v) in data.snapshots.iter().zip(&data.bias_values) {
        assert_eq!(*v, out.bias.value(&[*z]).unwrap());
    }
    assert_ne!(&data.snapshots[..20], &data.snapshots[20..]);
    assert_eq!(data, production(&cfg, &out.bias, &Sequential).unwrap());

    let mut empty = cfg.clone();
    empty.production.n_step = 0;
    assert!(production(&empty, &out.bias, &Sequential).unwrap().is_empty());
    let wrong = adapt(mueller_config(), &Sequential).unwrap().bias;
    assert!(production(&cfg, &wrong, &Sequential).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn derived_seeds_are_injective_in_index(master in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(master, TAG_PRODUCTION, i), derive_seed(master, TAG_PRODUCTION, j));
    }

    #[test]
    fn starts_cycle_through_rows(n in 1usize..20) {
        let c = mueller_config();
        let s = c.starts(n);
        prop_assert_eq!(s.len(), 2 * n);
        for i in 0..n {
            prop_assert_eq!(&s[2 * i..2 * i + 2], c.start[i % 2].as_slice());
        }
    }
}

#[test]
fn collect_leaves_the_state_alone_and_stale_stages_are_rejected() {
    let mut s = Sampler::new(dw_config()).unwrap();
    let before = s.state().clone();
    let stage = s.collect(&Sequential).unwrap();
    let again = s.collect(&Sequential).unwrap();
    assert_eq!(s.state(), &before);
    assert_eq!(stage.snapshots, again.snapshots);
    s.update(stage).unwrap();
    assert!(s.update(again).is_err());
}
