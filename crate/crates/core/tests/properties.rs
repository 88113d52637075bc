use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use psrmab::detect::DetectorConfig;
use psrmab::env::{chain, MarkovArmSpec, RewardNoise, SegmentedEnvironment};
use psrmab::explore::ExplorationSchedule;
use psrmab::harness::config::{EnvironmentSource, ExperimentSpec};
use psrmab::harness::{build_preset, run_in_memory, validate_spec};
use psrmab::orchestrate::{self, PolicyKind, RunConfig};
use psrmab::regret;
use psrmab::solvers::{SolverKind, SolverSpec};

fn ucb1() -> SolverSpec {
    SolverSpec {
        kind: SolverKind::Ucb1,
        ..SolverSpec::default()
    }
}

/// Random row-stochastic matrix with a positive diagonal and a full cycle,
/// hence irreducible and aperiodic.
fn ergodic_chain(max_states: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_states).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), n).prop_map(move |raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, mut row)| {
                    row[i] += 0.05;
                    row[(i + 1) % n] += 0.05;
                    let s: f64 = row.iter().sum();
                    row.iter().map(|x| x / s).collect()
                })
                .collect()
        })
    })
}

fn one_state_env(segments: &[Vec<f64>], horizon: u64) -> SegmentedEnvironment {
    let specs = segments
        .iter()
        .map(|seg| seg.iter().map(|&m| MarkovArmSpec::one_state(m).unwrap()).collect())
        .collect();
    SegmentedEnvironment::with_equal_spacing(specs, horizon, RewardNoise::Bernoulli).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stationary_is_a_fixed_point(p in ergodic_chain(8)) {
        let d = chain::stationary_distribution(&p).unwrap();
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(d.iter().all(|&x| x >= 0.0));
        for j in 0..p.len() {
            let dp: f64 = d.iter().zip(&p).map(|(x, row)| x * row[j]).sum();
            prop_assert!((dp - d[j]).abs() <= 1e-10);
        }
    }

    #[test]
    fn slem_in_unit_interval_and_mixing_consistent(p in ergodic_chain(6)) {
        let l2 = chain::slem(&p).unwrap();
        prop_assert!((0.0..1.0).contains(&l2));
        let l = chain::mixing_time(&p, 0.125).unwrap();
        prop_assert!((l - 8f64.ln() / (1.0 - l2)).abs() < 1e-9);
        // Tighter accuracy needs longer mixing.
        prop_assert!(chain::mixing_time(&p, 0.01).unwrap() >= l);
    }

    #[test]
    fn explored_flags_match_schedule(
        alpha in 0.3f64..3.0,
        k in 2usize..6,
        horizon in 200u64..3000,
        seed in any::<u64>(),
    ) {
        let means: Vec<f64> = (0..k).map(|i| 0.1 + 0.8 * i as f64 / k as f64).collect();
        let env = one_state_env(&[means], horizon);
        let mut cfg = RunConfig::new(PolicyKind::DeCd, ucb1());
        cfg.alpha = alpha;
        let traj = orchestrate::run(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut expected = 0u64;
        for u in ExplorationSchedule::block_starts(alpha, k, horizon) {
            expected += (horizon - u + 1).min(k as u64);
        }
        prop_assert_eq!(traj.explored_count() as u64, expected);
        prop_assert_eq!(traj.len() as u64, horizon);
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), policy in prop::sample::select(PolicyKind::ALL.to_vec())) {
        let env = one_state_env(&[vec![0.2, 0.8], vec![0.9, 0.1]], 800);
        let mut cfg = RunConfig::new(policy, ucb1());
        cfg.detector = Some(DetectorConfig::new(40, 8.0).unwrap());
        let a = orchestrate::run(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = orchestrate::run(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn every_alarm_restarts_the_schedule(seed in any::<u64>()) {
        let env = one_state_env(&[vec![0.9, 0.2, 0.5], vec![0.1, 0.2, 0.5], vec![0.9, 0.2, 0.5]], 1500);
        let mut cfg = RunConfig::new(PolicyKind::DeCd, ucb1());
        cfg.detector = Some(DetectorConfig::new(30, 8.0).unwrap());
        let traj = orchestrate::run(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(traj.alarms.windows(2).all(|w| w[0] < w[1]));
        for &tau in &traj.alarms {
            if tau + 3 <= 1500 {
                let next: Vec<(usize, bool)> = traj.steps[tau as usize..tau as usize + 3]
                    .iter()
                    .map(|s| (s.action, s.explored))
                    .collect();
                prop_assert_eq!(next, vec![(0, true), (1, true), (2, true)]);
            }
        }
    }

    #[test]
    fn segment_oracle_segments_match_fresh_runs(seed in any::<u64>()) {
        // With one-state arms and no noise, each segment of the oracle run
        // must equal a fresh single-segment run of that segment's arms.
        let segs = [vec![0.2, 0.7, 0.4], vec![0.6, 0.3, 0.9]];
        let specs: Vec<Vec<MarkovArmSpec>> = segs
            .iter()
            .map(|s| s.iter().map(|&m| MarkovArmSpec::one_state(m).unwrap()).collect())
            .collect();
        let env = SegmentedEnvironment::new(specs.clone(), vec![0, 300, 700], RewardNoise::None, None).unwrap();
        let cfg = RunConfig::new(PolicyKind::SegmentOracle, ucb1());
        let traj = orchestrate::run(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (i, (lo, hi)) in [(0usize, 300usize), (300, 700)].into_iter().enumerate() {
            let single = SegmentedEnvironment::new(
                vec![specs[i].clone()], vec![0, (hi - lo) as u64], RewardNoise::None, None,
            ).unwrap();
            let fresh = orchestrate::run(&single, &RunConfig::new(PolicyKind::NoCd, ucb1()),
                &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let got: Vec<usize> = traj.steps[lo..hi].iter().map(|s| s.action).collect();
            let want: Vec<usize> = fresh.steps.iter().map(|s| s.action).collect();
            prop_assert_eq!(got, want);
        }
    }
}

#[test]
fn best_arm_oracle_tracks_steady_state_mean() {
    let mut doc = psrmab::harness::presets::markov_preset_document();
    doc.horizon = 500_000;
    doc.noise = RewardNoise::None;
    let env = doc.validate().unwrap().env;
    let cfg = RunConfig::new(PolicyKind::BestArmOracle, ucb1());
    let traj = orchestrate::run(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    for i in 0..env.num_segments() {
        let (lo, hi) = (env.change_points()[i] as usize, env.change_points()[i + 1] as usize);
        let avg = traj.steps[lo..hi].iter().map(|s| s.reward).sum::<f64>() / (hi - lo) as f64;
        assert!((avg - env.best_mean(i)).abs() < 0.01, "segment {i}: {avg}");
    }
    // Per-step standard regret increment vanishes on average.
    let r = regret::standard_regret(&traj, &env).unwrap();
    assert!(r.last().unwrap().abs() / (env.horizon() as f64) < 1e-3);
}

#[test]
fn aggregate_standard_error_shrinks_with_trials() {
    // Bootstrap-style check: SE of the mean over n draws ~ sigma / sqrt(n).
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<Vec<f64>> = (0..1600).map(|_| vec![rng.gen::<f64>()]).collect();
    let se_100 = regret::aggregate(&draws[..100]).unwrap().se[0];
    let se_1600 = regret::aggregate(&draws).unwrap().se[0];
    let ratio = se_100 / se_1600;
    assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
    let sigma = (1.0f64 / 12.0).sqrt();
    assert!((se_1600 - sigma / 40.0).abs() < 0.15 * sigma / 40.0);
}

#[test]
fn markov_preset_alarm_counts() {
    // With the default warm-up the solver keeps pulling the best arm until the
    // detector fires, so nearly every change is caught exactly once.
    let mut spec = ExperimentSpec::new(
        EnvironmentSource::Preset {
            name: "appendix-c".into(),
            horizon: None,
        },
        vec![PolicyKind::DeCd],
    );
    spec.trials = 100;
    spec.base_seed = 21;
    spec.log_stride = 5000;
    spec.detector.delta = 0.6;
    let exp = validate_spec(spec).unwrap();
    let res = run_in_memory(&exp).unwrap();
    let m = exp.env.num_segments();
    let ok = res.policies[0]
        .alarms
        .iter()
        .filter(|a| (m - 1..=m + 1).contains(&a.len()))
        .count();
    assert!(ok >= 90, "{ok}/100 runs raised between M-1 and M+1 alarms");
}

#[test]
fn excess_regret_below_no_cd_on_markov_preset() {
    let mut spec = ExperimentSpec::new(
        EnvironmentSource::Preset {
            name: "appendix-c".into(),
            horizon: None,
        },
        vec![PolicyKind::DeCd, PolicyKind::NoCd],
    );
    spec.trials = 30;
    spec.log_stride = 5000;
    spec.detector.delta = 0.6;
    let res = run_in_memory(&validate_spec(spec).unwrap()).unwrap();
    let de = res.policy(PolicyKind::DeCd).unwrap().final_excess().unwrap();
    let nocd = res.policy(PolicyKind::NoCd).unwrap().final_excess().unwrap();
    assert!(de < nocd, "{de} vs {nocd}");
}

#[test]
fn preset_examples() {
    let env = build_preset("appendix-c").unwrap();
    assert_eq!(env.arm_means(0).len(), 3);
    // Minimum shift across change points is the detector's natural delta.
    for s in env.mean_shifts() {
        assert!((s - 0.6).abs() < 1e-3);
    }
    let l = env.mixing_bound(0.125).unwrap();
    assert!((l - 4.836).abs() < 1e-3, "{l}");
}
