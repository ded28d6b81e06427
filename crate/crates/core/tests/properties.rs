//! Property tests for the invariants of each module.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdrl::analysis::{action_variance, eval_subpolicy, pca_embed, saliency_state, sensitivity_ratio};
use sdrl::env::{reward, CarState, Dynamics, EnvConfig, RewardWeights, Sensor, Track, TrackEnv, TrackSpec};
use sdrl::harness::parse_config_str;
use sdrl::nn::{soft_update, Activation, AdamState, LayerSpec, Network};
use sdrl::rl::{aux_penalty, Agent, Algorithm, FeatureMask, Model, ReplayBuffer, Transition, Variant};
use sdrl::sensor_dropout::{apply_mask, enumerate_configs, rescale_factor, DropConfig, DropDistribution};

fn small_env() -> EnvConfig {
    EnvConfig {
        laser: sdrl::env::LaserSpec { beams: 9, ..Default::default() },
        image: sdrl::env::ImageSpec { height: 8, width: 8, ..Default::default() },
        ..EnvConfig::default()
    }
}

fn states(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

// ---- nnkit ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 12)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            LayerSpec::Dense { inputs: 6, outputs: 5 },
            LayerSpec::Activation { kind: Activation::Tanh, width: 5 },
        ];
        let net = Network::new(6, layers, &mut rng).unwrap();
        let a = net.forward_batch(&x, 2).unwrap().output().to_vec();
        let b = net.clone().forward_batch(&x, 2).unwrap().output().to_vec();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn activation_ranges(x in prop::collection::vec(-50.0f64..50.0, 8)) {
        for kind in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            let net = Network::zeroed(8, vec![LayerSpec::Activation { kind, width: 8 }]).unwrap();
            let out = net.forward_batch(&x, 1).unwrap().output().to_vec();
            for v in out {
                match kind {
                    Activation::Tanh => prop_assert!((-1.0..=1.0).contains(&v)),
                    Activation::Sigmoid => prop_assert!((0.0..=1.0).contains(&v)),
                    _ => prop_assert!(v >= 0.0),
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point(p in prop::collection::vec(-5.0f64..5.0, 1..20), steps in 1usize..10) {
        let mut st = AdamState::new(p.len(), 1e-3);
        let mut q = p.clone();
        for _ in 0..steps {
            st.step(&mut q, &vec![0.0; p.len()]).unwrap();
        }
        prop_assert_eq!(p, q);
    }

    #[test]
    fn soft_update_converges_monotonically(
        target in prop::collection::vec(-5.0f64..5.0, 1..10),
        tau in 0.001f64..1.0,
    ) {
        let online: Vec<f64> = target.iter().map(|v| v * 0.5 + 1.0).collect();
        let gap = |t: &[f64]| t.iter().zip(&online).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mut t = target.clone();
        let mut last = gap(&t);
        for _ in 0..20 {
            soft_update(&mut t, &online, tau).unwrap();
            let g = gap(&t);
            prop_assert!(g <= last);
            last = g;
        }
    }
}

// ---- track-env ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn env_is_deterministic(seed in any::<u64>(), acts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..40)) {
        let cfg = EnvConfig { start: sdrl::env::StartMode::Random, ..EnvConfig::default() };
        let mut a = TrackEnv::new(TrackSpec::desk_oval(), cfg.clone()).unwrap();
        let mut b = TrackEnv::new(TrackSpec::desk_oval(), cfg).unwrap();
        prop_assert_eq!(a.reset(seed), b.reset(seed));
        for &(s, g) in &acts {
            let (x, y) = (a.step([s, g]).unwrap(), b.step([s, g]).unwrap());
            prop_assert_eq!(&x.observation, &y.observation);
            prop_assert_eq!(x.reward, y.reward);
            prop_assert_eq!(x.done, y.done);
            if x.done {
                break;
            }
        }
    }

    #[test]
    fn episodes_terminate(seed in any::<u64>(), steer in -1.0f64..1.0, max_steps in 1usize..200) {
        let cfg = EnvConfig { max_steps, start: sdrl::env::StartMode::Random, ..EnvConfig::default() };
        let mut env = TrackEnv::new(TrackSpec::desk_oval(), cfg).unwrap();
        env.reset(seed);
        let mut done = false;
        for _ in 0..max_steps {
            if env.step([steer, 1.0]).unwrap().done {
                done = true;
                break;
            }
        }
        prop_assert!(done);
    }

    #[test]
    fn reward_shape(v in 0.0f64..30.0, angle in -3.0f64..3.0, pos in -1.0f64..1.0) {
        let track = Track::new(TrackSpec::desk_oval()).unwrap();
        let mut s = CarState::at_start(&track, 0, &Dynamics::default());
        let w = RewardWeights::default();
        s.v_x = 0.0;
        s.angle = angle;
        s.track_pos = pos;
        prop_assert_eq!(reward(&s, &w), 0.0);
        s.v_x = v;
        let best = { let mut c = s.clone(); c.angle = 0.0; c.track_pos = 0.0; reward(&c, &w) };
        prop_assert!(reward(&s, &w) <= best + 1e-12);
    }

    #[test]
    fn laser_mirrors_across_centerline(y in -3.0f64..3.0, heading in -0.6f64..0.6) {
        let track = Track::new(TrackSpec::stadium(2000.0, 500.0, 4.0, 5.0)).unwrap();
        let spec = sdrl::env::LaserSpec::default();
        let pose = |y: f64, h: f64| {
            let mut s = CarState::at_start(&track, 0, &Dynamics::default());
            s.position = [0.0, y];
            s.heading = h;
            s.locate(&track);
            s
        };
        let a = sdrl::env::raycast_laser(&pose(y, heading), &track, &spec);
        let mut b = sdrl::env::raycast_laser(&pose(-y, -heading), &track, &spec);
        b.reverse();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-9, "{:?} vs {:?}", a, b);
        }
    }
}

// ---- sensor-dropout ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sum_preserved_on_uniform_blocks(dims in prop::collection::vec(1usize..30, 1..5), v in -10.0f64..10.0) {
        let total: usize = dims.iter().sum();
        for c in enumerate_configs(dims.len()).unwrap() {
            let s: f64 = apply_mask(&vec![v; total], &c, &dims).unwrap().iter().sum();
            prop_assert!((s - v * total as f64).abs() <= 1e-9 * (1.0 + v.abs() * total as f64));
        }
    }

    #[test]
    fn mask_is_linear(dims in prop::collection::vec(1usize..10, 1..4), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let total: usize = dims.iter().sum();
        let xs = states(2, total, seed);
        for c in enumerate_configs(dims.len()).unwrap() {
            let mixed: Vec<f64> = xs[0].iter().zip(&xs[1]).map(|(x, y)| a * x + b * y).collect();
            let lhs = apply_mask(&mixed, &c, &dims).unwrap();
            let (mx, my) = (apply_mask(&xs[0], &c, &dims).unwrap(), apply_mask(&xs[1], &c, &dims).unwrap());
            for i in 0..total {
                prop_assert!((lhs[i] - (a * mx[i] + b * my[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rescale_non_increasing_as_flags_added(dims in prop::collection::vec(1usize..50, 2..5)) {
        let m = dims.len();
        for c in enumerate_configs(m).unwrap() {
            let alpha = rescale_factor(&c, &dims).unwrap();
            for i in 0..m {
                if !c.flags()[i] {
                    let mut f = c.flags().to_vec();
                    f[i] = true;
                    let more = DropConfig::from_flags(&f).unwrap();
                    prop_assert!(rescale_factor(&more, &dims).unwrap() <= alpha);
                }
            }
        }
        prop_assert_eq!(rescale_factor(&DropConfig::all_on(m).unwrap(), &dims).unwrap(), 1.0);
    }
}

#[test]
fn sampling_never_yields_all_off() {
    let dist = DropDistribution::uniform(&[10, 19, 256]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1_000_000 {
        assert!(dist.sample(&mut rng).flags().iter().any(|&f| f));
    }
}

// ---- drl-algos ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn naf_advantage_is_non_positive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(Algorithm::Naf, Variant::MultiSd, &small_env(), 8, 1e-4, 1e-3, &mut rng).unwrap();
        let Model::Naf(naf) = &agent.model else { unreachable!() };
        let n = 32;
        let s: Vec<f64> = states(n, agent.state_dim(), seed).concat();
        let a: Vec<f64> = states(n, 2, seed ^ 1).concat().iter().map(|v| 2.0 * v - 1.0).collect();
        let pass = naf.online.forward(&s, n, &a, vec![FeatureMask::Identity]).unwrap();
        for i in 0..n {
            prop_assert!(pass.out.a[i] <= 0.0);
            prop_assert!(pass.out.q[i] <= pass.out.v[i]);
        }
    }

    #[test]
    fn aux_loss_ignores_batch_order(seed in any::<u64>(), k in 1usize..8, b in 1usize..12) {
        let online: Vec<f64> = states(k * b, 2, seed).concat();
        let target: Vec<f64> = states(b, 2, seed ^ 7).concat();
        let (loss, _) = aux_penalty(&online, &target, 0.3).unwrap();
        // Reverse the batch rows inside every set and in the target.
        let rev = |v: &[f64], sets: usize| -> Vec<f64> {
            (0..sets).flat_map(|j| (0..b).rev().flat_map(move |i| [v[(j * b + i) * 2], v[(j * b + i) * 2 + 1]])).collect()
        };
        let (loss2, _) = aux_penalty(&rev(&online, k), &rev(&target, 1), 0.3).unwrap();
        prop_assert!((loss - loss2).abs() <= 1e-12 * loss.abs().max(1.0));
    }

    #[test]
    fn replay_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap).unwrap();
        for i in 0..pushes {
            buf.push(Transition { state: vec![i as f64], action: [0.0, 0.0], reward: 0.0, next_state: vec![0.0], done: false }).unwrap();
            prop_assert!(buf.len() <= cap);
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
    }
}

#[test]
fn updates_leave_parameters_finite() {
    use sdrl::rl::{TrainConfig, Trainer};
    for alg in [Algorithm::Ddpg, Algorithm::Naf] {
        let cfg = TrainConfig { algorithm: alg, variant: Variant::MultiSdAux, episodes: 2, steps: 60, warmup: 20, ..TrainConfig::default() };
        let mut t = Trainer::new(cfg, TrackSpec::desk_oval(), EnvConfig::default()).unwrap();
        t.run().unwrap();
        for (name, net) in t.agent.named_nets() {
            assert!(net.params().iter().all(|v| v.is_finite()), "{name}");
        }
    }
}

// ---- analysis ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn saliency_non_negative_and_zero_when_masked(seed in any::<u64>(), index in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = small_env();
        let agent = Agent::new(Algorithm::Ddpg, Variant::MultiSd, &env, 8, 1e-4, 1e-3, &mut rng).unwrap();
        let config = DropConfig::from_index(3, index).unwrap();
        let mask = agent.config_mask(&config).unwrap();
        let s = saliency_state(agent.policy(), &agent.layout, &states(1, agent.state_dim(), seed)[0], mask).unwrap();
        prop_assert!(s.values.iter().all(|&v| v >= 0.0));
        for (i, sensor) in Sensor::ALL.iter().enumerate() {
            if !config.flags()[i] {
                prop_assert!(s.block(*sensor).unwrap().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn sensitivity_swapped_subsets_are_reciprocal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(Algorithm::Ddpg, Variant::MultiNaive, &small_env(), 8, 1e-4, 1e-3, &mut rng).unwrap();
        let xs = states(100, agent.state_dim(), seed);
        let (a, b) = ([Sensor::Physical, Sensor::Laser], [Sensor::Image]);
        let ab = sensitivity_ratio(agent.policy(), &agent.layout, &xs, &a, &b).unwrap();
        let ba = sensitivity_ratio(agent.policy(), &agent.layout, &xs, &b, &a).unwrap();
        prop_assume!(ab.excluded == 0 && ba.excluded == 0);
        for (x, y) in ab.per_state.iter().zip(&ba.per_state) {
            prop_assert!((x * y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_fractions_sorted_and_bounded(seed in any::<u64>(), rows in 5usize..40, cols in 2usize..8) {
        let data = states(rows, cols, seed).concat();
        let k = cols.min(rows - 1).min(4);
        let p = pca_embed(&data, rows, cols, k).unwrap();
        for w in p.fractions.windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-12);
        }
        prop_assert!(p.fractions.iter().sum::<f64>() <= 1.0 + 1e-9);
    }

    #[test]
    fn one_config_has_zero_action_variance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(Algorithm::Ddpg, Variant::MultiSd, &small_env(), 8, 1e-4, 1e-3, &mut rng).unwrap();
        let all_on = agent.config_mask(&DropConfig::all_on(3).unwrap()).unwrap();
        let xs = states(100, agent.state_dim(), seed);
        let v = action_variance(agent.policy(), &[all_on.clone(), all_on], &xs).unwrap();
        prop_assert_eq!(v.per_dim, [0.0, 0.0]);
    }

    #[test]
    fn config_parser_rejects_bad_gamma(g in prop_oneof![-10.0f64..-0.001, 1.001f64..10.0]) {
        let text = format!("seed = 1\n[train]\ngamma = {g}\n");
        prop_assert!(parse_config_str(&text, "p.cfg").is_err());
    }
}

#[test]
fn subpolicy_eval_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let env_cfg = EnvConfig { max_steps: 50, ..small_env() };
    let agent = Agent::new(Algorithm::Ddpg, Variant::MultiSd, &env_cfg, 8, 1e-4, 1e-3, &mut rng).unwrap();
    let mut env = TrackEnv::new(TrackSpec::desk_oval(), env_cfg).unwrap();
    let configs = enumerate_configs(3).unwrap();
    let a = eval_subpolicy(&agent, &mut env, &configs, 5, 9).unwrap();
    let b = eval_subpolicy(&agent, &mut env, &configs, 5, 9).unwrap();
    assert_eq!(a, b);
}
