use proptest::prelude::*;

use super::*;
use crate::dynamics::GRAVITY;
use crate::gsplat::{make_gate_scene, Aabb, GateLayout};

fn open_scene() -> Scene {
    let mut s = Scene::empty(Aabb { min: [-2.0, -3.0, 0.0], max: [12.0, 3.0, 3.0] });
    s.reference_trajectory = vec![[0.0, 0.0, 1.3], [10.0, 0.0, 1.3]];
    s
}

/// Drone whose hover thrust is exactly one half, so the hover action is all zeros.
fn balanced_drone() -> DroneParams {
    let d = DroneParams::default();
    DroneParams { max_thrust: 2.0 * d.mass * GRAVITY, ..d }
}

fn still_config(n: usize) -> EnvConfig {
    let drone = balanced_drone();
    EnvConfig { n_envs: n, init_side: 0.0, init_attitude: 0.0, randomization: RandomizationRanges::fixed(&drone), drone, ..EnvConfig::default() }
}

fn zeros(n: usize) -> Tensor {
    Tensor::zeros(&[n, ACTION_DIM])
}

#[test]
fn zero_size_box_starts_at_center() {
    let env = NavEnv::new(EnvConfig { init_side: 0.0, n_envs: 5, ..EnvConfig::default() }, open_scene(), RewardWeights::default()).unwrap();
    for i in 0..5 {
        assert_eq!(env.state().position(i), [0.0, 0.0, 1.3]);
        assert_eq!(env.state().velocity(i), [0.0; 3]);
    }
}

#[test]
fn reset_heights_stay_in_cube() {
    let mut env = NavEnv::new(EnvConfig { n_envs: 500, ..EnvConfig::default() }, open_scene(), RewardWeights::default()).unwrap();
    for _ in 0..20 {
        env.reset_all().unwrap();
        for i in 0..env.n_envs() {
            let p = env.state().position(i);
            assert!((0.8..=1.8).contains(&p[2]) && p[0].abs() <= 0.5 && p[1].abs() <= 0.5, "{p:?}");
            let q = env.state().attitude(i);
            let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn same_seed_same_resets() {
    let make = || NavEnv::new(EnvConfig { n_envs: 8, seed: 9, ..EnvConfig::default() }, open_scene(), RewardWeights::default()).unwrap();
    let (a, b) = (make(), make());
    assert_eq!(a.state().p.to_vec(), b.state().p.to_vec());
    assert_eq!(a.state().q.to_vec(), b.state().q.to_vec());
    assert_eq!(a.params().params, b.params().params);
    let c = NavEnv::new(EnvConfig { n_envs: 8, seed: 10, ..EnvConfig::default() }, open_scene(), RewardWeights::default()).unwrap();
    assert_ne!(a.state().p.to_vec(), c.state().p.to_vec());
}

#[test]
fn hover_step_earns_survival_only() {
    let mut env = NavEnv::new(still_config(2), open_scene(), RewardWeights::default()).unwrap();
    assert_eq!(env.hover_action(0), [0.0; 4]);
    let out = env.step(&zeros(2)).unwrap();
    for i in 0..2 {
        assert!((out.breakdown[i].total - 8.0).abs() < 1e-9, "{:?}", out.breakdown[i]);
        assert!(!out.done[i]);
    }
}

#[test]
fn full_throttle_hits_the_ceiling() {
    let mut env = NavEnv::new(still_config(1), open_scene(), RewardWeights::default()).unwrap();
    let up = Tensor::new(vec![0.0, 0.0, 0.0, 1.0], &[1, 4]);
    for _ in 0..200 {
        let out = env.step(&up).unwrap();
        if out.done[0] {
            assert!(out.early[0] && out.termination[0].ceiling_exceeded);
            assert_eq!(out.breakdown[0].survival, 0.0);
            // the drone was respawned
            assert_eq!(env.state().position(0), [0.0, 0.0, 1.3]);
            return;
        }
    }
    panic!("never reached the ceiling");
}

#[test]
fn healthy_episode_ends_at_the_step_limit() {
    let mut env = NavEnv::new(still_config(2), open_scene(), RewardWeights::default()).unwrap();
    for t in 1..=600 {
        let out = env.step(&zeros(2)).unwrap();
        assert_eq!(out.done, vec![t == 600; 2], "step {t}");
        assert_eq!(out.early, vec![false; 2]);
    }
    assert_eq!(env.step_counts(), &[0, 0]);
}

#[test]
fn non_finite_action_faults() {
    let mut env = NavEnv::new(still_config(2), open_scene(), RewardWeights::default()).unwrap();
    let a = Tensor::new(vec![0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[2, 4]);
    let out = env.step(&a).unwrap();
    assert!(out.termination[0].fault && out.done[0] && out.early[0]);
    assert!(!out.done[1]);
    assert!(out.reward.data().iter().all(|r| r.is_finite()));
    assert!(matches!(env.step(&Tensor::zeros(&[3, 4])), Err(EnvError::ActionShape { .. })));
}

#[test]
fn observation_layout() {
    let mut cfg = still_config(2);
    cfg.init_side = 1.0;
    let mut env = NavEnv::new(cfg, open_scene(), RewardWeights::default()).unwrap();
    for _ in 0..3 {
        let out = env.step(&zeros(2)).unwrap();
        assert_eq!(out.obs.shape(), &[2, OBS_DIM]);
        assert_eq!(out.privileged.shape(), &[2, PRIV_DIM]);
        for i in 0..2 {
            let o = out.obs.row(i);
            let s = out.privileged.row(i);
            assert_eq!(o[0], env.state().position(i)[2]);
            assert_eq!(&o[1..5], &env.state().attitude(i));
            assert_eq!(&o[5..8], &env.state().velocity(i));
            assert_eq!(&s[..OBS_DIM], o);
            assert_eq!(&s[16..19], &env.state().position(i));
            assert_eq!(&s[19..], &env.depth_priors()[i]);
        }
    }
}

#[test]
fn observation_ignores_horizontal_position() {
    let mut env = NavEnv::new(still_config(2), open_scene(), RewardWeights::default()).unwrap();
    let mut p = env.state().p.to_vec();
    p[0] = 3.0;
    p[1] = -1.0;
    env.state.p = Tensor::new(p, &[2, 3]);
    let o = env.observation().unwrap();
    assert_eq!(o.row(0), o.row(1));
}

#[test]
fn history_refills_after_reset() {
    let mut env = NavEnv::new(still_config(1), open_scene(), RewardWeights::default()).unwrap();
    let h = env.history();
    assert_eq!(h.shape(), &[1, HISTORY * OBS_DIM]);
    let first = &h.data()[..OBS_DIM];
    assert!(h.data().chunks(OBS_DIM).all(|c| c == first));
    let up = Tensor::new(vec![0.3, 0.0, 0.0, 0.5], &[1, 4]);
    let out = env.step(&up).unwrap();
    let h = env.history();
    assert_eq!(&h.data()[4 * OBS_DIM..], out.obs.row(0));
    assert_eq!(&h.data()[..OBS_DIM], first);
    env.reset_all().unwrap();
    let h = env.history();
    assert!(h.data().chunks(OBS_DIM).all(|c| c == &h.data()[..OBS_DIM]));
}

#[test]
fn episodes_are_reproducible_with_renders() {
    let scene = make_gate_scene(&GateLayout::default(), 3);
    let run = || {
        let mut env = NavEnv::new(EnvConfig { n_envs: 3, seed: 4, episode_length: 6, ..EnvConfig::default() }, scene.clone(), RewardWeights::default()).unwrap();
        let mut trace = Vec::new();
        for t in 0..14 {
            let a: Vec<f64> = (0..12).map(|k| ((k * 7 + t * 3) as f64 * 0.37).sin() * 0.5).collect();
            let out = env.step(&Tensor::new(a, &[3, 4])).unwrap();
            trace.push((out.obs.to_vec(), out.reward.to_vec(), out.done.clone(), env.images().to_vec()));
        }
        trace
    };
    assert_eq!(run(), run());
}

#[test]
fn done_has_exactly_one_cause() {
    let mut cfg = EnvConfig { n_envs: 6, episode_length: 25, seed: 2, ..EnvConfig::default() };
    cfg.camera = Camera::with_fov(16, 16, std::f64::consts::FRAC_PI_2);
    let mut env = NavEnv::new(cfg, make_gate_scene(&GateLayout::default(), 0), RewardWeights::default()).unwrap();
    let mut counts = [0usize; 6];
    let (mut early, mut limit) = (0, 0);
    for t in 0..120 {
        let a: Vec<f64> = (0..24).map(|k| ((k * 13 + t * 5) as f64 * 0.71).sin()).collect();
        let out = env.step(&Tensor::new(a, &[6, 4])).unwrap();
        for i in 0..6 {
            counts[i] += 1;
            if out.done[i] {
                let at_limit = counts[i] == 25;
                assert!(out.early[i] || at_limit, "env {i}");
                assert_eq!(out.early[i], out.termination[i].any());
                if out.early[i] { early += 1 } else { limit += 1 }
                counts[i] = 0;
            }
        }
    }
    assert!(early > 0 && limit + early > 6, "early {early}, limit {limit}");
}

#[test]
fn reward_gradient_reaches_actions_but_not_reset_rows() {
    let mut env = NavEnv::new(still_config(2), open_scene(), RewardWeights::default()).unwrap();
    let a = Tensor::param(vec![0.1, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0], &[2, 4]);
    env.step(&a).unwrap();
    let out = env.step(&Tensor::new(vec![0.0, 0.2, 0.0, 0.1, 0.0, 0.0, 0.0, f64::NAN], &[2, 4])).unwrap();
    assert!(out.done[1]);
    let obs_sum = out.obs.sum();
    let total = out.reward.sum().add(&obs_sum).unwrap();
    total.backward().unwrap();
    let g = a.grad().unwrap();
    assert!(g[..4].iter().any(|x| x.abs() > 1e-6), "{g:?}");
    // Row 1 was respawned, so its observation no longer depends on the first action;
    // its second action was replaced by hover and its reward carries no gradient.
    let mut env2 = NavEnv::new(still_config(2), open_scene(), RewardWeights::default()).unwrap();
    let b = Tensor::param(vec![0.1, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0], &[2, 4]);
    env2.step(&b).unwrap();
    let out2 = env2.step(&Tensor::new(vec![0.0, 0.2, 0.0, 0.1, 0.0, 0.0, 0.0, f64::NAN], &[2, 4])).unwrap();
    out2.obs.narrow(0, 1, 1).unwrap().sum().backward().unwrap();
    assert!(b.grad().is_none_or(|g| g.iter().all(|x| *x == 0.0)));
}

#[test]
fn detach_cuts_the_graph() {
    let mut env = NavEnv::new(still_config(1), open_scene(), RewardWeights::default()).unwrap();
    let a = Tensor::param(vec![0.1, 0.0, 0.0, 0.2], &[1, 4]);
    env.step(&a).unwrap();
    env.detach();
    let out = env.step(&zeros(1)).unwrap();
    out.reward.sum().backward().unwrap();
    assert!(a.grad().is_none_or(|g| g.iter().all(|x| *x == 0.0)));
}

#[test]
fn timing_accumulates() {
    let mut env = NavEnv::new(still_config(2), make_gate_scene(&GateLayout::default(), 0), RewardWeights::default()).unwrap();
    env.take_timing();
    for _ in 0..3 {
        env.step(&zeros(2)).unwrap();
    }
    let t = env.take_timing();
    assert_eq!(t.steps, 3);
    assert!(t.render > Duration::ZERO && t.dynamics > Duration::ZERO);
    let pct = t.percentages();
    assert!((pct.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    assert_eq!(env.take_timing().steps, 0);
}

#[test]
fn config_validation() {
    let bad = [
        EnvConfig { n_envs: 0, ..EnvConfig::default() },
        EnvConfig { dt: 0.0, ..EnvConfig::default() },
        EnvConfig { episode_length: 0, ..EnvConfig::default() },
        EnvConfig { init_side: -1.0, ..EnvConfig::default() },
    ];
    for cfg in bad {
        assert!(NavEnv::new(cfg, open_scene(), RewardWeights::default()).is_err());
    }
}

fn depth_image(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> DepthImage {
    let data = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
    DepthImage { width: w, height: h, data }
}

#[test]
fn depth_prior_examples() {
    assert_eq!(depth_prior(&depth_image(64, 64, |_, _| 2.0)), [2.0; 24]);
    let split = depth_prior(&depth_image(64, 64, |_, c| if c < 32 { 1.0 } else { 3.0 }));
    for r in 0..PRIOR_ROWS {
        assert_eq!(split[r * PRIOR_COLS], 1.0);
        assert_eq!(split[r * PRIOR_COLS + 1], 1.0);
        assert_eq!(split[r * PRIOR_COLS + 2], 3.0);
        assert_eq!(split[r * PRIOR_COLS + 3], 3.0);
    }
    // 64 rows pad to 66 by repeating the last row
    let rows = depth_prior(&depth_image(4, 64, |r, _| r as f64));
    let last: f64 = (55..66).map(|r| r.min(63) as f64).sum::<f64>() / 11.0;
    assert!((rows[20] - last).abs() < 1e-12);
}

proptest! {
    #[test]
    fn depth_prior_mean_matches_image_mean(
        cell_w in 1usize..5, cell_h in 1usize..5, vals in prop::collection::vec(0.0f64..10.0, 400)
    ) {
        let (w, h) = (cell_w * PRIOR_COLS, cell_h * PRIOR_ROWS);
        let img = depth_image(w, h, |r, c| vals[(r * w + c) % vals.len()]);
        let prior = depth_prior(&img);
        let mean_prior = prior.iter().sum::<f64>() / 24.0;
        let mean_img = img.data.iter().sum::<f64>() / (w * h) as f64;
        prop_assert!((mean_prior - mean_img).abs() < 1e-9);
    }
}

#[test]
fn curriculum_examples() {
    let s = CurriculumSchedule::default();
    assert_eq!(s.total_epochs(), 1500);
    assert_eq!(curriculum_next(&s, 0).unwrap(), (0, true));
    assert_eq!(curriculum_next(&s, 1).unwrap(), (0, false));
    assert_eq!(curriculum_next(&s, 100).unwrap(), (1, true));
    assert_eq!(curriculum_next(&s, 250).unwrap(), (2, false));
    assert_eq!(curriculum_next(&s, 300).unwrap(), (0, true));
    assert!(curriculum_next(&s, 1500).is_err());
    let resets = (0..1500).filter(|&e| curriculum_next(&s, e).unwrap().1).count();
    assert_eq!(resets, s.transitions());
    assert_eq!(resets, 15);
}

#[test]
fn trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep0.csv");
    let meta = TraceMeta { scene: "gate".into(), seed: 3, episode: 0, steps: 2, success: true, gate_x: Some(4.0), latent_dim: 2 };
    let mut rows = vec![TraceRow { step: 0, p: [0.1, 0.2, 1.3], q: [1.0, 0.0, 0.0, 0.0], latent: vec![0.5, -1.0 / 3.0], ..Default::default() }];
    rows.push(TraceRow { step: 1, done: true, early: true, total: -2.5, action: [0.1, -0.2, 0.3, 1e-17], latent: vec![0.0, 7.0], ..Default::default() });
    rows[0].set_reward(&RewardBreakdown { survival: 1.0, total: 8.0, ..Default::default() });
    write_trace(&path, &meta, &rows).unwrap();
    assert!(path.with_extension("toml").exists());
    let (m, r) = read_trace(&path).unwrap();
    assert_eq!(m, meta);
    assert_eq!(r, rows);
}
