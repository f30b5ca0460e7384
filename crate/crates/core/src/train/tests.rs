use proptest::prelude::*;

use super::*;
use crate::diffcore::{gradient_error, no_grad};
use crate::env::{EnvConfig, NavEnv};
use crate::gsplat::{make_gate_scene, Aabb, GateLayout};
use crate::nets::{EncoderSpec, MlpSpec, Module, PolicyNet, ValueNet};
use crate::reward::RewardWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn col(v: &[f64]) -> Tensor {
    Tensor::new(v.to_vec(), &[v.len()])
}

fn record(reward: &[f64], done: &[bool], early: &[bool], next_value: &[f64]) -> StepRecord {
    StepRecord { reward: reward.to_vec(), done: done.to_vec(), early: early.to_vec(), next_value: next_value.to_vec() }
}

// ---------------------------------------------------------------- policy loss

#[test]
fn one_step_loss_is_reward_plus_discounted_value() {
    let l = policy_loss(&[col(&[1.0])], &[vec![false]], &[vec![false]], &[None], Some(&col(&[10.0])), 0.99).unwrap();
    assert!((l.item() + (1.0 + 0.99 * 10.0)).abs() < 1e-12);

    let l = policy_loss(&[col(&[1.0, 2.0])], &[vec![false; 2]], &[vec![false; 2]], &[None], Some(&col(&[10.0, 20.0])), 0.99).unwrap();
    assert!((l.item() + 16.35).abs() < 1e-12);
}

#[test]
fn zero_rewards_and_values_give_zero_loss_and_gradient() {
    let x = Tensor::param(vec![0.0; 6], &[3, 2]);
    let rewards: Vec<Tensor> = (0..3).map(|t| x.narrow(0, t, 1).unwrap().reshape(&[2]).unwrap().square()).collect();
    let l = policy_loss(&rewards, &vec![vec![false; 2]; 3], &vec![vec![false; 2]; 3], &[], Some(&col(&[0.0, 0.0])), 0.99).unwrap();
    assert_eq!(l.item(), 0.0);
    l.backward().unwrap();
    assert!(x.grad().unwrap().iter().all(|g| *g == 0.0));
}

/// Reference loss built segment by segment from plain values.
fn brute_force_loss(r: &[Vec<f64>], done: &[Vec<bool>], early: &[Vec<bool>], tv: &[Vec<f64>], fv: Option<&[f64]>, gamma: f64) -> f64 {
    let (h, n) = (r.len(), r[0].len());
    let mut total = 0.0;
    for i in 0..n {
        let mut start = 0;
        for t in 0..h {
            if done[t][i] || t == h - 1 {
                let mut ret: f64 = (start..=t).map(|k| gamma.powi((k - start) as i32) * r[k][i]).sum();
                let disc = gamma.powi((t + 1 - start) as i32);
                if done[t][i] {
                    if !early[t][i] {
                        ret += disc * tv[t][i];
                    }
                } else if let Some(v) = fv {
                    ret += disc * v[i];
                }
                total += ret;
                start = t + 1;
            }
        }
    }
    -total / (n * h) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_matches_segment_sums_and_finite_differences(
        seed in 0u64..1000,
        h in 1usize..6,
        n in 1usize..4,
        with_critic in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..2 * h * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let done: Vec<Vec<bool>> = (0..h).map(|_| (0..n).map(|_| rng.random_bool(0.3)).collect()).collect();
        let early: Vec<Vec<bool>> = (0..h).map(|_| (0..n).map(|_| rng.random_bool(0.5)).collect()).collect();
        let fv: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gamma = 0.9;

        // rewards x², terminal values 3·x on a second block
        let build = |x: &Tensor| -> Result<Tensor, crate::diffcore::DiffError> {
            let rewards: Vec<Tensor> = (0..h).map(|t| x.narrow(0, t * n, n).unwrap().square()).collect();
            let tvs: Vec<Option<Tensor>> = (0..h).map(|t| Some(x.narrow(0, (h + t) * n, n).unwrap().scale(3.0))).collect();
            policy_loss(&rewards, &done, &early, &tvs, with_critic.then_some(&col(&fv)), gamma)
        };
        let r: Vec<Vec<f64>> = (0..h).map(|t| x0[t * n..(t + 1) * n].iter().map(|v| v * v).collect()).collect();
        let tv: Vec<Vec<f64>> = (0..h).map(|t| x0[(h + t) * n..(h + t + 1) * n].iter().map(|v| 3.0 * v).collect()).collect();
        let expect = brute_force_loss(&r, &done, &early, &tv, with_critic.then_some(fv.as_slice()), gamma);
        let got = build(&Tensor::new(x0.clone(), &[2 * h * n])).unwrap().item();
        prop_assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        let err = gradient_error(build, &Tensor::new(x0, &[2 * h * n]), 1e-6).unwrap();
        prop_assert!(err < 1e-5, "relative gradient error {err}");
    }
}

/// Two steps of `s' = s + θ·s` from `s = 1`, reward `−s'²`, bootstrap `V(s) = −c·s²`.
fn linear_toy(theta: &Tensor, c: f64, gamma: f64, critic: bool) -> Tensor {
    let s0 = Tensor::scalar(1.0).reshape(&[1]).unwrap();
    let mut s = s0;
    let mut rewards = Vec::new();
    for _ in 0..2 {
        s = s.add(&s.mul(theta).unwrap()).unwrap();
        rewards.push(s.square().neg());
    }
    let v = s.square().scale(-c);
    policy_loss(&rewards, &[vec![false], vec![false]], &[vec![false], vec![false]], &[], critic.then_some(&v), gamma).unwrap()
}

#[test]
fn linear_toy_gradient_matches_chain_rule() {
    let (c, gamma) = (0.7, 0.95);
    for &th in &[-0.3, 0.1, 0.4] {
        for critic in [true, false] {
            let theta = Tensor::param(vec![th], &[1]);
            let l = linear_toy(&theta, c, gamma, critic);
            l.backward().unwrap();
            let g = theta.grad().unwrap()[0];
            // L = ((1+θ)² + γ(1+θ)⁴ + γ²c(1+θ)⁴) / 2
            let b = 1.0 + th;
            let k = if critic { gamma + gamma * gamma * c } else { gamma };
            let expect_l = (b * b + k * b.powi(4)) / 2.0;
            let expect_g = (2.0 * b + 4.0 * k * b.powi(3)) / 2.0;
            assert!((l.item() - expect_l).abs() < 1e-12);
            assert!((g - expect_g).abs() / expect_g.abs() < 1e-12, "{g} vs {expect_g}");
            let err = gradient_error(|t: &Tensor| Ok(linear_toy(t, c, gamma, critic)), &Tensor::new(vec![th], &[1]), 1e-6).unwrap();
            assert!(err < 1e-5);
        }
    }
}

#[test]
fn early_termination_bootstraps_with_zero() {
    let mut acc = ActorLoss::new(1, 0.5);
    acc.push(&col(&[2.0]), &[true], &[true], Some(&col(&[100.0]))).unwrap();
    acc.push(&col(&[4.0]), &[false], &[false], None).unwrap();
    // episode 1: 2, episode 2: 4 + 0.5·10
    let l = acc.finish(Some(&col(&[10.0]))).unwrap();
    assert!((l.item() + (2.0 + 4.0 + 5.0) / 2.0).abs() < 1e-12);

    let mut acc = ActorLoss::new(1, 0.5);
    acc.push(&col(&[2.0]), &[true], &[false], Some(&col(&[100.0]))).unwrap();
    let l = acc.finish(None).unwrap();
    assert!((l.item() + 52.0).abs() < 1e-12);
}

// ---------------------------------------------------------------- value targets

#[test]
fn lambda_zero_gives_one_step_targets() {
    let steps = vec![record(&[1.0, -1.0], &[false, false], &[false; 2], &[5.0, 6.0]), record(&[2.0, 0.5], &[false, true], &[false, true], &[7.0, 0.0])];
    let g = td_lambda_targets(&steps, 0.9, 0.0);
    for (t, s) in steps.iter().enumerate() {
        for i in 0..2 {
            assert!((g[t][i] - (s.reward[i] + 0.9 * s.next_value[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn lambda_one_gives_window_returns() {
    let steps = vec![record(&[1.0], &[false], &[false], &[50.0]), record(&[2.0], &[false], &[false], &[60.0]), record(&[3.0], &[false], &[false], &[10.0])];
    let g = td_lambda_targets(&steps, 0.9, 1.0);
    let expect0 = 1.0 + 0.9 * 2.0 + 0.81 * 3.0 + 0.729 * 10.0;
    let expect1 = 2.0 + 0.9 * 3.0 + 0.81 * 10.0;
    assert!((g[0][0] - expect0).abs() < 1e-12);
    assert!((g[1][0] - expect1).abs() < 1e-12);
    assert!((g[2][0] - (3.0 + 9.0)).abs() < 1e-12);
}

#[test]
fn lambda_targets_cut_at_episode_end() {
    let steps = vec![record(&[1.0], &[true], &[true], &[0.0]), record(&[2.0], &[false], &[false], &[10.0])];
    let g = td_lambda_targets(&steps, 0.9, 1.0);
    assert_eq!(g[0][0], 1.0);
    assert!((g[1][0] - 11.0).abs() < 1e-12);
}

/// λ-return as the weighted mix of n-step returns, without recursion.
fn lambda_return(r: &[f64], v: &[f64], t: usize, gamma: f64, lambda: f64) -> f64 {
    let h = r.len();
    let n_step = |k: usize| (0..k).map(|j| gamma.powi(j as i32) * r[t + j]).sum::<f64>() + gamma.powi(k as i32) * v[t + k - 1];
    let m = h - t;
    (1..m).map(|k| (1.0 - lambda) * lambda.powi(k as i32 - 1) * n_step(k)).sum::<f64>() + lambda.powi(m as i32 - 1) * n_step(m)
}

#[test]
fn three_step_targets_match_weighted_n_step_returns() {
    let r = [0.5, -1.0, 2.0];
    let v = [3.0, 4.0, -2.0];
    let steps: Vec<StepRecord> = (0..3).map(|t| record(&[r[t]], &[false], &[false], &[v[t]])).collect();
    for &(gamma, lambda) in &[(0.99, 0.95), (0.9, 0.5), (0.8, 0.0), (0.7, 1.0)] {
        let g = td_lambda_targets(&steps, gamma, lambda);
        for t in 0..3 {
            let expect = lambda_return(&r, &v, t, gamma, lambda);
            assert!((g[t][0] - expect).abs() < 1e-12, "t={t} γ={gamma} λ={lambda}: {} vs {expect}", g[t][0]);
        }
    }
}

#[test]
fn gae_plus_values_equals_lambda_targets() {
    let r = [0.5, -1.0, 2.0, 1.0];
    let next = [3.0, 4.0, -2.0, 1.5];
    let vals = vec![vec![1.0], vec![3.0], vec![4.0], vec![-2.0]];
    let steps: Vec<StepRecord> = (0..4).map(|t| record(&[r[t]], &[false], &[false], &[next[t]])).collect();
    let adv = gae(&steps, &vals, 0.99, 0.95);
    let g = td_lambda_targets(&steps, 0.99, 0.95);
    for t in 0..4 {
        assert!((adv[t][0] + vals[t][0] - g[t][0]).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------- value loss

fn tiny_critic(seed: u64) -> ValueNet {
    ValueNet::new(&MlpSpec::new(&[8, 8]), crate::nets::LATENT_DIM, 2.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new((0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(), &[rows, cols])
}

#[test]
fn value_loss_examples() {
    let critic = tiny_critic(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random(5, PRIV_DIM, &mut rng);
    let z = random(5, LATENT_DIM, &mut rng);
    let v = critic.forward(&s, &z).unwrap().to_vec();
    assert!(value_loss(&critic, &s, &z, &v).unwrap().item().abs() < 1e-24);

    let mut zero = tiny_critic(0);
    for (_, p) in zero.params_mut() {
        *p = Tensor::param(vec![0.0; p.numel()], p.shape());
    }
    assert!((value_loss(&zero, &s, &z, &[1.0; 5]).unwrap().item() - 1.0).abs() < 1e-15);
}

#[test]
fn value_loss_gradient_matches_finite_differences() {
    let critic = tiny_critic(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = random(4, PRIV_DIM, &mut rng);
    let z = random(4, LATENT_DIM, &mut rng);
    let targets = [0.3, -1.0, 2.0, 0.0];
    let err = gradient_error(|x: &Tensor| value_loss(&critic, x, &z, &targets).map_err(|e| match e {
        crate::nets::NetError::Tensor(t) => t,
        other => panic!("{other}"),
    }), &s, 1e-6)
    .unwrap();
    assert!(err < 1e-5, "{err}");

    // with respect to the weights of the first layer
    let (name, w) = critic.params()[0].clone();
    let w0 = w.to_vec();
    let shape = w.shape().to_vec();
    let f = |x: &Tensor| -> Result<Tensor, crate::diffcore::DiffError> {
        let mut c = critic.clone();
        for (n, p) in c.params_mut() {
            if n == name {
                *p = x.clone();
            }
        }
        Ok(value_loss(&c, &s, &z, &targets).expect("shapes"))
    };
    let err = gradient_error(f, &Tensor::new(w0, &shape), 1e-6).unwrap();
    assert!(err < 1e-5, "{err}");
}

// ---------------------------------------------------------------- ppo pieces

#[test]
fn surrogate_clips_ratio() {
    let s = clipped_surrogate(&col(&[1.5, 0.5, 1.05, 1.5]), &col(&[1.0, -1.0, 2.0, -1.0]), 0.1).unwrap().to_vec();
    assert!((s[0] - 1.1).abs() < 1e-15);
    assert!((s[1] + 0.9).abs() < 1e-15);
    assert!((s[2] - 2.1).abs() < 1e-15);
    assert!((s[3] + 1.5).abs() < 1e-15);
}

#[test]
fn zero_advantage_update_leaves_policy_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut policy = PolicyNet::new(&MlpSpec::new(&[16, 16]), LATENT_DIM, EMBED_DIM, 3.0, 0.47, -1.0, &mut rng);
    let before: Vec<Vec<f64>> = policy.params().iter().map(|(_, p)| p.to_vec()).collect();
    let mut opt = crate::nets::Adam::new(1e-3).with_clip(1.0);
    let (o, z, e) = (random(6, OBS_DIM, &mut rng), random(6, LATENT_DIM, &mut rng), random(6, EMBED_DIM, &mut rng));
    let u = random(6, ACTION_DIM, &mut rng);
    for _ in 0..3 {
        let out = policy.forward(&o, &z, &e).unwrap();
        let logp = crate::nets::gaussian_log_prob(&out.mean, &out.log_std, &u).unwrap();
        let ratio = logp.sub(&Tensor::new(logp.to_vec(), logp.shape())).unwrap().exp();
        let loss = clipped_surrogate(&ratio, &Tensor::zeros(&[6]), 0.1).unwrap().mean().neg();
        policy.zero_grad();
        loss.backward().unwrap();
        opt.step(&mut [&mut policy]);
    }
    let after: Vec<Vec<f64>> = policy.params().iter().map(|(_, p)| p.to_vec()).collect();
    assert_eq!(before, after);
}

// ---------------------------------------------------------------- config

#[test]
fn bptt_requires_full_episode_horizon() {
    let ok = TrainConfig::for_algo(Algo::Bptt);
    assert_eq!((ok.horizon, ok.n_envs), (600, 32));
    ok.validate().unwrap();
    let bad = TrainConfig { horizon: 32, ..ok };
    assert!(matches!(bad.validate(), Err(TrainError::Config(m)) if m.contains("horizon")));
}

#[test]
fn defaults_follow_hyperparameter_table() {
    let c = TrainConfig::default();
    assert_eq!((c.n_envs, c.episode_length, c.horizon, c.critic_updates), (128, 600, 32, 16));
    assert_eq!((c.gamma, c.lambda, c.actor_lr, c.critic_lr, c.cenet_lr), (0.99, 0.95, 1e-4, 1e-4, 5e-4));
    assert_eq!((c.ppo_clip, c.ppo_entropy, c.grad_clip, c.agent.beta), (0.1, 1e-3, 1.0, 0.1));
}

#[test]
fn window_footprint_scales_with_horizon() {
    let img = 3 * 64 * 64;
    let ratio = window_footprint_bytes(32, 600, img) as f64 / window_footprint_bytes(32, 32, img) as f64;
    assert!((ratio - 18.75).abs() < 1e-12);
}

#[test]
fn learning_rate_decays_and_resets() {
    let cfg = TrainConfig { epochs: 100, ..TrainConfig::default() };
    assert_eq!(cfg.lr_at(1e-3, 0, 0), 1e-3);
    assert!((cfg.lr_at(1e-3, 50, 0) - 0.55e-3).abs() < 1e-15);
    let cur = TrainConfig { epochs: 30, curriculum: Some(crate::env::CurriculumSchedule { n_scenes: 3, passes: 1, epochs_per_pass: 10, lr_reset: true }), ..cfg };
    assert_eq!(cur.lr_at(1e-3, 20, 20), 1e-3);
    assert!(cur.lr_at(1e-3, 29, 20) < 1e-3);
    let flat = TrainConfig { lr_decay: false, ..TrainConfig::default() };
    assert_eq!(flat.lr_at(1e-3, 77, 0), 1e-3);
}

// ---------------------------------------------------------------- latents

#[test]
fn identical_vectors_project_to_zero() {
    let data = vec![vec![0.5; 16]; 10];
    let p = pca2(&data).unwrap();
    assert!(p.variances.iter().all(|v| v.abs() < 1e-24));
    assert!(p.projections.iter().flatten().all(|x| x.abs() < 1e-12));
}

#[test]
fn too_few_samples_are_rejected() {
    assert!(matches!(pca2(&[vec![1.0, 2.0], vec![0.0, 1.0]]), Err(TrainError::Analysis(_))));
}

/// Largest principal angle between span(a) and span(b) (each two orthonormal vectors), degrees.
pub(crate) fn principal_angle_deg(a: &[Vec<f64>; 2], b: &[Vec<f64>; 2]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    // every vector of `a` must lie in span(b): residual after projection
    a.iter()
        .map(|v| {
            let proj: f64 = b.iter().map(|w| dot(v, w).powi(2)).sum();
            proj.sqrt().clamp(0.0, 1.0).acos().to_degrees()
        })
        .fold(0.0, f64::max)
}

pub(crate) fn planted_plane(seed: u64, samples: usize) -> (Vec<Vec<f64>>, [Vec<f64>; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = (0..2).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    // Gram-Schmidt
    let n0 = basis[0].iter().map(|x| x * x).sum::<f64>().sqrt();
    basis[0].iter_mut().for_each(|x| *x /= n0);
    let d: f64 = basis[0].iter().zip(&basis[1]).map(|(a, b)| a * b).sum();
    let b0 = basis[0].clone();
    basis[1].iter_mut().zip(&b0).for_each(|(x, y)| *x -= d * y);
    let n1 = basis[1].iter().map(|x| x * x).sum::<f64>().sqrt();
    basis[1].iter_mut().for_each(|x| *x /= n1);
    let offset: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let data = (0..samples)
        .map(|_| {
            let (s, t) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
            (0..16).map(|k| offset[k] + s * basis[0][k] + t * basis[1][k] + 1e-4 * rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    (data, [basis[0].clone(), basis[1].clone()])
}

#[test]
fn planted_plane_is_recovered() {
    for seed in 0..5 {
        let (data, basis) = planted_plane(seed, 200);
        let p = pca2(&data).unwrap();
        let angle = principal_angle_deg(&p.components, &basis);
        assert!(angle < 1.0, "seed {seed}: {angle}°");
        assert!(p.variances[0] >= p.variances[1]);
    }
}

#[test]
fn stages_split_at_the_gate_band() {
    assert_eq!(stage_of(2.0, 4.0), Stage::Approaching);
    assert_eq!(stage_of(3.5, 4.0), Stage::Passing);
    assert_eq!(stage_of(4.5, 4.0), Stage::Passing);
    assert_eq!(stage_of(4.6, 4.0), Stage::After);
}

// ---------------------------------------------------------------- evaluation

fn gate_scene() -> crate::gsplat::Scene {
    make_gate_scene(&GateLayout::default(), 0)
}

#[test]
fn climbing_policy_fails_everywhere() {
    let mut climb = |env: &NavEnv| Ok((Tensor::new([0.0, 0.0, 0.0, 1.0].repeat(env.n_envs()), &[env.n_envs(), ACTION_DIM]), None));
    let r = evaluate_with(&EnvConfig::default(), &gate_scene(), &RewardWeights::default(), 10, 3, &mut climb).unwrap();
    assert_eq!(r.successes, 0);
    assert!(r.drones.iter().all(|d| d.early && d.steps < 100));
}

#[test]
fn reference_pilot_passes_every_check() {
    let mut pilot = |env: &NavEnv| Ok((reference_pilot(env), None));
    let r = evaluate_with(&EnvConfig::default(), &gate_scene(), &RewardWeights::default(), 10, 7, &mut pilot).unwrap();
    assert_eq!(r.successes, 10, "{:?}", r.drones);
    assert!(r.drones.iter().all(|d| d.min_clearance >= SUCCESS_CLEARANCE && d.waypoints_reached == 3));
}

// ---------------------------------------------------------------- training runs

fn tiny_agent() -> AgentConfig {
    let m = MlpSpec::new(&[16, 16]);
    AgentConfig { policy: m.clone(), critic: m.clone(), cenet: m, encoder: EncoderSpec { channels: vec![4, 4, 8, 8], hidden: 16, ..EncoderSpec::default() }, ..AgentConfig::default() }
}

fn tiny_run(algo: Algo, dir: Option<&std::path::Path>, epochs: usize, curriculum: Option<crate::env::CurriculumSchedule>) -> TrainReport {
    let (n, h, len) = (3, 4, if algo == Algo::Bptt { 4 } else { 10 });
    let cfg = TrainConfig {
        algo,
        n_envs: n,
        horizon: h,
        episode_length: len,
        epochs,
        critic_updates: 2,
        ppo_epochs: 2,
        eval_interval: 2,
        eval_episodes: 2,
        encoder_batch: 5,
        seed: 11,
        curriculum,
        agent: tiny_agent(),
        ..TrainConfig::default()
    };
    let env_cfg = EnvConfig { n_envs: n, episode_length: len, ..EnvConfig::default() };
    let scenes: Vec<_> = match &cfg.curriculum {
        Some(c) => (0..c.n_scenes).map(|k| make_gate_scene(&GateLayout { gate_y: k as f64 - 1.0, distractors: 2, ..GateLayout::default() }, k as u64)).collect(),
        None => vec![make_gate_scene(&GateLayout { distractors: 2, ..GateLayout::default() }, 0)],
    };
    let mut env = NavEnv::new(env_cfg, scenes[0].clone(), RewardWeights::default()).unwrap();
    let mut agent = Agent::new(&cfg.agent, 3.0, env.cfg.drone.hover_thrust(), cfg.seed);
    match algo {
        Algo::GradNav => train_grad_nav(&cfg, &mut env, &mut agent, &scenes, dir),
        Algo::Bptt => train_bptt(&cfg, &mut env, &mut agent, &scenes, dir),
        Algo::Ppo => train_ppo(&cfg, &mut env, &mut agent, &scenes, dir),
    }
    .unwrap()
}

#[test]
fn every_epoch_consumes_n_times_h_steps() {
    for algo in [Algo::GradNav, Algo::Bptt, Algo::Ppo] {
        let rep = tiny_run(algo, None, 3, None);
        let steps: Vec<u64> = rep.metrics.iter().map(|m| m.steps).collect();
        assert_eq!(steps, vec![12, 24, 36], "{}", algo.name());
        assert!(rep.metrics.iter().all(|m| m.actor_loss.is_finite() && m.event.is_empty()));
    }
}

#[test]
fn runs_are_reproducible_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    tiny_run(Algo::GradNav, Some(a.path()), 4, None);
    tiny_run(Algo::GradNav, Some(b.path()), 4, None);
    for f in ["metrics.csv", "best.ckpt", "last.ckpt"] {
        let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn curriculum_restores_learning_rate_at_each_transition() {
    let c = crate::env::CurriculumSchedule { n_scenes: 3, passes: 5, epochs_per_pass: 2, lr_reset: true };
    let rep = tiny_run(Algo::GradNav, None, c.total_epochs(), Some(c));
    assert_eq!(rep.transitions(), 15);
    for m in &rep.metrics {
        assert_eq!(m.scene, (m.epoch / 2) % 3);
        if m.transition == 1 {
            assert_eq!(m.actor_lr, 1e-4, "epoch {}", m.epoch);
        } else {
            assert!(m.actor_lr < 1e-4);
        }
    }
}

#[test]
fn checkpoint_round_trip_restores_agent() {
    let dir = tempfile::tempdir().unwrap();
    tiny_run(Algo::GradNav, Some(dir.path()), 2, None);
    let ck = crate::nets::Checkpoint::read(dir.path().join("last.ckpt")).unwrap();
    let mut fresh = Agent::new(&tiny_agent(), 3.0, 0.5, 99);
    fresh.load_checkpoint(&ck).unwrap();
    let mut adam = crate::nets::Adam::new(1.0);
    load_optimizer(&ck, "actor", &mut adam).unwrap();
    let obs = Tensor::new(vec![0.1; OBS_DIM], &[1, OBS_DIM]);
    let z = Tensor::zeros(&[1, LATENT_DIM]);
    let e = Tensor::zeros(&[1, EMBED_DIM]);
    let a = no_grad(|| fresh.policy.mean_action(&obs, &z, &e)).unwrap().to_vec();
    assert!(a.iter().all(|x| x.is_finite()));

    let mut wrong = Agent::new(&AgentConfig::desk(), 3.0, 0.5, 0);
    assert!(wrong.load_checkpoint(&ck).is_err());
}

#[test]
fn mismatched_environment_is_rejected() {
    let cfg = TrainConfig { n_envs: 4, ..TrainConfig::default() };
    let scene = crate::gsplat::Scene::empty(Aabb { min: [-1.0; 3], max: [1.0; 3] });
    let mut env = NavEnv::new(EnvConfig { n_envs: 2, ..EnvConfig::default() }, scene, RewardWeights::default()).unwrap();
    let mut agent = Agent::new(&tiny_agent(), 3.0, 0.5, 0);
    assert!(matches!(train_grad_nav(&cfg, &mut env, &mut agent, &[], None), Err(TrainError::Config(_))));
    let cfg = TrainConfig { n_envs: 2, algo: Algo::Ppo, ..TrainConfig::default() };
    assert!(matches!(train_grad_nav(&cfg, &mut env, &mut agent, &[], None), Err(TrainError::Config(_))));
}
