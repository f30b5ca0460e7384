use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::session::{EpochStats, Session};
use super::shac::{context_samples, gather, terminal_values, update_context, WindowData};
use super::{clipped_surrogate, gae, normal, value_loss, Agent, Algo, StepRecord, TrainConfig, TrainError, TrainReport};
use crate::diffcore::{no_grad, Tensor};
use crate::env::NavEnv;
use crate::gsplat::Scene;
use crate::nets::{gaussian_entropy, gaussian_log_prob, Module, ACTION_DIM, EMBED_DIM, LATENT_DIM, OBS_DIM, PRIV_DIM};

/// Clipped-surrogate PPO on the same networks, sampling without a graph.
pub fn train_ppo(cfg: &TrainConfig, env: &mut NavEnv, agent: &mut Agent, scenes: &[Scene], out: Option<&Path>) -> Result<TrainReport, TrainError> {
    if cfg.algo != Algo::Ppo {
        return Err(TrainError::Config(format!("train_ppo called with algo {}", cfg.algo.name())));
    }
    Session::new(cfg, env, agent, scenes, out)?.run(ppo_epoch)
}

/// Values and inputs kept for the surrogate updates.
#[derive(Default)]
struct Batch {
    obs: Vec<f64>,
    e: Vec<f64>,
    u: Vec<f64>,
    logp: Vec<f64>,
    values: Vec<Vec<f64>>,
}

fn ppo_epoch(s: &mut Session<'_>) -> Result<EpochStats, TrainError> {
    let cfg = s.cfg;
    let n = s.env.n_envs();
    let h = cfg.horizon;
    s.env.detach();
    let mut data = WindowData { context_idx: context_samples(s, n * h), ..Default::default() };
    let mut batch = Batch::default();
    let mut wanted = data.context_idx.clone().into_iter().peekable();

    let (mut obs, mut privileged) = (s.env.observation()?.detach(), s.env.privileged()?.detach());
    no_grad(|| -> Result<(), TrainError> {
        for t in 0..h {
            let history = s.env.history();
            let inp = s.agent.inputs(&obs, &history, s.env.images())?;
            data.raw_obs.extend(obs.data());
            data.privileged.extend(privileged.data());
            data.z.extend(inp.z.data());
            data.history.extend(history.data());
            while let Some(&k) = wanted.peek() {
                if k >= (t + 1) * n {
                    break;
                }
                data.images.push(s.env.images()[k - t * n].clone());
                wanted.next();
            }
            batch.obs.extend(inp.obs.data());
            batch.e.extend(inp.e.data());
            batch.values.push(s.agent.value(&privileged, &inp.z)?.to_vec());

            let out = s.agent.policy.forward(&inp.obs, &inp.z, &inp.e)?;
            let (u, a) = out.sample(&normal(&mut s.rng, n, ACTION_DIM))?;
            batch.logp.extend(gaussian_log_prob(&out.mean, &out.log_std, &u)?.data());
            batch.u.extend(u.data());
            let st = s.env.step(&a)?;

            let truncated = (0..n).any(|i| st.done[i] && !st.early[i]);
            let tv = if truncated { terminal_values(s.agent, &st, &inp.e)?.to_vec() } else { vec![0.0; n] };
            for i in 0..n {
                data.next_obs.extend(&st.terminal_privileged.row(i)[..OBS_DIM]);
            }
            let reward = st.reward.to_vec();
            s.stats.record(&reward, &st.done);
            data.terminal_values.push(tv);
            data.records.push(StepRecord { reward, done: st.done.clone(), early: st.early.clone(), next_value: Vec::new() });
            obs = st.obs;
            privileged = st.privileged;
        }
        let history = s.env.history();
        let inp = s.agent.inputs(&obs, &history, s.env.images())?;
        let last = s.agent.value(&privileged, &inp.z)?.to_vec();
        for t in 0..h {
            let rec = &mut data.records[t];
            rec.next_value = (0..n)
                .map(|i| {
                    if rec.done[i] {
                        if rec.early[i] { 0.0 } else { data.terminal_values[t][i] }
                    } else if t + 1 < h {
                        batch.values[t + 1][i]
                    } else {
                        last[i]
                    }
                })
                .collect();
        }
        Ok(())
    })?;

    let t_update = Instant::now();
    let adv: Vec<f64> = gae(&data.records, &batch.values, cfg.gamma, cfg.lambda).into_iter().flatten().collect();
    let values: Vec<f64> = batch.values.iter().flatten().copied().collect();
    let returns: Vec<f64> = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
    let total = n * h;
    let mean = adv.iter().sum::<f64>() / total as f64;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / total as f64).sqrt();
    let adv_norm: Vec<f64> = adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

    let obs_t = Tensor::new(batch.obs, &[total, OBS_DIM]);
    let z_t = Tensor::new(data.z.clone(), &[total, LATENT_DIM]);
    let e_t = Tensor::new(batch.e, &[total, EMBED_DIM]);
    let u_t = Tensor::new(batch.u, &[total, ACTION_DIM]);
    let states = s.agent.priv_norm.normalize(&Tensor::new(data.privileged.clone(), &[total, PRIV_DIM]))?;

    let (mut actor_loss, mut critic_loss, mut grad_norm) = (0.0, 0.0, 0.0);
    let mb = total.div_ceil(cfg.ppo_minibatches);
    let mut order: Vec<usize> = (0..total).collect();
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(&mut s.rng);
        for chunk in order.chunks(mb) {
            let out = s.agent.policy.forward(&gather(&obs_t, chunk), &gather(&z_t, chunk), &gather(&e_t, chunk))?;
            let logp = gaussian_log_prob(&out.mean, &out.log_std, &gather(&u_t, chunk))?;
            let old = Tensor::new(chunk.iter().map(|&k| batch.logp[k]).collect(), &[chunk.len()]);
            let ratio = logp.sub(&old)?.exp();
            let a = Tensor::new(chunk.iter().map(|&k| adv_norm[k]).collect(), &[chunk.len()]);
            let surrogate = clipped_surrogate(&ratio, &a, cfg.ppo_clip)?.mean();
            let loss = surrogate.add(&gaussian_entropy(&out.log_std).scale(cfg.ppo_entropy))?.neg();
            actor_loss = loss.item();
            if !actor_loss.is_finite() {
                return Err(TrainError::NonFinite("ppo surrogate"));
            }
            s.agent.policy.zero_grad();
            loss.backward()?;
            grad_norm = s.opt.actor.step(&mut [&mut s.agent.policy]);

            let targets: Vec<f64> = chunk.iter().map(|&k| returns[k]).collect();
            s.agent.critic.zero_grad();
            let vl = value_loss(&s.agent.critic, &gather(&states, chunk), &gather(&z_t, chunk), &targets)?;
            critic_loss = vl.item();
            vl.backward()?;
            s.opt.critic.step(&mut [&mut s.agent.critic]);
        }
    }
    let cenet_loss = update_context(s, &data, None)?;
    s.agent.obs_norm.update(&data.raw_obs);
    s.agent.priv_norm.update(&data.privileged);

    let step_reward = data.records.iter().flat_map(|r| &r.reward).sum::<f64>() / total as f64;
    Ok(EpochStats {
        step_reward,
        actor_loss,
        critic_loss,
        cenet_loss,
        grad_norm,
        steps: total as u64,
        update_ms: t_update.elapsed().as_secs_f64() * 1e3,
    })
}
