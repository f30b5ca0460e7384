use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::session::{EpochStats, Session};
use super::{normal, td_lambda_targets, value_loss, ActorLoss, Agent, Algo, StepRecord, TrainConfig, TrainError, TrainReport};
use crate::diffcore::{no_grad, Tensor};
use crate::env::NavEnv;
use crate::gsplat::Scene;
use crate::nets::{Module, ACTION_DIM, HISTORY, LATENT_DIM, OBS_DIM, PRIV_DIM};

/// Short-horizon actor-critic through the differentiable simulator.
///
/// `scenes` lists the curriculum scenes (empty trains on the environment's scene);
/// `out` receives `metrics.csv`, `timing.csv`, `best.ckpt` and `last.ckpt`.
pub fn train_grad_nav(cfg: &TrainConfig, env: &mut NavEnv, agent: &mut Agent, scenes: &[Scene], out: Option<&Path>) -> Result<TrainReport, TrainError> {
    if cfg.algo != Algo::GradNav {
        return Err(TrainError::Config(format!("train_grad_nav called with algo {}", cfg.algo.name())));
    }
    Session::new(cfg, env, agent, scenes, out)?.run(|s| window_epoch(s, true))
}

/// Backpropagation through whole episodes without a critic.
pub fn train_bptt(cfg: &TrainConfig, env: &mut NavEnv, agent: &mut Agent, scenes: &[Scene], out: Option<&Path>) -> Result<TrainReport, TrainError> {
    if cfg.algo != Algo::Bptt {
        return Err(TrainError::Config(format!("train_bptt called with algo {}", cfg.algo.name())));
    }
    Session::new(cfg, env, agent, scenes, out)?.run(|s| window_epoch(s, false))
}

/// Plain values gathered while rolling out a window, in step-major order.
#[derive(Default)]
pub(crate) struct WindowData {
    pub privileged: Vec<f64>,
    pub z: Vec<f64>,
    pub history: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// Sample indices (`t·n + i`) that feed the context update, ascending.
    pub context_idx: Vec<usize>,
    /// Images of the samples in `context_idx`.
    pub images: Vec<Vec<u8>>,
    pub raw_obs: Vec<f64>,
    pub records: Vec<StepRecord>,
    /// Critic values of terminal states, per step, for drones that finished by the step limit.
    pub terminal_values: Vec<Vec<f64>>,
}

/// Critic value of the states reached by a step, before resets, for every row.
pub(crate) fn terminal_values(agent: &Agent, st: &crate::env::StepOutput, e: &Tensor) -> Result<Tensor, TrainError> {
    let done: Vec<usize> = (0..st.done.len()).filter(|&i| st.done[i]).collect();
    let mut e_rows = e.detach().to_vec();
    if !done.is_empty() {
        let imgs: Vec<&[u8]> = done.iter().map(|&i| st.terminal_images[i].as_deref().expect("terminal image of a finished drone")).collect();
        let fresh = agent.embed(&imgs)?;
        let d = e.shape()[1];
        for (k, &i) in done.iter().enumerate() {
            e_rows[i * d..(i + 1) * d].copy_from_slice(fresh.row(k));
        }
    }
    let e_term = Tensor::new(e_rows, e.shape());
    let z = agent.latent(&st.terminal_history, &e_term)?;
    Ok(agent.value(&st.terminal_privileged, &z)?)
}

fn window_epoch(s: &mut Session<'_>, use_critic: bool) -> Result<EpochStats, TrainError> {
    let cfg = s.cfg;
    let n = s.env.n_envs();
    let h = cfg.horizon;
    s.env.detach();
    let mut obs = s.env.observation()?;
    let mut privileged = s.env.privileged()?;
    let mut loss = ActorLoss::new(n, cfg.gamma);
    let mut data = WindowData::default();
    let mut e_leaves = Vec::with_capacity(h);
    data.context_idx = context_samples(s, n * h);
    let mut wanted = data.context_idx.iter().peekable();

    for t in 0..h {
        let history = s.env.history();
        let inp = s.agent.inputs(&obs, &history, s.env.images())?;
        data.raw_obs.extend(obs.data());
        data.privileged.extend(privileged.data());
        data.z.extend(inp.z.data());
        data.history.extend(history.data());
        while let Some(&&k) = wanted.peek() {
            if k >= (t + 1) * n {
                break;
            }
            data.images.push(s.env.images()[k - t * n].clone());
            wanted.next();
        }

        let out = s.agent.policy.forward(&inp.obs, &inp.z, &inp.e)?;
        let (_, a) = out.sample(&normal(&mut s.rng, n, ACTION_DIM))?;
        let st = s.env.step(&a)?;

        let truncated = (0..n).any(|i| st.done[i] && !st.early[i]);
        let tv = if use_critic && truncated { Some(terminal_values(s.agent, &st, &inp.e)?) } else { None };
        loss.push(&st.reward, &st.done, &st.early, tv.as_ref())?;

        for i in 0..n {
            data.next_obs.extend(&st.terminal_privileged.row(i)[..OBS_DIM]);
        }
        let reward = st.reward.to_vec();
        s.stats.record(&reward, &st.done);
        data.terminal_values.push(tv.map_or_else(|| vec![0.0; n], |t| t.to_vec()));
        data.records.push(StepRecord { reward, done: st.done.clone(), early: st.early.clone(), next_value: Vec::new() });
        e_leaves.push(inp.e);
        obs = st.obs;
        privileged = st.privileged;
    }

    let final_values = if use_critic {
        let history = s.env.history();
        let e = s.agent.embed(&s.env.images().iter().map(Vec::as_slice).collect::<Vec<_>>())?;
        let z = s.agent.latent(&history, &e)?;
        Some(s.agent.value(&privileged, &z)?)
    } else {
        None
    };
    let actor_loss = loss.finish(final_values.as_ref())?;
    if !actor_loss.item().is_finite() {
        return Err(TrainError::NonFinite("actor loss"));
    }

    let t_update = Instant::now();
    s.agent.policy.zero_grad();
    actor_loss.backward()?;
    let grad_norm = s.opt.actor.step(&mut [&mut s.agent.policy]);
    if !grad_norm.is_finite() {
        return Err(TrainError::NonFinite("actor gradient"));
    }

    let critic_loss = if use_critic {
        let last = final_values.map(|v| v.to_vec()).unwrap_or_default();
        fit_critic(s, &mut data, &last)?
    } else {
        0.0
    };
    let cenet_loss = update_context(s, &data, Some(&e_leaves))?;
    s.agent.obs_norm.update(&data.raw_obs);
    s.agent.priv_norm.update(&data.privileged);

    let step_reward = data.records.iter().flat_map(|r| &r.reward).sum::<f64>() / (n * h) as f64;
    Ok(EpochStats {
        step_reward,
        actor_loss: actor_loss.item(),
        critic_loss,
        cenet_loss,
        grad_norm,
        steps: (n * h) as u64,
        update_ms: t_update.elapsed().as_secs_f64() * 1e3,
    })
}

/// Fills next-state values, builds TD(λ) targets and fits the critic; returns the
/// mean loss of the last pass.
fn fit_critic(s: &mut Session<'_>, data: &mut WindowData, last_values: &[f64]) -> Result<f64, TrainError> {
    let cfg = s.cfg;
    let h = data.records.len();
    let n = data.records[0].reward.len();
    let states = Tensor::new(data.privileged.clone(), &[h * n, PRIV_DIM]);
    let z = Tensor::new(data.z.clone(), &[h * n, LATENT_DIM]);
    let values = no_grad(|| s.agent.value(&states, &z))?.to_vec();
    for t in 0..h {
        let rec = &mut data.records[t];
        rec.next_value = (0..n)
            .map(|i| {
                if rec.done[i] {
                    if rec.early[i] { 0.0 } else { data.terminal_values[t][i] }
                } else if t + 1 < h {
                    values[(t + 1) * n + i]
                } else {
                    last_values[i]
                }
            })
            .collect();
    }
    let targets: Vec<f64> = td_lambda_targets(&data.records, cfg.gamma, cfg.lambda).into_iter().flatten().collect();

    let states_norm = s.agent.priv_norm.normalize(&states)?;
    let total = h * n;
    let mb = total.div_ceil(cfg.critic_minibatches);
    let mut order: Vec<usize> = (0..total).collect();
    let mut last_loss = 0.0;
    s.agent.critic.zero_grad();
    for _ in 0..cfg.critic_updates {
        order.shuffle(&mut s.rng);
        let mut sum = 0.0;
        for chunk in order.chunks(mb) {
            let x = gather(&states_norm, chunk);
            let zb = gather(&z, chunk);
            let tb: Vec<f64> = chunk.iter().map(|&k| targets[k]).collect();
            let l = value_loss(&s.agent.critic, &x, &zb, &tb)?;
            sum += l.item() * chunk.len() as f64;
            l.backward()?;
            s.opt.critic.step(&mut [&mut s.agent.critic]);
        }
        last_loss = sum / total as f64;
    }
    Ok(last_loss)
}

/// Rows of a constant matrix.
pub(crate) fn gather(t: &Tensor, rows: &[usize]) -> Tensor {
    let d = t.shape()[1];
    Tensor::new(rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect(), &[rows.len(), d])
}

/// Picks which window samples train the context estimator and encoder.
pub(crate) fn context_samples(s: &mut Session<'_>, total: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    if s.cfg.encoder_batch > 0 && s.cfg.encoder_batch < total {
        idx.shuffle(&mut s.rng);
        idx.truncate(s.cfg.encoder_batch);
        idx.sort_unstable();
    }
    idx
}

/// One context-estimator and visual-encoder update on the window. When `actor_grads`
/// is given, the gradient of the actor loss with respect to each step's embedding is
/// pushed through the encoder as well.
pub(crate) fn update_context(s: &mut Session<'_>, data: &WindowData, actor_grads: Option<&[Tensor]>) -> Result<f64, TrainError> {
    let n = data.records[0].reward.len();
    let idx = &data.context_idx;
    let imgs: Vec<&[u8]> = data.images.iter().map(Vec::as_slice).collect();
    let x = s.agent.encoder.images_to_tensor(&imgs)?;
    let e = s.agent.encoder.forward(&x)?;
    let hist = Tensor::new(idx.iter().flat_map(|&k| data.history[k * HISTORY * OBS_DIM..(k + 1) * HISTORY * OBS_DIM].iter().copied()).collect(), &[idx.len(), HISTORY * OBS_DIM]);
    let next = Tensor::new(idx.iter().flat_map(|&k| data.next_obs[k * OBS_DIM..(k + 1) * OBS_DIM].iter().copied()).collect(), &[idx.len(), OBS_DIM]);
    let hist = s.agent.normalize_history(&hist)?;
    let next = s.agent.obs_norm.normalize(&next)?;
    let noise = normal(&mut s.rng, idx.len(), LATENT_DIM);
    let loss = s.agent.cenet.loss(&hist, &e, &next, &noise)?;
    let mut objective = loss.total.clone();
    if let Some(grads) = actor_grads {
        let d = e.shape()[1];
        let g: Vec<f64> = idx
            .iter()
            .flat_map(|&k| {
                let (t, i) = (k / n, k % n);
                grads[t].grad().map_or_else(|| vec![0.0; d], |g| g[i * d..(i + 1) * d].to_vec())
            })
            .collect();
        objective = objective.add(&e.mul(&Tensor::new(g, e.shape()))?.sum())?;
    }
    if !objective.item().is_finite() {
        return Err(TrainError::NonFinite("context loss"));
    }
    objective.backward()?;
    s.opt.cenet.step(&mut [&mut s.agent.cenet, &mut s.agent.encoder]);
    Ok(loss.total.item())
}
