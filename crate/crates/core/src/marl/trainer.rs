//! MAPPO and MA-A2C training loops over the ISCC environment.
//!
//! Collection and updates run in one deterministic context: per-agent actors
//! (or one shared actor with an agent-id feature), a centralized critic on
//! the concatenated global state, GAE with the shared team reward, and Adam
//! with global-norm gradient clipping. MAPPO performs several clipped-update
//! epochs per episode batch against a frozen old-policy snapshot; MA-A2C
//! performs a single plain policy-gradient epoch.

use super::buffer::{TrajectoryBatch, Transition};
use super::gae::{gae, standardize};
use super::mlp::{Adam, MlpGrads};
use super::norm::RunningNorm;
use super::policy::{Actor, Critic};
use super::ppo::ppo_clip_grad_coef;
use crate::env::{ActionIndices, EpochDiagnostics, GlobalState, IsccEnv, Observation, OBS_DIM};
use crate::rng::RngStreams;
use crate::sbsps::ActionMask;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

pub const ACTOR_HIDDEN: [usize; 3] = [256, 128, 64];
pub const CRITIC_HIDDEN: [usize; 3] = [512, 256, 128];
/// Entity-space offsets inside the `policy` RNG stream.
const INIT_ENTITY_BASE: u64 = 1_000_000;
const CRITIC_ENTITY: u64 = 2_000_000;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at episode {episode}: {detail}")]
    NonFiniteLoss { episode: u32, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Mappo,
    MaA2c,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Mappo => "mappo",
            Algo::MaA2c => "ma-a2c",
        }
    }
}

/// Per-episode training curve row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeCurve {
    pub episode: u32,
    pub mean_reward: f64,
    pub mean_prr: f64,
    pub mean_crlb_range_m: f64,
    pub mec_delay_ms: f64,
}

pub struct TrainedPolicy {
    pub algo: Algo,
    pub actors: Vec<Actor>,
    pub critic: Critic,
    pub obs_norm: RunningNorm,
    pub gs_norm: RunningNorm,
    pub param_sharing: bool,
    pub n_agents: usize,
}

impl TrainedPolicy {
    fn actor_input(&self, agent: usize, obs_norm: &[f64]) -> Vec<f64> {
        actor_input(self.param_sharing, self.n_agents, agent, obs_norm)
    }

    fn actor_for(&self, agent: usize) -> &Actor {
        if self.param_sharing {
            &self.actors[0]
        } else {
            &self.actors[agent]
        }
    }

    /// Greedy-free stochastic act used at evaluation time (frozen stats).
    pub fn act(
        &self,
        agent: usize,
        obs: &Observation,
        mask: &ActionMask,
        rng: &mut ChaCha12Rng,
    ) -> ActionIndices {
        let normed = self.obs_norm.normalize(&obs.raw);
        let input = self.actor_input(agent, &normed);
        let s = self.actor_for(agent).sample(&input, mask, rng);
        ActionIndices(s.indices)
    }
}

pub struct TrainOutput {
    pub policy: TrainedPolicy,
    pub curves: Vec<EpisodeCurve>,
    pub epoch_logs: Vec<EpochDiagnostics>,
}

fn actor_input(sharing: bool, n_agents: usize, agent: usize, obs_norm: &[f64]) -> Vec<f64> {
    if sharing {
        let mut v = obs_norm.to_vec();
        let id = if n_agents > 1 {
            agent as f64 / (n_agents - 1) as f64
        } else {
            0.0
        };
        v.push(id * 2.0 - 1.0);
        v
    } else {
        obs_norm.to_vec()
    }
}

/// Mean MEC queueing delay over an epoch's slot records, in ms.
pub fn mec_delay_ms(diag: &EpochDiagnostics, slot_s: f64, c_mec: f64) -> f64 {
    if diag.slots.is_empty() {
        return 0.0;
    }
    diag.slots
        .iter()
        .map(|r| (r.mec_lc + r.mec_ls) * slot_s / c_mec)
        .sum::<f64>()
        / diag.slots.len() as f64
        * 1e3
}

pub fn train(env: &mut IsccEnv, algo: Algo) -> Result<TrainOutput, TrainError> {
    let cfg = env.cfg.clone();
    let n = env.n_agents();
    let streams = RngStreams::new(cfg.seed);
    // Per-agent actors at desk scale; swarms beyond 32 agents share one
    // actor with an agent-id feature.
    let sharing = cfg.param_sharing || n > 32;
    let head_sizes = ActionMask::head_sizes(&cfg).to_vec();
    let actor_in_dim = OBS_DIM + usize::from(sharing);
    let n_actors = if sharing { 1 } else { n };
    let mut actors: Vec<Actor> = (0..n_actors)
        .map(|i| {
            let mut rng = streams
                .stream("policy", INIT_ENTITY_BASE + i as u64)
                .unwrap();
            Actor::new(actor_in_dim, &head_sizes, &ACTOR_HIDDEN, &mut rng)
        })
        .collect();
    let gs_dim = GlobalState::dim(n);
    let mut critic = {
        let mut rng = streams.stream("policy", CRITIC_ENTITY).unwrap();
        Critic::new(gs_dim, &CRITIC_HIDDEN, &mut rng)
    };
    let mut actor_opts: Vec<Adam> = actors
        .iter()
        .map(|a| Adam::new(cfg.lr_actor, a.net.n_params()))
        .collect();
    let mut critic_opt = Adam::new(cfg.lr_critic, critic.net.n_params());
    let mut obs_norm = RunningNorm::new(OBS_DIM);
    let mut gs_norm = RunningNorm::new(gs_dim);

    let (ppo_epochs, clip_eps) = match algo {
        Algo::Mappo => (cfg.ppo_epochs, cfg.clip_epsilon),
        Algo::MaA2c => (1, f64::INFINITY),
    };

    let mut curves = Vec::with_capacity(cfg.episodes as usize);
    let mut epoch_logs = Vec::new();

    for episode in 0..cfg.episodes {
        let (mut obs, mut gs, mut masks) = env.reset(episode as u64);
        let mut act_rngs: Vec<ChaCha12Rng> = (0..n)
            .map(|i| {
                streams
                    .stream_salted("policy", i as u64, episode as u64 + 1)
                    .unwrap()
            })
            .collect();
        let mut batch = TrajectoryBatch::default();
        let mut ep_reward = 0.0;
        let mut ep_prr = 0.0;
        let mut ep_crlb: Vec<f64> = Vec::new();
        let mut ep_mec = 0.0;

        for _ in 0..cfg.epochs_per_episode {
            let obs_raw: Vec<Vec<f64>> = obs.iter().map(|o| o.raw.to_vec()).collect();
            let obs_normed: Vec<Vec<f64>> =
                obs_raw.iter().map(|r| obs_norm.normalize(r)).collect();
            let gs_raw = gs.flatten();
            let gs_normed = gs_norm.normalize(&gs_raw);
            let value = critic.value(&gs_normed);

            let mut actions = Vec::with_capacity(n);
            let mut action_idx = Vec::with_capacity(n);
            let mut lps = Vec::with_capacity(n);
            let mut frees = Vec::with_capacity(n);
            for i in 0..n {
                let input = actor_input(sharing, n, i, &obs_normed[i]);
                let actor = if sharing { &actors[0] } else { &actors[i] };
                let s = actor.sample(&input, &masks[i], &mut act_rngs[i]);
                actions.push(ActionIndices(s.indices));
                action_idx.push(s.indices);
                lps.push(s.head_log_probs);
                frees.push(s.free);
            }
            let res = env.step_epoch(&actions).expect("policy actions are masked");
            ep_reward += res.reward;
            ep_prr += res.diag.mean_prr;
            if let Some(c) = res.diag.mean_crlb_range_m {
                ep_crlb.push(c);
            }
            ep_mec += mec_delay_ms(&res.diag, cfg.derived.slot_s, cfg.c_mec_cycles_per_slot);
            batch.steps.push(Transition {
                obs_raw,
                obs_norm: obs_normed,
                gs_raw,
                gs_norm: gs_normed,
                actions: action_idx,
                head_log_probs: lps,
                free: frees,
                masks: masks.clone(),
                reward: res.reward,
                value,
            });
            epoch_logs.push(strip_slots(res.diag));
            obs = res.observations;
            gs = res.global_state;
            masks = res.masks;
        }
        // Episodes are time-limit truncations of a continuing control
        // process, not terminations: bootstrap the tail with the critic's
        // value of the final state so advantages carry no horizon artifact.
        batch.bootstrap_value = critic.value(&gs_norm.normalize(&gs.flatten()));

        update(
            &cfg,
            algo,
            &mut actors,
            &mut critic,
            &mut actor_opts,
            &mut critic_opt,
            &batch,
            ppo_epochs,
            clip_eps,
            sharing,
            n,
            episode,
        )?;

        // Normalizer stats advance between episodes so replay stays exact.
        for t in &batch.steps {
            for r in &t.obs_raw {
                obs_norm.update(r);
            }
            gs_norm.update(&t.gs_raw);
        }
        let k = cfg.epochs_per_episode as f64;
        let crlb_mean = if ep_crlb.is_empty() {
            f64::NAN
        } else {
            ep_crlb.iter().sum::<f64>() / ep_crlb.len() as f64
        };
        curves.push(EpisodeCurve {
            episode,
            mean_reward: ep_reward / k,
            mean_prr: ep_prr / k,
            mean_crlb_range_m: crlb_mean,
            mec_delay_ms: ep_mec / k,
        });
    }

    Ok(TrainOutput {
        policy: TrainedPolicy {
            algo,
            actors,
            critic,
            obs_norm,
            gs_norm,
            param_sharing: sharing,
            n_agents: n,
        },
        curves,
        epoch_logs,
    })
}

fn strip_slots(mut diag: EpochDiagnostics) -> EpochDiagnostics {
    diag.slots.clear();
    diag.rx_pairs.clear();
    diag.target_samples.clear();
    diag.mac_events.clear();
    diag
}

#[allow(clippy::too_many_arguments)]
fn update(
    cfg: &crate::config::SimConfig,
    algo: Algo,
    actors: &mut [Actor],
    critic: &mut Critic,
    actor_opts: &mut [Adam],
    critic_opt: &mut Adam,
    batch: &TrajectoryBatch,
    ppo_epochs: u32,
    clip_eps: f64,
    sharing: bool,
    n: usize,
    episode: u32,
) -> Result<(), TrainError> {
    let est = gae(
        &batch.rewards(),
        &batch.values(),
        batch.bootstrap_value,
        cfg.gamma,
        cfg.gae_lambda,
    );
    let mut adv = est.advantages.clone();
    standardize(&mut adv);
    let k = batch.len();
    let weight = 1.0 / k as f64;

    for _ in 0..ppo_epochs {
        // Actors: shared team advantage, per-agent (or shared) parameters.
        let n_actors = if sharing { 1 } else { n };
        let mut grads: Vec<MlpGrads> = actors.iter().map(|a| MlpGrads::zeros(&a.net)).collect();
        let mut loss_acc = 0.0;
        for (t_idx, t) in batch.steps.iter().enumerate() {
            for agent in 0..n {
                let slot = if sharing { 0 } else { agent };
                let actor = &actors[slot];
                let input = actor_input(sharing, n, agent, &t.obs_norm[agent]);
                let eval = actor.evaluate(
                    &input,
                    &t.actions[agent],
                    &t.free[agent],
                    &t.masks[agent],
                );
                let old_lp: f64 = t.head_log_probs[agent]
                    .iter()
                    .zip(&t.free[agent])
                    .filter(|(_, &f)| f)
                    .map(|(lp, _)| lp)
                    .sum();
                let pg_coef = match algo {
                    Algo::Mappo => {
                        let ratio = (eval.log_prob - old_lp).exp();
                        ppo_clip_grad_coef(ratio, adv[t_idx], clip_eps)
                    }
                    Algo::MaA2c => adv[t_idx],
                };
                loss_acc += pg_coef;
                let w = weight / n as f64;
                actor.accumulate_policy_grads(
                    &eval,
                    &t.actions[agent],
                    &t.free[agent],
                    pg_coef,
                    cfg.c_e,
                    w,
                    &mut grads[slot],
                );
            }
        }
        if !loss_acc.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                episode,
                detail: format!("actor surrogate sum = {loss_acc}"),
            });
        }
        for i in 0..n_actors {
            grads[i].clip_global_norm(cfg.grad_clip_norm);
            actor_opts[i].step(&mut actors[i].net, &grads[i]);
            if !actors[i].net.all_finite() {
                return Err(TrainError::NonFiniteLoss {
                    episode,
                    detail: format!("actor {i} parameters non-finite after update"),
                });
            }
        }

        // Critic on GAE-consistent value targets.
        let mut vgrads = MlpGrads::zeros(&critic.net);
        let mut vloss = 0.0;
        for (t_idx, t) in batch.steps.iter().enumerate() {
            vloss += critic.accumulate_value_grads(
                &t.gs_norm,
                est.value_targets[t_idx],
                cfg.c_v,
                weight,
                &mut vgrads,
            );
        }
        if !vloss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                episode,
                detail: format!("critic mse sum = {vloss}"),
            });
        }
        vgrads.clip_global_norm(cfg.grad_clip_norm);
        critic_opt.step(&mut critic.net, &vgrads);
    }
    Ok(())
}

pub fn train_mappo(env: &mut IsccEnv) -> Result<TrainOutput, TrainError> {
    train(env, Algo::Mappo)
}

pub fn train_ma_a2c(env: &mut IsccEnv) -> Result<TrainOutput, TrainError> {
    train(env, Algo::MaA2c)
}


#[cfg(test)]
mod sharing_tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::marl::checkpoint;

    #[test]
    fn parameter_sharing_trains_and_roundtrips() {
        let mut cfg = SimConfig::default();
        cfg.n_vehicles = Some(3);
        cfg.density_veh_per_km = 30.0;
        cfg.rri_ms = 10;
        cfg.t_sel_ms = 10;
        cfg.t_sen_ms = 50;
        cfg.cbr_window_slots = 10;
        cfg.episodes = 2;
        cfg.epochs_per_episode = 4;
        cfg.param_sharing = true;
        cfg.finalize().unwrap();
        let mut env = IsccEnv::new(cfg.clone());
        let out = train_mappo(&mut env).unwrap();
        assert!(out.policy.param_sharing);
        assert_eq!(out.policy.actors.len(), 1, "one shared actor");
        assert!(out.curves.iter().all(|c| c.mean_reward.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        checkpoint::save(dir.path(), &out.policy, &cfg).unwrap();
        let loaded = checkpoint::load(dir.path(), &cfg).unwrap();
        assert!(loaded.param_sharing);
        // A shared policy still acts for every agent id.
        let (obs, _, masks) = env.reset(9);
        let streams = RngStreams::new(3);
        let mut rng = streams.stream("policy", 0).unwrap();
        for agent in 0..env.n_agents() {
            let a = loaded.act(agent, &obs[agent], &masks[agent], &mut rng);
            assert!(masks[agent].admits(&a.0));
        }
    }
}
