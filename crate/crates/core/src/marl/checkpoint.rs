//! Checkpoint format: a JSON manifest (dims, head sizes, normalization
//! stats, config hash) plus one flat little-endian f64 parameter blob per
//! network.

use super::mlp::Mlp;
use super::norm::RunningNorm;
use super::policy::{Actor, Critic};
use super::trainer::{Algo, TrainedPolicy, ACTOR_HIDDEN, CRITIC_HIDDEN};
use crate::config::SimConfig;
use crate::env::{GlobalState, OBS_DIM};
use crate::sbsps::ActionMask;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint incompatible with config: {0}")]
    Incompatible(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    algo: String,
    n_agents: usize,
    obs_dim: usize,
    gs_dim: usize,
    actor_in_dim: usize,
    head_sizes: Vec<usize>,
    actor_hidden: Vec<usize>,
    critic_hidden: Vec<usize>,
    param_sharing: bool,
    config_hash: String,
    obs_norm: RunningNorm,
    gs_norm: RunningNorm,
}

fn blob_bytes(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(net.n_params() * 8);
    for p in net.params_flat() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn blob_values(bytes: &[u8]) -> Result<Vec<f64>, CheckpointError> {
    if bytes.len() % 8 != 0 {
        return Err(CheckpointError::Manifest(
            "parameter blob length is not a multiple of 8".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save(dir: impl AsRef<Path>, policy: &TrainedPolicy, cfg: &SimConfig) -> Result<(), CheckpointError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        algo: policy.algo.name().to_string(),
        n_agents: policy.n_agents,
        obs_dim: OBS_DIM,
        gs_dim: GlobalState::dim(policy.n_agents),
        actor_in_dim: OBS_DIM + usize::from(policy.param_sharing),
        head_sizes: ActionMask::head_sizes(cfg).to_vec(),
        actor_hidden: ACTOR_HIDDEN.to_vec(),
        critic_hidden: CRITIC_HIDDEN.to_vec(),
        param_sharing: policy.param_sharing,
        config_hash: cfg.config_hash(),
        obs_norm: policy.obs_norm.clone(),
        gs_norm: policy.gs_norm.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    for (i, actor) in policy.actors.iter().enumerate() {
        std::fs::write(dir.join(format!("actor_{i:03}.bin")), blob_bytes(&actor.net))?;
    }
    std::fs::write(dir.join("critic.bin"), blob_bytes(&policy.critic.net))?;
    Ok(())
}

pub fn load(dir: impl AsRef<Path>, cfg: &SimConfig) -> Result<TrainedPolicy, CheckpointError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(CheckpointError::Manifest(format!(
            "missing checkpoint manifest at {}",
            manifest_path.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let head_sizes = ActionMask::head_sizes(cfg).to_vec();
    if manifest.head_sizes != head_sizes {
        return Err(CheckpointError::Incompatible(format!(
            "head sizes {:?} vs config {:?}",
            manifest.head_sizes, head_sizes
        )));
    }
    if !manifest.param_sharing && manifest.n_agents != cfg.derived.n_vehicles as usize {
        return Err(CheckpointError::Incompatible(format!(
            "per-agent checkpoint for {} vehicles, config has {}",
            manifest.n_agents, cfg.derived.n_vehicles
        )));
    }
    let algo = match manifest.algo.as_str() {
        "mappo" => Algo::Mappo,
        "ma-a2c" => Algo::MaA2c,
        other => {
            return Err(CheckpointError::Manifest(format!(
                "unknown algorithm `{other}`"
            )))
        }
    };
    // Parameters are overwritten; the init RNG is irrelevant.
    let mut dummy = ChaCha12Rng::from_seed([0u8; 32]);
    let n_actors = if manifest.param_sharing {
        1
    } else {
        manifest.n_agents
    };
    let mut actors = Vec::with_capacity(n_actors);
    for i in 0..n_actors {
        let mut actor = Actor::new(
            manifest.actor_in_dim,
            &manifest.head_sizes,
            &manifest.actor_hidden,
            &mut dummy,
        );
        let bytes = std::fs::read(dir.join(format!("actor_{i:03}.bin")))?;
        actor
            .net
            .load_flat(&blob_values(&bytes)?)
            .map_err(CheckpointError::Incompatible)?;
        actors.push(actor);
    }
    let mut critic = Critic::new(manifest.gs_dim, &manifest.critic_hidden, &mut dummy);
    let bytes = std::fs::read(dir.join("critic.bin"))?;
    critic
        .net
        .load_flat(&blob_values(&bytes)?)
        .map_err(CheckpointError::Incompatible)?;
    Ok(TrainedPolicy {
        algo,
        actors,
        critic,
        obs_norm: manifest.obs_norm,
        gs_norm: manifest.gs_norm,
        param_sharing: manifest.param_sharing,
        n_agents: manifest.n_agents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    fn cfg() -> SimConfig {
        let mut c = SimConfig::default();
        c.n_vehicles = Some(3);
        c.density_veh_per_km = 30.0;
        c.rri_ms = 10;
        c.t_sel_ms = 10;
        c.finalize().unwrap();
        c
    }

    fn tiny_policy(c: &SimConfig) -> TrainedPolicy {
        let streams = RngStreams::new(1);
        let mut rng = streams.stream("policy", 0).unwrap();
        let head_sizes = ActionMask::head_sizes(c).to_vec();
        let actors = (0..3)
            .map(|_| Actor::new(OBS_DIM, &head_sizes, &ACTOR_HIDDEN, &mut rng))
            .collect();
        let critic = Critic::new(GlobalState::dim(3), &CRITIC_HIDDEN, &mut rng);
        TrainedPolicy {
            algo: Algo::Mappo,
            actors,
            critic,
            obs_norm: RunningNorm::new(OBS_DIM),
            gs_norm: RunningNorm::new(GlobalState::dim(3)),
            param_sharing: false,
            n_agents: 3,
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let c = cfg();
        let policy = tiny_policy(&c);
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &policy, &c).unwrap();
        let loaded = load(dir.path(), &c).unwrap();
        for (a, b) in policy.actors.iter().zip(&loaded.actors) {
            assert_eq!(a.net.params_flat(), b.net.params_flat());
        }
        assert_eq!(
            policy.critic.net.params_flat(),
            loaded.critic.net.params_flat()
        );
        assert_eq!(loaded.algo, Algo::Mappo);
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let c = cfg();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load(dir.path().join("nope"), &c),
            Err(CheckpointError::Manifest(_))
        ));
    }

    #[test]
    fn vehicle_count_mismatch_rejected() {
        let c = cfg();
        let policy = tiny_policy(&c);
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &policy, &c).unwrap();
        let mut c5 = SimConfig::default();
        c5.n_vehicles = Some(5);
        c5.density_veh_per_km = 50.0;
        c5.rri_ms = 10;
        c5.t_sel_ms = 10;
        c5.finalize().unwrap();
        assert!(matches!(
            load(dir.path(), &c5),
            Err(CheckpointError::Incompatible(_))
        ));
    }
}
