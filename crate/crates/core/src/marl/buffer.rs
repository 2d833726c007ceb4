//! Rollout storage for one episode.

use super::policy::N_HEADS;
use crate::sbsps::ActionMask;

/// One epoch-level transition across all agents.
#[derive(Debug, Clone)]
pub struct Transition {
    /// Raw observations (for normalizer updates and diagnostics).
    pub obs_raw: Vec<Vec<f64>>,
    /// What the actors actually saw.
    pub obs_norm: Vec<Vec<f64>>,
    pub gs_raw: Vec<f64>,
    pub gs_norm: Vec<f64>,
    pub actions: Vec<[usize; N_HEADS]>,
    pub head_log_probs: Vec<[f64; N_HEADS]>,
    /// Persistence masks: false = head frozen, excluded from the gradient.
    pub free: Vec<[bool; N_HEADS]>,
    pub masks: Vec<ActionMask>,
    /// Shared team reward.
    pub reward: f64,
    /// Critic value at collection time.
    pub value: f64,
}

/// Full-episode batch consumed by one update.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBatch {
    pub steps: Vec<Transition>,
    /// V(s_K); zero at a terminal episode end.
    pub bootstrap_value: f64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|t| t.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|t| t.value).collect()
    }
}
