//! Actor and critic networks over the factored action heads, with exact
//! masked-categorical sampling, log-prob/entropy evaluation, and the
//! gradient assembly used by both trainers.
//!
//! The joint policy factorizes over nine heads sampled in a fixed order;
//! the communication-PRB head's admissible set is conditioned on the sampled
//! sensing-PRB head so the shared sidelink budget is honored exactly. Heads
//! frozen by SB-SPS persistence emit their forced value with probability 1
//! and are excluded from the gradient via the persistence mask.

use super::mlp::{ForwardCache, Mlp, MlpGrads};
use crate::sbsps::ActionMask;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub const N_HEADS: usize = 9;
/// Heads frozen when no reselection triggers: resource, RC, keep.
pub const MAC_HEADS: [usize; 3] = [0, 1, 2];

/// Log-softmax over admissible entries; masked entries get -inf.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    debug_assert_eq!(logits.len(), mask.len());
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "mask admits no entries");
    let lse = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - lse } else { f64::NEG_INFINITY })
        .collect()
}

pub fn sample_from_log_probs(log_probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_valid = 0;
    for (i, &lp) in log_probs.iter().enumerate() {
        if lp.is_finite() {
            acc += lp.exp();
            last_valid = i;
            if u < acc {
                return i;
            }
        }
    }
    last_valid
}

/// One sampled joint action with its bookkeeping for the trainers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    pub indices: [usize; N_HEADS],
    pub head_log_probs: [f64; N_HEADS],
    /// Persistence mask: false marks a frozen head excluded from gradients.
    pub free: [bool; N_HEADS],
    pub log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct Actor {
    pub net: Mlp,
    pub head_sizes: Vec<usize>,
}

/// Everything the update path needs from one forward evaluation.
pub struct ActorEval {
    pub cache: ForwardCache,
    /// Per-head admissible-softmax probabilities (empty for frozen heads).
    pub head_probs: Vec<Vec<f64>>,
    pub head_masks: Vec<Vec<bool>>,
    pub log_prob: f64,
    pub entropy: f64,
}

impl Actor {
    pub fn new(
        obs_dim: usize,
        head_sizes: &[usize],
        hidden: &[usize],
        rng: &mut ChaCha12Rng,
    ) -> Actor {
        Actor {
            net: Mlp::new(obs_dim, hidden, head_sizes, rng),
            head_sizes: head_sizes.to_vec(),
        }
    }

    fn frozen_indices(mask: &ActionMask) -> Option<[usize; 3]> {
        mask.frozen.map(|f| [f.resource as usize, f.rc_idx, f.keep_idx])
    }

    /// Sample a feasible joint action under the mask.
    pub fn sample(
        &self,
        obs_norm: &[f64],
        mask: &ActionMask,
        rng: &mut ChaCha12Rng,
    ) -> SampledAction {
        let cache = self.net.forward(obs_norm);
        let frozen = Self::frozen_indices(mask);
        let mut indices = [0usize; N_HEADS];
        let mut head_log_probs = [0.0f64; N_HEADS];
        let mut free = [true; N_HEADS];
        for h in 0..N_HEADS {
            if let (Some(f), true) = (frozen, h < 3) {
                indices[h] = f[h];
                free[h] = false;
                continue;
            }
            let hm = mask.head_mask(h, if h == 4 { Some(indices[3] as u32) } else { None });
            let lp = masked_log_softmax(&cache.head_outputs[h], &hm);
            let idx = sample_from_log_probs(&lp, rng);
            indices[h] = idx;
            head_log_probs[h] = lp[idx];
        }
        SampledAction {
            indices,
            head_log_probs,
            free,
            log_prob: head_log_probs.iter().sum(),
        }
    }

    /// Recompute log-prob and entropy of a stored action under the current
    /// parameters (masks and persistence flags come from collection time).
    pub fn evaluate(
        &self,
        obs_norm: &[f64],
        indices: &[usize; N_HEADS],
        free: &[bool; N_HEADS],
        mask: &ActionMask,
    ) -> ActorEval {
        let cache = self.net.forward(obs_norm);
        let mut head_probs = vec![Vec::new(); N_HEADS];
        let mut head_masks = vec![Vec::new(); N_HEADS];
        let mut log_prob = 0.0;
        let mut entropy = 0.0;
        for h in 0..N_HEADS {
            if !free[h] {
                continue;
            }
            let hm = mask.head_mask(h, if h == 4 { Some(indices[3] as u32) } else { None });
            let lp = masked_log_softmax(&cache.head_outputs[h], &hm);
            log_prob += lp[indices[h]];
            let probs: Vec<f64> = lp.iter().map(|&l| if l.is_finite() { l.exp() } else { 0.0 }).collect();
            entropy += -lp
                .iter()
                .zip(&probs)
                .filter(|(l, _)| l.is_finite())
                .map(|(&l, &p)| p * l)
                .sum::<f64>();
            head_probs[h] = probs;
            head_masks[h] = hm;
        }
        ActorEval {
            cache,
            head_probs,
            head_masks,
            log_prob,
            entropy,
        }
    }

    /// Accumulate gradients of
    /// `loss = -(pg_coef * log pi(a|o) + entropy_coef * H(pi))`
    /// for one sample into `grads` with the given weight (1/batch).
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_policy_grads(
        &self,
        eval: &ActorEval,
        indices: &[usize; N_HEADS],
        free: &[bool; N_HEADS],
        pg_coef: f64,
        entropy_coef: f64,
        weight: f64,
        grads: &mut MlpGrads,
    ) {
        let mut head_grads: Vec<Vec<f64>> = self
            .head_sizes
            .iter()
            .map(|&d| vec![0.0; d])
            .collect();
        for h in 0..N_HEADS {
            if !free[h] || eval.head_probs[h].is_empty() {
                continue;
            }
            let probs = &eval.head_probs[h];
            let hm = &eval.head_masks[h];
            // Entropy of this head for its logit gradient.
            let h_ent: f64 = probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            let hg = &mut head_grads[h];
            for j in 0..probs.len() {
                if !hm[j] {
                    continue;
                }
                let p = probs[j];
                let d_logpi = (if j == indices[h] { 1.0 } else { 0.0 }) - p;
                let d_entropy = if p > 0.0 { -p * (p.ln() + h_ent) } else { 0.0 };
                hg[j] = weight * (-(pg_coef * d_logpi) - entropy_coef * d_entropy);
            }
        }
        self.net.backward(&eval.cache, &head_grads, grads);
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    pub net: Mlp,
}

impl Critic {
    pub fn new(state_dim: usize, hidden: &[usize], rng: &mut ChaCha12Rng) -> Critic {
        Critic {
            net: Mlp::new(state_dim, hidden, &[1], rng),
        }
    }

    pub fn value(&self, state_norm: &[f64]) -> f64 {
        self.net.forward(state_norm).head_outputs[0][0]
    }

    /// Accumulate gradients of `loss = c_v * (V - target)^2 * weight`.
    pub fn accumulate_value_grads(
        &self,
        state_norm: &[f64],
        target: f64,
        c_v: f64,
        weight: f64,
        grads: &mut MlpGrads,
    ) -> f64 {
        let cache = self.net.forward(state_norm);
        let v = cache.head_outputs[0][0];
        let err = v - target;
        self.net
            .backward(&cache, &[vec![weight * c_v * 2.0 * err]], grads);
        err * err
    }
}
