//! Generalized advantage estimation over one episode.

/// TD residuals, advantages, and value targets for an episode of length K.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate {
    pub deltas: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

/// `values[k]` estimates V(s_k); `bootstrap` stands in for V(s_K) and is 0
/// at a terminal episode end.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> AdvantageEstimate {
    assert_eq!(rewards.len(), values.len());
    let k = rewards.len();
    let mut deltas = vec![0.0; k];
    for i in 0..k {
        let next = if i + 1 < k { values[i + 1] } else { bootstrap };
        deltas[i] = rewards[i] + gamma * next - values[i];
    }
    let mut advantages = vec![0.0; k];
    let mut acc = 0.0;
    for i in (0..k).rev() {
        acc = deltas[i] + gamma * lambda * acc;
        advantages[i] = acc;
    }
    let value_targets = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    AdvantageEstimate {
        deltas,
        advantages,
        value_targets,
    }
}

/// In-place zero-mean unit-variance standardization (batch convention for
/// the policy update; value targets are formed before this).
pub fn standardize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}
