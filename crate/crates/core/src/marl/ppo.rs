//! Clipped-surrogate pieces shared by the trainers.

/// PPO clipped surrogate value `min(ratio*adv, clip(ratio)*adv)`.
pub fn ppo_clip_value(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    debug_assert!(ratio > 0.0);
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Coefficient on the new log-probability gradient: the surrogate's
/// derivative flows only through the unclipped branch when it attains the
/// minimum, and is zero when the clipped branch is strictly smaller.
pub fn ppo_clip_grad_coef(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let surr1 = ratio * advantage;
    let surr2 = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if surr1 <= surr2 {
        ratio * advantage
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn clip_examples() {
        assert_relative_eq!(ppo_clip_value(1.3, 1.0, 0.2), 1.2, max_relative = 1e-12);
        assert_relative_eq!(ppo_clip_value(0.5, -1.0, 0.2), -0.8, max_relative = 1e-12);
        assert_relative_eq!(ppo_clip_value(1.0, 0.37, 0.2), 0.37, max_relative = 1e-12);
    }

    #[test]
    fn infinite_epsilon_disables_clipping() {
        for (r, a) in [(0.2, 1.5), (3.7, -0.4), (1.0, 0.0), (0.01, -2.0)] {
            assert_eq!(ppo_clip_value(r, a, f64::INFINITY), r * a);
            assert_eq!(ppo_clip_grad_coef(r, a, f64::INFINITY), r * a);
        }
    }

    #[test]
    fn gradient_blocked_when_clipped_branch_wins() {
        // Positive advantage, ratio above the band: clipped branch is the
        // min and carries no gradient.
        assert_eq!(ppo_clip_grad_coef(1.5, 1.0, 0.2), 0.0);
        // Negative advantage, ratio below the band: same story.
        assert_eq!(ppo_clip_grad_coef(0.5, -1.0, 0.2), 0.0);
        // Inside the band both branches agree; gradient flows.
        assert_relative_eq!(ppo_clip_grad_coef(1.1, 1.0, 0.2), 1.1, max_relative = 1e-12);
        // Pessimistic side: ratio high with negative advantage still flows.
        assert_relative_eq!(
            ppo_clip_grad_coef(1.5, -1.0, 0.2),
            -1.5,
            max_relative = 1e-12
        );
    }
}
