//! Non-learning baselines: sensing-centric greedy (SCG) and
//! computing-centric greedy (CCG) extended SB-SPS.
//!
//! Both share the Mode-2 candidate/persistence rules through the mask and
//! pick the feasible action minimizing a one-epoch surrogate objective over
//! a sampled candidate pool plus the objective's corner action. Others'
//! behavior is frozen at the last observation (sole-offloader uplink,
//! backlog levels as queue estimates). Candidates keep the sensing pipeline
//! operational (at least 2 PRBs and 2 symbols, the minimum with defined
//! bounds), matching the corners.

use crate::compute::{comp_penalty, local_schedule};
use crate::config::SimConfig;
use crate::env::{ActionIndices, LocalView};
use crate::sbsps::ActionMask;
use crate::sensing::{self, SensingAlloc};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreedyKind {
    /// Minimizes the predicted sensing penalty.
    Scg,
    /// Minimizes the predicted computation penalty.
    Ccg,
}

#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub kind: GreedyKind,
    pub k_samples: usize,
}

impl GreedyPolicy {
    pub fn new(kind: GreedyKind) -> GreedyPolicy {
        GreedyPolicy {
            kind,
            k_samples: 64,
        }
    }

    pub fn act(
        &self,
        view: &LocalView,
        mask: &ActionMask,
        cfg: &SimConfig,
        rng: &mut ChaCha12Rng,
    ) -> ActionIndices {
        let corner = self.corner(view, mask, cfg);
        let mut best = corner;
        let mut best_score = self.score(&corner, view, cfg);
        for _ in 0..self.k_samples {
            let cand = sample_candidate(mask, cfg, rng);
            let score = self.score(&cand, view, cfg);
            let better = match self.kind {
                GreedyKind::Scg => {
                    score < best_score || (score == best_score && cand.0[3] > best.0[3])
                }
                GreedyKind::Ccg => {
                    score < best_score || (score == best_score && cand.0[6] < best.0[6])
                }
            };
            if better {
                best = cand;
                best_score = score;
            }
        }
        best
    }

    fn score(&self, act: &ActionIndices, view: &LocalView, cfg: &SimConfig) -> f64 {
        match self.kind {
            GreedyKind::Scg => predict_sensing_penalty(act, view, cfg),
            GreedyKind::Ccg => predict_comp_penalty(act, view, cfg),
        }
    }

    fn corner(&self, view: &LocalView, mask: &ActionMask, cfg: &SimConfig) -> ActionIndices {
        let mac = mac_heads_deterministic(mask);
        let n_sl = cfg.n_sl_prb_per_vehicle as usize;
        let n_o_max = cfg.n_o_max_prb as usize;
        match self.kind {
            // All-in on sensing; overflow pushed off-board.
            GreedyKind::Scg => ActionIndices([
                mac[0],
                mac[1],
                mac[2],
                n_sl,
                0,
                n_o_max,
                13,
                1,
                1,
            ]),
            // Minimum valid sensing, rest to communication, routing by the
            // lowest predicted computation penalty.
            GreedyKind::Ccg => {
                let n_s = 2.min(n_sl);
                let base = [mac[0], mac[1], mac[2], n_s, n_sl - n_s, n_o_max, 1, 0, 0];
                let mut best = ActionIndices(base);
                let mut best_score = predict_comp_penalty(&best, view, cfg);
                for eta_c in 0..2usize {
                    for eta_s in 0..3usize {
                        let mut idx = base;
                        idx[7] = eta_c;
                        idx[8] = eta_s;
                        let cand = ActionIndices(idx);
                        let score = predict_comp_penalty(&cand, view, cfg);
                        if score < best_score {
                            best = cand;
                            best_score = score;
                        }
                    }
                }
                best
            }
        }
    }
}

fn mac_heads_deterministic(mask: &ActionMask) -> [usize; 3] {
    let first = |v: &[bool]| v.iter().position(|&b| b).expect("mask head nonempty");
    [first(&mask.resource), first(&mask.rc), first(&mask.keep)]
}

fn sample_head(v: &[bool], rng: &mut ChaCha12Rng) -> usize {
    let admissible: Vec<usize> = v
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    admissible[rng.random_range(0..admissible.len())]
}

/// Uniform feasible candidate with the sensing-operational floor.
fn sample_candidate(mask: &ActionMask, cfg: &SimConfig, rng: &mut ChaCha12Rng) -> ActionIndices {
    let n_sl = cfg.n_sl_prb_per_vehicle as usize;
    let mac = match mask.frozen {
        Some(f) => [f.resource as usize, f.rc_idx, f.keep_idx],
        None => [
            sample_head(&mask.resource, rng),
            sample_head(&mask.rc, rng),
            sample_head(&mask.keep, rng),
        ],
    };
    let n_s_min = 2.min(n_sl);
    let n_s = rng.random_range(n_s_min..=n_sl);
    let n_c = rng.random_range(0..=(n_sl - n_s));
    let n_o = sample_head(&mask.n_o, rng);
    let m_s_idx = rng.random_range(1..14usize); // symbols 2..=14
    let eta_c = rng.random_range(0..2usize);
    let eta_s = rng.random_range(0..3usize);
    ActionIndices([mac[0], mac[1], mac[2], n_s, n_c, n_o, m_s_idx, eta_c, eta_s])
}

/// Predicted per-slot raw sensing penalty under the candidate allocation
/// with targets held at their last-known ranges.
pub fn predict_sensing_penalty(
    act: &ActionIndices,
    view: &LocalView,
    cfg: &SimConfig,
) -> f64 {
    let n_s = act.0[3] as u32;
    let m_s = act.0[6] as u32 + 1;
    let Ok(alloc) = SensingAlloc::new(n_s, m_s, cfg.tx_power_w) else {
        return f64::INFINITY;
    };
    let echoes: Vec<_> = view
        .neighbor_ranges
        .iter()
        .enumerate()
        .filter_map(|(id, &r)| sensing::target_echo(id, r.max(1.0), 0.0, &alloc, cfg).ok())
        .collect();
    sensing::build_report(&echoes, &alloc, cfg).penalty
}

/// Predicted per-slot clipped computation penalty: expected arrival
/// workload, the candidate sensing workload, a sole-offloader uplink, and
/// backlog levels standing in for the MEC queues.
pub fn predict_comp_penalty(act: &ActionIndices, view: &LocalView, cfg: &SimConfig) -> f64 {
    let n_s = act.0[3] as u32;
    let n_o = act.0[5] as u32;
    let m_s = act.0[6] as u32 + 1;
    let (eta_c, eta_s) = (act.0[7] as u8, act.0[8] as u8);

    let v_c = cfg.kappa_c_cycles_per_bit
        * cfg.msg_rate_hz
        * cfg.derived.slot_s
        * cfg.derived.packet_bits as f64;
    let v_s = cfg.kappa_s_cycles_per_bit * 2.0 * (12 * n_s) as f64 * m_s as f64 * cfg.b_quant_bits as f64;
    let local = local_schedule(v_c, v_s, cfg);

    let rate = if n_o > 0 {
        let bw = 12.0 * cfg.scs_hz * n_o as f64;
        let sinr = cfg.tx_power_w * view.v2i_gain / cfg.noise_w(bw);
        bw * (1.0 + sinr).log2()
    } else {
        0.0
    };
    let level_to_cycles = |level: f64| -> f64 {
        let ratio = match level as u32 {
            0 => 0.25,
            1 => 1.0,
            _ => 2.5,
        };
        ratio * cfg.c_mec_cycles_per_slot
    };
    let est_lc = level_to_cycles(view.mec_level_c);
    let est_ls = level_to_cycles(view.mec_level_s);
    let per_cycle = cfg.derived.slot_s / cfg.c_mec_cycles_per_slot;

    let mut t_rem_c = 0.0;
    let mut e_tx = 0.0;
    if eta_c == 1 && local.ov_c > 0.0 {
        let t_tx = tx_time(cfg.xi_c_bits_per_cycle * local.ov_c, rate);
        t_rem_c = t_tx + est_lc * per_cycle + local.ov_c * per_cycle;
        e_tx += cfg.tx_power_w * t_tx.min(cfg.derived.slot_s);
    }
    let mut t_rem_s = 0.0;
    if local.ov_s > 0.0 {
        let t_tx = tx_time(cfg.xi_s_bits_per_cycle * local.ov_s, rate);
        match eta_s {
            1 => {
                t_rem_s = t_tx + (est_lc + est_ls) * per_cycle + local.ov_s * per_cycle;
                e_tx += cfg.tx_power_w * t_tx.min(cfg.derived.slot_s);
            }
            2 => {
                t_rem_s = t_tx + cfg.t_bh_s + cfg.t_cl_s;
                e_tx += cfg.tx_power_w * t_tx.min(cfg.derived.slot_s);
            }
            _ => {}
        }
    }
    let t_comp_c = local.t_loc_c_s.max(t_rem_c);
    let t_comp_s = local.t_loc_s_s.max(t_rem_s);
    let e_sens = if n_s > 0 {
        cfg.tx_power_w * m_s as f64 * cfg.derived.sym_s
    } else {
        0.0
    };
    comp_penalty(t_comp_c, t_comp_s, local.e_loc_j + e_tx + e_sens, cfg)
}

fn tx_time(bits: f64, rate: f64) -> f64 {
    if bits <= 0.0 {
        0.0
    } else if rate > 0.0 {
        bits / rate
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;
    use crate::sbsps::build_mask;

    fn cfg() -> SimConfig {
        let mut c = SimConfig::default();
        c.n_vehicles = Some(4);
        c.density_veh_per_km = 40.0;
        c.rri_ms = 10;
        c.t_sel_ms = 10;
        c.finalize().unwrap();
        c
    }

    fn rng() -> ChaCha12Rng {
        RngStreams::new(9).stream("policy", 42).unwrap()
    }

    #[test]
    fn scg_picks_sensing_corner_when_targets_present() {
        let c = cfg();
        let mask = build_mask(&[0, 1, 2], None, &c);
        let view = LocalView {
            neighbor_ranges: vec![30.0, 60.0],
            v2i_gain: 1e-9,
            mec_level_c: 0.0,
            mec_level_s: 0.0,
        };
        let scg = GreedyPolicy::new(GreedyKind::Scg);
        let act = scg.act(&view, &mask, &c, &mut rng());
        // Penalty strictly decreases in both sensing heads, so the corner wins.
        assert_eq!(act.0[3], c.n_sl_prb_per_vehicle as usize);
        assert_eq!(act.0[6], 13);
        assert_eq!(act.0[4], 0);
        assert!(mask.admits(&act.0));
    }

    #[test]
    fn scg_corner_on_empty_tie() {
        let c = cfg();
        let mask = build_mask(&[5], None, &c);
        let view = LocalView {
            neighbor_ranges: vec![],
            ..Default::default()
        };
        let scg = GreedyPolicy::new(GreedyKind::Scg);
        let act = scg.act(&view, &mask, &c, &mut rng());
        // All candidates score zero; the tie-break keeps the corner.
        assert_eq!(act.0[3], c.n_sl_prb_per_vehicle as usize);
        assert_eq!(act.0[6], 13);
    }

    #[test]
    fn ccg_prefers_minimal_sensing() {
        let c = cfg();
        let mask = build_mask(&[0, 1], None, &c);
        let view = LocalView {
            neighbor_ranges: vec![25.0],
            v2i_gain: 1e-9,
            mec_level_c: 2.0,
            mec_level_s: 2.0,
        };
        let ccg = GreedyPolicy::new(GreedyKind::Ccg);
        let act = ccg.act(&view, &mask, &c, &mut rng());
        assert_eq!(act.0[3], 2, "minimum valid sensing PRBs");
        assert_eq!(act.0[6], 1, "minimum valid symbol count");
        assert!(mask.admits(&act.0));
    }

    #[test]
    fn ccg_penalty_ordering_respected() {
        let c = cfg();
        let view = LocalView {
            neighbor_ranges: vec![25.0],
            v2i_gain: 1e-9,
            mec_level_c: 0.0,
            mec_level_s: 0.0,
        };
        // Bigger sensing allocation costs strictly more.
        let small = ActionIndices([0, 0, 0, 2, 8, 0, 1, 0, 0]);
        let large = ActionIndices([0, 0, 0, 12, 0, 0, 13, 0, 0]);
        assert!(
            predict_comp_penalty(&small, &view, &c) < predict_comp_penalty(&large, &view, &c)
        );
    }

    #[test]
    fn candidates_respect_frozen_mac() {
        let c = cfg();
        let frozen = crate::sbsps::FrozenMac {
            resource: 7,
            rc_idx: 4,
            keep_idx: 1,
        };
        let mask = build_mask(&[], Some(frozen), &c);
        let mut r = rng();
        for _ in 0..100 {
            let cand = sample_candidate(&mask, &c, &mut r);
            assert_eq!(cand.0[0], 7);
            assert_eq!(cand.0[1], 4);
            assert_eq!(cand.0[2], 1);
            assert!(mask.admits(&cand.0));
        }
    }

    #[test]
    fn sampled_candidates_always_feasible_and_sensing_valid() {
        let c = cfg();
        let mask = build_mask(&[3, 9, 11], None, &c);
        let mut r = rng();
        for _ in 0..500 {
            let cand = sample_candidate(&mask, &c, &mut r);
            assert!(mask.admits(&cand.0));
            assert!(cand.0[3] >= 2 && cand.0[6] >= 1);
        }
    }
}
