//! Sidelink transmission outcomes: SINR, decode/PRR, CBR, rates, queue
//! evolution, delay, utility, and the reliability-distance metric.
//!
//! Vehicles transmit on their reserved resource once per RRI; all other slots
//! produce an idle outcome with zero rate. Delivered payload is floored to
//! whole bits so queue accounting stays exact.

use crate::config::{db_to_lin, SimConfig, SC_PER_PRB};
use crate::mobility::ChannelSnapshot;
use crate::sbsps::ResourceGrid;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("distance-binned PRR table is empty")]
    EmptyPrrTable,
}

/// Per-vehicle communication state carried across slots.
#[derive(Debug, Clone, PartialEq)]
pub struct CommState {
    pub queue_bits: f64,
    pub prr_ema: f64,
    pub rate_eff_ema: f64,
    pub avg_sinr_ema: f64,
    pub cbr: f64,
    /// Episode totals for the conservation identity.
    pub arrivals_total: f64,
    pub served_total: f64,
}

impl Default for CommState {
    fn default() -> Self {
        CommState {
            queue_bits: 0.0,
            prr_ema: 0.0,
            rate_eff_ema: 0.0,
            avg_sinr_ema: 0.0,
            cbr: 0.0,
            arrivals_total: 0.0,
            served_total: 0.0,
        }
    }
}

/// Outcome of one slot for one (potential) transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct TxOutcome {
    pub transmitted: bool,
    /// Intended receivers with their current distances.
    pub receivers: Vec<(usize, f64)>,
    pub sinrs: Vec<f64>,
    pub decode: Vec<bool>,
    pub prr: f64,
    pub avg_sinr: f64,
    pub rate_bps: f64,
    pub rate_eff_bps: f64,
    pub delivered_bits: f64,
    pub sl_delay_s: f64,
}

impl TxOutcome {
    /// Slot without a transmission: zero rate, full deficiency.
    pub fn idle(queue_bits: f64, cfg: &SimConfig) -> TxOutcome {
        TxOutcome {
            transmitted: false,
            receivers: Vec::new(),
            sinrs: Vec::new(),
            decode: Vec::new(),
            prr: 0.0,
            avg_sinr: 0.0,
            rate_bps: 0.0,
            rate_eff_bps: 0.0,
            delivered_bits: 0.0,
            sl_delay_s: queue_delay(queue_bits, 0.0, cfg),
        }
    }
}

/// Bernoulli packet arrivals for one slot, in bits.
pub fn arrivals(rng: &mut ChaCha12Rng, cfg: &SimConfig) -> u64 {
    let p = cfg.msg_rate_hz * cfg.derived.slot_s;
    if p > 0.0 && rng.random::<f64>() < p {
        cfg.derived.packet_bits
    } else {
        0
    }
}

/// One active transmitter in the current slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTransmitter {
    pub vehicle: usize,
    pub resource: u32,
    pub n_c_prb: u32,
}

/// Linear sidelink SINR from each transmitter to every other vehicle.
/// Interference sums over co-resource transmitters only.
pub fn sinr_matrix(
    txs: &[SlotTransmitter],
    n_vehicles: usize,
    chans: &ChannelSnapshot,
    cfg: &SimConfig,
) -> Vec<Vec<f64>> {
    let p = cfg.tx_power_w;
    txs.iter()
        .map(|tx| {
            let bw = SC_PER_PRB as f64 * cfg.scs_hz * tx.n_c_prb as f64;
            let noise = cfg.noise_w(bw);
            (0..n_vehicles)
                .map(|j| {
                    if j == tx.vehicle {
                        return 0.0;
                    }
                    let interference: f64 = txs
                        .iter()
                        .filter(|o| o.vehicle != tx.vehicle && o.resource == tx.resource)
                        .map(|o| p * chans.v2v(o.vehicle, j))
                        .sum();
                    p * chans.v2v(tx.vehicle, j) / (noise + interference)
                })
                .collect()
        })
        .collect()
}

fn queue_delay(queue_bits: f64, rate_eff: f64, cfg: &SimConfig) -> f64 {
    (queue_bits / (rate_eff + cfg.eps0_rate_bps)).min(cfg.delay_cap_s)
}

/// Rate, PRR, effective rate, delivered payload, and queueing delay for one
/// transmission. `sinr_row` indexes all vehicles; `receivers` carries the
/// awareness set with distances.
pub fn tx_outcome(
    sinr_row: &[f64],
    receivers: Vec<(usize, f64)>,
    n_c_prb: u32,
    queue_bits: f64,
    cfg: &SimConfig,
) -> TxOutcome {
    let bw = SC_PER_PRB as f64 * cfg.scs_hz * n_c_prb as f64;
    let thr = db_to_lin(cfg.snr_decode_threshold_db);
    let sinrs: Vec<f64> = receivers.iter().map(|&(j, _)| sinr_row[j]).collect();
    let decode: Vec<bool> = sinrs.iter().map(|&s| s >= thr).collect();
    let (prr, avg_sinr) = if receivers.is_empty() {
        // Nobody in range: nothing can fail, nothing is received.
        (1.0, 0.0)
    } else {
        (
            decode.iter().filter(|&&d| d).count() as f64 / decode.len() as f64,
            sinrs.iter().sum::<f64>() / sinrs.len() as f64,
        )
    };
    let rate_bps = bw * (1.0 + avg_sinr).log2();
    let rate_eff_bps = rate_bps * prr;
    let delivered_bits = cfg.derived.slot_s * rate_eff_bps;
    TxOutcome {
        transmitted: true,
        receivers,
        sinrs,
        decode,
        prr,
        avg_sinr,
        rate_bps,
        rate_eff_bps,
        delivered_bits,
        sl_delay_s: queue_delay(queue_bits, rate_eff_bps, cfg),
    }
}

/// Lindley queue update; returns the bits served this slot. Service is
/// floored to whole bits so the conservation identity holds exactly.
pub fn update_queue(state: &mut CommState, delivered_bits: f64, arrival_bits: u64) -> f64 {
    let served = state.queue_bits.min(delivered_bits.floor());
    state.queue_bits = (state.queue_bits - served).max(0.0) + arrival_bits as f64;
    state.arrivals_total += arrival_bits as f64;
    state.served_total += served;
    served
}

/// Channel busy ratio over the trailing CBR window.
pub fn cbr(grid: &ResourceGrid, cfg: &SimConfig) -> f64 {
    let Some(latest) = grid.latest_slot() else {
        return 0.0;
    };
    let window = (cfg.cbr_window_slots as u64).min(latest + 1);
    let busy = grid.busy_prb_slots(window, cfg);
    busy as f64 / (window as f64 * cfg.derived.n_prb_pool as f64)
}

/// Communication utility and its deficiency (the normalized cost term).
pub fn comm_utility(prr: f64, rate_eff_bps: f64, cfg: &SimConfig) -> (f64, f64) {
    let rate_term = (rate_eff_bps / cfg.derived.r_eff_min_bps).min(1.0);
    let utility = cfg.alpha_prr * prr + cfg.alpha_rate * rate_term;
    let deficiency = (1.0 - utility / (cfg.alpha_prr + cfg.alpha_rate)).clamp(0.0, 1.0);
    (utility, deficiency)
}

/// Minimum sidelink PRBs meeting the per-slot payload target under observed
/// PRR and SINR; `None` when the target is unreachable at any width.
pub fn min_prb_demand(prr: f64, avg_sinr: f64, cfg: &SimConfig) -> Option<u32> {
    if cfg.d_c_min_bits <= 0.0 {
        return Some(0);
    }
    if prr <= 0.0 || avg_sinr <= 0.0 {
        return None;
    }
    let per_prb =
        SC_PER_PRB as f64 * cfg.scs_hz * cfg.derived.slot_s * prr * (1.0 + avg_sinr).log2();
    Some((cfg.d_c_min_bits / per_prb).ceil() as u32)
}

/// Largest bin midpoint whose mean PRR meets the reliability target; 0 when
/// none qualifies.
pub fn max_reliable_distance(
    prr_by_bin: &[(f64, f64)],
    threshold: f64,
) -> Result<f64, CommError> {
    if prr_by_bin.is_empty() {
        return Err(CommError::EmptyPrrTable);
    }
    Ok(prr_by_bin
        .iter()
        .filter(|&&(_, prr)| prr >= threshold)
        .map(|&(d, _)| d)
        .fold(0.0, f64::max))
}
