//! Local CPU scheduling with communication priority, overflow formation, the
//! V2I offloading link, MEC strict-priority queues, the cloud path, and the
//! per-slot completion-delay / energy accounting.
//!
//! Overflow payload that exceeds one slot's uplink capacity queues
//! vehicle-side and drains FIFO; a chunk's cycles join the MEC queue in the
//! slot its last bit departs. Transmission energy is charged per slot from
//! the bits actually drained, so per-slot energy stays bounded while the
//! episode total matches the fluid `p * D / R` model.

use crate::config::SimConfig;
use std::collections::VecDeque;

/// Result of the communication-priority local CPU split for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalComputeState {
    pub v_c_cycles: f64,
    pub v_s_cycles: f64,
    pub f_c: f64,
    pub f_s: f64,
    pub ov_c: f64,
    pub ov_s: f64,
    pub t_loc_c_s: f64,
    pub t_loc_s_s: f64,
    pub e_loc_j: f64,
}

/// Split local capacity with communication first; leftovers overflow.
pub fn local_schedule(v_c_cycles: f64, v_s_cycles: f64, cfg: &SimConfig) -> LocalComputeState {
    debug_assert!(v_c_cycles >= 0.0 && v_s_cycles >= 0.0);
    let cap = cfg.derived.c_local_cycles_per_slot;
    let f_c = v_c_cycles.min(cap);
    let f_s = v_s_cycles.min((cap - f_c).max(0.0));
    let v_loc = f_c + f_s;
    let f_eff = v_loc / cfg.derived.slot_s;
    LocalComputeState {
        v_c_cycles,
        v_s_cycles,
        f_c,
        f_s,
        ov_c: (v_c_cycles - f_c).max(0.0),
        ov_s: (v_s_cycles - f_s).max(0.0),
        t_loc_c_s: f_c / cfg.f_local_hz,
        t_loc_s_s: (f_c + f_s) / cfg.f_local_hz,
        e_loc_j: cfg.kappa_dvfs * v_loc * f_eff * f_eff,
    }
}

/// Destination of an offloaded chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffloadClass {
    CommMec,
    SensMec,
    SensCloud,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct UplinkChunk {
    class: OffloadClass,
    remaining_bits: f64,
    cycles: f64,
}

/// Vehicle-side FIFO of overflow payload awaiting V2I transmission.
#[derive(Debug, Clone, Default)]
pub struct UplinkQueue {
    chunks: VecDeque<UplinkChunk>,
}

/// What one slot's drain moved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrainResult {
    pub bits_comm: f64,
    pub bits_sens: f64,
    /// Cycle payloads whose upload finished this slot, by destination.
    pub completed_mec_c: f64,
    pub completed_mec_s: f64,
    pub completed_cloud: f64,
}

impl UplinkQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn backlog_bits(&self) -> f64 {
        self.chunks.iter().map(|c| c.remaining_bits).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn push(&mut self, class: OffloadClass, bits: f64, cycles: f64) {
        if bits > 0.0 {
            self.chunks.push_back(UplinkChunk {
                class,
                remaining_bits: bits,
                cycles,
            });
        }
    }

    /// Drain up to `capacity_bits` FIFO; returns per-class movement.
    pub fn drain(&mut self, capacity_bits: f64) -> DrainResult {
        let mut left = capacity_bits;
        let mut out = DrainResult::default();
        while left > 0.0 {
            let Some(chunk) = self.chunks.front_mut() else {
                break;
            };
            let take = chunk.remaining_bits.min(left);
            chunk.remaining_bits -= take;
            left -= take;
            match chunk.class {
                OffloadClass::CommMec => out.bits_comm += take,
                OffloadClass::SensMec | OffloadClass::SensCloud => out.bits_sens += take,
            }
            if chunk.remaining_bits <= 0.0 {
                match chunk.class {
                    OffloadClass::CommMec => out.completed_mec_c += chunk.cycles,
                    OffloadClass::SensMec => out.completed_mec_s += chunk.cycles,
                    OffloadClass::SensCloud => out.completed_cloud += chunk.cycles,
                }
                self.chunks.pop_front();
            }
        }
        out
    }
}

/// Uplink SINR and rate for the active offloaders (positive backlog and at
/// least one uplink PRB). Interference sums over the other active offloaders.
pub fn offload_link(
    active: &[(usize, u32)],
    v2i_gain: &[f64],
    cfg: &SimConfig,
) -> Vec<(usize, f64, f64)> {
    let p = cfg.tx_power_w;
    let total_rx: f64 = active.iter().map(|&(i, _)| p * v2i_gain[i]).sum();
    active
        .iter()
        .map(|&(i, n_o)| {
            let bw = 12.0 * cfg.scs_hz * n_o as f64;
            let interference = total_rx - p * v2i_gain[i];
            let sinr = p * v2i_gain[i] / (interference + cfg.noise_w(bw));
            let rate = bw * (1.0 + sinr).log2();
            (i, sinr, rate)
        })
        .collect()
}

/// RSU-side strict-priority queues, in CPU cycles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MecState {
    pub l_c_cycles: f64,
    pub l_s_cycles: f64,
    pub arrived_c_total: f64,
    pub arrived_s_total: f64,
    pub served_c_total: f64,
    pub served_s_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MecSlotResult {
    pub served_c: f64,
    pub served_s: f64,
}

/// Serve the current backlog strict-priority, then enqueue this slot's
/// arrivals (they become servable next slot).
pub fn step_mec(
    mec: &mut MecState,
    arrivals_c: f64,
    arrivals_s: f64,
    cfg: &SimConfig,
) -> MecSlotResult {
    let cap = cfg.c_mec_cycles_per_slot;
    let served_c = mec.l_c_cycles.min(cap);
    let served_s = mec.l_s_cycles.min((cap - served_c).max(0.0));
    mec.l_c_cycles = (mec.l_c_cycles - served_c).max(0.0) + arrivals_c;
    mec.l_s_cycles = (mec.l_s_cycles - served_s).max(0.0) + arrivals_s;
    mec.arrived_c_total += arrivals_c;
    mec.arrived_s_total += arrivals_s;
    mec.served_c_total += served_c;
    mec.served_s_total += served_s;
    MecSlotResult { served_c, served_s }
}

/// MEC queueing-delay estimates from a start-of-slot backlog.
pub fn mec_queue_delays(l_c: f64, l_s: f64, cfg: &SimConfig) -> (f64, f64) {
    let per_cycle = cfg.derived.slot_s / cfg.c_mec_cycles_per_slot;
    (l_c * per_cycle, (l_c + l_s) * per_cycle)
}

/// Everything the per-vehicle completion/energy accounting needs for a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionInputs {
    pub local: LocalComputeState,
    pub eta_c: u8,
    pub eta_s: u8,
    /// Payload formed this slot, bits.
    pub d_off_c_bits: f64,
    pub d_off_s_bits: f64,
    /// Uplink backlog ahead of this slot's payload, bits.
    pub backlog_ahead_bits: f64,
    pub offload_sinr: f64,
    pub offload_rate_bps: f64,
    /// Transmission energy actually spent this slot, by class.
    pub e_tx_c_j: f64,
    pub e_tx_s_j: f64,
    /// MEC backlogs at slot start.
    pub mec_lc_start: f64,
    pub mec_ls_start: f64,
    pub m_s_sym: u32,
    pub n_s_prb: u32,
    pub sl_delay_s: f64,
}

/// Per-slot completion delays, energies, and the computation penalty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffloadOutcome {
    pub d_off_c_bits: f64,
    pub d_off_s_bits: f64,
    pub sinr_linear: f64,
    pub rate_bps: f64,
    pub t_tx_c_s: f64,
    pub t_tx_s_s: f64,
    pub e_tx_c_j: f64,
    pub e_tx_s_j: f64,
    pub t_rem_c_s: f64,
    pub t_rem_s_s: f64,
    pub t_comp_c_s: f64,
    pub t_comp_s_s: f64,
    pub t_e2e_c_s: f64,
    pub e_sens_j: f64,
    pub e_loc_j: f64,
    pub e_tot_j: f64,
    pub psi_comp: f64,
}

/// Assemble the slow-branch completion times, end-to-end delay, energy sum,
/// and clipped computation penalty.
pub fn completion(inp: &CompletionInputs, cfg: &SimConfig) -> OffloadOutcome {
    let fluid_tx = |bits: f64| -> f64 {
        if bits <= 0.0 {
            0.0
        } else if inp.offload_rate_bps > 0.0 {
            (inp.backlog_ahead_bits + bits) / inp.offload_rate_bps
        } else {
            f64::INFINITY
        }
    };
    let t_tx_c = fluid_tx(inp.d_off_c_bits);
    let t_tx_s = fluid_tx(inp.d_off_s_bits);
    let (t_que_c, t_que_s) = mec_queue_delays(inp.mec_lc_start, inp.mec_ls_start, cfg);
    let t_mec = |cycles: f64| cycles * cfg.derived.slot_s / cfg.c_mec_cycles_per_slot;

    let t_rem_c = if inp.eta_c == 1 && inp.d_off_c_bits > 0.0 {
        t_tx_c + t_que_c + t_mec(inp.local.ov_c)
    } else {
        0.0
    };
    let t_rem_s = if inp.d_off_s_bits > 0.0 {
        match inp.eta_s {
            1 => t_tx_s + t_que_s + t_mec(inp.local.ov_s),
            2 => t_tx_s + cfg.t_bh_s + cfg.t_cl_s,
            _ => 0.0,
        }
    } else {
        0.0
    };

    let t_comp_c = inp.local.t_loc_c_s.max(t_rem_c);
    let t_comp_s = inp.local.t_loc_s_s.max(t_rem_s);
    // Sensing waveform energy; no sensing PRBs means no waveform.
    let e_sens = if inp.n_s_prb > 0 {
        cfg.tx_power_w * inp.m_s_sym as f64 * cfg.derived.sym_s
    } else {
        0.0
    };
    let e_tot = inp.local.e_loc_j + inp.e_tx_c_j + inp.e_tx_s_j + e_sens;
    let psi = comp_penalty(t_comp_c, t_comp_s, e_tot, cfg);
    OffloadOutcome {
        d_off_c_bits: inp.d_off_c_bits,
        d_off_s_bits: inp.d_off_s_bits,
        sinr_linear: inp.offload_sinr,
        rate_bps: inp.offload_rate_bps,
        t_tx_c_s: t_tx_c,
        t_tx_s_s: t_tx_s,
        e_tx_c_j: inp.e_tx_c_j,
        e_tx_s_j: inp.e_tx_s_j,
        t_rem_c_s: t_rem_c,
        t_rem_s_s: t_rem_s,
        t_comp_c_s: t_comp_c,
        t_comp_s_s: t_comp_s,
        t_e2e_c_s: inp.sl_delay_s + t_comp_c,
        e_sens_j: e_sens,
        e_loc_j: inp.local.e_loc_j,
        e_tot_j: e_tot,
        psi_comp: psi,
    }
}

/// Computation-side penalty with per-term clipping; in [0, 1] because the
/// alpha weights sum to 1.
pub fn comp_penalty(t_comp_c_s: f64, t_comp_s_s: f64, e_tot_j: f64, cfg: &SimConfig) -> f64 {
    cfg.alpha_dc * (t_comp_c_s / cfg.delta_c_s).min(1.0)
        + cfg.alpha_ds * (t_comp_s_s / cfg.delta_s_s).min(1.0)
        + cfg.alpha_e * (e_tot_j / cfg.e_max_j_per_slot).min(1.0)
}
