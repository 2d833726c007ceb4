//! Mode-2 sensing-based semi-persistent scheduling: sensing-window occupancy
//! tracking, candidate-resource formation, the reselection-counter /
//! keep-probability lifecycle, and the feasibility mask over the factored
//! action heads.
//!
//! A resource is one subchannel in one slot offset of the RRI; its index is
//! `slot_offset * n_subchannels + subchannel`.

use crate::config::{dbm_to_w, SimConfig, SYMBOLS_PER_SLOT};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MacError {
    #[error("observation slot {got} precedes latest recorded slot {latest}")]
    OutOfOrderSlot { got: u64, latest: u64 },
}

/// One sensed occupancy record: a resource heard busy in a specific slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRecord {
    pub slot: u64,
    pub resource: u32,
    pub rsrp_w: f64,
    /// True when the occupant's control information was decoded, i.e. the
    /// reservation itself is known, not just the measured power.
    pub sci_decoded: bool,
}

/// Sliding sensing-window history for one vehicle.
#[derive(Debug, Clone, Default)]
pub struct ResourceGrid {
    records: std::collections::VecDeque<GridRecord>,
    latest_slot: Option<u64>,
}

impl ResourceGrid {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append this slot's busy markers (one per resource) and evict entries
    /// older than the sensing window.
    pub fn record_observation(
        &mut self,
        slot: u64,
        observations: &[(u32, f64, bool)],
        cfg: &SimConfig,
    ) -> Result<(), MacError> {
        if let Some(latest) = self.latest_slot {
            if slot < latest {
                return Err(MacError::OutOfOrderSlot { got: slot, latest });
            }
        }
        self.latest_slot = Some(slot);
        for &(resource, rsrp_w, sci_decoded) in observations {
            self.records.push_back(GridRecord {
                slot,
                resource,
                rsrp_w,
                sci_decoded,
            });
        }
        let horizon = slot.saturating_sub(cfg.derived.sensing_window_slots as u64 - 1);
        while let Some(front) = self.records.front() {
            if front.slot < horizon {
                self.records.pop_front();
            } else {
                break;
            }
        }
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &GridRecord> {
        self.records.iter()
    }

    pub fn latest_slot(&self) -> Option<u64> {
        self.latest_slot
    }

    /// Busy PRB-slot count over the trailing `window` slots, for the CBR.
    pub fn busy_prb_slots(&self, window: u64, cfg: &SimConfig) -> u64 {
        let Some(latest) = self.latest_slot else {
            return 0;
        };
        let from = latest.saturating_sub(window - 1);
        let thr_w = dbm_to_w(cfg.rsrp_threshold_dbm);
        self.records
            .iter()
            .filter(|r| r.slot >= from && r.rsrp_w > thr_w)
            .count() as u64
            * cfg.n_sl_prb_per_vehicle as u64
    }
}

/// Candidate reservation resources after Mode-2 exclusion. The RSRP threshold
/// is raised in 3 dB steps until at least the configured fraction of the pool
/// survives; decoded-SCI exclusions are dropped only as a last resort, so the
/// result is always nonempty.
pub fn candidate_set(grid: &ResourceGrid, cfg: &SimConfig) -> Vec<u32> {
    let n_res = cfg.derived.n_resources;
    let need = ((cfg.cand_retention_min_frac * n_res as f64).ceil() as usize).max(1);
    let t_sel_slots = (cfg.t_sel_ms * (1u32 << cfg.numerology_mu)) as u64;
    let latest = grid.latest_slot().unwrap_or(0);
    let sel_from = latest.saturating_sub(t_sel_slots.saturating_sub(1));

    let mut sci_excluded = vec![false; n_res as usize];
    let mut max_rsrp = vec![0.0f64; n_res as usize];
    for r in grid.records() {
        let idx = r.resource as usize;
        if idx >= n_res as usize {
            continue;
        }
        if r.sci_decoded && r.slot >= sel_from {
            sci_excluded[idx] = true;
        }
        if r.rsrp_w > max_rsrp[idx] {
            max_rsrp[idx] = r.rsrp_w;
        }
    }
    let overall_max = max_rsrp.iter().cloned().fold(0.0f64, f64::max);
    let step = crate::config::db_to_lin(cfg.cand_threshold_step_db);
    let mut thr_w = dbm_to_w(cfg.rsrp_threshold_dbm);
    loop {
        let cands: Vec<u32> = (0..n_res)
            .filter(|&r| {
                let i = r as usize;
                !sci_excluded[i] && max_rsrp[i] <= thr_w
            })
            .collect();
        if cands.len() >= need {
            return cands;
        }
        if thr_w > overall_max {
            // RSRP exclusions exhausted; only SCI reservations remain.
            return if cands.is_empty() {
                (0..n_res).collect()
            } else {
                cands
            };
        }
        thr_w *= step;
    }
}

/// Live SB-SPS reservation of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reservation {
    pub resource: u32,
    /// Index into `cfg.rc_set` chosen at (re)selection.
    pub rc_idx: usize,
    pub rc_remaining: u32,
    /// Index into `cfg.keep_prob_set`.
    pub keep_idx: usize,
}

impl Reservation {
    pub fn rc_initial(&self, cfg: &SimConfig) -> u32 {
        cfg.rc_set[self.rc_idx]
    }

    pub fn keep_prob(&self, cfg: &SimConfig) -> f64 {
        cfg.keep_prob_set[self.keep_idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReselectionEvent {
    /// Counter still running; reservation unchanged.
    None,
    /// Counter expired and the keep draw retained the resource; RC redrawn.
    Keep,
    /// Counter expired and the resource must be reselected by the policy.
    Reselect,
}

/// Advance the reselection counter at an RRI boundary.
pub fn tick_reservation(
    res: &mut Reservation,
    cfg: &SimConfig,
    rng: &mut ChaCha12Rng,
) -> ReselectionEvent {
    res.rc_remaining -= 1;
    if res.rc_remaining > 0 {
        return ReselectionEvent::None;
    }
    let u: f64 = rng.random();
    if u < res.keep_prob(cfg) {
        let idx = rng.random_range(0..cfg.rc_set.len());
        res.rc_idx = idx;
        res.rc_remaining = cfg.rc_set[idx];
        ReselectionEvent::Keep
    } else {
        ReselectionEvent::Reselect
    }
}

/// True when the vehicle decoded another reservation on its own resource
/// within the last RRI, forcing immediate reselection.
pub fn reevaluation_triggered(grid: &ResourceGrid, res: &Reservation, cfg: &SimConfig) -> bool {
    let Some(latest) = grid.latest_slot() else {
        return false;
    };
    let from = latest.saturating_sub(cfg.derived.slots_per_epoch as u64 - 1);
    grid.records()
        .any(|r| r.sci_decoded && r.resource == res.resource && r.slot >= from)
}

/// Values frozen into the MAC heads when no reselection is triggered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenMac {
    pub resource: u32,
    pub rc_idx: usize,
    pub keep_idx: usize,
}

/// Feasibility mask over the nine factored action heads. All heads are
/// plain admissibility vectors except the communication-PRB head, whose
/// admissible range depends on the sampled sensing-PRB head (the shared
/// sidelink budget couples the two).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMask {
    pub resource: Vec<bool>,
    pub rc: Vec<bool>,
    pub keep: Vec<bool>,
    pub n_s: Vec<bool>,
    pub n_o: Vec<bool>,
    pub m_s: Vec<bool>,
    pub eta_c: Vec<bool>,
    pub eta_s: Vec<bool>,
    /// Sidelink PRB budget: n_s + n_c must stay within it.
    pub n_sl: u32,
    /// When set, the resource/RC/keep heads are forced to these values and
    /// excluded from the policy gradient.
    pub frozen: Option<FrozenMac>,
}

impl ActionMask {
    /// Admissible communication-PRB head entries given a sensing-PRB choice.
    pub fn n_c_mask(&self, n_s: u32) -> Vec<bool> {
        (0..=self.n_sl).map(|c| n_s + c <= self.n_sl).collect()
    }

    pub fn head_sizes(cfg: &SimConfig) -> [usize; 9] {
        [
            cfg.derived.n_resources as usize,
            cfg.rc_set.len(),
            cfg.keep_prob_set.len(),
            cfg.n_sl_prb_per_vehicle as usize + 1,
            cfg.n_sl_prb_per_vehicle as usize + 1,
            cfg.n_o_max_prb as usize + 1,
            SYMBOLS_PER_SLOT as usize,
            2,
            3,
        ]
    }

    /// Per-head admissibility in head order; the communication head needs
    /// the sampled sensing head via [`Self::n_c_mask`].
    pub fn head_mask(&self, head: usize, n_s_sampled: Option<u32>) -> Vec<bool> {
        match head {
            0 => self.resource.clone(),
            1 => self.rc.clone(),
            2 => self.keep.clone(),
            3 => self.n_s.clone(),
            4 => self.n_c_mask(n_s_sampled.expect("n_c mask needs sampled n_s")),
            5 => self.n_o.clone(),
            6 => self.m_s.clone(),
            7 => self.eta_c.clone(),
            8 => self.eta_s.clone(),
            _ => panic!("head index out of range"),
        }
    }

    /// Joint admissibility of raw head indices.
    pub fn admits(&self, idx: &[usize; 9]) -> bool {
        let within = idx[0] < self.resource.len()
            && idx[1] < self.rc.len()
            && idx[2] < self.keep.len()
            && idx[3] < self.n_s.len()
            && idx[4] < self.n_s.len()
            && idx[5] < self.n_o.len()
            && idx[6] < self.m_s.len()
            && idx[7] < self.eta_c.len()
            && idx[8] < self.eta_s.len();
        if !within {
            return false;
        }
        self.resource[idx[0]]
            && self.rc[idx[1]]
            && self.keep[idx[2]]
            && self.n_s[idx[3]]
            && idx[3] + idx[4] <= self.n_sl as usize
            && self.n_o[idx[5]]
            && self.m_s[idx[6]]
            && self.eta_c[idx[7]]
            && self.eta_s[idx[8]]
    }
}

/// Build the epoch mask from the candidate set and the reservation state.
/// When `frozen` is given the MAC heads admit exactly the current values.
pub fn build_mask(
    cand_set: &[u32],
    frozen: Option<FrozenMac>,
    cfg: &SimConfig,
) -> ActionMask {
    let n_res = cfg.derived.n_resources as usize;
    let mut resource = vec![false; n_res];
    let mut rc = vec![false; cfg.rc_set.len()];
    let mut keep = vec![false; cfg.keep_prob_set.len()];
    match frozen {
        Some(f) => {
            resource[f.resource as usize] = true;
            rc[f.rc_idx] = true;
            keep[f.keep_idx] = true;
        }
        None => {
            for &r in cand_set {
                resource[r as usize] = true;
            }
            rc.fill(true);
            keep.fill(true);
        }
    }
    let n_sl = cfg.n_sl_prb_per_vehicle;
    ActionMask {
        resource,
        rc,
        keep,
        n_s: vec![true; n_sl as usize + 1],
        n_o: vec![true; cfg.n_o_max_prb as usize + 1],
        m_s: vec![true; SYMBOLS_PER_SLOT as usize],
        eta_c: vec![true; 2],
        eta_s: vec![true; 3],
        n_sl,
        frozen,
    }
}
