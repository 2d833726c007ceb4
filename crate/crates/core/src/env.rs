//! The cooperative partially observable Markov game: per-epoch action
//! application, the slot-level ISCC dynamics loop, observation/action codecs,
//! the shared reward, and per-epoch diagnostics.
//!
//! Slot-phase order inside an epoch is load-bearing and pinned by tests:
//! per-vehicle sensing, arrivals, transmission outcomes, queue update,
//! utility, communication workload, local schedule, overflow, uplink drain;
//! then the MEC strict-priority update (same-slot uploads join next slot);
//! then per-vehicle completion delays, energy, and cost.

use crate::comm::{self, CommState, SlotTransmitter, TxOutcome};
use crate::compute::{
    completion, local_schedule, offload_link, step_mec, CompletionInputs, MecState,
    OffloadClass, UplinkQueue,
};
use crate::config::SimConfig;
use crate::mobility::{ChannelModel, World};
use crate::rng::RngStreams;
use crate::sbsps::{
    self, build_mask, candidate_set, tick_reservation, ActionMask, FrozenMac, Reservation,
    ReselectionEvent, ResourceGrid,
};
use crate::sensing::{self, SensingAlloc};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("joint action has {got} entries, expected {expected}")]
    WrongActionCount { got: usize, expected: usize },
    #[error("vehicle {vehicle}: action {detail} violates the feasibility mask")]
    InfeasibleAction { vehicle: usize, detail: String },
}

/// Number of local observation features.
pub const OBS_DIM: usize = 12;

pub const OBS_FIELDS: [&str; OBS_DIM] = [
    "queue_bits",
    "v_s_cycles",
    "ov_c",
    "ov_s",
    "cbr",
    "prr",
    "rate_eff",
    "avg_sinr",
    "rc_remaining",
    "v2i_gain",
    "mec_backlog_level_c",
    "mec_backlog_level_s",
];

/// Raw (un-normalized) local observation of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub raw: [f64; OBS_DIM],
}

/// Critic-side global state: all observations plus raw MEC backlogs.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub obs: Vec<Observation>,
    pub mec_lc: f64,
    pub mec_ls: f64,
}

impl GlobalState {
    pub fn dim(n_agents: usize) -> usize {
        n_agents * OBS_DIM + 2
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.obs.len()));
        for o in &self.obs {
            v.extend_from_slice(&o.raw);
        }
        v.push(self.mec_lc);
        v.push(self.mec_ls);
        v
    }
}

/// Raw per-head categorical indices as sampled by a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionIndices(pub [usize; 9]);

/// Decoded epoch decision of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionVector {
    pub resource: u32,
    pub rc_idx: usize,
    pub keep_idx: usize,
    pub n_s: u32,
    pub n_c: u32,
    pub n_o: u32,
    pub m_s: u32,
    pub eta_c: u8,
    pub eta_s: u8,
}

impl ActionVector {
    /// Pure index-to-value mapping; no feasibility check.
    pub fn from_indices(idx: &ActionIndices, _cfg: &SimConfig) -> ActionVector {
        let i = &idx.0;
        ActionVector {
            resource: i[0] as u32,
            rc_idx: i[1],
            keep_idx: i[2],
            n_s: i[3] as u32,
            n_c: i[4] as u32,
            n_o: i[5] as u32,
            m_s: i[6] as u32 + 1,
            eta_c: i[7] as u8,
            eta_s: i[8] as u8,
        }
    }

    pub fn to_indices(&self) -> ActionIndices {
        ActionIndices([
            self.resource as usize,
            self.rc_idx,
            self.keep_idx,
            self.n_s as usize,
            self.n_c as usize,
            self.n_o as usize,
            self.m_s as usize - 1,
            self.eta_c as usize,
            self.eta_s as usize,
        ])
    }
}

/// Decode sampled indices into MAC/compute settings, enforcing the mask.
pub fn decode_action(
    idx: &ActionIndices,
    mask: &ActionMask,
    cfg: &SimConfig,
    vehicle: usize,
) -> Result<ActionVector, EnvError> {
    if !mask.admits(&idx.0) {
        return Err(EnvError::InfeasibleAction {
            vehicle,
            detail: format!("{:?}", idx.0),
        });
    }
    Ok(ActionVector::from_indices(idx, cfg))
}

/// Slot-wise cross-layer cost; all components must arrive already clipped.
pub fn cost(eps_sens: f64, phi_comm: f64, psi_comp: f64, cfg: &SimConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&eps_sens), "eps {eps_sens}");
    debug_assert!((0.0..=1.0).contains(&phi_comm), "phi {phi_comm}");
    debug_assert!((0.0..=1.0).contains(&psi_comp), "psi {psi_comp}");
    cfg.omega_s * eps_sens + cfg.omega_c * phi_comm + cfg.omega_comp * psi_comp
}

/// Per-slot per-vehicle record powering CSV export and KPI aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub vehicle: usize,
    pub transmitted: bool,
    pub prr: f64,
    pub rate_bps: f64,
    pub rate_eff_bps: f64,
    pub cbr: f64,
    pub queue_bits: f64,
    pub sl_delay_s: f64,
    pub ov_c: f64,
    pub ov_s: f64,
    pub eta_c: u8,
    pub eta_s: u8,
    pub t_comp_c_s: f64,
    pub t_comp_s_s: f64,
    pub t_e2e_c_s: f64,
    pub e_tot_j: f64,
    pub mec_lc: f64,
    pub mec_ls: f64,
    pub detected: u32,
    /// Mean over detected targets with finite bounds; NaN when none.
    pub crlb_range_m2: f64,
    pub crlb_vel_m2s2: f64,
    pub cost: f64,
}

/// Per-slot MEC audit row: start-of-slot backlogs, service, arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MecSlotLog {
    pub lc_start: f64,
    pub ls_start: f64,
    pub served_c: f64,
    pub served_s: f64,
    pub arr_c: f64,
    pub arr_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacEventRecord {
    pub epoch: u32,
    pub vehicle: usize,
    pub resource: u32,
    pub rc: u32,
    pub keep_prob: f64,
    pub event: ReselectionEvent,
}

/// Everything observable about one epoch.
#[derive(Debug, Clone)]
pub struct EpochDiagnostics {
    pub episode: u64,
    pub epoch: u32,
    pub reward: f64,
    pub mean_prr: f64,
    pub mean_cbr: f64,
    /// Mean root-CRLB over finite detected-target samples, if any.
    pub mean_crlb_range_m: Option<f64>,
    pub mean_crlb_vel_mps: Option<f64>,
    pub mec_lc: f64,
    pub mec_ls: f64,
    pub mean_e2e_ms: f64,
    pub mean_energy_mj: f64,
    pub c7_violations: u64,
    pub c8_violations: u64,
    pub c9_violations: u64,
    pub slots: Vec<SlotRecord>,
    /// (tx-rx distance, decoded) pairs for distance-binned PRR.
    pub rx_pairs: Vec<(f64, bool)>,
    /// (target range, range CRLB var, velocity CRLB var) per detected target.
    pub target_samples: Vec<(f64, f64, f64)>,
    pub mac_events: Vec<MacEventRecord>,
    pub mec_slots: Vec<MecSlotLog>,
    /// (slot, i, j, v2v gain dB) rows, populated only when channel tracing
    /// is enabled.
    pub channel_rows: Vec<(u64, usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct EpochResult {
    pub reward: f64,
    pub observations: Vec<Observation>,
    pub global_state: GlobalState,
    pub masks: Vec<ActionMask>,
    pub diag: EpochDiagnostics,
}

/// Vehicle-local quantities exposed to non-learned policies: what the
/// vehicle's own radar, uplink measurement, and the RSU broadcast provide.
#[derive(Debug, Clone, Default)]
pub struct LocalView {
    pub neighbor_ranges: Vec<f64>,
    pub v2i_gain: f64,
    pub mec_level_c: f64,
    pub mec_level_s: f64,
}

/// One simulator instance; owns all per-episode state.
pub struct IsccEnv {
    pub cfg: SimConfig,
    streams: RngStreams,
    episode: u64,
    epoch_k: u32,
    slot: u64,
    world: World,
    channels: ChannelModel,
    grids: Vec<ResourceGrid>,
    reservations: Vec<Reservation>,
    comm: Vec<CommState>,
    uplinks: Vec<UplinkQueue>,
    mec: MecState,
    applied: Vec<ActionVector>,
    masks: Vec<ActionMask>,
    /// Last-slot values surfaced in the next observation.
    last_ov: Vec<(f64, f64)>,
    last_vs: Vec<f64>,
    rng_traffic: Vec<ChaCha12Rng>,
    rng_mac: Vec<ChaCha12Rng>,
    rng_fading: ChaCha12Rng,
    /// When set, this many vehicles inject fixed synthetic sensing overflow
    /// straight into the MEC queue each slot (offloading-load sweeps).
    pub forced_offloaders: Option<u32>,
    /// Collect per-slot V2V gains into the diagnostics (debug traces).
    pub trace_channels: bool,
}

impl IsccEnv {
    pub fn new(cfg: SimConfig) -> IsccEnv {
        assert!(cfg.derived.n_vehicles > 0, "config must be finalized");
        let streams = RngStreams::new(cfg.seed);
        let n = cfg.derived.n_vehicles as usize;
        let mut env = IsccEnv {
            streams,
            episode: 0,
            epoch_k: 0,
            slot: 0,
            world: World {
                vehicles: Vec::new(),
                road_length_m: cfg.derived.road_length_m,
                rsu_position_m: cfg.derived.road_length_m / 2.0,
                rsu_lateral_offset_m: cfg.rsu_lateral_offset_m,
            },
            channels: ChannelModel::new(n),
            grids: Vec::new(),
            reservations: Vec::new(),
            comm: Vec::new(),
            uplinks: Vec::new(),
            mec: MecState::default(),
            applied: Vec::new(),
            masks: Vec::new(),
            last_ov: Vec::new(),
            last_vs: Vec::new(),
            rng_traffic: Vec::new(),
            rng_mac: Vec::new(),
            rng_fading: streams.stream("fading", 0).unwrap(),
            forced_offloaders: None,
            trace_channels: false,
            cfg,
        };
        env.reset(0);
        env
    }

    pub fn n_agents(&self) -> usize {
        self.cfg.derived.n_vehicles as usize
    }

    pub fn mec(&self) -> &MecState {
        &self.mec
    }

    pub fn comm_states(&self) -> &[CommState] {
        &self.comm
    }

    pub fn current_masks(&self) -> &[ActionMask] {
        &self.masks
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn local_views(&self) -> Vec<LocalView> {
        let snap = self.channels.snapshot();
        (0..self.n_agents())
            .map(|i| LocalView {
                neighbor_ranges: (0..self.n_agents())
                    .filter(|&j| j != i)
                    .map(|j| self.world.distance(i, j))
                    .collect(),
                v2i_gain: snap.v2i(i),
                mec_level_c: self.backlog_level(self.mec.l_c_cycles),
                mec_level_s: self.backlog_level(self.mec.l_s_cycles),
            })
            .collect()
    }

    /// Reinitialize mobility, channels, queues, MEC backlog, and SB-SPS
    /// reservations for a fresh episode.
    pub fn reset(&mut self, episode: u64) -> (Vec<Observation>, GlobalState, Vec<ActionMask>) {
        let cfg = &self.cfg;
        let n = cfg.derived.n_vehicles as usize;
        self.episode = episode;
        self.epoch_k = 0;
        self.slot = 0;
        let mut rng_mob = self
            .streams
            .stream_salted("mobility", 0, episode)
            .unwrap();
        self.world = World::new(cfg, &mut rng_mob);
        self.channels = ChannelModel::new(n);
        self.rng_fading = self.streams.stream_salted("fading", 0, episode).unwrap();
        self.channels.sample_epoch(&self.world, cfg, &mut self.rng_fading);
        self.channels.sample_slot(&self.world, cfg, &mut self.rng_fading);
        self.grids = (0..n).map(|_| ResourceGrid::new()).collect();
        self.comm = vec![CommState::default(); n];
        self.uplinks = (0..n).map(|_| UplinkQueue::new()).collect();
        self.mec = MecState::default();
        self.last_ov = vec![(0.0, 0.0); n];
        self.last_vs = vec![0.0; n];
        self.rng_traffic = (0..n)
            .map(|i| self.streams.stream_salted("traffic", i as u64, episode).unwrap())
            .collect();
        self.rng_mac = (0..n)
            .map(|i| self.streams.stream_salted("mac", i as u64, episode).unwrap())
            .collect();
        self.reservations = (0..n)
            .map(|i| {
                let rng = &mut self.rng_mac[i];
                let resource = rng.random_range(0..cfg.derived.n_resources);
                let rc_idx = rng.random_range(0..cfg.rc_set.len());
                let keep_idx = rng.random_range(0..cfg.keep_prob_set.len());
                Reservation {
                    resource,
                    rc_idx,
                    rc_remaining: cfg.rc_set[rc_idx],
                    keep_idx,
                }
            })
            .collect();
        self.applied = self
            .reservations
            .iter()
            .map(|r| ActionVector {
                resource: r.resource,
                rc_idx: r.rc_idx,
                keep_idx: r.keep_idx,
                n_s: 0,
                n_c: 0,
                n_o: 0,
                m_s: 1,
                eta_c: 0,
                eta_s: 0,
            })
            .collect();
        // Fresh reservations never start with a reselection trigger.
        self.masks = (0..n)
            .map(|i| {
                let r = &self.reservations[i];
                build_mask(
                    &[],
                    Some(FrozenMac {
                        resource: r.resource,
                        rc_idx: r.rc_idx,
                        keep_idx: r.keep_idx,
                    }),
                    cfg,
                )
            })
            .collect();
        let obs = self.build_observations();
        let gs = self.global_state(&obs);
        (obs, gs, self.masks.clone())
    }

    fn backlog_level(&self, cycles: f64) -> f64 {
        let ratio = cycles / self.cfg.c_mec_cycles_per_slot;
        if ratio < 0.5 {
            0.0
        } else if ratio < 2.0 {
            1.0
        } else {
            2.0
        }
    }

    fn build_observations(&self) -> Vec<Observation> {
        let snap = self.channels.snapshot();
        (0..self.n_agents())
            .map(|i| {
                let c = &self.comm[i];
                Observation {
                    raw: [
                        c.queue_bits,
                        self.last_vs[i],
                        self.last_ov[i].0,
                        self.last_ov[i].1,
                        c.cbr,
                        c.prr_ema,
                        c.rate_eff_ema,
                        c.avg_sinr_ema,
                        self.reservations[i].rc_remaining as f64,
                        snap.v2i(i),
                        self.backlog_level(self.mec.l_c_cycles),
                        self.backlog_level(self.mec.l_s_cycles),
                    ],
                }
            })
            .collect()
    }

    fn global_state(&self, obs: &[Observation]) -> GlobalState {
        GlobalState {
            obs: obs.to_vec(),
            mec_lc: self.mec.l_c_cycles,
            mec_ls: self.mec.l_s_cycles,
        }
    }

    /// Execute one control epoch. Actions must be feasible under the masks
    /// returned by the previous call (infeasibility is a caller bug).
    pub fn step_epoch(&mut self, actions: &[ActionIndices]) -> Result<EpochResult, EnvError> {
        let n = self.n_agents();
        if actions.len() != n {
            return Err(EnvError::WrongActionCount {
                got: actions.len(),
                expected: n,
            });
        }
        // Apply epoch decisions: install reselected reservations, keep the
        // frozen ones, and adopt the cross-layer split.
        for i in 0..n {
            let act = decode_action(&actions[i], &self.masks[i], &self.cfg, i)?;
            if self.masks[i].frozen.is_none() {
                self.reservations[i] = Reservation {
                    resource: act.resource,
                    rc_idx: act.rc_idx,
                    rc_remaining: self.cfg.rc_set[act.rc_idx],
                    keep_idx: act.keep_idx,
                };
            }
            self.applied[i] = act;
        }

        let slots = self.cfg.derived.slots_per_epoch as u64;
        let mut cost_sum = 0.0;
        let mut diag = EpochDiagnostics {
            episode: self.episode,
            epoch: self.epoch_k,
            reward: 0.0,
            mean_prr: 0.0,
            mean_cbr: 0.0,
            mean_crlb_range_m: None,
            mean_crlb_vel_mps: None,
            mec_lc: 0.0,
            mec_ls: 0.0,
            mean_e2e_ms: 0.0,
            mean_energy_mj: 0.0,
            c7_violations: 0,
            c8_violations: 0,
            c9_violations: 0,
            slots: Vec::with_capacity((slots as usize) * n),
            rx_pairs: Vec::new(),
            target_samples: Vec::new(),
            mac_events: Vec::new(),
            mec_slots: Vec::new(),
            channel_rows: Vec::new(),
        };

        for s in 0..slots {
            self.world.advance(self.cfg.derived.slot_s);
            if s == 0 {
                self.channels
                    .sample_epoch(&self.world, &self.cfg, &mut self.rng_fading);
            }
            self.channels
                .sample_slot(&self.world, &self.cfg, &mut self.rng_fading);
            self.run_slot(&mut cost_sum, &mut diag);
            self.slot += 1;
        }

        let reward = -cost_sum / (n as f64 * slots as f64);
        diag.reward = reward;
        self.finish_epoch_diag(&mut diag);

        // MAC lifecycle at the RRI boundary decides next epoch's freeze.
        let cfg_clone = self.cfg.clone();
        let mut masks = Vec::with_capacity(n);
        for i in 0..n {
            let reeval = sbsps::reevaluation_triggered(&self.grids[i], &self.reservations[i], &cfg_clone);
            let event = if reeval {
                ReselectionEvent::Reselect
            } else {
                tick_reservation(&mut self.reservations[i], &cfg_clone, &mut self.rng_mac[i])
            };
            let r = &self.reservations[i];
            diag.mac_events.push(MacEventRecord {
                epoch: self.epoch_k,
                vehicle: i,
                resource: r.resource,
                rc: r.rc_remaining,
                keep_prob: r.keep_prob(&cfg_clone),
                event,
            });
            let mask = match event {
                ReselectionEvent::Reselect => {
                    let cands = candidate_set(&self.grids[i], &cfg_clone);
                    build_mask(&cands, None, &cfg_clone)
                }
                _ => build_mask(
                    &[],
                    Some(FrozenMac {
                        resource: r.resource,
                        rc_idx: r.rc_idx,
                        keep_idx: r.keep_idx,
                    }),
                    &cfg_clone,
                ),
            };
            masks.push(mask);
        }
        self.masks = masks;
        self.epoch_k += 1;

        let observations = self.build_observations();
        let global_state = self.global_state(&observations);
        Ok(EpochResult {
            reward,
            observations,
            global_state,
            masks: self.masks.clone(),
            diag,
        })
    }

    fn run_slot(&mut self, cost_sum: &mut f64, diag: &mut EpochDiagnostics) {
        let cfg = self.cfg.clone();
        let n = self.n_agents();
        let slot_in_rri = self.slot % cfg.derived.slots_per_epoch as u64;
        let snap = self.channels.snapshot().clone();
        let mec_lc_start = self.mec.l_c_cycles;
        let mec_ls_start = self.mec.l_s_cycles;
        if self.trace_channels {
            for i in 0..n {
                for j in (i + 1)..n {
                    diag.channel_rows.push((
                        self.slot,
                        i,
                        j,
                        crate::config::lin_to_db(snap.v2v(i, j)),
                    ));
                }
            }
        }

        // Transmitters this slot: reserved offset matches, queue nonempty,
        // and a nonzero communication allocation.
        let txs: Vec<SlotTransmitter> = (0..n)
            .filter(|&i| {
                let r = self.reservations[i].resource;
                (r / cfg.derived.n_subchannels) as u64 == slot_in_rri
                    && self.comm[i].queue_bits > 0.0
                    && self.applied[i].n_c > 0
            })
            .map(|i| SlotTransmitter {
                vehicle: i,
                resource: self.reservations[i].resource,
                n_c_prb: self.applied[i].n_c,
            })
            .collect();
        let sinr = comm::sinr_matrix(&txs, n, &snap, &cfg);

        let mut sens_reports = Vec::with_capacity(n);
        let mut outcomes: Vec<TxOutcome> = Vec::with_capacity(n);
        let mut locals = Vec::with_capacity(n);
        let mut formed: Vec<(f64, f64, f64)> = Vec::with_capacity(n); // (d_off_c, d_off_s, backlog_ahead)
        let mut mec_arr_c = 0.0;
        let mut mec_arr_s = 0.0;

        for i in 0..n {
            // Sensing over every other vehicle as a radar target.
            let alloc = SensingAlloc::new(self.applied[i].n_s, self.applied[i].m_s, cfg.tx_power_w)
                .expect("mask keeps m_s in range");
            let echoes: Vec<_> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let range = self.world.distance(i, j).max(1.0);
                    sensing::target_echo(j, range, self.world.range_rate(i, j), &alloc, &cfg)
                        .expect("clamped range is positive")
                })
                .collect();
            let report = sensing::build_report(&echoes, &alloc, &cfg);
            for t in &report.detected {
                diag.target_samples
                    .push((t.range_m, t.crlb_range_m2, t.crlb_vel_m2s2));
            }

            // Arrivals, transmission outcome, queue, utility.
            let arrival_bits = comm::arrivals(&mut self.rng_traffic[i], &cfg);
            let outcome = match txs.iter().position(|t| t.vehicle == i) {
                Some(ti) => {
                    let receivers: Vec<(usize, f64)> = (0..n)
                        .filter(|&j| j != i)
                        .filter_map(|j| {
                            let d = self.world.distance(i, j);
                            (d <= cfg.awareness_range_m).then_some((j, d))
                        })
                        .collect();
                    comm::tx_outcome(
                        &sinr[ti],
                        receivers,
                        self.applied[i].n_c,
                        self.comm[i].queue_bits,
                        &cfg,
                    )
                }
                None => TxOutcome::idle(self.comm[i].queue_bits, &cfg),
            };
            comm::update_queue(&mut self.comm[i], outcome.delivered_bits, arrival_bits);
            if outcome.transmitted {
                let a = cfg.ema_coeff;
                let c = &mut self.comm[i];
                c.prr_ema += a * (outcome.prr - c.prr_ema);
                c.rate_eff_ema += a * (outcome.rate_eff_bps - c.rate_eff_ema);
                c.avg_sinr_ema += a * (outcome.avg_sinr - c.avg_sinr_ema);
                for (&(_, dist), &dec) in outcome.receivers.iter().zip(&outcome.decode) {
                    diag.rx_pairs.push((dist, dec));
                }
            }

            // Communication processing workload from the admitted traffic,
            // local split, then overflow routed by the eta flags.
            let v_c = cfg.kappa_c_cycles_per_bit * arrival_bits as f64;
            let local = local_schedule(v_c, report.workload_cycles, &cfg);
            let backlog_ahead = self.uplinks[i].backlog_bits();
            let mut d_off_c = 0.0;
            let mut d_off_s = 0.0;
            if self.applied[i].eta_c == 1 && local.ov_c > 0.0 {
                d_off_c = cfg.xi_c_bits_per_cycle * local.ov_c;
                self.uplinks[i].push(OffloadClass::CommMec, d_off_c, local.ov_c);
            }
            if local.ov_s > 0.0 {
                match self.applied[i].eta_s {
                    1 => {
                        d_off_s = cfg.xi_s_bits_per_cycle * local.ov_s;
                        self.uplinks[i].push(OffloadClass::SensMec, d_off_s, local.ov_s);
                    }
                    2 => {
                        d_off_s = cfg.xi_s_bits_per_cycle * local.ov_s;
                        self.uplinks[i].push(OffloadClass::SensCloud, d_off_s, local.ov_s);
                    }
                    _ => {}
                }
            }
            self.last_ov[i] = (local.ov_c, local.ov_s);
            self.last_vs[i] = report.workload_cycles;
            formed.push((d_off_c, d_off_s, backlog_ahead));
            locals.push(local);
            sens_reports.push(report);
            outcomes.push(outcome);
        }

        // V2I uplink: shared-band SINR over the active offloaders, FIFO
        // drain, per-class transmit energy from the bits actually moved.
        let active: Vec<(usize, u32)> = (0..n)
            .filter(|&i| !self.uplinks[i].is_empty() && self.applied[i].n_o > 0)
            .map(|i| (i, self.applied[i].n_o))
            .collect();
        let link = offload_link(&active, &snap_v2i(&snap, n), &cfg);
        let mut rates = vec![(0.0f64, 0.0f64); n];
        let mut etx = vec![(0.0f64, 0.0f64); n];
        for &(i, sinr_i, rate_i) in &link {
            rates[i] = (sinr_i, rate_i);
            let drained = self.uplinks[i].drain(rate_i * cfg.derived.slot_s);
            if rate_i > 0.0 {
                etx[i] = (
                    cfg.tx_power_w * drained.bits_comm / rate_i,
                    cfg.tx_power_w * drained.bits_sens / rate_i,
                );
            }
            mec_arr_c += drained.completed_mec_c;
            mec_arr_s += drained.completed_mec_s;
        }

        // Synthetic offload injection for the MEC-load sweeps.
        if let Some(k) = self.forced_offloaders {
            mec_arr_s += (k.min(n as u32)) as f64 * cfg.forced_offload_synth_cycles;
        }

        let mec_res = step_mec(&mut self.mec, mec_arr_c, mec_arr_s, &cfg);
        diag.mec_slots.push(MecSlotLog {
            lc_start: mec_lc_start,
            ls_start: mec_ls_start,
            served_c: mec_res.served_c,
            served_s: mec_res.served_s,
            arr_c: mec_arr_c,
            arr_s: mec_arr_s,
        });

        // Completion delays, energy, penalty, and the slot cost.
        for i in 0..n {
            let inp = CompletionInputs {
                local: locals[i],
                eta_c: self.applied[i].eta_c,
                eta_s: self.applied[i].eta_s,
                d_off_c_bits: formed[i].0,
                d_off_s_bits: formed[i].1,
                backlog_ahead_bits: formed[i].2,
                offload_sinr: rates[i].0,
                offload_rate_bps: rates[i].1,
                e_tx_c_j: etx[i].0,
                e_tx_s_j: etx[i].1,
                mec_lc_start,
                mec_ls_start,
                m_s_sym: self.applied[i].m_s,
                n_s_prb: self.applied[i].n_s,
                sl_delay_s: outcomes[i].sl_delay_s,
            };
            let off = completion(&inp, &cfg);
            let eps = sens_reports[i].normalized_penalty(&cfg);
            let (_, phi) = comm::comm_utility(outcomes[i].prr, outcomes[i].rate_eff_bps, &cfg);
            let slot_cost = cost(eps, phi, off.psi_comp, &cfg);
            *cost_sum += slot_cost;
            if off.t_e2e_c_s > cfg.delta_c_s {
                diag.c7_violations += 1;
            }
            if off.t_comp_s_s > cfg.delta_s_s {
                diag.c8_violations += 1;
            }
            if off.e_tot_j > cfg.e_max_j_per_slot {
                diag.c9_violations += 1;
            }

            let finite_mean = |f: fn(&(f64, f64, f64)) -> f64, rep: &sensing::SensingReport| {
                let vals: Vec<f64> = rep
                    .detected
                    .iter()
                    .map(|t| (t.range_m, t.crlb_range_m2, t.crlb_vel_m2s2))
                    .filter(|t| f(t).is_finite())
                    .map(|t| f(&t))
                    .collect();
                if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            };
            diag.slots.push(SlotRecord {
                slot: self.slot,
                vehicle: i,
                transmitted: outcomes[i].transmitted,
                prr: outcomes[i].prr,
                rate_bps: outcomes[i].rate_bps,
                rate_eff_bps: outcomes[i].rate_eff_bps,
                cbr: self.comm[i].cbr,
                queue_bits: self.comm[i].queue_bits,
                sl_delay_s: outcomes[i].sl_delay_s,
                ov_c: locals[i].ov_c,
                ov_s: locals[i].ov_s,
                eta_c: self.applied[i].eta_c,
                eta_s: self.applied[i].eta_s,
                t_comp_c_s: off.t_comp_c_s,
                t_comp_s_s: off.t_comp_s_s,
                t_e2e_c_s: off.t_e2e_c_s,
                e_tot_j: off.e_tot_j,
                mec_lc: mec_lc_start,
                mec_ls: mec_ls_start,
                detected: sens_reports[i].detected.len() as u32,
                crlb_range_m2: finite_mean(|t| t.1, &sens_reports[i]),
                crlb_vel_m2s2: finite_mean(|t| t.2, &sens_reports[i]),
                cost: slot_cost,
            });
        }

        // Sensing-window bookkeeping: non-transmitting vehicles record the
        // busy resources they heard (half-duplex blindness for transmitters).
        for i in 0..n {
            if txs.iter().any(|t| t.vehicle == i) {
                continue;
            }
            let mut obs: Vec<(u32, f64, bool)> = Vec::new();
            let mut by_resource: std::collections::BTreeMap<u32, (f64, bool)> =
                std::collections::BTreeMap::new();
            for (ti, t) in txs.iter().enumerate() {
                let rx_power = cfg.tx_power_w * snap.v2v(t.vehicle, i);
                let decoded = sinr[ti][i] >= crate::config::db_to_lin(cfg.snr_decode_threshold_db);
                let e = by_resource.entry(t.resource).or_insert((0.0, false));
                e.0 += rx_power;
                e.1 |= decoded;
            }
            for (r, (p, sci)) in by_resource {
                obs.push((r, p, sci));
            }
            self.grids[i]
                .record_observation(self.slot, &obs, &cfg)
                .expect("slots are monotone");
            self.comm[i].cbr = comm::cbr(&self.grids[i], &cfg);
        }
    }

    fn finish_epoch_diag(&self, diag: &mut EpochDiagnostics) {
        let tx: Vec<&SlotRecord> = diag.slots.iter().filter(|r| r.transmitted).collect();
        diag.mean_prr = if tx.is_empty() {
            0.0
        } else {
            tx.iter().map(|r| r.prr).sum::<f64>() / tx.len() as f64
        };
        diag.mean_cbr =
            diag.slots.iter().map(|r| r.cbr).sum::<f64>() / diag.slots.len().max(1) as f64;
        let finite =
            |vals: Vec<f64>| -> Option<f64> {
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
        diag.mean_crlb_range_m = finite(
            diag.target_samples
                .iter()
                .filter(|t| t.1.is_finite())
                .map(|t| t.1.sqrt())
                .collect(),
        );
        diag.mean_crlb_vel_mps = finite(
            diag.target_samples
                .iter()
                .filter(|t| t.2.is_finite())
                .map(|t| t.2.sqrt())
                .collect(),
        );
        diag.mec_lc = self.mec.l_c_cycles;
        diag.mec_ls = self.mec.l_s_cycles;
        diag.mean_e2e_ms = diag
            .slots
            .iter()
            .map(|r| r.t_e2e_c_s.min(self.cfg.delay_cap_s))
            .sum::<f64>()
            / diag.slots.len().max(1) as f64
            * 1e3;
        diag.mean_energy_mj =
            diag.slots.iter().map(|r| r.e_tot_j).sum::<f64>() / diag.slots.len().max(1) as f64
                * 1e3;
    }
}

fn snap_v2i(snap: &crate::mobility::ChannelSnapshot, n: usize) -> Vec<f64> {
    (0..n).map(|i| snap.v2i(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        let mut c = SimConfig::default();
        c.n_vehicles = Some(4);
        c.density_veh_per_km = 40.0;
        c.rri_ms = 10; // 10-slot epochs keep unit tests fast
        c.t_sel_ms = 10;
        c.t_sen_ms = 100;
        c.cbr_window_slots = 10;
        c.finalize().unwrap();
        c
    }

    fn feasible_action(mask: &ActionMask, _cfg: &SimConfig) -> ActionIndices {
        let pick = |v: &[bool]| v.iter().position(|&b| b).unwrap();
        let n_s = pick(&mask.n_s);
        ActionIndices([
            pick(&mask.resource),
            pick(&mask.rc),
            pick(&mask.keep),
            n_s,
            pick(&mask.n_c_mask(n_s as u32)),
            pick(&mask.n_o),
            pick(&mask.m_s),
            pick(&mask.eta_c),
            pick(&mask.eta_s),
        ])
    }

    #[test]
    fn reset_places_vehicles_per_density() {
        let mut c = SimConfig::default();
        c.density_veh_per_km = 80.0;
        c.road_length_m = 1000.0;
        c.finalize().unwrap();
        let env = IsccEnv::new(c);
        assert_eq!(env.n_agents(), 80);
    }

    #[test]
    fn reset_zeroes_queues_and_is_deterministic() {
        let cfg = small_cfg();
        let mut env = IsccEnv::new(cfg.clone());
        let (obs1, gs1, _) = env.reset(3);
        for c in env.comm_states() {
            assert_eq!(c.queue_bits, 0.0);
        }
        assert_eq!(gs1.mec_lc, 0.0);
        let mut env2 = IsccEnv::new(cfg);
        let (obs2, _, _) = env2.reset(3);
        assert_eq!(obs1, obs2, "same seed, same initial observations");
    }

    #[test]
    fn initial_reservations_within_pool() {
        let cfg = small_cfg();
        let env = IsccEnv::new(cfg.clone());
        for r in &env.reservations {
            assert!(r.resource < cfg.derived.n_resources);
            assert!(cfg.rc_set.contains(&r.rc_remaining));
        }
    }

    #[test]
    fn reward_is_negative_mean_cost() {
        let cfg = small_cfg();
        // Hand check of the averaging: N=2, 2 slots, costs {.2,.4,.3,.1}.
        let r: f64 = -(0.2 + 0.4 + 0.3 + 0.1) / (2.0 * 2.0);
        assert!((r - (-0.25)).abs() < 1e-12);
        let _ = cfg;
    }

    #[test]
    fn cost_arithmetic() {
        let mut c = SimConfig::default();
        c.finalize().unwrap();
        assert!((cost(0.2, 0.4, 0.1, &c) - 0.235).abs() < 1e-12);
        assert_eq!(cost(0.0, 0.0, 0.0, &c), 0.0);
        assert!((cost(1.0, 1.0, 1.0, &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_system_reward_is_comm_weight() {
        let mut c = SimConfig::default();
        c.n_vehicles = Some(2);
        c.density_veh_per_km = 0.1; // 20 km apart: no targets, no receivers
        c.msg_rate_hz = 0.0;
        c.rri_ms = 10;
        c.t_sel_ms = 10;
        c.finalize().unwrap();
        let omega_c = c.omega_c;
        let mut env = IsccEnv::new(c.clone());
        let (_, _, masks) = env.reset(0);
        let acts: Vec<ActionIndices> =
            masks.iter().map(|m| feasible_action(m, &c)).collect();
        let res = env.step_epoch(&acts).unwrap();
        assert!(
            (res.reward + omega_c).abs() < 1e-9,
            "zero traffic, no targets: reward {} vs -omega_c {}",
            res.reward,
            -omega_c
        );
    }

    #[test]
    fn infeasible_action_hard_fails() {
        let cfg = small_cfg();
        let mut env = IsccEnv::new(cfg.clone());
        let (_, _, masks) = env.reset(0);
        let mut acts: Vec<ActionIndices> = masks
            .iter()
            .map(|m| feasible_action(m, &cfg))
            .collect();
        // n_s + n_c over budget.
        acts[0].0[3] = 8;
        acts[0].0[4] = 8;
        assert!(matches!(
            env.step_epoch(&acts),
            Err(EnvError::InfeasibleAction { vehicle: 0, .. })
        ));
    }

    #[test]
    fn wrong_action_count_rejected() {
        let cfg = small_cfg();
        let mut env = IsccEnv::new(cfg);
        env.reset(0);
        assert!(matches!(
            env.step_epoch(&[]),
            Err(EnvError::WrongActionCount { .. })
        ));
    }

    #[test]
    fn observation_slot_nine_carries_rc() {
        let cfg = small_cfg();
        let mut env = IsccEnv::new(cfg);
        let (obs, _, _) = env.reset(1);
        for (i, o) in obs.iter().enumerate() {
            assert_eq!(o.raw[8], env.reservations[i].rc_remaining as f64);
        }
        assert_eq!(OBS_FIELDS[8], "rc_remaining");
    }

    #[test]
    fn action_roundtrip_through_indices() {
        let cfg = small_cfg();
        let act = ActionVector {
            resource: 3,
            rc_idx: 5,
            keep_idx: 4,
            n_s: 4,
            n_c: 8,
            n_o: 2,
            m_s: 4,
            eta_c: 1,
            eta_s: 2,
        };
        let idx = act.to_indices();
        assert_eq!(ActionVector::from_indices(&idx, &cfg), act);
    }

    #[test]
    fn decode_rejects_masked_index() {
        let cfg = small_cfg();
        let mask = build_mask(&[2], None, &cfg);
        let idx = ActionIndices([3, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert!(decode_action(&idx, &mask, &cfg, 0).is_err());
        let ok = ActionIndices([2, 0, 0, 0, 0, 0, 0, 0, 0]);
        let act = decode_action(&ok, &mask, &cfg, 0).unwrap();
        assert_eq!(act.resource, 2);
        assert_eq!(act.m_s, 1, "m_s head index 0 is one symbol");
    }

    #[test]
    fn frozen_epoch_keeps_reservation() {
        let cfg = small_cfg();
        let mut env = IsccEnv::new(cfg.clone());
        let (_, _, masks) = env.reset(5);
        let before: Vec<u32> = env.reservations.iter().map(|r| r.resource).collect();
        let acts: Vec<ActionIndices> =
            masks.iter().map(|m| feasible_action(m, &cfg)).collect();
        env.step_epoch(&acts).unwrap();
        let after: Vec<u32> = env.reservations.iter().map(|r| r.resource).collect();
        assert_eq!(before, after, "first epoch is frozen; resources persist");
    }

    #[test]
    fn forced_offloaders_fill_mec() {
        let mut cfg = small_cfg();
        cfg.forced_offload_synth_cycles = 1e6;
        cfg.finalize().unwrap();
        let mut env = IsccEnv::new(cfg.clone());
        env.forced_offloaders = Some(3);
        let (_, _, masks) = env.reset(0);
        let acts: Vec<ActionIndices> =
            masks.iter().map(|m| feasible_action(m, &cfg)).collect();
        let res = env.step_epoch(&acts).unwrap();
        assert!(
            res.diag.mec_ls > 0.0,
            "synthetic sensing overflow must reach the MEC queue"
        );
    }
}
