//! Simulation configuration: every physical, MAC, compute, and training
//! constant with units, plus the derived quantities shared by all modules.
//!
//! Canonical on-disk format is TOML (JSON accepted by extension). Keys are
//! snake_case with unit suffixes. Unknown keys are rejected. The environment
//! variable `ISCC_SEED` overrides the `seed` field.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;
pub const BOLTZMANN_J_PER_K: f64 = 1.380_649e-23;
pub const REF_TEMPERATURE_K: f64 = 290.0;
/// OFDM symbols per NR slot.
pub const SYMBOLS_PER_SLOT: u32 = 14;
/// Subcarriers per PRB.
pub const SC_PER_PRB: u32 = 12;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(String),
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("config invariant violated for `{field}`: {msg}")]
    Invariant { field: String, msg: String },
}

fn inv(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invariant {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// All persisted simulation parameters. Derived quantities live in
/// [`Derived`] and are recomputed on load, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    // --- radio/PHY ---
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub numerology_mu: u32,
    pub scs_hz: f64,
    /// Usable PRBs in the sidelink pool; derived from bandwidth when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_prb_pool: Option<u32>,
    pub n_sl_prb_per_vehicle: u32,
    pub n_o_max_prb: u32,
    pub tx_power_w: f64,
    pub rsrp_threshold_dbm: f64,
    pub snr_decode_threshold_db: f64,
    pub rho_si: f64,
    pub rcs_dbsm: f64,
    pub antenna_gain_db: f64,
    pub noise_figure_db: f64,
    pub pathloss_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub fading_enabled: bool,

    // --- traffic / comm ---
    pub packet_bytes: u32,
    pub msg_rate_hz: f64,
    pub awareness_range_m: f64,
    pub cbr_window_slots: u32,
    pub ema_coeff: f64,
    pub d_c_min_bits: f64,
    pub eps0_rate_bps: f64,
    pub delay_cap_s: f64,

    // --- topology / mobility ---
    pub density_veh_per_km: f64,
    /// Explicit vehicle count; when set, road length becomes n/density so the
    /// configured density stays exact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_vehicles: Option<u32>,
    pub road_length_m: f64,
    pub max_speed_kmh: f64,
    pub min_speed_frac: f64,
    pub n_lanes: u32,
    pub rsu_lateral_offset_m: f64,

    // --- SB-SPS MAC ---
    pub t_sen_ms: u32,
    pub t_sel_ms: u32,
    pub rri_ms: u32,
    pub keep_prob_set: Vec<f64>,
    pub rc_set: Vec<u32>,
    pub cand_retention_min_frac: f64,
    pub cand_threshold_step_db: f64,

    // --- sensing ---
    pub gamma_det_s_db: f64,
    pub r_sens_m: f64,
    pub beta_r: f64,
    pub beta_v: f64,

    // --- compute / offload ---
    pub f_local_hz: f64,
    pub c_mec_cycles_per_slot: f64,
    pub kappa_s_cycles_per_bit: f64,
    pub kappa_c_cycles_per_bit: f64,
    pub b_quant_bits: u32,
    pub kappa_dvfs: f64,
    pub xi_c_bits_per_cycle: f64,
    pub xi_s_bits_per_cycle: f64,
    pub t_bh_s: f64,
    pub t_cl_s: f64,
    pub delta_c_s: f64,
    pub delta_s_s: f64,
    pub e_max_j_per_slot: f64,

    // --- cost weights ---
    pub omega_s: f64,
    pub omega_c: f64,
    pub omega_comp: f64,
    pub alpha_prr: f64,
    pub alpha_rate: f64,
    pub alpha_dc: f64,
    pub alpha_ds: f64,
    pub alpha_e: f64,

    // --- training ---
    pub episodes: u32,
    pub epochs_per_episode: u32,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub c_v: f64,
    pub c_e: f64,
    pub grad_clip_norm: f64,
    pub ppo_epochs: u32,
    pub param_sharing: bool,
    pub seed: u64,

    // --- evaluation ---
    pub distance_bin_m: f64,
    pub prr_reliability_threshold: f64,
    pub eval_episodes: u32,
    pub forced_offload_synth_cycles: f64,

    #[serde(skip)]
    pub derived: Derived,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            carrier_freq_hz: 5.9e9,
            bandwidth_hz: 10e6,
            numerology_mu: 0,
            scs_hz: 15e3,
            n_prb_pool: None,
            n_sl_prb_per_vehicle: 12,
            n_o_max_prb: 4,
            tx_power_w: 0.1995,
            rsrp_threshold_dbm: -128.0,
            snr_decode_threshold_db: 8.0,
            rho_si: 1e-7,
            rcs_dbsm: 10.0,
            antenna_gain_db: 3.0,
            noise_figure_db: 9.0,
            pathloss_exponent: 2.75,
            shadowing_sigma_db: 3.0,
            fading_enabled: true,

            packet_bytes: 190,
            msg_rate_hz: 10.0,
            awareness_range_m: 200.0,
            cbr_window_slots: 100,
            ema_coeff: 0.1,
            d_c_min_bits: 1520.0,
            eps0_rate_bps: 1.0,
            delay_cap_s: 1.0,

            density_veh_per_km: 40.0,
            n_vehicles: None,
            road_length_m: 1000.0,
            max_speed_kmh: 70.0,
            min_speed_frac: 0.5,
            n_lanes: 2,
            rsu_lateral_offset_m: 20.0,

            t_sen_ms: 1000,
            t_sel_ms: 100,
            rri_ms: 100,
            keep_prob_set: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            rc_set: (5..=15).collect(),
            cand_retention_min_frac: 0.2,
            cand_threshold_step_db: 3.0,

            gamma_det_s_db: -60.0,
            r_sens_m: 150.0,
            beta_r: 0.5,
            beta_v: 0.5,

            f_local_hz: 2e9,
            c_mec_cycles_per_slot: 2e7,
            kappa_s_cycles_per_bit: 500.0,
            kappa_c_cycles_per_bit: 100.0,
            b_quant_bits: 8,
            kappa_dvfs: 1e-28,
            xi_c_bits_per_cycle: 0.01,
            xi_s_bits_per_cycle: 0.002,
            t_bh_s: 0.010,
            t_cl_s: 0.002,
            delta_c_s: 0.020,
            delta_s_s: 0.050,
            e_max_j_per_slot: 0.050,

            omega_s: 0.30,
            omega_c: 0.35,
            omega_comp: 0.35,
            alpha_prr: 0.5,
            alpha_rate: 0.5,
            alpha_dc: 1.0 / 3.0,
            alpha_ds: 1.0 / 3.0,
            alpha_e: 1.0 / 3.0,

            episodes: 500,
            epochs_per_episode: 40,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            c_v: 0.5,
            c_e: 0.01,
            grad_clip_norm: 0.5,
            ppo_epochs: 4,
            param_sharing: false,
            seed: 1,

            distance_bin_m: 20.0,
            prr_reliability_threshold: 0.8,
            eval_episodes: 20,
            forced_offload_synth_cycles: 1e6,

            derived: Derived::default(),
        }
    }
}

/// Quantities recomputed from the persisted fields on every load.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Derived {
    /// Slot duration, `2^-mu` ms.
    pub slot_s: f64,
    /// Useful OFDM symbol duration, `1/scs`.
    pub sym_s: f64,
    /// Usable PRBs in the pool (override or derived from bandwidth).
    pub n_prb_pool: u32,
    /// Subchannels in the pool (one per-vehicle reservation each).
    pub n_subchannels: u32,
    /// Slots per RRI; one control epoch spans exactly one RRI.
    pub slots_per_epoch: u32,
    /// Selection-window resources: slots-in-RRI x subchannels.
    pub n_resources: u32,
    pub sensing_window_slots: u32,
    /// Noise PSD including noise figure, W/Hz.
    pub n0_w_per_hz: f64,
    pub antenna_gain_lin: f64,
    pub rcs_m2: f64,
    pub gamma_det_lin: f64,
    pub wavelength_m: f64,
    /// Free-space pathloss at 1 m, dB.
    pub pl0_db: f64,
    pub n_vehicles: u32,
    pub road_length_m: f64,
    pub max_speed_mps: f64,
    pub packet_bits: u64,
    /// Target effective rate for the utility, `d_c_min / slot`.
    pub r_eff_min_bps: f64,
    /// Local CPU capacity per slot, cycles.
    pub c_local_cycles_per_slot: f64,
    /// Sensing-penalty normalization: one target at `r_sens` with the
    /// minimum useful allocation (2 PRB, 2 symbols) at detection SNR.
    pub eps_ref: f64,
}

impl SimConfig {
    /// Validate invariants and fill derived fields. Must run after any
    /// construction path before the config is used.
    pub fn finalize(&mut self) -> Result<(), ConfigError> {
        self.validate()?;
        let slot_s = 1e-3 * f64::powi(2.0, -(self.numerology_mu as i32));
        let sym_s = 1.0 / self.scs_hz;
        let raw_prb = self.bandwidth_hz / (SC_PER_PRB as f64 * self.scs_hz);
        // 3GPP-typical guard of 3.5 PRB-equivalents; 10 MHz @ 15 kHz -> 52.
        let derived_prb = (raw_prb - 3.5).floor().max(1.0) as u32;
        let n_prb_pool = self.n_prb_pool.unwrap_or(derived_prb);
        if n_prb_pool as f64 > raw_prb {
            return Err(inv("n_prb_pool", "exceeds bandwidth/scs capacity"));
        }
        if self.n_sl_prb_per_vehicle > n_prb_pool {
            return Err(inv(
                "n_sl_prb_per_vehicle",
                "must not exceed n_prb_pool",
            ));
        }
        let n_subchannels = n_prb_pool / self.n_sl_prb_per_vehicle;
        let slots_per_epoch = self.rri_ms * (1u32 << self.numerology_mu);
        let (n_vehicles, road_length_m) = match self.n_vehicles {
            Some(n) => (n, n as f64 / self.density_veh_per_km * 1000.0),
            None => (
                (self.density_veh_per_km * self.road_length_m / 1000.0).round() as u32,
                self.road_length_m,
            ),
        };
        if n_vehicles == 0 {
            return Err(inv("density_veh_per_km", "resolves to zero vehicles"));
        }
        let n0 = BOLTZMANN_J_PER_K * REF_TEMPERATURE_K * db_to_lin(self.noise_figure_db);
        let wavelength_m = SPEED_OF_LIGHT_MPS / self.carrier_freq_hz;
        let pl0_db = 20.0 * (4.0 * std::f64::consts::PI / wavelength_m).log10();

        let gamma_det_lin = db_to_lin(self.gamma_det_s_db);
        let min_nsc = 2 * SC_PER_PRB;
        let (eps_r, eps_v) = crate::sensing::crlb_raw(
            min_nsc,
            2,
            gamma_det_lin,
            self.scs_hz,
            sym_s,
            self.carrier_freq_hz,
        )
        .expect("minimum allocation has defined CRLB");
        let eps_ref = self.beta_r * eps_r + self.beta_v * eps_v;

        self.derived = Derived {
            slot_s,
            sym_s,
            n_prb_pool,
            n_subchannels,
            slots_per_epoch,
            n_resources: slots_per_epoch * n_subchannels,
            sensing_window_slots: self.t_sen_ms * (1u32 << self.numerology_mu),
            n0_w_per_hz: n0,
            antenna_gain_lin: db_to_lin(self.antenna_gain_db),
            rcs_m2: db_to_lin(self.rcs_dbsm),
            gamma_det_lin,
            wavelength_m,
            pl0_db,
            n_vehicles,
            road_length_m,
            max_speed_mps: self.max_speed_kmh / 3.6,
            packet_bits: self.packet_bytes as u64 * 8,
            r_eff_min_bps: self.d_c_min_bits / slot_s,
            c_local_cycles_per_slot: self.f_local_hz * slot_s,
            eps_ref,
        };
        Ok(())
    }

    fn validate(&mut self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("scs_hz", self.scs_hz),
            ("tx_power_w", self.tx_power_w),
            ("f_local_hz", self.f_local_hz),
            ("c_mec_cycles_per_slot", self.c_mec_cycles_per_slot),
            ("delta_c_s", self.delta_c_s),
            ("delta_s_s", self.delta_s_s),
            ("e_max_j_per_slot", self.e_max_j_per_slot),
            ("road_length_m", self.road_length_m),
            ("max_speed_kmh", self.max_speed_kmh),
            ("density_veh_per_km", self.density_veh_per_km),
            ("r_sens_m", self.r_sens_m),
            ("d_c_min_bits", self.d_c_min_bits),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(inv(field, "must be strictly positive"));
            }
        }
        let expected_scs = 15e3 * f64::powi(2.0, self.numerology_mu as i32);
        if (self.scs_hz - expected_scs).abs() > 1e-6 {
            return Err(inv("scs_hz", "must equal 15 kHz * 2^numerology_mu"));
        }
        let wsum = self.omega_s + self.omega_c + self.omega_comp;
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(inv("omega_s", "weights must sum to 1"));
        }
        // Pin the sum to exactly 1 so slot costs stay in [0, 1]. Left-to-right
        // evaluation of w_s + w_c + w_comp then lands on 1.0 exactly.
        self.omega_comp = 1.0 - (self.omega_s + self.omega_c);
        let asum = self.alpha_dc + self.alpha_ds + self.alpha_e;
        if (asum - 1.0).abs() > 1e-9 {
            return Err(inv("alpha_dc", "computation weights must sum to 1"));
        }
        self.alpha_e = 1.0 - (self.alpha_dc + self.alpha_ds);
        if self.alpha_prr < 0.0 || self.alpha_rate < 0.0 || self.alpha_prr + self.alpha_rate <= 0.0
        {
            return Err(inv("alpha_prr", "utility weights must be nonnegative, sum > 0"));
        }
        if self.keep_prob_set.is_empty()
            || self.keep_prob_set.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(inv("keep_prob_set", "probabilities must lie in [0,1]"));
        }
        if self.rc_set.is_empty() || self.rc_set.iter().any(|&c| c == 0) {
            return Err(inv("rc_set", "must be nonempty positive counters"));
        }
        if self.msg_rate_hz < 0.0
            || self.msg_rate_hz * 1e-3 * f64::powi(2.0, -(self.numerology_mu as i32)) > 1.0
        {
            return Err(inv("msg_rate_hz", "rate must satisfy rate*slot <= 1"));
        }
        if self.t_sel_ms > self.t_sen_ms {
            return Err(inv("t_sel_ms", "selection window exceeds sensing window"));
        }
        if self.rri_ms == 0 || self.t_sen_ms == 0 {
            return Err(inv("rri_ms", "durations must be strictly positive"));
        }
        if !(0.0..1.0).contains(&self.cand_retention_min_frac) {
            return Err(inv("cand_retention_min_frac", "must lie in [0,1)"));
        }
        if self.epochs_per_episode == 0 || self.ppo_epochs == 0 {
            return Err(inv("epochs_per_episode", "must be strictly positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(inv("gamma", "gamma and gae_lambda must lie in [0,1]"));
        }
        Ok(())
    }

    /// Serialize the persisted fields as canonical TOML.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short stable hash of the persisted configuration.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml_string().as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Thermal noise power over `bw` Hz.
    pub fn noise_w(&self, bw_hz: f64) -> f64 {
        self.derived.n0_w_per_hz * bw_hz
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn lin_w_to_dbm(w: f64) -> f64 {
    if w <= 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (w * 1000.0).log10()
    }
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

/// Load and finalize a config from TOML (canonical) or JSON (`.json`).
pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig, ConfigError> {
    let env_seed = std::env::var("ISCC_SEED")
        .ok()
        .and_then(|s| s.parse::<u64>().ok());
    load_config_with_seed(path, env_seed)
}

/// As [`load_config`] with an explicit seed override (used for the
/// `ISCC_SEED` environment hook and by tests).
pub fn load_config_with_seed(
    path: impl AsRef<Path>,
    seed_override: Option<u64>,
) -> Result<SimConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    let mut cfg: SimConfig = if is_json {
        serde_json::from_str(&text).map_err(classify_parse)?
    } else {
        toml::from_str(&text).map_err(classify_parse)?
    };
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.finalize()?;
    Ok(cfg)
}

fn classify_parse(err: impl std::fmt::Display) -> ConfigError {
    let msg = err.to_string();
    if msg.contains("unknown field") {
        ConfigError::UnknownKey(msg)
    } else {
        ConfigError::Parse(msg)
    }
}
