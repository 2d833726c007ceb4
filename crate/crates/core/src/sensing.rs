//! OFDM-radar sensing quality: monostatic link budget, effective SNR,
//! range/velocity CRLBs, and the per-vehicle aggregated sensing penalty with
//! its data/workload byproducts.

use crate::config::{SimConfig, SC_PER_PRB, SPEED_OF_LIGHT_MPS, SYMBOLS_PER_SLOT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SensingError {
    #[error("target range must be strictly positive")]
    NonPositiveRange,
    #[error("CRLB undefined: subcarrier or symbol count below 2")]
    CrlbUndefined,
    #[error("sensing symbols must lie in 1..=14, got {0}")]
    BadSymbolCount(u32),
}

/// Per-epoch sensing resource selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingAlloc {
    pub n_s_prb: u32,
    pub m_s_sym: u32,
    pub p_tx_w: f64,
}

impl SensingAlloc {
    pub fn new(n_s_prb: u32, m_s_sym: u32, p_tx_w: f64) -> Result<Self, SensingError> {
        if !(1..=SYMBOLS_PER_SLOT).contains(&m_s_sym) {
            return Err(SensingError::BadSymbolCount(m_s_sym));
        }
        Ok(SensingAlloc {
            n_s_prb,
            m_s_sym,
            p_tx_w,
        })
    }

    /// Sensing subcarriers, `12 * n_s_prb`.
    pub fn n_sc(&self) -> u32 {
        SC_PER_PRB * self.n_s_prb
    }

    /// Sensing bandwidth in Hz.
    pub fn bandwidth_hz(&self, scs_hz: f64) -> f64 {
        self.n_sc() as f64 * scs_hz
    }
}

/// One radar target as seen by a sensing vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEcho {
    pub target_id: usize,
    pub range_m: f64,
    pub radial_velocity_mps: f64,
    pub tau_s: f64,
    pub doppler_hz: f64,
    pub reflect_power: f64,
    pub snr_linear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedTarget {
    pub target_id: usize,
    pub range_m: f64,
    pub crlb_range_m2: f64,
    pub crlb_vel_m2s2: f64,
    pub weight: f64,
}

/// Aggregated per-vehicle sensing outcome for one slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensingReport {
    pub detected: Vec<DetectedTarget>,
    /// Weighted CRLB aggregate; `inf` when a detected target has an
    /// undefined bound (too few subcarriers or symbols).
    pub penalty: f64,
    pub data_bits: u64,
    pub workload_cycles: f64,
}

impl SensingReport {
    /// Penalty clipped to [0, 1] against the config's reference constant.
    pub fn normalized_penalty(&self, cfg: &SimConfig) -> f64 {
        (self.penalty / cfg.derived.eps_ref).clamp(0.0, 1.0)
    }
}

/// Monostatic radar reflection power `|zeta|^2`.
pub fn reflection_power(range_m: f64, cfg: &SimConfig) -> Result<f64, SensingError> {
    if !(range_m > 0.0) {
        return Err(SensingError::NonPositiveRange);
    }
    let g = cfg.derived.antenna_gain_lin;
    let lambda = cfg.derived.wavelength_m;
    let four_pi_cubed = (4.0 * std::f64::consts::PI).powi(3);
    Ok(g * g * lambda * lambda * cfg.derived.rcs_m2 / (four_pi_cubed * range_m.powi(4)))
}

/// Effective sensing SNR against thermal noise plus residual
/// self-interference.
pub fn sensing_snr(reflect_power: f64, alloc: &SensingAlloc, cfg: &SimConfig) -> f64 {
    let sigma_z2 = cfg.noise_w(alloc.bandwidth_hz(cfg.scs_hz));
    let rsi = cfg.rho_si * alloc.p_tx_w;
    alloc.p_tx_w * reflect_power / (sigma_z2 + rsi)
}

/// Range and velocity CRLBs for the given subcarrier/symbol counts.
/// Zero SNR yields the infinite-variance sentinel.
pub fn crlb_raw(
    n_sc: u32,
    m_sym: u32,
    snr_linear: f64,
    scs_hz: f64,
    sym_s: f64,
    carrier_hz: f64,
) -> Result<(f64, f64), SensingError> {
    if n_sc < 2 || m_sym < 2 {
        return Err(SensingError::CrlbUndefined);
    }
    Ok(crlb_components(n_sc, m_sym, snr_linear, scs_hz, sym_s, carrier_hz))
}

/// As [`crlb_raw`] but degenerate allocations return infinite variance per
/// component instead of an error (range needs `n_sc >= 2`, velocity needs
/// `m_sym >= 2`).
pub fn crlb_components(
    n_sc: u32,
    m_sym: u32,
    snr_linear: f64,
    scs_hz: f64,
    sym_s: f64,
    carrier_hz: f64,
) -> (f64, f64) {
    if !(snr_linear > 0.0) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let c2 = SPEED_OF_LIGHT_MPS * SPEED_OF_LIGHT_MPS;
    let eight_pi2 = 8.0 * std::f64::consts::PI * std::f64::consts::PI;
    let n = n_sc as f64;
    let m = m_sym as f64;
    let range_var = if n_sc >= 2 {
        3.0 * c2 / (eight_pi2 * m * n * snr_linear * (n * n - 1.0) * scs_hz * scs_hz)
    } else {
        f64::INFINITY
    };
    let vel_var = if m_sym >= 2 {
        3.0 * c2
            / (eight_pi2
                * carrier_hz
                * carrier_hz
                * m
                * n
                * snr_linear
                * (m * m - 1.0)
                * sym_s
                * sym_s)
    } else {
        f64::INFINITY
    };
    (range_var, vel_var)
}

/// Spec'd operation form over an allocation.
pub fn crlb(
    alloc: &SensingAlloc,
    snr_linear: f64,
    cfg: &SimConfig,
) -> Result<(f64, f64), SensingError> {
    crlb_raw(
        alloc.n_sc(),
        alloc.m_s_sym,
        snr_linear,
        cfg.scs_hz,
        cfg.derived.sym_s,
        cfg.carrier_freq_hz,
    )
}

/// Echo parameters for one target under the current allocation.
pub fn target_echo(
    target_id: usize,
    range_m: f64,
    radial_velocity_mps: f64,
    alloc: &SensingAlloc,
    cfg: &SimConfig,
) -> Result<TargetEcho, SensingError> {
    let reflect_power = reflection_power(range_m, cfg)?;
    let snr_linear = sensing_snr(reflect_power, alloc, cfg);
    Ok(TargetEcho {
        target_id,
        range_m,
        radial_velocity_mps,
        tau_s: 2.0 * range_m / SPEED_OF_LIGHT_MPS,
        doppler_hz: 2.0 * radial_velocity_mps / cfg.derived.wavelength_m,
        reflect_power,
        snr_linear,
    })
}

/// Detection, inverse-distance weighting, CRLB aggregation, and the sensing
/// data/workload for one vehicle-slot.
pub fn build_report(echoes: &[TargetEcho], alloc: &SensingAlloc, cfg: &SimConfig) -> SensingReport {
    let detected: Vec<&TargetEcho> = echoes
        .iter()
        .filter(|e| e.snr_linear >= cfg.derived.gamma_det_lin && e.range_m <= cfg.r_sens_m)
        .collect();
    let inv_sum: f64 = detected.iter().map(|e| 1.0 / e.range_m).sum();
    let mut penalty = 0.0;
    let mut out = Vec::with_capacity(detected.len());
    for e in &detected {
        let weight = (1.0 / e.range_m) / inv_sum;
        let (cr, cv) = crlb_components(
            alloc.n_sc(),
            alloc.m_s_sym,
            e.snr_linear,
            cfg.scs_hz,
            cfg.derived.sym_s,
            cfg.carrier_freq_hz,
        );
        penalty += weight * (cfg.beta_r * cr + cfg.beta_v * cv);
        out.push(DetectedTarget {
            target_id: e.target_id,
            range_m: e.range_m,
            crlb_range_m2: cr,
            crlb_vel_m2s2: cv,
            weight,
        });
    }
    let data_bits = sensing_data_bits(alloc, cfg);
    SensingReport {
        detected: out,
        penalty,
        data_bits,
        workload_cycles: cfg.kappa_s_cycles_per_bit * data_bits as f64,
    }
}

/// Raw I/Q sensing sample volume in bits: `2 * n_sc * m_sym * b`, exact.
pub fn sensing_data_bits(alloc: &SensingAlloc, cfg: &SimConfig) -> u64 {
    2 * alloc.n_sc() as u64 * alloc.m_s_sym as u64 * cfg.b_quant_bits as u64
}

/// Detection SNR at range `r` for an allocation, used by tests and the
/// analytic CRLB sweep export.
pub fn snr_at_range(range_m: f64, alloc: &SensingAlloc, cfg: &SimConfig) -> f64 {
    match reflection_power(range_m, cfg) {
        Ok(p) => sensing_snr(p, alloc, cfg),
        Err(_) => 0.0,
    }
}
