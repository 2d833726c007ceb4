//! CSV and JSONL emission. Every CSV carries a `# config_hash=...` comment
//! line above the header so outputs are traceable to the exact
//! configuration; floats print in shortest round-trip form, which keeps
//! identical-seed runs byte-identical.

use crate::config::SimConfig;
use crate::env::EpochDiagnostics;
use crate::marl::EpisodeCurve;
use crate::sbsps::ReselectionEvent;
use crate::sensing::SensingAlloc;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub type IoResult<T> = std::io::Result<T>;

fn csv_file(path: &Path, cfg: &SimConfig, header: &[&str]) -> IoResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config_hash={}", cfg.config_hash())?;
    writeln!(w, "{}", header.join(","))?;
    Ok(w)
}

fn fmt_row(fields: &[String]) -> String {
    fields.join(",")
}

/// Streaming per-slot/per-epoch trace files for one run.
pub struct TraceSink {
    comm: BufWriter<File>,
    compute: BufWriter<File>,
    sensing: BufWriter<File>,
    mac: BufWriter<File>,
    channels: Option<BufWriter<File>>,
}

impl TraceSink {
    pub fn create(dir: &Path, cfg: &SimConfig, with_channels: bool) -> IoResult<TraceSink> {
        std::fs::create_dir_all(dir)?;
        Ok(TraceSink {
            comm: csv_file(
                &dir.join("slots_comm.csv"),
                cfg,
                &[
                    "slot",
                    "vehicle",
                    "prr",
                    "rate_bps",
                    "rate_eff_bps",
                    "cbr",
                    "queue_bits",
                    "sl_delay_s",
                ],
            )?,
            compute: csv_file(
                &dir.join("slots_compute.csv"),
                cfg,
                &[
                    "slot",
                    "vehicle",
                    "ov_c",
                    "ov_s",
                    "eta_c",
                    "eta_s",
                    "t_comp_c_ms",
                    "t_comp_s_ms",
                    "e_tot_mj",
                    "mec_lc",
                    "mec_ls",
                ],
            )?,
            sensing: csv_file(
                &dir.join("slots_sensing.csv"),
                cfg,
                &[
                    "slot",
                    "vehicle",
                    "detected",
                    "crlb_range_m2",
                    "crlb_vel_m2s2",
                    "penalty_cost",
                ],
            )?,
            mac: csv_file(
                &dir.join("mac_trace.csv"),
                cfg,
                &["epoch", "vehicle", "resource", "rc", "keep_prob", "event"],
            )?,
            channels: if with_channels {
                Some(csv_file(
                    &dir.join("channel_trace.csv"),
                    cfg,
                    &["slot", "i", "j", "gain_db"],
                )?)
            } else {
                None
            },
        })
    }

    pub fn absorb(&mut self, diag: &EpochDiagnostics) -> IoResult<()> {
        for r in &diag.slots {
            writeln!(
                self.comm,
                "{},{},{},{},{},{},{},{}",
                r.slot,
                r.vehicle,
                r.prr,
                r.rate_bps,
                r.rate_eff_bps,
                r.cbr,
                r.queue_bits,
                r.sl_delay_s
            )?;
            writeln!(
                self.compute,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.slot,
                r.vehicle,
                r.ov_c,
                r.ov_s,
                r.eta_c,
                r.eta_s,
                r.t_comp_c_s * 1e3,
                r.t_comp_s_s * 1e3,
                r.e_tot_j * 1e3,
                r.mec_lc,
                r.mec_ls
            )?;
            writeln!(
                self.sensing,
                "{},{},{},{},{},{}",
                r.slot, r.vehicle, r.detected, r.crlb_range_m2, r.crlb_vel_m2s2, r.cost
            )?;
        }
        for m in &diag.mac_events {
            let event = match m.event {
                ReselectionEvent::None => "none",
                ReselectionEvent::Keep => "keep",
                ReselectionEvent::Reselect => "reselect",
            };
            writeln!(
                self.mac,
                "{},{},{},{},{},{}",
                m.epoch, m.vehicle, m.resource, m.rc, m.keep_prob, event
            )?;
        }
        if let Some(ch) = &mut self.channels {
            for &(slot, i, j, gain_db) in &diag.channel_rows {
                writeln!(ch, "{slot},{i},{j},{gain_db}")?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> IoResult<()> {
        self.comm.flush()?;
        self.compute.flush()?;
        self.sensing.flush()?;
        self.mac.flush()?;
        if let Some(mut ch) = self.channels.take() {
            ch.flush()?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EpochJson {
    episode: u64,
    epoch: u32,
    reward: f64,
    mean_prr: f64,
    mean_cbr: f64,
    mean_crlb_range: Option<f64>,
    mec_lc: f64,
    mec_ls: f64,
    mean_e2e_ms: f64,
    mean_energy_mj: f64,
    c7_violations: u64,
    c8_violations: u64,
    c9_violations: u64,
}

/// Append-style epoch-level JSONL logger.
pub struct EpochJsonl {
    w: BufWriter<File>,
}

impl EpochJsonl {
    pub fn create(path: &Path) -> IoResult<EpochJsonl> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(EpochJsonl {
            w: BufWriter::new(File::create(path)?),
        })
    }

    pub fn log(&mut self, d: &EpochDiagnostics) -> IoResult<()> {
        let row = EpochJson {
            episode: d.episode,
            epoch: d.epoch,
            reward: d.reward,
            mean_prr: d.mean_prr,
            mean_cbr: d.mean_cbr,
            mean_crlb_range: d.mean_crlb_range_m,
            mec_lc: d.mec_lc,
            mec_ls: d.mec_ls,
            mean_e2e_ms: d.mean_e2e_ms,
            mean_energy_mj: d.mean_energy_mj,
            c7_violations: d.c7_violations,
            c8_violations: d.c8_violations,
            c9_violations: d.c9_violations,
        };
        writeln!(self.w, "{}", serde_json::to_string(&row).expect("finite fields"))
    }

    pub fn finish(mut self) -> IoResult<()> {
        self.w.flush()
    }
}

/// Training-curve export: one row per episode.
pub fn write_curves_csv(path: &Path, cfg: &SimConfig, curves: &[EpisodeCurve]) -> IoResult<()> {
    let mut w = csv_file(
        path,
        cfg,
        &["episode", "mean_reward", "prr", "crlb_range", "mec_delay_ms"],
    )?;
    for c in curves {
        writeln!(
            w,
            "{},{},{},{},{}",
            c.episode, c.mean_reward, c.mean_prr, c.mean_crlb_range_m, c.mec_delay_ms
        )?;
    }
    w.flush()
}

/// Analytic CRLB sweep over distance and allocation, for the sensing-figure
/// plots.
pub fn write_crlb_sweep_csv(path: &Path, cfg: &SimConfig) -> IoResult<()> {
    let mut w = csv_file(
        path,
        cfg,
        &[
            "distance_m",
            "n_s_prb",
            "m_s_sym",
            "root_crlb_range_m",
            "root_crlb_vel_mps",
        ],
    )?;
    let max_n = cfg.n_sl_prb_per_vehicle;
    for &n_s in &[2u32, 4, 8, max_n] {
        for &m_s in &[2u32, 4, 8, 14] {
            let alloc = SensingAlloc::new(n_s, m_s, cfg.tx_power_w).expect("valid sweep alloc");
            let mut d = 10.0;
            while d <= cfg.r_sens_m {
                let snr = crate::sensing::snr_at_range(d, &alloc, cfg);
                if let Ok((rv, vv)) = crate::sensing::crlb(&alloc, snr, cfg) {
                    writeln!(w, "{},{},{},{},{}", d, n_s, m_s, rv.sqrt(), vv.sqrt())?;
                }
                d += 10.0;
            }
        }
    }
    w.flush()
}

/// Generic KPI-style CSV with a hash comment; rows are preformatted.
pub fn write_table_csv(
    path: &Path,
    cfg: &SimConfig,
    header: &[&str],
    rows: &[Vec<String>],
) -> IoResult<()> {
    let mut w = csv_file(path, cfg, header)?;
    for r in rows {
        writeln!(w, "{}", fmt_row(r))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_carries_hash_comment_and_header() {
        let mut cfg = SimConfig::default();
        cfg.finalize().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_table_csv(
            &path,
            &cfg,
            &["a", "b"],
            &[vec!["1".into(), "2".into()]],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            format!("# config_hash={}", cfg.config_hash())
        );
        assert_eq!(lines.next().unwrap(), "a,b");
        assert_eq!(lines.next().unwrap(), "1,2");
    }

    #[test]
    fn crlb_sweep_has_monotone_range_column() {
        let mut cfg = SimConfig::default();
        cfg.finalize().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crlb.csv");
        write_crlb_sweep_csv(&path, &cfg).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // For a fixed allocation the root-CRLB grows with distance.
        let rows: Vec<Vec<&str>> = text
            .lines()
            .skip(2)
            .map(|l| l.split(',').collect())
            .collect();
        let first_alloc: Vec<&Vec<&str>> = rows
            .iter()
            .filter(|r| r[1] == "2" && r[2] == "2")
            .collect();
        assert!(first_alloc.len() > 3);
        let mut prev = 0.0;
        for r in first_alloc {
            let v: f64 = r[3].parse().unwrap();
            assert!(v > prev);
            prev = v;
        }
    }
}
