//! KPI aggregation audit: means recomputed from the raw per-slot CSVs must
//! match the pipeline's accumulated values to 1e-9.

use iscc_core::config::SimConfig;
use iscc_core::eval::{run_policy, EvalOptions, EvalPolicy};
use iscc_core::marl::GreedyKind;
use std::collections::HashMap;

fn read_csv(path: &std::path::Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn kpi_means_match_raw_csv_recompute() {
    let mut cfg = SimConfig::default();
    cfg.n_vehicles = Some(6);
    cfg.density_veh_per_km = 40.0;
    cfg.rri_ms = 20;
    cfg.t_sel_ms = 20;
    cfg.t_sen_ms = 100;
    cfg.cbr_window_slots = 20;
    cfg.epochs_per_episode = 8;
    cfg.eval_episodes = 2;
    cfg.finalize().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let opts = EvalOptions {
        trace_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let stats = run_policy(&cfg, &EvalPolicy::greedy(GreedyKind::Ccg), &opts).unwrap();
    let kpis = stats.kpis(&cfg);

    let (ch, comm) = read_csv(&dir.path().join("slots_comm.csv"));
    let (xh, compute) = read_csv(&dir.path().join("slots_compute.csv"));
    assert_eq!(comm.len(), compute.len());

    // Join compute rows by (slot, vehicle) for mixed KPIs.
    let mut comp_by_key: HashMap<(u64, u64), &Vec<f64>> = HashMap::new();
    let (xslot, xveh) = (col(&xh, "slot"), col(&xh, "vehicle"));
    for r in &compute {
        comp_by_key.insert((r[xslot] as u64, r[xveh] as u64), r);
    }

    let (c_prr, c_rate, c_rateeff, c_cbr) = (
        col(&ch, "prr"),
        col(&ch, "rate_bps"),
        col(&ch, "rate_eff_bps"),
        col(&ch, "cbr"),
    );
    let (x_tc, x_etot, x_lc, x_ls) = (
        col(&xh, "t_comp_c_ms"),
        col(&xh, "e_tot_mj"),
        col(&xh, "mec_lc"),
        col(&xh, "mec_ls"),
    );

    let mut prr_sum = 0.0;
    let mut rate_eff_sum = 0.0;
    let mut tx_n = 0u64;
    let mut cbr_sum = 0.0;
    let mut energy_sum = 0.0;
    let mut mec_sum = 0.0;
    let mut comp_sum = 0.0;
    let mut comp_n = 0u64;
    for r in &comm {
        cbr_sum += r[c_cbr];
        // Transmission slots are identifiable by a nonzero Shannon rate.
        if r[c_rate] > 0.0 {
            prr_sum += r[c_prr];
            rate_eff_sum += r[c_rateeff];
            tx_n += 1;
        }
    }
    for r in &compute {
        energy_sum += r[x_etot] / 1e3;
        mec_sum += (r[x_lc] + r[x_ls]) * cfg.derived.slot_s / cfg.c_mec_cycles_per_slot;
        if r[x_tc] > 0.0 {
            comp_sum += r[x_tc] / 1e3;
            comp_n += 1;
        }
    }
    let n_slots = comm.len() as f64;
    let close = |a: f64, b: f64, what: &str| {
        assert!(
            (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0),
            "{what}: recomputed {a} vs pipeline {b}"
        );
    };
    close(prr_sum / tx_n as f64, kpis.prr, "prr");
    close(
        rate_eff_sum / tx_n as f64,
        kpis.throughput_bps,
        "throughput",
    );
    close(cbr_sum / n_slots, kpis.cbr, "cbr");
    close(energy_sum / n_slots, kpis.energy_j, "energy");
    close(mec_sum / n_slots, kpis.mec_delay_s, "mec delay");
    close(comp_sum / comp_n as f64, kpis.comp_latency_s, "comp latency");
}
