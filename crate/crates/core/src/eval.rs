//! Experiment orchestration: policy evaluation runs, KPI aggregation with
//! seed confidence intervals, the sweep axes (density, distance bins,
//! forced offloaders), and the named figure recipes.

use crate::config::SimConfig;
use crate::env::{ActionIndices, EpochDiagnostics, IsccEnv};
use crate::marl::{GreedyKind, GreedyPolicy, TrainedPolicy};
use crate::rng::RngStreams;
use crate::trace::{write_table_csv, EpochJsonl, TraceSink};
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Entity-space salt separating evaluation action sampling from training.
const EVAL_SALT_BASE: u64 = 0x4556_414c;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown policy `{0}`; expected mappo|ma-a2c|scg|ccg")]
    UnknownPolicy(String),
    #[error("unknown sweep variable `{0}`; expected density|distance-bins|offloaders")]
    UnknownSweep(String),
    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),
    #[error("experiment spec invalid: {0}")]
    BadSpec(String),
    #[error("policy {0} needs a checkpoint directory (--checkpoint)")]
    MissingCheckpoint(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::marl::checkpoint::CheckpointError),
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("train: {0}")]
    Train(#[from] crate::marl::trainer::TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Mappo,
    MaA2c,
    Scg,
    Ccg,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Mappo,
        PolicyKind::MaA2c,
        PolicyKind::Scg,
        PolicyKind::Ccg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Mappo => "mappo",
            PolicyKind::MaA2c => "ma-a2c",
            PolicyKind::Scg => "scg",
            PolicyKind::Ccg => "ccg",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, PolicyKind::Mappo | PolicyKind::MaA2c)
    }
}

impl FromStr for PolicyKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "mappo" => Ok(PolicyKind::Mappo),
            "ma-a2c" => Ok(PolicyKind::MaA2c),
            "scg" => Ok(PolicyKind::Scg),
            "ccg" => Ok(PolicyKind::Ccg),
            other => Err(EvalError::UnknownPolicy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Density,
    DistanceBins,
    Offloaders,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Density => "density",
            SweepVar::DistanceBins => "distance-bins",
            SweepVar::Offloaders => "offloaders",
        }
    }
}

impl FromStr for SweepVar {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "density" => Ok(SweepVar::Density),
            "distance-bins" => Ok(SweepVar::DistanceBins),
            "offloaders" => Ok(SweepVar::Offloaders),
            other => Err(EvalError::UnknownSweep(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub policy: PolicyKind,
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.values.is_empty() {
            return Err(EvalError::BadSpec("values list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(EvalError::BadSpec("seeds list is empty".into()));
        }
        for &v in &self.values {
            let ok = match self.sweep {
                SweepVar::Density => v.is_finite() && v > 0.0,
                SweepVar::DistanceBins => v.is_finite() && v >= 0.0,
                SweepVar::Offloaders => v.is_finite() && v >= 0.0 && v.fract() == 0.0,
            };
            if !ok {
                return Err(EvalError::BadSpec(format!(
                    "invalid {} sweep value {v}",
                    self.sweep.name()
                )));
            }
        }
        Ok(())
    }
}

/// A runnable policy for evaluation.
pub enum EvalPolicy {
    Learned(Box<TrainedPolicy>),
    Greedy(GreedyPolicy),
}

impl EvalPolicy {
    pub fn greedy(kind: GreedyKind) -> EvalPolicy {
        EvalPolicy::Greedy(GreedyPolicy::new(kind))
    }

    fn act(
        &self,
        agent: usize,
        env: &IsccEnv,
        obs: &crate::env::Observation,
        mask: &crate::sbsps::ActionMask,
        view: &crate::env::LocalView,
        rng: &mut ChaCha12Rng,
    ) -> ActionIndices {
        match self {
            EvalPolicy::Learned(p) => p.act(agent, obs, mask, rng),
            EvalPolicy::Greedy(g) => g.act(view, mask, &env.cfg, rng),
        }
    }
}

/// Accumulated evaluation statistics across episodes of one run.
#[derive(Debug, Clone, Default)]
pub struct EvalStats {
    pub tx_prr_sum: f64,
    pub tx_rate_eff_sum: f64,
    pub tx_count: u64,
    pub cbr_sum: f64,
    pub slot_count: u64,
    pub energy_sum_j: f64,
    pub mec_delay_sum_s: f64,
    pub comp_c_sum_s: f64,
    pub comp_c_count: u64,
    pub e2e_sum_s: f64,
    pub e2e_count: u64,
    pub crlb_range_root_sum: f64,
    pub crlb_range_count: u64,
    pub crlb_vel_root_sum: f64,
    pub crlb_vel_count: u64,
    pub reward_sum: f64,
    pub epoch_count: u64,
    /// Distance-binned decode outcomes: (decoded, total) per bin.
    pub bin_decode: Vec<(u64, u64)>,
    /// Distance-binned range root-CRLB sums: (sum, count) per bin.
    pub bin_crlb: Vec<(f64, u64)>,
    pub c7: u64,
    pub c8: u64,
    pub c9: u64,
}

impl EvalStats {
    fn bin_index(d: f64, bin_m: f64) -> usize {
        (d / bin_m).floor() as usize
    }

    pub fn absorb(&mut self, diag: &EpochDiagnostics, cfg: &SimConfig) {
        self.reward_sum += diag.reward;
        self.epoch_count += 1;
        for r in &diag.slots {
            self.slot_count += 1;
            self.cbr_sum += r.cbr;
            self.energy_sum_j += r.e_tot_j;
            self.mec_delay_sum_s +=
                (r.mec_lc + r.mec_ls) * cfg.derived.slot_s / cfg.c_mec_cycles_per_slot;
            if r.transmitted {
                self.tx_prr_sum += r.prr;
                self.tx_rate_eff_sum += r.rate_eff_bps;
                self.tx_count += 1;
                self.e2e_sum_s += r.t_e2e_c_s.min(cfg.delay_cap_s);
                self.e2e_count += 1;
            }
            if r.t_comp_c_s > 0.0 {
                self.comp_c_sum_s += r.t_comp_c_s;
                self.comp_c_count += 1;
            }
        }
        for &(d, decoded) in &diag.rx_pairs {
            let idx = Self::bin_index(d, cfg.distance_bin_m);
            if self.bin_decode.len() <= idx {
                self.bin_decode.resize(idx + 1, (0, 0));
            }
            self.bin_decode[idx].1 += 1;
            if decoded {
                self.bin_decode[idx].0 += 1;
            }
        }
        for &(range, crlb_r, crlb_v) in &diag.target_samples {
            if crlb_r.is_finite() {
                self.crlb_range_root_sum += crlb_r.sqrt();
                self.crlb_range_count += 1;
                let idx = Self::bin_index(range, cfg.distance_bin_m);
                if self.bin_crlb.len() <= idx {
                    self.bin_crlb.resize(idx + 1, (0.0, 0));
                }
                self.bin_crlb[idx].0 += crlb_r.sqrt();
                self.bin_crlb[idx].1 += 1;
            }
            if crlb_v.is_finite() {
                self.crlb_vel_root_sum += crlb_v.sqrt();
                self.crlb_vel_count += 1;
            }
        }
        self.c7 += diag.c7_violations;
        self.c8 += diag.c8_violations;
        self.c9 += diag.c9_violations;
    }

    /// Binned mean PRR table as (bin midpoint, prr).
    pub fn prr_by_distance(&self, cfg: &SimConfig) -> Vec<(f64, f64)> {
        self.bin_decode
            .iter()
            .enumerate()
            .filter(|(_, &(_, tot))| tot > 0)
            .map(|(i, &(ok, tot))| {
                (
                    (i as f64 + 0.5) * cfg.distance_bin_m,
                    ok as f64 / tot as f64,
                )
            })
            .collect()
    }

    pub fn kpis(&self, cfg: &SimConfig) -> Kpis {
        let frac = |num: f64, den: u64| if den > 0 { num / den as f64 } else { f64::NAN };
        let prr_bins = self.prr_by_distance(cfg);
        // Table-style PRR is read at the bin containing the reporting
        // distance (80 m); overall TX-slot PRR is the fallback.
        let report_bin = Self::bin_index(80.0, cfg.distance_bin_m);
        let prr_at_report = self
            .bin_decode
            .get(report_bin)
            .filter(|&&(_, tot)| tot > 0)
            .map(|&(ok, tot)| ok as f64 / tot as f64)
            .unwrap_or_else(|| frac(self.tx_prr_sum, self.tx_count));
        let max_rel =
            crate::comm::max_reliable_distance(&prr_bins, cfg.prr_reliability_threshold)
                .unwrap_or(0.0);
        Kpis {
            range_rcrlb_m: frac(self.crlb_range_root_sum, self.crlb_range_count),
            vel_rcrlb_mps: frac(self.crlb_vel_root_sum, self.crlb_vel_count),
            prr: frac(self.tx_prr_sum, self.tx_count),
            prr_at_report,
            throughput_bps: frac(self.tx_rate_eff_sum, self.tx_count),
            cbr: frac(self.cbr_sum, self.slot_count),
            max_reliable_distance_m: max_rel,
            comp_latency_s: frac(self.comp_c_sum_s, self.comp_c_count),
            mec_delay_s: frac(self.mec_delay_sum_s, self.slot_count),
            energy_j: frac(self.energy_sum_j, self.slot_count),
            mean_reward: frac(self.reward_sum, self.epoch_count),
            mean_e2e_s: frac(self.e2e_sum_s, self.e2e_count),
        }
    }
}

/// The nine table metrics (plus reward/e2e for curves), natural units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kpis {
    pub range_rcrlb_m: f64,
    pub vel_rcrlb_mps: f64,
    pub prr: f64,
    pub prr_at_report: f64,
    pub throughput_bps: f64,
    pub cbr: f64,
    pub max_reliable_distance_m: f64,
    pub comp_latency_s: f64,
    pub mec_delay_s: f64,
    pub energy_j: f64,
    pub mean_reward: f64,
    pub mean_e2e_s: f64,
}

impl Kpis {
    pub const COLUMNS: [&'static str; 9] = [
        "range_rcrlb_m",
        "vel_rcrlb_mps",
        "prr_pct",
        "throughput_mbps",
        "cbr_pct",
        "max_rel_dist_m",
        "comp_latency_ms",
        "mec_delay_ms",
        "energy_mj",
    ];

    /// Values in the table units matching [`Self::COLUMNS`].
    pub fn table_values(&self) -> [f64; 9] {
        [
            self.range_rcrlb_m,
            self.vel_rcrlb_mps,
            self.prr_at_report * 100.0,
            self.throughput_bps / 1e6,
            self.cbr * 100.0,
            self.max_reliable_distance_m,
            self.comp_latency_s * 1e3,
            self.mec_delay_s * 1e3,
            self.energy_j * 1e3,
        ]
    }
}

/// Options for one evaluation run.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub episodes: Option<u32>,
    pub trace_dir: Option<PathBuf>,
    pub trace_channels: bool,
    pub jsonl_path: Option<PathBuf>,
    pub forced_offloaders: Option<u32>,
}

/// Run `episodes` evaluation episodes of `policy` on a fresh environment.
pub fn run_policy(
    cfg: &SimConfig,
    policy: &EvalPolicy,
    opts: &EvalOptions,
) -> Result<EvalStats, EvalError> {
    let mut env = IsccEnv::new(cfg.clone());
    env.forced_offloaders = opts.forced_offloaders;
    env.trace_channels = opts.trace_channels;
    let episodes = opts.episodes.unwrap_or(cfg.eval_episodes);
    let streams = RngStreams::new(cfg.seed);
    let n = env.n_agents();
    let mut stats = EvalStats::default();
    let mut sink = match &opts.trace_dir {
        Some(dir) => Some(TraceSink::create(dir, cfg, opts.trace_channels)?),
        None => None,
    };
    let mut jsonl = match &opts.jsonl_path {
        Some(p) => Some(EpochJsonl::create(p)?),
        None => None,
    };
    for episode in 0..episodes {
        let (mut obs, _gs, mut masks) = env.reset(episode as u64);
        let mut rngs: Vec<ChaCha12Rng> = (0..n)
            .map(|i| {
                streams
                    .stream_salted("policy", i as u64, EVAL_SALT_BASE + episode as u64)
                    .unwrap()
            })
            .collect();
        for _ in 0..cfg.epochs_per_episode {
            let views = env.local_views();
            let actions: Vec<ActionIndices> = (0..n)
                .map(|i| policy.act(i, &env, &obs[i], &masks[i], &views[i], &mut rngs[i]))
                .collect();
            let res = env.step_epoch(&actions).expect("eval actions are masked");
            stats.absorb(&res.diag, cfg);
            if let Some(s) = &mut sink {
                s.absorb(&res.diag)?;
            }
            if let Some(j) = &mut jsonl {
                j.log(&res.diag)?;
            }
            obs = res.observations;
            masks = res.masks;
        }
    }
    if let Some(s) = sink {
        s.finish()?;
    }
    if let Some(j) = jsonl {
        j.finish()?;
    }
    Ok(stats)
}

/// Resolve a policy implementation, loading checkpoints for learned kinds.
pub fn resolve_policy(
    kind: PolicyKind,
    cfg: &SimConfig,
    checkpoint: Option<&Path>,
) -> Result<EvalPolicy, EvalError> {
    match kind {
        PolicyKind::Scg => Ok(EvalPolicy::greedy(GreedyKind::Scg)),
        PolicyKind::Ccg => Ok(EvalPolicy::greedy(GreedyKind::Ccg)),
        PolicyKind::Mappo | PolicyKind::MaA2c => {
            let dir =
                checkpoint.ok_or_else(|| EvalError::MissingCheckpoint(kind.name().into()))?;
            let policy = crate::marl::checkpoint::load(dir, cfg)?;
            Ok(EvalPolicy::Learned(Box::new(policy)))
        }
    }
}

/// Student-t 95% two-sided half-width (z beyond the table).
pub fn t_ci_halfwidth(values: &[f64]) -> f64 {
    const T975: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = T975.get(n - 2).copied().unwrap_or(1.960);
    t * se
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Per-seed KPI evaluation at one sweep point.
fn eval_point(
    base: &SimConfig,
    spec: &ExperimentSpec,
    value: f64,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(Kpis, EvalStats), EvalError> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let mut opts = EvalOptions::default();
    match spec.sweep {
        SweepVar::Density => {
            cfg.density_veh_per_km = value;
            cfg.n_vehicles = None;
        }
        SweepVar::DistanceBins => {}
        SweepVar::Offloaders => {
            opts.forced_offloaders = Some(value.round() as u32);
        }
    }
    cfg.finalize()?;
    let policy = resolve_policy(spec.policy, &cfg, checkpoint)?;
    let stats = run_policy(&cfg, &policy, &opts)?;
    Ok((stats.kpis(&cfg), stats))
}

/// Sweep summary kept for callers (the acceptance suite reads it directly).
pub struct SweepOutcome {
    /// Per (value, seed): KPIs.
    pub rows: Vec<(f64, u64, Kpis)>,
    /// Per value: seed-mean KPI table values.
    pub seed_means: Vec<(f64, [f64; 9])>,
    /// Distance-bin aggregation (only for distance-bins sweeps):
    /// (bin midpoint, seed-mean prr, seed-mean root-CRLB).
    pub distance_rows: Vec<(f64, f64, f64)>,
}

/// Run a full sweep and emit per-point and aggregate CSVs.
pub fn run(
    spec: &ExperimentSpec,
    base: &SimConfig,
    checkpoint: Option<&Path>,
) -> Result<SweepOutcome, EvalError> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir)?;
    let mut rows = Vec::new();
    let mut seed_means = Vec::new();
    let mut bin_acc: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();

    for &value in &spec.values {
        let mut per_seed: Vec<[f64; 9]> = Vec::new();
        for &seed in &spec.seeds {
            let (kpis, stats) = eval_point(base, spec, value, seed, checkpoint)?;
            per_seed.push(kpis.table_values());
            rows.push((value, seed, kpis));
            if spec.sweep == SweepVar::DistanceBins {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.finalize()?;
                for (mid, prr) in stats.prr_by_distance(&cfg) {
                    let entry = bin_acc
                        .iter_mut()
                        .find(|(m, _, _)| (*m - mid).abs() < 1e-9);
                    let entry = match entry {
                        Some(e) => e,
                        None => {
                            bin_acc.push((mid, Vec::new(), Vec::new()));
                            bin_acc.last_mut().unwrap()
                        }
                    };
                    entry.1.push(prr);
                }
                for (i, &(sum, cnt)) in stats.bin_crlb.iter().enumerate() {
                    if cnt == 0 {
                        continue;
                    }
                    let mid = (i as f64 + 0.5) * cfg.distance_bin_m;
                    let entry = bin_acc
                        .iter_mut()
                        .find(|(m, _, _)| (*m - mid).abs() < 1e-9);
                    let entry = match entry {
                        Some(e) => e,
                        None => {
                            bin_acc.push((mid, Vec::new(), Vec::new()));
                            bin_acc.last_mut().unwrap()
                        }
                    };
                    entry.2.push(sum / cnt as f64);
                }
            }
        }
        let mut means = [0.0; 9];
        for k in 0..9 {
            let col: Vec<f64> = per_seed.iter().map(|r| r[k]).collect();
            means[k] = mean(&col);
        }
        seed_means.push((value, means));
    }

    // Per-(value, seed) CSV.
    let mut cfg_for_hash = base.clone();
    cfg_for_hash.finalize()?;
    let mut header = vec!["value", "seed"];
    header.extend(Kpis::COLUMNS);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(v, s, k)| {
            let mut r = vec![format!("{v}"), format!("{s}")];
            r.extend(k.table_values().iter().map(|x| format!("{x}")));
            r
        })
        .collect();
    write_table_csv(
        &spec.out_dir.join(format!(
            "sweep_{}_{}.csv",
            spec.sweep.name(),
            spec.policy.name()
        )),
        &cfg_for_hash,
        &header,
        &csv_rows,
    )?;

    // Seed-mean aggregate CSV.
    let mut agg_header = vec!["value"];
    agg_header.extend(Kpis::COLUMNS);
    let agg_rows: Vec<Vec<String>> = seed_means
        .iter()
        .map(|(v, m)| {
            let mut r = vec![format!("{v}")];
            r.extend(m.iter().map(|x| format!("{x}")));
            r
        })
        .collect();
    write_table_csv(
        &spec.out_dir.join(format!(
            "sweep_{}_{}_agg.csv",
            spec.sweep.name(),
            spec.policy.name()
        )),
        &cfg_for_hash,
        &agg_header,
        &agg_rows,
    )?;

    let mut distance_rows: Vec<(f64, f64, f64)> = bin_acc
        .iter()
        .map(|(mid, prrs, crlbs)| (*mid, mean(prrs), mean(crlbs)))
        .collect();
    distance_rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    if spec.sweep == SweepVar::DistanceBins {
        let rows: Vec<Vec<String>> = distance_rows
            .iter()
            .map(|(m, p, c)| vec![format!("{m}"), format!("{p}"), format!("{c}")])
            .collect();
        write_table_csv(
            &spec.out_dir.join(format!(
                "distance_bins_{}_agg.csv",
                spec.policy.name()
            )),
            &cfg_for_hash,
            &["distance_m", "prr", "root_crlb_range_m"],
            &rows,
        )?;
    }

    Ok(SweepOutcome {
        rows,
        seed_means,
        distance_rows,
    })
}

/// One KPI table row: per-metric seed means and 95% CIs.
#[derive(Debug, Clone)]
pub struct KpiRow {
    pub policy: PolicyKind,
    pub means: [f64; 9],
    pub cis: [f64; 9],
}

/// Evaluate all requested policies at the config's operating point.
pub fn kpi_table(
    base: &SimConfig,
    seeds: &[u64],
    policies: &[(PolicyKind, Option<PathBuf>)],
    out_dir: &Path,
) -> Result<Vec<KpiRow>, EvalError> {
    if policies.is_empty() {
        return Err(EvalError::BadSpec("no policies requested".into()));
    }
    if seeds.is_empty() {
        return Err(EvalError::BadSpec("seeds list is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for (kind, ckpt) in policies {
        let mut per_seed: Vec<[f64; 9]> = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.finalize()?;
            let policy = resolve_policy(*kind, &cfg, ckpt.as_deref())?;
            let stats = run_policy(&cfg, &policy, &EvalOptions::default())?;
            per_seed.push(stats.kpis(&cfg).table_values());
        }
        let mut means = [0.0; 9];
        let mut cis = [0.0; 9];
        for k in 0..9 {
            let col: Vec<f64> = per_seed.iter().map(|r| r[k]).collect();
            means[k] = mean(&col);
            cis[k] = t_ci_halfwidth(&col);
        }
        rows.push(KpiRow {
            policy: *kind,
            means,
            cis,
        });
    }

    let mut cfg_for_hash = base.clone();
    cfg_for_hash.finalize()?;
    let mut header = vec!["policy"];
    for c in Kpis::COLUMNS {
        header.push(c);
    }
    let mut header_full: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    for c in Kpis::COLUMNS {
        header_full.push(format!("{c}_ci"));
    }
    let header_refs: Vec<&str> = header_full.iter().map(|s| s.as_str()).collect();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut out = vec![r.policy.name().to_string()];
            out.extend(r.means.iter().map(|v| format!("{v}")));
            out.extend(r.cis.iter().map(|v| format!("{v}")));
            out
        })
        .collect();
    write_table_csv(
        &out_dir.join("kpi_table.csv"),
        &cfg_for_hash,
        &header_refs,
        &csv_rows,
    )?;
    std::fs::write(out_dir.join("kpi_table.txt"), render_kpi_table(&rows))?;
    Ok(rows)
}

/// Aligned-text rendering of the KPI grid.
pub fn render_kpi_table(rows: &[KpiRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<18}", "metric"));
    for r in rows {
        out.push_str(&format!("{:>24}", r.policy.name()));
    }
    out.push('\n');
    for (k, col) in Kpis::COLUMNS.iter().enumerate() {
        out.push_str(&format!("{col:<18}"));
        for r in rows {
            out.push_str(&format!(
                "{:>15.3} ±{:>6.3} ",
                r.means[k], r.cis[k]
            ));
        }
        out.push('\n');
    }
    out
}

/// Named experiment recipes for the standard report figures.
#[derive(Debug, Clone)]
pub enum Recipe {
    /// Training-curve comparison (run `train` for both learners, then plot).
    TrainingCurves,
    Sweep {
        sweep: SweepVar,
        values: Vec<f64>,
        /// Metric column of interest in the aggregate CSV.
        metric: &'static str,
    },
    KpiTable,
}

pub fn recipe(name: &str) -> Result<Recipe, EvalError> {
    let densities = vec![20.0, 40.0, 60.0, 80.0, 100.0];
    let dist = vec![10.0, 30.0, 50.0, 70.0, 90.0, 110.0, 130.0, 150.0, 170.0, 190.0];
    Ok(match name {
        "fig3" => Recipe::TrainingCurves,
        "fig4" => Recipe::Sweep {
            sweep: SweepVar::Density,
            values: densities,
            metric: "vel_rcrlb_mps",
        },
        "fig5" => Recipe::Sweep {
            sweep: SweepVar::Density,
            values: densities,
            metric: "range_rcrlb_m",
        },
        "fig6" => Recipe::Sweep {
            sweep: SweepVar::DistanceBins,
            values: dist,
            metric: "root_crlb_range_m",
        },
        "fig7" => Recipe::Sweep {
            sweep: SweepVar::DistanceBins,
            values: dist,
            metric: "prr",
        },
        "fig8" => Recipe::Sweep {
            sweep: SweepVar::Density,
            values: densities,
            metric: "throughput_mbps",
        },
        "fig9" => Recipe::Sweep {
            sweep: SweepVar::Density,
            values: densities,
            metric: "cbr_pct",
        },
        "fig10" => Recipe::Sweep {
            sweep: SweepVar::Density,
            values: densities,
            metric: "max_rel_dist_m",
        },
        "fig11" => Recipe::Sweep {
            sweep: SweepVar::Density,
            values: densities,
            metric: "comp_latency_ms",
        },
        "fig12" => Recipe::Sweep {
            sweep: SweepVar::Offloaders,
            values: vec![5.0, 15.0, 25.0, 35.0],
            metric: "mec_delay_ms",
        },
        "fig13" => Recipe::Sweep {
            sweep: SweepVar::Density,
            values: densities,
            metric: "energy_mj",
        },
        "table4" => Recipe::KpiTable,
        other => return Err(EvalError::UnknownRecipe(other.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        let mut c = SimConfig::default();
        c.n_vehicles = Some(4);
        c.density_veh_per_km = 40.0;
        c.rri_ms = 10;
        c.t_sel_ms = 10;
        c.t_sen_ms = 50;
        c.cbr_window_slots = 10;
        c.epochs_per_episode = 4;
        c.eval_episodes = 2;
        c.finalize().unwrap();
        c
    }

    #[test]
    fn policy_names_closed_set() {
        assert!(matches!("mappo".parse(), Ok(PolicyKind::Mappo)));
        assert!(matches!("ma-a2c".parse(), Ok(PolicyKind::MaA2c)));
        assert!(matches!("scg".parse(), Ok(PolicyKind::Scg)));
        assert!(matches!("ccg".parse(), Ok(PolicyKind::Ccg)));
        assert!(matches!(
            "foo".parse::<PolicyKind>(),
            Err(EvalError::UnknownPolicy(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let spec = ExperimentSpec {
            scenario: "t".into(),
            policy: PolicyKind::Ccg,
            sweep: SweepVar::Density,
            values: vec![],
            seeds: vec![1],
            out_dir: "/tmp/x".into(),
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn greedy_eval_produces_finite_kpis() {
        let cfg = small_cfg();
        let policy = EvalPolicy::greedy(GreedyKind::Ccg);
        let stats = run_policy(&cfg, &policy, &EvalOptions::default()).unwrap();
        let k = stats.kpis(&cfg);
        assert!(k.cbr.is_finite());
        assert!(k.energy_j.is_finite() && k.energy_j >= 0.0);
        assert!((-1.0..=0.0).contains(&k.mean_reward));
        assert!(stats.slot_count > 0);
    }

    #[test]
    fn missing_checkpoint_for_learned_policy() {
        let cfg = small_cfg();
        assert!(matches!(
            resolve_policy(PolicyKind::Mappo, &cfg, None),
            Err(EvalError::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn density_sweep_writes_expected_rows() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            scenario: "density".into(),
            policy: PolicyKind::Ccg,
            sweep: SweepVar::Density,
            values: vec![20.0, 40.0],
            seeds: vec![1, 2],
            out_dir: dir.path().to_path_buf(),
        };
        let outcome = run(&spec, &cfg, None).unwrap();
        assert_eq!(outcome.rows.len(), 4, "2 values x 2 seeds");
        assert_eq!(outcome.seed_means.len(), 2);
        let text =
            std::fs::read_to_string(dir.path().join("sweep_density_ccg.csv")).unwrap();
        // comment + header + 4 rows
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn offloader_sweep_moves_mec_delay() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            scenario: "off".into(),
            policy: PolicyKind::Ccg,
            sweep: SweepVar::Offloaders,
            values: vec![0.0, 4.0],
            seeds: vec![1],
            out_dir: dir.path().to_path_buf(),
        };
        let outcome = run(&spec, &cfg, None).unwrap();
        let d0 = outcome.seed_means[0].1[7];
        let d4 = outcome.seed_means[1].1[7];
        assert!(d4 > d0, "forced offloaders must raise MEC delay: {d0} vs {d4}");
    }

    #[test]
    fn t_ci_reference_value() {
        // Three seeds: df = 2, t = 4.303.
        let hw = t_ci_halfwidth(&[1.0, 2.0, 3.0]);
        let se = (1.0f64 / 3.0).sqrt();
        assert!((hw - 4.303 * se).abs() < 1e-9);
    }

    #[test]
    fn recipes_resolve() {
        assert!(matches!(recipe("fig3"), Ok(Recipe::TrainingCurves)));
        assert!(matches!(recipe("table4"), Ok(Recipe::KpiTable)));
        for f in ["fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "fig11", "fig12", "fig13"] {
            assert!(matches!(recipe(f), Ok(Recipe::Sweep { .. })), "{f}");
        }
        assert!(recipe("fig99").is_err());
    }

    #[test]
    fn kpi_table_requires_inputs() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        assert!(kpi_table(&cfg, &[], &[(PolicyKind::Ccg, None)], dir.path()).is_err());
        assert!(kpi_table(&cfg, &[1], &[], dir.path()).is_err());
    }
}
