//! `iscc` command-line driver: training, evaluation, sweeps, the KPI table,
//! and CSV-to-SVG plotting.
//!
//! Exit codes: 0 on success, 2 on configuration/validation errors, 1 on
//! runtime failures.

use clap::{Parser, Subcommand};
use iscc_core::config::{load_config, SimConfig};
use iscc_core::env::IsccEnv;
use iscc_core::eval::{
    self, kpi_table, recipe, EvalError, EvalOptions, ExperimentSpec, PolicyKind, Recipe, SweepVar,
};
use iscc_core::marl::{checkpoint, train, Algo};
use iscc_core::plot::{plot_csv, PlotKind};
use iscc_core::trace::{write_crlb_sweep_csv, write_curves_csv, write_table_csv, EpochJsonl};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "iscc",
    about = "Deterministic NR-V2X Mode-2 ISCC simulator with MAPPO and greedy schedulers"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a learned scheduler and write checkpoints plus curves.
    Train {
        /// TOML (or JSON) config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// mappo or ma-a2c.
        #[arg(long, default_value = "mappo")]
        policy: String,
        /// Run seeds; falls back to ISCC_SEED, then the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the configured episode count.
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Evaluate one policy at the configured operating point.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: String,
        /// Checkpoint directory (required for learned policies).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run seeds; falls back to ISCC_SEED, then the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<u32>,
        /// Also write per-slot and MAC/channel trace CSVs.
        #[arg(long)]
        debug_traces: bool,
    },
    /// Sweep an experiment axis and emit per-point and aggregate CSVs.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "ccg")]
        policy: String,
        /// density | distance-bins | offloaders.
        #[arg(long)]
        sweep_var: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Run seeds (default 1,2,3; ISCC_SEED narrows to one).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Named preset (fig4..fig13) overriding sweep-var/values.
        #[arg(long)]
        recipe: Option<String>,
    },
    /// KPI grid across policies at the fixed operating point.
    Table {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run seeds (default 1,2,3; ISCC_SEED narrows to one).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "scg,ccg")]
        policies: Vec<String>,
        #[arg(long)]
        checkpoint_mappo: Option<PathBuf>,
        #[arg(long)]
        checkpoint_ma_a2c: Option<PathBuf>,
    },
    /// Render a CSV as a self-contained SVG chart.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        /// line | bar.
        #[arg(long, default_value = "line")]
        kind: String,
        /// X-axis column name.
        #[arg(long, default_value = "value")]
        x: String,
        /// Series columns (default: every other column).
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> CliError {
        match e {
            EvalError::Io(_) | EvalError::Train(_) => runtime(e),
            _ => validation(e),
        }
    }
}

fn load(config: &Option<PathBuf>) -> Result<SimConfig, CliError> {
    match config {
        Some(path) => load_config(path).map_err(validation),
        None => {
            let mut cfg = SimConfig::default();
            cfg.finalize().map_err(validation)?;
            Ok(cfg)
        }
    }
}

fn parse_policy(s: &str) -> Result<PolicyKind, CliError> {
    PolicyKind::from_str(s).map_err(validation)
}

/// Explicit --seeds wins, then ISCC_SEED, then the fallback.
fn resolve_seeds(cli: Option<Vec<u64>>, fallback: Vec<u64>) -> Vec<u64> {
    if let Some(s) = cli {
        return s;
    }
    if let Some(s) = std::env::var("ISCC_SEED")
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
    {
        return vec![s];
    }
    fallback
}

fn run_train(
    config: Option<PathBuf>,
    policy: String,
    seeds: Option<Vec<u64>>,
    out: PathBuf,
    episodes: Option<u32>,
) -> Result<(), CliError> {
    let base = load(&config)?;
    let seeds = resolve_seeds(seeds, vec![base.seed]);
    let algo = match parse_policy(&policy)? {
        PolicyKind::Mappo => Algo::Mappo,
        PolicyKind::MaA2c => Algo::MaA2c,
        other => {
            return Err(CliError::Validation(format!(
                "policy {} is not trainable",
                other.name()
            )))
        }
    };
    if seeds.is_empty() {
        return Err(CliError::Validation("seeds list is empty".into()));
    }
    for &seed in &seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        if let Some(ep) = episodes {
            cfg.episodes = ep;
        }
        cfg.finalize().map_err(validation)?;
        let mut env = IsccEnv::new(cfg.clone());
        let result = train(&mut env, algo).map_err(runtime)?;
        let tag = format!("{}_seed{}", algo.name(), seed);
        checkpoint::save(out.join("checkpoints").join(&tag), &result.policy, &cfg)
            .map_err(runtime)?;
        write_curves_csv(&out.join(format!("curves_{tag}.csv")), &cfg, &result.curves)
            .map_err(runtime)?;
        let mut jsonl =
            EpochJsonl::create(&out.join(format!("epochs_{tag}.jsonl"))).map_err(runtime)?;
        for d in &result.epoch_logs {
            jsonl.log(d).map_err(runtime)?;
        }
        jsonl.finish().map_err(runtime)?;
        let last = result.curves.last().map(|c| c.mean_reward).unwrap_or(f64::NAN);
        println!("trained {tag}: final mean reward {last:.4}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_eval(
    config: Option<PathBuf>,
    policy: String,
    checkpoint_dir: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    out: PathBuf,
    episodes: Option<u32>,
    debug_traces: bool,
) -> Result<(), CliError> {
    let base = load(&config)?;
    let seeds = resolve_seeds(seeds, vec![base.seed]);
    let kind = parse_policy(&policy)?;
    for &seed in &seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.finalize().map_err(validation)?;
        let run_dir = out.join(format!("eval_{}_seed{}", kind.name(), seed));
        let policy_impl = eval::resolve_policy(kind, &cfg, checkpoint_dir.as_deref())?;
        let opts = EvalOptions {
            episodes,
            trace_dir: debug_traces.then(|| run_dir.clone()),
            trace_channels: debug_traces,
            jsonl_path: Some(run_dir.join("epochs.jsonl")),
            forced_offloaders: None,
        };
        let stats = eval::run_policy(&cfg, &policy_impl, &opts)?;
        let kpis = stats.kpis(&cfg);
        let mut header = vec!["policy", "seed"];
        header.extend(iscc_core::eval::Kpis::COLUMNS);
        let mut row = vec![kind.name().to_string(), format!("{seed}")];
        row.extend(kpis.table_values().iter().map(|v| format!("{v}")));
        write_table_csv(&run_dir.join("kpi.csv"), &cfg, &header, &[row]).map_err(runtime)?;
        write_crlb_sweep_csv(&run_dir.join("crlb_sweep.csv"), &cfg).map_err(runtime)?;
        let bins = stats.prr_by_distance(&cfg);
        let bin_rows: Vec<Vec<String>> = bins
            .iter()
            .map(|(d, p)| vec![format!("{d}"), format!("{p}")])
            .collect();
        write_table_csv(
            &run_dir.join("prr_by_distance.csv"),
            &cfg,
            &["distance_m", "prr"],
            &bin_rows,
        )
        .map_err(runtime)?;
        println!(
            "evaluated {} seed {}: prr {:.3}, cbr {:.3}, energy {:.3} mJ/slot",
            kind.name(),
            seed,
            kpis.prr,
            kpis.cbr,
            kpis.energy_j * 1e3
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_sweep(
    config: Option<PathBuf>,
    policy: String,
    sweep_var: Option<String>,
    values: Vec<f64>,
    seeds: Option<Vec<u64>>,
    out: PathBuf,
    checkpoint_dir: Option<PathBuf>,
    recipe_name: Option<String>,
) -> Result<(), CliError> {
    let base = load(&config)?;
    let seeds = resolve_seeds(seeds, vec![1, 2, 3]);
    let kind = parse_policy(&policy)?;
    let (sweep, values) = match recipe_name {
        Some(name) => match recipe(&name)? {
            Recipe::Sweep {
                sweep,
                values: v,
                metric,
            } => {
                println!("recipe {name}: sweep {} on {metric}", sweep.name());
                (sweep, v)
            }
            Recipe::TrainingCurves => {
                return Err(CliError::Validation(
                    "recipe fig3 is the training comparison; run `iscc train` for each learner \
                     and plot the curves CSVs"
                        .into(),
                ))
            }
            Recipe::KpiTable => {
                return Err(CliError::Validation(
                    "recipe table4 is the KPI grid; run `iscc table`".into(),
                ))
            }
        },
        None => {
            let var = sweep_var.ok_or_else(|| {
                CliError::Validation("either --sweep-var or --recipe is required".into())
            })?;
            let sweep = SweepVar::from_str(&var)?;
            (sweep, values)
        }
    };
    let spec = ExperimentSpec {
        scenario: format!("sweep_{}", sweep.name()),
        policy: kind,
        sweep,
        values,
        seeds,
        out_dir: out,
    };
    let outcome = eval::run(&spec, &base, checkpoint_dir.as_deref())?;
    for (value, means) in &outcome.seed_means {
        println!(
            "{} {}: range-crlb {:.3} m, prr {:.1}%, cbr {:.1}%, mec {:.3} ms, energy {:.3} mJ",
            spec.sweep.name(),
            value,
            means[0],
            means[2],
            means[4],
            means[7],
            means[8]
        );
    }
    Ok(())
}

fn run_table(
    config: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    out: PathBuf,
    policies: Vec<String>,
    checkpoint_mappo: Option<PathBuf>,
    checkpoint_ma_a2c: Option<PathBuf>,
) -> Result<(), CliError> {
    let base = load(&config)?;
    let seeds = resolve_seeds(seeds, vec![1, 2, 3]);
    let mut requested = Vec::new();
    for p in &policies {
        let kind = parse_policy(p)?;
        let ckpt = match kind {
            PolicyKind::Mappo => checkpoint_mappo.clone(),
            PolicyKind::MaA2c => checkpoint_ma_a2c.clone(),
            _ => None,
        };
        requested.push((kind, ckpt));
    }
    let rows = kpi_table(&base, &seeds, &requested, &out)?;
    print!("{}", eval::render_kpi_table(&rows));
    Ok(())
}

fn run_plot(
    csv: PathBuf,
    kind: String,
    x: String,
    y: Vec<String>,
    out: PathBuf,
) -> Result<(), CliError> {
    let kind = PlotKind::from_str(&kind).map_err(validation)?;
    plot_csv(&csv, kind, &x, &y, &out).map_err(validation)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train {
            config,
            policy,
            seeds,
            out,
            episodes,
        } => run_train(config, policy, seeds, out, episodes),
        Cmd::Eval {
            config,
            policy,
            checkpoint,
            seeds,
            out,
            episodes,
            debug_traces,
        } => run_eval(config, policy, checkpoint, seeds, out, episodes, debug_traces),
        Cmd::Sweep {
            config,
            policy,
            sweep_var,
            values,
            seeds,
            out,
            checkpoint,
            recipe,
        } => run_sweep(config, policy, sweep_var, values, seeds, out, checkpoint, recipe),
        Cmd::Table {
            config,
            seeds,
            out,
            policies,
            checkpoint_mappo,
            checkpoint_ma_a2c,
        } => run_table(config, seeds, out, policies, checkpoint_mappo, checkpoint_ma_a2c),
        Cmd::Plot { csv, kind, x, y, out } => run_plot(csv, kind, x, y, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
