use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hybrid_core::forecaster::Fidelity;
use hybrid_sim::bench::report::render_best_table;
use hybrid_sim::bench::{
    run_scenario, BenchError, DataSource, DriftKind, ScenarioConfig, ScenarioReport,
};
use hybrid_sim::fabric::ledger::render_latency_table;
use hybrid_sim::fabric::Preset;
use hybrid_sim::pipeline::{CloseRule, WeightingMode};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DeploymentArg {
    Edge,
    Cloud,
    EdgeCloud,
    All,
}

impl DeploymentArg {
    fn presets(self) -> Vec<Preset> {
        match self {
            DeploymentArg::Edge => vec![Preset::EdgeCentric],
            DeploymentArg::Cloud => vec![Preset::CloudCentric],
            DeploymentArg::EdgeCloud => vec![Preset::EdgeCloud],
            DeploymentArg::All => Preset::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FidelityArg {
    #[value(name = "paper")]
    Published,
    Desk,
}

/// Runs hybrid stream analytics scenarios on the simulated edge-cloud
/// fabric and writes per-window and summary reports.
#[derive(Debug, Parser)]
#[command(name = "hybrid-bench", version)]
struct Args {
    /// TOML scenario file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Drift scenario: none, gradual or abrupt.
    #[arg(long)]
    scenario: Option<DriftKind>,
    #[arg(long, value_enum)]
    deployment: Option<DeploymentArg>,
    /// `dynamic` or `static:<ws>:<wb>`.
    #[arg(long)]
    weighting: Option<WeightingMode>,
    #[arg(long)]
    windows: Option<usize>,
    /// Window close rule: `count:N` or `seconds:S`.
    #[arg(long)]
    window: Option<CloseRule>,
    #[arg(long, value_enum)]
    fidelity: Option<FidelityArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// `synth` or a CSV path.
    #[arg(long)]
    data: Option<DataSource>,
    /// Calibration TOML replacing the shipped defaults.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Overrides the edge node's memory in MB.
    #[arg(long)]
    edge_memory_mb: Option<u64>,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Continue an earlier run in the same output directory.
    #[arg(long)]
    resume: bool,
}

fn scenario(args: &Args) -> Result<ScenarioConfig, BenchError> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(v) = args.scenario {
        cfg.drift = v;
    }
    if let Some(v) = args.weighting {
        cfg.weighting = v;
    }
    if let Some(v) = args.windows {
        cfg.windows = v;
    }
    if let Some(v) = args.window {
        cfg.window = v;
    }
    if let Some(v) = args.fidelity {
        cfg.fidelity = match v {
            FidelityArg::Published => Fidelity::Published,
            FidelityArg::Desk => Fidelity::Desk,
        };
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.data {
        cfg.data = v.clone();
    }
    if let Some(v) = &args.calibration {
        cfg.calibration = Some(v.clone());
    }
    if let Some(v) = args.edge_memory_mb {
        cfg.edge_memory_mb = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(r: &ScenarioReport) {
    let s = &r.summary;
    println!(
        "== {} / {} / {} : {} windows (config {})",
        s.config.drift,
        s.config.deployment,
        s.config.weighting,
        s.windows,
        &s.config_hash[..12]
    );
    if r.resumed_windows > 0 {
        println!("resumed: {} archived windows reproduced", r.resumed_windows);
    }
    match &s.mean_rmse {
        Some(m) => println!(
            "mean RMSE over {} windows: speed {:.6}  batch {:.6}  hybrid {:.6}  (hybrid vs batch {:+.2}%, vs speed {:+.2}%)",
            m.windows, m.speed, m.batch, m.hybrid, m.hybrid_vs_batch_pct, m.hybrid_vs_speed_pct
        ),
        None => println!("mean RMSE: no window had speed output"),
    }
    print!("{}", render_best_table(&s.best_table));
    let f = &s.solver_flags;
    println!(
        "flags: dynamic {}  fallback {}  no-speed-model {}  not-converged {}  degenerate {}",
        f.dynamic_windows,
        f.first_window_fallback,
        f.no_speed_model,
        f.solver_not_converged,
        f.degenerate_fit
    );
    for i in &s.issues {
        println!("issue: window {:?} {}: {}", i.window, i.module, i.message);
    }
    for w in &s.warnings {
        println!("warning: {w}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let base = match scenario(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let presets = args
        .deployment
        .map_or(vec![base.deployment], DeploymentArg::presets);
    let multi = presets.len() > 1;
    let mut rows = Vec::new();
    let mut failure: Option<BenchError> = None;
    for preset in presets {
        let cfg = ScenarioConfig {
            deployment: preset,
            ..base.clone()
        };
        let out = if multi {
            args.out.join(preset.as_str())
        } else {
            args.out.clone()
        };
        match run_scenario(&cfg, &out, args.resume) {
            Ok(report) => {
                print_report(&report);
                rows.push(report.summary.latency.clone());
            }
            Err(e) => {
                eprintln!("error ({preset}): {e}");
                failure.get_or_insert(e);
            }
        }
    }
    if !rows.is_empty() {
        println!("\nlatency (s)");
        print!("{}", render_latency_table(&rows));
    }
    match failure {
        Some(e) => ExitCode::from(e.exit_code() as u8),
        None => ExitCode::SUCCESS,
    }
}
