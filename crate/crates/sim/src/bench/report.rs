//! Per-window reports, best-approach tables, box-plot statistics and the
//! summary document.
//!
//! `windows.csv` header, one row per window in index order:
//!
//! ```text
//! window,records,speed_rmse,batch_rmse,hybrid_rmse,weight_speed,weight_batch,
//! weight_origin,best,speed_model_version,speed_staleness,first_window_fallback,
//! no_speed_model,solver_not_converged,degenerate_fit,fit_hybrid_rmse,fit_min_rmse,
//! speed_inference_comp_ms,speed_inference_comm_ms,batch_inference_comp_ms,
//! batch_inference_comm_ms,hybrid_inference_comp_ms,hybrid_inference_comm_ms,
//! speed_training_comp_ms,speed_training_comm_ms
//! ```
//!
//! Empty cells mean "not applicable" (no speed model, no fit, phase not run).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use hybrid_core::weighting::{combine, static_weights, WeightOrigin};
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::BenchError;
use crate::fabric::clock::ticks_to_ms;
use crate::fabric::ledger::{render_latency_table, LatencyRow};
use crate::fabric::{LatencyLedger, Phase};
use crate::pipeline::{refresh_weights, SessionIssue, WeightingMode, WindowResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const TIE_BREAK: &str = "ties go to hybrid, then speed, then batch";
pub const WHISKERS: &str = "tukey 1.5*IQR; whiskers at the most extreme values inside the fences";
pub const QUANTILES: &str = "linear interpolation between order statistics (type 7)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Speed,
    Batch,
    Hybrid,
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Approach::Speed => "speed",
            Approach::Batch => "batch",
            Approach::Hybrid => "hybrid",
        })
    }
}

/// Argmin of the RMSEs; an absent speed RMSE does not compete.
pub fn best_approach(speed: Option<f64>, batch: f64, hybrid: f64) -> Approach {
    let mut best = (Approach::Hybrid, hybrid);
    for (approach, value) in [(Approach::Speed, speed), (Approach::Batch, Some(batch))] {
        if let Some(v) = value {
            if v < best.1 {
                best = (approach, v);
            }
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: u64,
    pub records: usize,
    pub speed_rmse: Option<f64>,
    pub batch_rmse: f64,
    pub hybrid_rmse: f64,
    pub weight_speed: f64,
    pub weight_batch: f64,
    pub weight_origin: WeightOrigin,
    pub best: Approach,
    pub speed_model_version: u64,
    pub speed_staleness: Option<u64>,
    pub first_window_fallback: bool,
    pub no_speed_model: bool,
    pub solver_not_converged: bool,
    pub degenerate_fit: bool,
    pub fit_hybrid_rmse: Option<f64>,
    pub fit_min_rmse: Option<f64>,
    pub speed_inference_comp_ms: Option<f64>,
    pub speed_inference_comm_ms: Option<f64>,
    pub batch_inference_comp_ms: Option<f64>,
    pub batch_inference_comm_ms: Option<f64>,
    pub hybrid_inference_comp_ms: Option<f64>,
    pub hybrid_inference_comm_ms: Option<f64>,
    pub speed_training_comp_ms: Option<f64>,
    pub speed_training_comm_ms: Option<f64>,
}

impl WindowReport {
    pub fn from_result(r: &WindowResult, ledger: &LatencyLedger) -> Self {
        let phase = |p: Phase| ledger.get(r.window_index, p);
        let comp = |p: Phase| phase(p).map(|l| ticks_to_ms(l.computation));
        let comm = |p: Phase| phase(p).map(|l| ticks_to_ms(l.communication));
        let (speed_rmse, batch_rmse, hybrid_rmse) =
            (r.speed_rmse(), r.batch_rmse(), r.hybrid_rmse());
        Self {
            window: r.window_index,
            records: r.len(),
            speed_rmse,
            batch_rmse,
            hybrid_rmse,
            weight_speed: r.weights.weights()[0],
            weight_batch: r.weights.weights()[1],
            weight_origin: r.weights.origin,
            best: best_approach(speed_rmse, batch_rmse, hybrid_rmse),
            speed_model_version: r.speed_model_version,
            speed_staleness: r.speed_staleness(),
            first_window_fallback: r.flags.first_window_fallback,
            no_speed_model: r.flags.no_speed_model,
            solver_not_converged: r.flags.solver_not_converged,
            degenerate_fit: r.flags.degenerate_fit,
            fit_hybrid_rmse: r.fit.map(|f| f.hybrid_rmse),
            fit_min_rmse: r.fit.map(|f| f.batch_rmse.min(f.speed_rmse)),
            speed_inference_comp_ms: comp(Phase::SpeedInference),
            speed_inference_comm_ms: comm(Phase::SpeedInference),
            batch_inference_comp_ms: comp(Phase::BatchInference),
            batch_inference_comm_ms: comm(Phase::BatchInference),
            hybrid_inference_comp_ms: comp(Phase::HybridInference),
            hybrid_inference_comm_ms: comm(Phase::HybridInference),
            speed_training_comp_ms: comp(Phase::SpeedTraining),
            speed_training_comm_ms: comm(Phase::SpeedTraining),
        }
    }
}

pub fn write_window_csv<W: Write>(reports: &[WindowReport], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r).map_err(BenchError::runtime)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_window_csv<R: std::io::Read>(input: R) -> Result<Vec<WindowReport>, BenchError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(BenchError::runtime)
}

/// Fractions of windows on which each approach was best.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestFractions {
    pub windows: usize,
    pub speed: f64,
    pub batch: f64,
    pub hybrid: f64,
}

impl BestFractions {
    pub fn of(&self, a: Approach) -> f64 {
        match a {
            Approach::Speed => self.speed,
            Approach::Batch => self.batch,
            Approach::Hybrid => self.hybrid,
        }
    }
}

/// `None` for an empty input.
pub fn percentage_best(labels: impl IntoIterator<Item = Approach>) -> Option<BestFractions> {
    let mut counts = [0usize; 3];
    for a in labels {
        counts[a as usize] += 1;
    }
    let n: usize = counts.iter().sum();
    (n > 0).then(|| {
        let frac = |c: usize| c as f64 / n as f64;
        BestFractions {
            windows: n,
            speed: frac(counts[Approach::Speed as usize]),
            batch: frac(counts[Approach::Batch as usize]),
            hybrid: frac(counts[Approach::Hybrid as usize]),
        }
    })
}

/// One column of the best-approach table: a weighting applied to the same
/// speed and batch predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestColumn {
    pub weighting: String,
    pub fractions: Option<BestFractions>,
}

/// Hybrid output for `current` under `mode`, or `None` when the window is
/// not comparable (no speed output here, or no speed output in the window
/// before it to fit dynamic weights on).
fn hybrid_under(
    mode: WeightingMode,
    current: &WindowResult,
    previous: Option<&WindowResult>,
) -> Option<Vec<f64>> {
    let speed = current.speed.as_ref()?;
    let prev =
        previous.filter(|p| p.window_index + 1 == current.window_index && p.speed.is_some())?;
    let weights = match mode {
        WeightingMode::Static { speed, batch } => static_weights(speed, batch).ok()?,
        WeightingMode::Dynamic => {
            refresh_weights(Some(prev), mode, current.window_index)
                .ok()?
                .weights
        }
    };
    combine(&[speed.as_slice(), current.batch.as_slice()], &weights).ok()
}

/// The static grid and dynamic weighting, each recomputed from one
/// session's speed and batch predictions over the windows where every
/// column is defined.
pub fn best_table(results: &[WindowResult]) -> Vec<BestColumn> {
    let modes = WeightingMode::STATIC_GRID
        .iter()
        .map(|&(speed, batch)| WeightingMode::Static { speed, batch })
        .chain([WeightingMode::Dynamic]);
    modes
        .map(|mode| {
            let labels = results.iter().enumerate().filter_map(|(i, r)| {
                let prev = i.checked_sub(1).map(|j| &results[j]);
                let hybrid = hybrid_under(mode, r, prev)?;
                let hybrid_rmse = hybrid_core::weighting::rmse(&r.truth, &hybrid).ok()?;
                Some(best_approach(r.speed_rmse(), r.batch_rmse(), hybrid_rmse))
            });
            BestColumn {
                weighting: mode.label(),
                fractions: percentage_best(labels),
            }
        })
        .collect()
}

pub fn render_best_table(columns: &[BestColumn]) -> String {
    let mut out = format!("{:<8}", "best");
    for c in columns {
        out.push_str(&format!(" {:>11}", c.weighting));
    }
    out.push('\n');
    for a in [Approach::Speed, Approach::Batch, Approach::Hybrid] {
        out.push_str(&format!("{:<8}", a.to_string()));
        for c in columns {
            match &c.fractions {
                Some(f) => out.push_str(&format!(" {:>11.4}", f.of(a))),
                None => out.push_str(&format!(" {:>11}", "-")),
            }
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<8}", "windows"));
    for c in columns {
        out.push_str(&format!(" {:>11}", c.fractions.map_or(0, |f| f.windows)));
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `None` for an empty input. Non-finite values are ignored.
pub fn boxplot_stats(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || {
        v.iter()
            .copied()
            .filter(|x| (lo_fence..=hi_fence).contains(x))
    };
    Some(BoxStats {
        n: v.len(),
        median,
        q1,
        q3,
        lower_whisker: inside().fold(f64::INFINITY, f64::min),
        upper_whisker: inside().fold(f64::NEG_INFINITY, f64::max),
        outliers: v
            .iter()
            .copied()
            .filter(|x| !(lo_fence..=hi_fence).contains(x))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub tie_break: String,
    pub whiskers: String,
    pub quantiles: String,
    pub best_table: String,
    pub mean_rmse: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            tie_break: TIE_BREAK.into(),
            whiskers: WHISKERS.into(),
            quantiles: QUANTILES.into(),
            best_table: "each column recombines this session's speed and batch predictions; windows without \
                         speed output in both the window and its predecessor are excluded"
                .into(),
            mean_rmse: "averaged over windows that have speed output".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRmse {
    pub windows: usize,
    pub speed: f64,
    pub batch: f64,
    pub hybrid: f64,
    /// Relative RMSE reduction of hybrid over batch, in percent.
    pub hybrid_vs_batch_pct: f64,
    pub hybrid_vs_speed_pct: f64,
}

impl MeanRmse {
    pub fn from_reports(reports: &[WindowReport]) -> Option<Self> {
        let rows: Vec<(f64, f64, f64)> = reports
            .iter()
            .filter_map(|r| r.speed_rmse.map(|s| (s, r.batch_rmse, r.hybrid_rmse)))
            .collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let speed = rows.iter().map(|r| r.0).sum::<f64>() / n;
        let batch = rows.iter().map(|r| r.1).sum::<f64>() / n;
        let hybrid = rows.iter().map(|r| r.2).sum::<f64>() / n;
        Some(Self {
            windows: rows.len(),
            speed,
            batch,
            hybrid,
            hybrid_vs_batch_pct: (batch - hybrid) / batch * 100.0,
            hybrid_vs_speed_pct: (speed - hybrid) / speed * 100.0,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagCounts {
    pub dynamic_windows: usize,
    pub first_window_fallback: usize,
    pub no_speed_model: usize,
    pub solver_not_converged: usize,
    pub degenerate_fit: usize,
}

impl FlagCounts {
    pub fn from_reports(reports: &[WindowReport]) -> Self {
        let count = |f: fn(&WindowReport) -> bool| reports.iter().filter(|r| f(r)).count();
        Self {
            dynamic_windows: count(|r| r.weight_origin == WeightOrigin::Dynamic),
            first_window_fallback: count(|r| r.first_window_fallback),
            no_speed_model: count(|r| r.no_speed_model),
            solver_not_converged: count(|r| r.solver_not_converged),
            degenerate_fit: count(|r| r.degenerate_fit),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub windows_injected: usize,
    pub messages_published: u64,
    pub deliveries: u64,
    pub redeliveries: u64,
    pub speed_models_trained: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: ScenarioConfig,
    pub conventions: Conventions,
    pub windows: usize,
    pub mean_rmse: Option<MeanRmse>,
    /// Best-approach fractions from this session's own per-window labels.
    pub best_reported: Option<BestFractions>,
    pub best_table: Vec<BestColumn>,
    pub boxplots: BTreeMap<Approach, BoxStats>,
    pub solver_flags: FlagCounts,
    pub latency: LatencyRow,
    pub counters: Counters,
    pub issues: Vec<SessionIssue>,
    pub warnings: Vec<String>,
}

pub fn boxplots(reports: &[WindowReport]) -> BTreeMap<Approach, BoxStats> {
    let series = [
        (
            Approach::Speed,
            reports
                .iter()
                .filter_map(|r| r.speed_rmse)
                .collect::<Vec<_>>(),
        ),
        (
            Approach::Batch,
            reports.iter().map(|r| r.batch_rmse).collect(),
        ),
        (
            Approach::Hybrid,
            reports.iter().map(|r| r.hybrid_rmse).collect(),
        ),
    ];
    series
        .into_iter()
        .filter_map(|(a, v)| boxplot_stats(&v).map(|s| (a, s)))
        .collect()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), BenchError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| BenchError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes `windows.csv`, `summary.json`, `best.csv`, `boxplot.csv` and
/// `latency.txt` into `dir`.
pub fn emit(
    dir: &Path,
    reports: &[WindowReport],
    summary: &ScenarioSummary,
) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|e| BenchError::Runtime(format!("{}: {e}", dir.display())))?;

    let mut windows = Vec::new();
    write_window_csv(reports, &mut windows)?;
    write_file(dir, "windows.csv", &windows)?;

    let mut json = serde_json::to_string_pretty(summary).map_err(BenchError::runtime)?;
    json.push('\n');
    write_file(dir, "summary.json", json.as_bytes())?;

    let mut best = String::from("weighting,windows,speed,batch,hybrid\n");
    let columns = summary
        .best_table
        .iter()
        .map(|c| (c.weighting.as_str(), c.fractions));
    let reported = std::iter::once(("reported", summary.best_reported));
    for (name, f) in columns.chain(reported) {
        match f {
            Some(f) => best.push_str(&format!(
                "{name},{},{},{},{}\n",
                f.windows, f.speed, f.batch, f.hybrid
            )),
            None => best.push_str(&format!("{name},0,,,\n")),
        }
    }
    write_file(dir, "best.csv", best.as_bytes())?;

    let mut bp = String::from("approach,n,median,q1,q3,lower_whisker,upper_whisker,outliers\n");
    for (a, s) in &summary.boxplots {
        let outliers: Vec<String> = s.outliers.iter().map(f64::to_string).collect();
        bp.push_str(&format!(
            "{a},{},{},{},{},{},{},{}\n",
            s.n,
            s.median,
            s.q1,
            s.q3,
            s.lower_whisker,
            s.upper_whisker,
            outliers.join(";")
        ));
    }
    write_file(dir, "boxplot.csv", bp.as_bytes())?;

    write_file(
        dir,
        "latency.txt",
        render_latency_table(std::slice::from_ref(&summary.latency)).as_bytes(),
    )
}
