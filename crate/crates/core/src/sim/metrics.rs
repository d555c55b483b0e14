use std::io::Write;

use serde::Serialize;

use crate::platform::{Micros, TargetKind};
use crate::threshold::ThresholdTable;

/// One measured process.
#[derive(Debug, Clone, PartialEq)]
pub struct AppCompletion {
    pub app_id: String,
    pub arrival: Micros,
    /// Arrival to finish (or to the time limit).
    pub completion: Micros,
    /// Target of the last call the process made.
    pub target: TargetKind,
    pub calls_done: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TargetCounts {
    pub x86: u32,
    pub arm: u32,
    pub fpga: u32,
}

impl TargetCounts {
    pub fn get(&self, t: TargetKind) -> u32 {
        match t {
            TargetKind::X86 => self.x86,
            TargetKind::Arm => self.arm,
            TargetKind::Fpga => self.fpga,
        }
    }

    pub(crate) fn bump(&mut self, t: TargetKind) {
        match t {
            TargetKind::X86 => self.x86 += 1,
            TargetKind::Arm => self.arm += 1,
            TargetKind::Fpga => self.fpga += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.x86 + self.arm + self.fpga
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    /// Measured processes, in launch order.
    pub completions: Vec<AppCompletion>,
    pub mean_completion_ms: f64,
    /// Calls completed by time-limited processes per second of their limit.
    pub throughput: f64,
    /// Run placements (every process, background apps included).
    pub migrations: TargetCounts,
    /// FPGA calls sent back to x86 because their kernel was not loaded.
    pub fpga_fallbacks: u32,
    pub reconfigurations: u32,
    pub makespan: Micros,
    /// Work delivered by the x86 cores to finite jobs, in ms.
    pub x86_work_ms: f64,
    /// Isolated x86 demand of the calls that ran there, in ms.
    pub x86_demand_ms: f64,
    pub final_table: ThresholdTable,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub stddev: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for fewer than two values).
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, stddev }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedMetrics {
    pub runs: Vec<SimMetrics>,
    pub mean_completion: MeanStd,
    pub throughput: MeanStd,
}

impl RepeatedMetrics {
    pub fn from_runs(runs: Vec<SimMetrics>) -> Self {
        let means: Vec<f64> = runs.iter().map(|m| m.mean_completion_ms).collect();
        let tps: Vec<f64> = runs.iter().map(|m| m.throughput).collect();
        RepeatedMetrics {
            mean_completion: MeanStd::of(&means),
            throughput: MeanStd::of(&tps),
            runs,
        }
    }

    pub fn mean_count(&self, f: impl Fn(&SimMetrics) -> u32) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().map(|m| f64::from(f(m))).sum::<f64>() / self.runs.len() as f64
    }
}

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    scenario_id: &'a str,
    policy: &'a str,
    repeat: u32,
    app_id: &'a str,
    completion_ms: String,
    target_executed: &'a str,
}

/// Writes per-app rows (with a header when `header` is set).
pub fn write_metrics_csv<W: Write>(
    out: W,
    header: bool,
    rows: &[(&str, &str, u32, &SimMetrics)],
) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(header)
        .from_writer(out);
    for (scenario_id, policy, repeat, m) in rows {
        for c in &m.completions {
            w.serialize(MetricsRow {
                scenario_id,
                policy,
                repeat: *repeat,
                app_id: &c.app_id,
                completion_ms: c.completion.to_string(),
                target_executed: c.target.name(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const METRICS_HEADER: &str = "scenario_id,policy,repeat,app_id,completion_ms,target_executed";
