//! Experiment harness: calibration, packing, policy comparisons and
//! plot-ready aggregation, all driven from files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packer::{
    load_plan, pack_auto, pack_manual, parse_assignments, plan_summary, plan_to_csv, plan_to_toml,
    ConfigImage, KernelResource, PackError,
};
use crate::platform::{
    load_platform, load_profiles, FunctionProfile, Micros, PlatformError, PlatformSpec,
    ProcessorSharing,
};
use crate::sim::{
    run_repeated, write_metrics_csv, Background, FpgaInit, Policy, RepeatedMetrics, SimError,
    SimScenario, ThresholdSource, Workload,
};
use crate::threshold::{table_load, table_store, ThresholdError, ThresholdTable};

pub const DEFAULT_MAX_LOAD: u32 = 200;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot access `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("`{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error("scenario `{scenario}` under {policy}: {source}")]
    Sim {
        scenario: String,
        policy: Policy,
        #[source]
        source: SimError,
    },
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Schema,
    Simulation,
}

impl ExperimentError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ExperimentError::Io { .. }
            | ExperimentError::Platform(PlatformError::Io { .. })
            | ExperimentError::Threshold(ThresholdError::Io(_))
            | ExperimentError::Pack(PackError::Io(_)) => ErrorClass::Io,
            ExperimentError::Sim { .. } => ErrorClass::Simulation,
            _ => ErrorClass::Schema,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

// --- calibrate / pack -------------------------------------------------------

/// Estimates thresholds for every profile and writes them as CSV.
pub fn cmd_calibrate(
    profiles: &Path,
    platform: Option<&Path>,
    out: &Path,
    max_load: u32,
) -> Result<ThresholdTable, ExperimentError> {
    let profiles = load_profiles(profiles)?;
    let spec = match platform {
        Some(p) => load_platform(p)?,
        None => PlatformSpec::default(),
    };
    if profiles.is_empty() {
        warn!("no functions profiled; writing an empty threshold table");
    }
    let table = ThresholdTable::estimate(&profiles, &spec, &ProcessorSharing, max_load);
    table_store(&table, out)?;
    info!(
        "wrote {} threshold row(s) to {}",
        table.len(),
        out.display()
    );
    Ok(table)
}

/// Kernels of the profiles, one per kernel id, in profile order.
pub fn profile_kernels(profiles: &[FunctionProfile]) -> Vec<KernelResource> {
    let mut seen = std::collections::BTreeSet::new();
    profiles
        .iter()
        .filter_map(|p| p.kernel.clone())
        .filter(|k| seen.insert(k.kernel_id.clone()))
        .collect()
}

/// Packs the profiles' kernels into images and writes the plan
/// (CSV when `out` ends in `.csv`, TOML otherwise).
pub fn cmd_pack(
    profiles: &Path,
    capacity: u64,
    manual: Option<&Path>,
    out: &Path,
) -> Result<Vec<ConfigImage>, ExperimentError> {
    let kernels = profile_kernels(&load_profiles(profiles)?);
    let plan = match manual {
        Some(m) => {
            let text = fs::read_to_string(m).map_err(io_err(m))?;
            let map = parse_assignments(&text, &m.display().to_string())?;
            pack_manual(&map, &kernels, capacity)?
        }
        None => pack_auto(&kernels, capacity)?,
    };
    let body = if out.extension().is_some_and(|e| e == "csv") {
        plan_to_csv(&plan)
    } else {
        plan_to_toml(&plan)
    };
    write_file(out, body.as_bytes())?;
    info!("{}", plan_summary(&plan, capacity));
    Ok(plan)
}

// --- experiment configuration -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum WorkloadSpec {
    Fixed {
        apps: Vec<String>,
    },
    Random {
        size: u32,
        pool: Vec<String>,
        #[serde(default = "yes")]
        replacement: bool,
    },
    Periodic {
        waves: u32,
        apps_per_wave: u32,
        interval_ms: u64,
        pool: Vec<String>,
    },
    Throughput {
        app: String,
        images: u32,
        duration_ms: u64,
    },
    Mix {
        slow: String,
        fast: String,
        set_size: u32,
        slow_count: u32,
    },
    MixSweep {
        slow: String,
        fast: String,
        set_size: u32,
        fractions: Vec<f64>,
    },
}

fn yes() -> bool {
    true
}

impl From<WorkloadSpec> for Workload {
    fn from(w: WorkloadSpec) -> Self {
        match w {
            WorkloadSpec::Fixed { apps } => Workload::FixedSet { apps },
            WorkloadSpec::Random {
                size,
                pool,
                replacement,
            } => Workload::RandomSet {
                size,
                pool,
                with_replacement: replacement,
            },
            WorkloadSpec::Periodic {
                waves,
                apps_per_wave,
                interval_ms,
                pool,
            } => Workload::Periodic {
                waves,
                apps_per_wave,
                interval: Micros::from_ms_int(interval_ms),
                pool,
            },
            WorkloadSpec::Throughput {
                app,
                images,
                duration_ms,
            } => Workload::Throughput {
                app,
                images,
                duration: Micros::from_ms_int(duration_ms),
            },
            WorkloadSpec::Mix {
                slow,
                fast,
                set_size,
                slow_count,
            } => Workload::Mix {
                slow,
                fast,
                set_size,
                slow_count,
            },
            WorkloadSpec::MixSweep {
                slow,
                fast,
                set_size,
                fractions,
            } => Workload::MixSweep {
                slow,
                fast,
                set_size,
                fractions,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum BackgroundSpec {
    None,
    Constant {
        processes: u32,
        #[serde(default)]
        demand_ms: Option<f64>,
    },
    Periodic {
        waves: u32,
        apps_per_wave: u32,
        interval_ms: u64,
        pool: Vec<String>,
    },
}

impl From<BackgroundSpec> for Background {
    fn from(b: BackgroundSpec) -> Self {
        match b {
            BackgroundSpec::None => Background::None,
            BackgroundSpec::Constant {
                processes,
                demand_ms,
            } => Background::Constant {
                processes,
                demand: demand_ms.map(Micros::from_ms),
            },
            BackgroundSpec::Periodic {
                waves,
                apps_per_wave,
                interval_ms,
                pool,
            } => Background::Periodic {
                waves,
                apps_per_wave,
                interval: Micros::from_ms_int(interval_ms),
                pool,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSpec {
    id: String,
    #[serde(default)]
    x: Option<f64>,
    workload: WorkloadSpec,
    #[serde(default)]
    background: Option<BackgroundSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl OneOrMany {
    fn paths(&self) -> &[PathBuf] {
        match self {
            OneOrMany::One(p) => std::slice::from_ref(p),
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    id: String,
    #[serde(default)]
    figure: Option<String>,
    profiles: OneOrMany,
    #[serde(default)]
    platform: Option<PathBuf>,
    /// `"estimate"` or the path of a threshold CSV.
    #[serde(default)]
    thresholds: Option<String>,
    #[serde(default)]
    max_load: Option<u32>,
    #[serde(default)]
    plan: Option<PathBuf>,
    /// `"preload"`, `"preload:<image>"` or `"empty"`.
    #[serde(default)]
    fpga: Option<String>,
    policies: Vec<String>,
    #[serde(default)]
    repeats: Option<u32>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    time_cap_s: Option<u64>,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    background: Option<BackgroundSpec>,
    #[serde(default)]
    scenario: Vec<ScenarioSpec>,
}

/// One point of an experiment: a scenario and its position on the x axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPoint {
    pub x: f64,
    pub scenario: SimScenario,
}

/// A fully resolved experiment, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub figure: String,
    pub points: Vec<ExperimentPoint>,
    pub policies: Vec<Policy>,
    pub repeats: u32,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a configuration; relative paths resolve against `base`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self, ExperimentError> {
        let cfg_err = |message: String| ExperimentError::Config {
            path: origin.to_string(),
            message,
        };
        let file: ConfigFile = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };

        let mut profiles: Vec<FunctionProfile> = Vec::new();
        for p in file.profiles.paths() {
            for prof in load_profiles(&resolve(p))? {
                if profiles.iter().any(|q| q.app_id == prof.app_id) {
                    return Err(PlatformError::DuplicateApp(prof.app_id).into());
                }
                profiles.push(prof);
            }
        }
        let platform = match &file.platform {
            Some(p) => load_platform(&resolve(p))?,
            None => PlatformSpec::default(),
        };
        let max_load = file.max_load.unwrap_or(DEFAULT_MAX_LOAD);
        let thresholds = match file.thresholds.as_deref() {
            None | Some("estimate") => ThresholdSource::Estimate { max_load },
            Some(path) => ThresholdSource::Table(table_load(&resolve(Path::new(path)))?),
        };
        let plan = match &file.plan {
            Some(p) => Some(load_plan(&resolve(p))?),
            None => None,
        };
        let fpga_init = match file.fpga.as_deref() {
            None | Some("preload") => FpgaInit::Preload(None),
            Some("empty") => FpgaInit::Empty,
            Some(s) => match s.strip_prefix("preload:") {
                Some(img) if !img.is_empty() => FpgaInit::Preload(Some(img.to_string())),
                _ => return Err(cfg_err(format!("unknown fpga setting `{s}`"))),
            },
        };
        let policies = file
            .policies
            .iter()
            .map(|p| p.parse::<Policy>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(cfg_err)?;
        if policies.is_empty() {
            return Err(cfg_err("at least one policy is required".into()));
        }
        let repeats = file.repeats.unwrap_or(1);
        if repeats == 0 {
            return Err(cfg_err("repeats must be at least 1".into()));
        }
        if file.scenario.is_empty() {
            return Err(cfg_err("no [[scenario]] entries".into()));
        }
        let seed = file.seed.unwrap_or(0);
        let time_cap = file
            .time_cap_s
            .map(|s| Micros::from_ms_int(s * 1000))
            .unwrap_or(crate::sim::DEFAULT_TIME_CAP);

        let mut points = Vec::new();
        for (i, s) in file.scenario.into_iter().enumerate() {
            let background = s
                .background
                .or_else(|| file.background.clone())
                .map(Background::from)
                .unwrap_or_default();
            let base_scenario = SimScenario {
                id: s.id.clone(),
                platform: platform.clone(),
                profiles: profiles.clone(),
                thresholds: thresholds.clone(),
                plan: plan.clone(),
                fpga_init: fpga_init.clone(),
                workload: s.workload.into(),
                background,
                policy: policies[0],
                seed,
                time_cap,
            };
            base_scenario
                .validate()
                .map_err(|e| cfg_err(format!("scenario `{}`: {e}", s.id)))?;
            let expanded = base_scenario.expand();
            let sweep =
                expanded.len() > 1 || matches!(base_scenario.workload, Workload::MixSweep { .. });
            for (x, scenario) in expanded {
                let x = if sweep { x } else { s.x.unwrap_or(i as f64) };
                points.push(ExperimentPoint { x, scenario });
            }
        }
        Ok(ExperimentConfig {
            figure: file.figure.unwrap_or_else(|| file.id.clone()),
            id: file.id,
            points,
            policies,
            repeats,
            seed,
            output: file.output.map(|p| resolve(&p)),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Overrides the seed of every point.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        for p in &mut self.points {
            p.scenario.seed = seed;
        }
        self
    }
}

// --- run -------------------------------------------------------------------------

/// One summary line: a scenario point under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub figure: String,
    pub x: f64,
    /// `time` or `throughput`.
    pub kind: String,
    pub policy: String,
    pub repeats: u32,
    pub mean_completion_ms: f64,
    pub stddev_ms: f64,
    pub throughput: f64,
    pub throughput_stddev: f64,
    pub x86_runs: f64,
    pub arm_runs: f64,
    pub fpga_runs: f64,
    pub fpga_fallbacks: f64,
    pub reconfigurations: f64,
    /// Percent gain of the adaptive policy over each baseline; set on its rows only.
    pub gain_vs_always_x86: Option<f64>,
    pub gain_vs_always_arm: Option<f64>,
    pub gain_vs_always_fpga: Option<f64>,
}

/// Percent gain of `xartrek` over `baseline`: lower is better for time,
/// higher is better for throughput.
pub fn gain_percent(throughput: bool, xartrek: f64, baseline: f64) -> Option<f64> {
    if baseline == 0.0 {
        return None;
    }
    let g = if throughput {
        (xartrek - baseline) / baseline
    } else {
        (baseline - xartrek) / baseline
    };
    Some(g * 100.0)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Vec<SummaryRow>,
    pub results: Vec<(ExperimentPoint, Policy, RepeatedMetrics)>,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Runs every point under every policy and writes `metrics.csv` and
/// `summary.csv` into `out_dir`.
pub fn cmd_run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput, ExperimentError> {
    let mut results = Vec::new();
    for point in &config.points {
        for &policy in &config.policies {
            let sc = point.scenario.with_policy(policy);
            let r = run_repeated(&sc, config.repeats).map_err(|source| ExperimentError::Sim {
                scenario: sc.id.clone(),
                policy,
                source,
            })?;
            info!(
                "{} {:<11} mean {:.1} ms, throughput {:.3}/s",
                sc.id, policy, r.mean_completion.mean, r.throughput.mean
            );
            results.push((point.clone(), policy, r));
        }
    }

    let mut metrics = Vec::new();
    let rows: Vec<(&str, &str, u32, &crate::sim::SimMetrics)> = results
        .iter()
        .flat_map(|(p, policy, r)| {
            r.runs
                .iter()
                .enumerate()
                .map(move |(i, m)| (p.scenario.id.as_str(), policy.name(), i as u32, m))
        })
        .collect();
    write_metrics_csv(&mut metrics, true, &rows).map_err(|e| ExperimentError::Io {
        path: "metrics.csv".into(),
        source: std::io::Error::other(e),
    })?;

    let summary = summarize(config, &results);
    let mut body = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut body);
        for row in &summary {
            w.serialize(row).map_err(|e| ExperimentError::Io {
                path: "summary.csv".into(),
                source: std::io::Error::other(e),
            })?;
        }
        w.flush().map_err(io_err(Path::new("summary.csv")))?;
    }

    let metrics_path = out_dir.join("metrics.csv");
    let summary_path = out_dir.join("summary.csv");
    write_file(&metrics_path, &metrics)?;
    write_file(&summary_path, &body)?;
    Ok(RunOutput {
        summary,
        results,
        metrics_path,
        summary_path,
    })
}

fn summarize(
    config: &ExperimentConfig,
    results: &[(ExperimentPoint, Policy, RepeatedMetrics)],
) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (point, policy, r) in results {
        let throughput = point.scenario.workload.is_throughput();
        rows.push(SummaryRow {
            scenario_id: point.scenario.id.clone(),
            figure: config.figure.clone(),
            x: point.x,
            kind: if throughput { "throughput" } else { "time" }.into(),
            policy: policy.name().into(),
            repeats: r.runs.len() as u32,
            mean_completion_ms: r.mean_completion.mean,
            stddev_ms: r.mean_completion.stddev,
            throughput: r.throughput.mean,
            throughput_stddev: r.throughput.stddev,
            x86_runs: r.mean_count(|m| m.migrations.x86),
            arm_runs: r.mean_count(|m| m.migrations.arm),
            fpga_runs: r.mean_count(|m| m.migrations.fpga),
            fpga_fallbacks: r.mean_count(|m| m.fpga_fallbacks),
            reconfigurations: r.mean_count(|m| m.reconfigurations),
            gain_vs_always_x86: None,
            gain_vs_always_arm: None,
            gain_vs_always_fpga: None,
        });
    }
    let figure_of_merit = |row: &SummaryRow| {
        if row.kind == "throughput" {
            row.throughput
        } else {
            row.mean_completion_ms
        }
    };
    let snapshot = rows.clone();
    for row in rows
        .iter_mut()
        .filter(|r| r.policy == Policy::XarTrek.name())
    {
        let mine = figure_of_merit(row);
        let throughput = row.kind == "throughput";
        let gain = |baseline: Policy| {
            snapshot
                .iter()
                .find(|b| b.scenario_id == row.scenario_id && b.policy == baseline.name())
                .and_then(|b| gain_percent(throughput, mine, figure_of_merit(b)))
        };
        row.gain_vs_always_x86 = gain(Policy::AlwaysX86);
        row.gain_vs_always_arm = gain(Policy::AlwaysArm);
        row.gain_vs_always_fpga = gain(Policy::AlwaysFpga);
    }
    rows
}

// --- report --------------------------------------------------------------------

/// Policies in first-seen order, values keyed by (policy, x bits), and the x values.
type FigureCells = (Vec<String>, BTreeMap<(String, u64), f64>, Vec<f64>);

/// Reads summary CSVs and writes one `<figure>.csv` matrix per figure: one
/// row per policy, one column per x value. Returns the files written.
pub fn cmd_report(
    inputs: &[PathBuf],
    out_dir: &Path,
    figures: &[String],
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        if text.trim().is_empty() {
            continue;
        }
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for rec in reader.deserialize::<SummaryRow>() {
            rows.push(rec.map_err(|e| ExperimentError::Config {
                path: path.display().to_string(),
                message: format!("not a summary file: {e}"),
            })?);
        }
    }

    // figure -> policy -> x -> value, keeping first-seen policy order.
    let mut grouped: BTreeMap<String, FigureCells> = BTreeMap::new();
    for r in &rows {
        if !figures.is_empty() && !figures.contains(&r.figure) {
            continue;
        }
        let (policies, cells, xs) = grouped.entry(r.figure.clone()).or_default();
        if !policies.contains(&r.policy) {
            policies.push(r.policy.clone());
        }
        if !xs.contains(&r.x) {
            xs.push(r.x);
        }
        let value = if r.kind == "throughput" {
            r.throughput
        } else {
            r.mean_completion_ms
        };
        cells.insert((r.policy.clone(), r.x.to_bits()), value);
    }

    let mut written = Vec::new();
    for (figure, (policies, cells, mut xs)) in grouped {
        xs.sort_by(f64::total_cmp);
        let mut out = String::from("policy");
        for x in &xs {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
        for p in &policies {
            out.push_str(p);
            for x in &xs {
                match cells.get(&(p.clone(), x.to_bits())) {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        let path = out_dir.join(format!("{figure}.csv"));
        write_file(&path, out.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
