//! Migration thresholds: offline estimation and the online update applied
//! after every completed run.
//!
//! A threshold is an x86 load (runnable process count). A function migrates
//! to a target once the load is strictly above that target's threshold.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::platform::{CostModel, FunctionProfile, Micros, PlatformSpec, SystemState, TargetKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdEntry {
    pub app_id: String,
    pub kernel_id: Option<String>,
    pub fpga_thr: u32,
    pub arm_thr: u32,
    pub last_x86_exec: Micros,
    pub last_arm_exec: Micros,
    pub last_fpga_exec: Micros,
}

/// What a client reports when its function returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRecord {
    pub app_id: String,
    pub target: TargetKind,
    pub exec_time: Micros,
    pub load_at_start: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ThresholdError {
    #[error("record for `{record}` applied to the entry of `{entry}`")]
    AppMismatch { entry: String, record: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Io(String),
}

/// Largest `n` in `[0, max_load]` whose x86 time stays within `budget`, or 0.
fn last_load_within<C: CostModel>(
    profile: &FunctionProfile,
    spec: &PlatformSpec,
    model: &C,
    max_load: u32,
    budget: Micros,
) -> u32 {
    let mut best = 0;
    for n in 0..=max_load {
        let state = SystemState::with_x86_load(n);
        match model.exec_time(profile, TargetKind::X86, &state, spec) {
            Ok(t) if t <= budget => best = n,
            _ => break,
        }
    }
    best
}

/// Raises the x86 load until local execution exceeds each migrated total and
/// records the last load at which staying on x86 was no worse.
///
/// A target the profile cannot use (no kernel, no ARM time) gets `max_load`.
pub fn estimate_thresholds<C: CostModel>(
    profile: &FunctionProfile,
    spec: &PlatformSpec,
    model: &C,
    max_load: u32,
) -> ThresholdEntry {
    let iso = SystemState::isolated();
    let migrated = |target| model.exec_time(profile, target, &iso, spec).ok();
    let fpga_total = migrated(TargetKind::Fpga);
    let arm_total = migrated(TargetKind::Arm);
    let thr = |total: Option<Micros>| match total {
        Some(t) => last_load_within(profile, spec, model, max_load, t),
        None => max_load,
    };
    ThresholdEntry {
        app_id: profile.app_id.clone(),
        kernel_id: profile.kernel_id().map(str::to_string),
        fpga_thr: thr(fpga_total),
        arm_thr: thr(arm_total),
        last_x86_exec: profile.x86_exec,
        last_arm_exec: profile.arm_exec.unwrap_or_default(),
        last_fpga_exec: profile.fpga_exec.unwrap_or_default(),
    }
}

/// Threshold growth step applied when a migrated run was slower than x86.
pub fn increase(thr: u32) -> u32 {
    thr.saturating_add(thr.div_ceil(10).max(1))
}

/// Applies one completed run to the entry.
///
/// x86 runs lower the FPGA (else ARM) threshold to the observed load when the
/// run was slower than that target and the load sits below its threshold.
/// Migrated runs slower than the last x86 run raise their own threshold.
pub fn update_on_completion(
    entry: &ThresholdEntry,
    rec: &ExecutionRecord,
) -> Result<ThresholdEntry, ThresholdError> {
    if entry.app_id != rec.app_id {
        return Err(ThresholdError::AppMismatch {
            entry: entry.app_id.clone(),
            record: rec.app_id.clone(),
        });
    }
    let mut next = entry.clone();
    let exec = rec.exec_time;
    let load = rec.load_at_start;
    match rec.target {
        TargetKind::X86 => {
            if exec > entry.last_fpga_exec && load < entry.fpga_thr {
                next.fpga_thr = load;
            } else if exec > entry.last_arm_exec && load < entry.arm_thr {
                next.arm_thr = load;
            }
            next.last_x86_exec = exec;
        }
        TargetKind::Arm => {
            next.last_arm_exec = exec;
            if exec > entry.last_x86_exec {
                next.arm_thr = increase(entry.arm_thr);
            }
        }
        TargetKind::Fpga => {
            next.last_fpga_exec = exec;
            if exec > entry.last_x86_exec {
                next.fpga_thr = increase(entry.fpga_thr);
            }
        }
    }
    Ok(next)
}

/// Thresholds for every profiled application, keyed by app id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ThresholdTable {
    entries: BTreeMap<String, ThresholdEntry>,
}

impl ThresholdTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn estimate<C: CostModel>(
        profiles: &[FunctionProfile],
        spec: &PlatformSpec,
        model: &C,
        max_load: u32,
    ) -> Self {
        profiles
            .iter()
            .map(|p| estimate_thresholds(p, spec, model, max_load))
            .collect()
    }

    pub fn get(&self, app_id: &str) -> Option<&ThresholdEntry> {
        self.entries.get(app_id)
    }

    pub fn insert(&mut self, entry: ThresholdEntry) {
        self.entries.insert(entry.app_id.clone(), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ThresholdEntry> {
        self.entries.values()
    }

    /// Applies a record to its entry. Returns `false` for unknown apps.
    pub fn apply(&mut self, rec: &ExecutionRecord) -> bool {
        let Some(entry) = self.entries.get_mut(&rec.app_id) else {
            return false;
        };
        *entry = update_on_completion(entry, rec).expect("entry selected by app id");
        true
    }

    pub fn kernel_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .entries
            .values()
            .filter_map(|e| e.kernel_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

impl FromIterator<ThresholdEntry> for ThresholdTable {
    fn from_iter<I: IntoIterator<Item = ThresholdEntry>>(iter: I) -> Self {
        let mut t = ThresholdTable::new();
        for e in iter {
            t.insert(e);
        }
        t
    }
}

// --- CSV ---------------------------------------------------------------------

const HEADER: [&str; 7] = [
    "app_id",
    "kernel_id",
    "fpga_thr",
    "arm_thr",
    "last_x86_exec_ms",
    "last_arm_exec_ms",
    "last_fpga_exec_ms",
];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    app_id: String,
    kernel_id: String,
    fpga_thr: u32,
    arm_thr: u32,
    #[serde(default)]
    last_x86_exec_ms: Option<f64>,
    #[serde(default)]
    last_arm_exec_ms: Option<f64>,
    #[serde(default)]
    last_fpga_exec_ms: Option<f64>,
}

fn ms_field(line: u64, name: &str, v: Option<f64>) -> Result<Micros, ThresholdError> {
    match v {
        None => Ok(Micros::ZERO),
        Some(ms) if ms.is_finite() && ms >= 0.0 => Ok(Micros::from_ms(ms)),
        Some(_) => Err(ThresholdError::Parse {
            line,
            message: format!("{name} must be a non-negative duration"),
        }),
    }
}

/// Parses a threshold table. The four leading columns are required; the
/// `last_*` columns are optional and default to zero.
pub fn parse_table(text: &str) -> Result<ThresholdTable, ThresholdError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| ThresholdError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Ok(ThresholdTable::new());
    }
    if headers.len() < 4 || headers.iter().zip(HEADER).any(|(h, want)| h != want) {
        return Err(ThresholdError::Parse {
            line: 1,
            message: format!("expected header starting with {}", HEADER[..4].join(",")),
        });
    }
    let mut table = ThresholdTable::new();
    for result in reader.records() {
        let record = result.map_err(|e| ThresholdError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| ThresholdError::Parse {
                line,
                message: match e.kind() {
                    csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                    _ => e.to_string(),
                },
            })?;
        if row.app_id.is_empty() {
            return Err(ThresholdError::Parse {
                line,
                message: "empty app_id".into(),
            });
        }
        if table.get(&row.app_id).is_some() {
            return Err(ThresholdError::Parse {
                line,
                message: format!("duplicate app_id `{}`", row.app_id),
            });
        }
        table.insert(ThresholdEntry {
            kernel_id: (!row.kernel_id.is_empty()).then(|| row.kernel_id.clone()),
            fpga_thr: row.fpga_thr,
            arm_thr: row.arm_thr,
            last_x86_exec: ms_field(line, "last_x86_exec_ms", row.last_x86_exec_ms)?,
            last_arm_exec: ms_field(line, "last_arm_exec_ms", row.last_arm_exec_ms)?,
            last_fpga_exec: ms_field(line, "last_fpga_exec_ms", row.last_fpga_exec_ms)?,
            app_id: row.app_id,
        });
    }
    Ok(table)
}

pub fn table_to_csv(table: &ThresholdTable) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for e in table.entries() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.app_id,
            e.kernel_id.as_deref().unwrap_or(""),
            e.fpga_thr,
            e.arm_thr,
            e.last_x86_exec,
            e.last_arm_exec,
            e.last_fpga_exec
        ));
    }
    out
}

pub fn table_load(path: &Path) -> Result<ThresholdTable, ThresholdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ThresholdError::Io(format!("cannot read `{}`: {e}", path.display())))?;
    parse_table(&text)
}

pub fn table_store(table: &ThresholdTable, path: &Path) -> Result<(), ThresholdError> {
    std::fs::write(path, table_to_csv(table))
        .map_err(|e| ThresholdError::Io(format!("cannot write `{}`: {e}", path.display())))
}
