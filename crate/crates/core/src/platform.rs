//! Hardware platform, per-function performance profiles and the contention
//! cost model shared by threshold estimation and the simulator.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packer::KernelResource;

/// Simulated time or duration, in integer microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    /// Converts fractional milliseconds, rounding to the nearest microsecond.
    /// Negative and non-finite inputs saturate to zero.
    pub fn from_ms(ms: f64) -> Micros {
        if ms.is_finite() && ms > 0.0 {
            Micros((ms * 1000.0).round() as u64)
        } else {
            Micros(0)
        }
    }

    pub const fn from_ms_int(ms: u64) -> Micros {
        Micros(ms * 1000)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: Micros) -> Micros {
        Micros(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl fmt::Display for Micros {
    /// Milliseconds, with the fractional part only when it is non-zero.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (ms, us) = (self.0 / 1000, self.0 % 1000);
        if us == 0 {
            write!(f, "{ms}")
        } else {
            let frac = format!("{us:03}");
            write!(f, "{ms}.{}", frac.trim_end_matches('0'))
        }
    }
}

/// Execution target of a migratable function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetKind {
    X86,
    Arm,
    Fpga,
}

impl TargetKind {
    pub const ALL: [TargetKind; 3] = [TargetKind::X86, TargetKind::Arm, TargetKind::Fpga];

    /// Migration flag value carried on the wire and set by the client.
    pub fn flag(self) -> u8 {
        match self {
            TargetKind::X86 => 0,
            TargetKind::Arm => 1,
            TargetKind::Fpga => 2,
        }
    }

    pub fn from_flag(flag: u8) -> Option<TargetKind> {
        match flag {
            0 => Some(TargetKind::X86),
            1 => Some(TargetKind::Arm),
            2 => Some(TargetKind::Fpga),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::X86 => "x86",
            TargetKind::Arm => "arm",
            TargetKind::Fpga => "fpga",
        }
    }

    pub fn parse(s: &str) -> Option<TargetKind> {
        match s.to_ascii_lowercase().as_str() {
            "x86" | "0" => Some(TargetKind::X86),
            "arm" | "1" => Some(TargetKind::Arm),
            "fpga" | "2" => Some(TargetKind::Fpga),
            _ => None,
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("function `{0}` has no hardware kernel; it cannot run on the FPGA")]
    NoKernel(String),
    #[error("function `{0}` has no ARM execution profile")]
    NoArmProfile(String),
    #[error("platform has no ARM cores")]
    NoArmCores,
    #[error("invalid platform: {0}")]
    InvalidPlatform(String),
    #[error("invalid profile for `{app}`: {reason}")]
    InvalidProfile { app: String, reason: String },
    #[error("duplicate profile for application `{0}`")]
    DuplicateApp(String),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse `{path}`: {message}")]
    Parse { path: String, message: String },
}

/// The server platform: CPU counts, FPGA capacity and interconnect costs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformSpec {
    pub x86_cores: u32,
    pub arm_cores: u32,
    pub fpga_area_capacity: u64,
    pub reconfig_latency: Micros,
    /// Added to every ARM migration; zero when profiles already include it.
    pub ethernet_migration_overhead: Micros,
    /// Added to every FPGA invocation; zero when profiles already include it.
    pub pcie_transfer_overhead: Micros,
    pub load_sampler_period: Micros,
}

impl Default for PlatformSpec {
    /// Six x86 cores, 96 ARM cores and one FPGA card.
    fn default() -> Self {
        PlatformSpec {
            x86_cores: 6,
            arm_cores: 96,
            fpga_area_capacity: 100,
            reconfig_latency: Micros::from_ms_int(300),
            ethernet_migration_overhead: Micros::ZERO,
            pcie_transfer_overhead: Micros::ZERO,
            load_sampler_period: Micros::from_ms_int(100),
        }
    }
}

impl PlatformSpec {
    pub fn validate(&self) -> Result<(), PlatformError> {
        if self.x86_cores == 0 {
            return Err(PlatformError::InvalidPlatform(
                "x86_cores must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn total_cores(&self) -> u32 {
        self.x86_cores + self.arm_cores
    }
}

/// Measured behavior of one migratable function.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionProfile {
    pub function_id: String,
    pub app_id: String,
    /// Isolated execution time on the x86 host.
    pub x86_exec: Micros,
    /// End-to-end time when migrated to ARM, migration included.
    pub arm_exec: Option<Micros>,
    /// End-to-end time when run on the FPGA, transfers included.
    pub fpga_exec: Option<Micros>,
    pub kernel: Option<KernelResource>,
    pub calls_per_run: u32,
    /// Share of `arm_exec` spent on the shared host-to-ARM channel.
    pub arm_transfer: Micros,
    /// Kernel setup paid per call by a host program that does not configure
    /// the FPGA ahead of the call.
    pub fpga_setup: Micros,
}

impl FunctionProfile {
    pub fn validate(&self) -> Result<(), PlatformError> {
        let bad = |reason: &str| PlatformError::InvalidProfile {
            app: self.app_id.clone(),
            reason: reason.to_string(),
        };
        if self.app_id.is_empty() {
            return Err(bad("empty app_id"));
        }
        if self.x86_exec == Micros::ZERO {
            return Err(bad("x86 execution time must be positive"));
        }
        if self.arm_exec == Some(Micros::ZERO) {
            return Err(bad("ARM execution time must be positive"));
        }
        if self.fpga_exec == Some(Micros::ZERO) {
            return Err(bad("FPGA execution time must be positive"));
        }
        if self.kernel.is_some() && self.fpga_exec.is_none() {
            return Err(bad("a kernel is declared but no FPGA execution time"));
        }
        if let Some(k) = &self.kernel {
            if k.area == 0 {
                return Err(bad("kernel area must be positive"));
            }
        }
        if self.calls_per_run == 0 {
            return Err(bad("calls_per_run must be at least 1"));
        }
        if self.arm_transfer > self.arm_exec.unwrap_or(Micros::ZERO) {
            return Err(bad("arm_transfer exceeds the ARM execution time"));
        }
        Ok(())
    }

    pub fn kernel_id(&self) -> Option<&str> {
        self.kernel.as_ref().map(|k| k.kernel_id.as_str())
    }
}

/// Snapshot of platform occupancy seen by the cost model and the scheduler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SystemState {
    pub runnable_x86_processes: u32,
    pub runnable_arm_processes: u32,
    pub fpga_queue_depth: u32,
    pub clock: Micros,
}

impl SystemState {
    /// A platform with nothing else running.
    pub fn isolated() -> SystemState {
        SystemState::default()
    }

    pub fn with_x86_load(n: u32) -> SystemState {
        SystemState {
            runnable_x86_processes: n,
            ..SystemState::default()
        }
    }
}

/// `base × max(1, n / cores)`, rounded up to the next microsecond.
fn shared_time(base: Micros, n: u32, cores: u32) -> Micros {
    let n = u128::from(n.max(cores));
    let cores = u128::from(cores);
    let scaled = (u128::from(base.0) * n).div_ceil(cores);
    Micros(scaled as u64)
}

/// Processor-sharing execution time of `profile` on `target` under `state`.
///
/// CPU targets slow down by `max(1, runnable / cores)`. The FPGA time is the
/// calibrated total; queueing on the device is left to the simulator.
pub fn exec_time(
    profile: &FunctionProfile,
    target: TargetKind,
    state: &SystemState,
    spec: &PlatformSpec,
) -> Result<Micros, PlatformError> {
    match target {
        TargetKind::X86 => Ok(shared_time(
            profile.x86_exec,
            state.runnable_x86_processes,
            spec.x86_cores.max(1),
        )),
        TargetKind::Arm => {
            let arm = profile
                .arm_exec
                .ok_or_else(|| PlatformError::NoArmProfile(profile.app_id.clone()))?;
            if spec.arm_cores == 0 {
                return Err(PlatformError::NoArmCores);
            }
            Ok(
                shared_time(arm, state.runnable_arm_processes, spec.arm_cores)
                    + spec.ethernet_migration_overhead,
            )
        }
        TargetKind::Fpga => match (&profile.kernel, profile.fpga_exec) {
            (Some(_), Some(fpga)) => Ok(fpga + spec.pcie_transfer_overhead),
            _ => Err(PlatformError::NoKernel(profile.app_id.clone())),
        },
    }
}

/// A model mapping (profile, target, load) to an execution time.
pub trait CostModel {
    fn exec_time(
        &self,
        profile: &FunctionProfile,
        target: TargetKind,
        state: &SystemState,
        spec: &PlatformSpec,
    ) -> Result<Micros, PlatformError>;
}

/// The default contention model: [`exec_time`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ProcessorSharing;

impl CostModel for ProcessorSharing {
    fn exec_time(
        &self,
        profile: &FunctionProfile,
        target: TargetKind,
        state: &SystemState,
        spec: &PlatformSpec,
    ) -> Result<Micros, PlatformError> {
        exec_time(profile, target, state, spec)
    }
}

/// The x86 load reading used by the scheduler: runnable x86 processes.
pub fn sample_load(state: &SystemState) -> u32 {
    state.runnable_x86_processes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LoadClass {
    Low,
    Medium,
    High,
}

impl fmt::Display for LoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoadClass::Low => "low",
            LoadClass::Medium => "medium",
            LoadClass::High => "high",
        })
    }
}

/// Both boundaries (`n == x86_cores` and `n == x86_cores + arm_cores`) are Medium.
pub fn classify_load(n_processes: u32, spec: &PlatformSpec) -> LoadClass {
    if n_processes < spec.x86_cores {
        LoadClass::Low
    } else if n_processes <= spec.total_cores() {
        LoadClass::Medium
    } else {
        LoadClass::High
    }
}

// --- profile and platform files -------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PlatformRecord {
    x86_cores: u32,
    #[serde(default)]
    arm_cores: u32,
    #[serde(default)]
    fpga_area_capacity: u64,
    #[serde(default)]
    reconfig_latency_ms: f64,
    #[serde(default)]
    ethernet_migration_overhead_ms: f64,
    #[serde(default)]
    pcie_transfer_overhead_ms: f64,
    #[serde(default)]
    load_sampler_period_ms: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ProfileRecord {
    app_id: String,
    function_id: String,
    x86_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arm_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fpga_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_area: Option<u64>,
    #[serde(default = "one")]
    calls_per_run: u32,
    #[serde(default)]
    arm_transfer_ms: f64,
    #[serde(default)]
    fpga_setup_ms: f64,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(default)]
    function: Vec<ProfileRecord>,
}

fn check_ms(app: &str, field: &str, ms: f64) -> Result<(), PlatformError> {
    if !ms.is_finite() || ms < 0.0 {
        return Err(PlatformError::InvalidProfile {
            app: app.to_string(),
            reason: format!("{field} must be a non-negative number of milliseconds"),
        });
    }
    Ok(())
}

impl TryFrom<ProfileRecord> for FunctionProfile {
    type Error = PlatformError;

    fn try_from(r: ProfileRecord) -> Result<Self, Self::Error> {
        for (field, v) in [
            ("x86_ms", Some(r.x86_ms)),
            ("arm_ms", r.arm_ms),
            ("fpga_ms", r.fpga_ms),
            ("arm_transfer_ms", Some(r.arm_transfer_ms)),
            ("fpga_setup_ms", Some(r.fpga_setup_ms)),
        ] {
            if let Some(v) = v {
                check_ms(&r.app_id, field, v)?;
            }
        }
        let kernel = match (r.kernel, r.kernel_area) {
            (Some(kernel_id), Some(area)) => Some(KernelResource {
                kernel_id,
                area,
                function_id: r.function_id.clone(),
            }),
            (None, None) => None,
            _ => {
                return Err(PlatformError::InvalidProfile {
                    app: r.app_id,
                    reason: "kernel and kernel_area must be given together".into(),
                })
            }
        };
        let profile = FunctionProfile {
            function_id: r.function_id,
            app_id: r.app_id,
            x86_exec: Micros::from_ms(r.x86_ms),
            arm_exec: r.arm_ms.map(Micros::from_ms),
            fpga_exec: r.fpga_ms.map(Micros::from_ms),
            kernel,
            calls_per_run: r.calls_per_run,
            arm_transfer: Micros::from_ms(r.arm_transfer_ms),
            fpga_setup: Micros::from_ms(r.fpga_setup_ms),
        };
        profile.validate()?;
        Ok(profile)
    }
}

impl From<&FunctionProfile> for ProfileRecord {
    fn from(p: &FunctionProfile) -> Self {
        ProfileRecord {
            app_id: p.app_id.clone(),
            function_id: p.function_id.clone(),
            x86_ms: p.x86_exec.as_ms(),
            arm_ms: p.arm_exec.map(Micros::as_ms),
            fpga_ms: p.fpga_exec.map(Micros::as_ms),
            kernel: p.kernel.as_ref().map(|k| k.kernel_id.clone()),
            kernel_area: p.kernel.as_ref().map(|k| k.area),
            calls_per_run: p.calls_per_run,
            arm_transfer_ms: p.arm_transfer.as_ms(),
            fpga_setup_ms: p.fpga_setup.as_ms(),
        }
    }
}

/// Parses a profile document: a list of `[[function]]` tables.
pub fn parse_profiles(text: &str, origin: &str) -> Result<Vec<FunctionProfile>, PlatformError> {
    let file: ProfileFile = toml::from_str(text).map_err(|e| PlatformError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let mut out: Vec<FunctionProfile> = Vec::with_capacity(file.function.len());
    for rec in file.function {
        let p = FunctionProfile::try_from(rec)?;
        if out.iter().any(|q| q.app_id == p.app_id) {
            return Err(PlatformError::DuplicateApp(p.app_id));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_profiles(path: &Path) -> Result<Vec<FunctionProfile>, PlatformError> {
    let text = read(path)?;
    parse_profiles(&text, &path.display().to_string())
}

pub fn profiles_to_toml(profiles: &[FunctionProfile]) -> String {
    let file = ProfileFile {
        function: profiles.iter().map(ProfileRecord::from).collect(),
    };
    toml::to_string(&file).expect("profile records always serialize")
}

pub fn parse_platform(text: &str, origin: &str) -> Result<PlatformSpec, PlatformError> {
    let r: PlatformRecord = toml::from_str(text).map_err(|e| PlatformError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    for (field, v) in [
        ("reconfig_latency_ms", r.reconfig_latency_ms),
        (
            "ethernet_migration_overhead_ms",
            r.ethernet_migration_overhead_ms,
        ),
        ("pcie_transfer_overhead_ms", r.pcie_transfer_overhead_ms),
        ("load_sampler_period_ms", r.load_sampler_period_ms),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(PlatformError::InvalidPlatform(format!(
                "{field} must be a non-negative duration"
            )));
        }
    }
    let spec = PlatformSpec {
        x86_cores: r.x86_cores,
        arm_cores: r.arm_cores,
        fpga_area_capacity: r.fpga_area_capacity,
        reconfig_latency: Micros::from_ms(r.reconfig_latency_ms),
        ethernet_migration_overhead: Micros::from_ms(r.ethernet_migration_overhead_ms),
        pcie_transfer_overhead: Micros::from_ms(r.pcie_transfer_overhead_ms),
        load_sampler_period: Micros::from_ms(r.load_sampler_period_ms),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_platform(path: &Path) -> Result<PlatformSpec, PlatformError> {
    let text = read(path)?;
    parse_platform(&text, &path.display().to_string())
}

fn read(path: &Path) -> Result<String, PlatformError> {
    std::fs::read_to_string(path).map_err(|source| PlatformError::Io {
        path: path.display().to_string(),
        source,
    })
}
