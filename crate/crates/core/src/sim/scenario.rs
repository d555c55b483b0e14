use std::fmt;
use std::str::FromStr;

use crate::packer::ConfigImage;
use crate::platform::{FunctionProfile, Micros, PlatformSpec, TargetKind};
use crate::threshold::ThresholdTable;

use super::SimError;

/// Placement policy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Policy {
    XarTrek,
    AlwaysX86,
    AlwaysArm,
    AlwaysFpga,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::XarTrek,
        Policy::AlwaysX86,
        Policy::AlwaysArm,
        Policy::AlwaysFpga,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::XarTrek => "xartrek",
            Policy::AlwaysX86 => "always-x86",
            Policy::AlwaysArm => "always-arm",
            Policy::AlwaysFpga => "always-fpga",
        }
    }

    /// The pinned target of a baseline; `None` for the adaptive policy.
    pub fn pinned(self) -> Option<TargetKind> {
        match self {
            Policy::XarTrek => None,
            Policy::AlwaysX86 => Some(TargetKind::X86),
            Policy::AlwaysArm => Some(TargetKind::Arm),
            Policy::AlwaysFpga => Some(TargetKind::Fpga),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| {
                format!("unknown policy `{s}` (expected xartrek, always-x86, always-arm or always-fpga)")
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    /// Calibrate from the scenario's profiles and platform.
    Estimate {
        max_load: u32,
    },
    Table(ThresholdTable),
}

/// FPGA contents when the run starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FpgaInit {
    /// Load the named image, or the first image of the plan.
    Preload(Option<String>),
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// These apps, all arriving at time zero.
    FixedSet { apps: Vec<String> },
    /// `size` apps drawn uniformly from `pool`, all arriving at time zero.
    RandomSet {
        size: u32,
        pool: Vec<String>,
        with_replacement: bool,
    },
    /// `waves` sets of `apps_per_wave` random apps, one set every `interval`.
    Periodic {
        waves: u32,
        apps_per_wave: u32,
        interval: Micros,
        pool: Vec<String>,
    },
    /// One process making `images` calls, stopped after `duration`.
    Throughput {
        app: String,
        images: u32,
        duration: Micros,
    },
    /// `slow_count` copies of `slow` followed by copies of `fast`, `set_size` in all.
    Mix {
        slow: String,
        fast: String,
        set_size: u32,
        slow_count: u32,
    },
    /// One [`Workload::Mix`] per fraction of `slow` apps; see [`SimScenario::expand`].
    MixSweep {
        slow: String,
        fast: String,
        set_size: u32,
        fractions: Vec<f64>,
    },
}

impl Workload {
    /// Whether the figure of merit is images per second rather than completion time.
    pub fn is_throughput(&self) -> bool {
        matches!(self, Workload::Throughput { .. })
    }
}

/// Load that is present but not measured.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Background {
    #[default]
    None,
    /// Pure x86 occupancy. `demand: None` keeps them running for the whole run.
    Constant {
        processes: u32,
        demand: Option<Micros>,
    },
    /// Waves of profiled apps that go through the policy like measured ones.
    Periodic {
        waves: u32,
        apps_per_wave: u32,
        interval: Micros,
        pool: Vec<String>,
    },
}

/// Default upper bound on simulated time.
pub const DEFAULT_TIME_CAP: Micros = Micros::from_ms_int(24 * 3600 * 1000);

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub id: String,
    pub platform: PlatformSpec,
    pub profiles: Vec<FunctionProfile>,
    pub thresholds: ThresholdSource,
    /// Configuration images; `None` packs the profiles' kernels automatically.
    pub plan: Option<Vec<ConfigImage>>,
    pub fpga_init: FpgaInit,
    pub workload: Workload,
    pub background: Background,
    pub policy: Policy,
    pub seed: u64,
    pub time_cap: Micros,
}

impl SimScenario {
    pub fn new(
        id: &str,
        profiles: Vec<FunctionProfile>,
        workload: Workload,
        policy: Policy,
    ) -> Self {
        SimScenario {
            id: id.to_string(),
            platform: PlatformSpec::default(),
            profiles,
            thresholds: ThresholdSource::Estimate { max_load: 200 },
            plan: None,
            fpga_init: FpgaInit::Preload(None),
            workload,
            background: Background::None,
            policy,
            seed: 0,
            time_cap: DEFAULT_TIME_CAP,
        }
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        SimScenario {
            policy,
            ..self.clone()
        }
    }

    pub fn profile_index(&self, app_id: &str) -> Result<usize, SimError> {
        self.profiles
            .iter()
            .position(|p| p.app_id == app_id)
            .ok_or_else(|| SimError::UnknownApp(app_id.to_string()))
    }

    fn referenced_apps(&self) -> Vec<&str> {
        let mut apps: Vec<&str> = Vec::new();
        match &self.workload {
            Workload::FixedSet { apps: a } => apps.extend(a.iter().map(String::as_str)),
            Workload::RandomSet { pool, .. } | Workload::Periodic { pool, .. } => {
                apps.extend(pool.iter().map(String::as_str))
            }
            Workload::Throughput { app, .. } => apps.push(app),
            Workload::Mix { slow, fast, .. } | Workload::MixSweep { slow, fast, .. } => {
                apps.push(slow);
                apps.push(fast);
            }
        }
        if let Background::Periodic { pool, .. } = &self.background {
            apps.extend(pool.iter().map(String::as_str));
        }
        apps
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::InvalidScenario(m));
        self.platform.validate()?;
        for p in &self.profiles {
            p.validate()?;
        }
        for app in self.referenced_apps() {
            self.profile_index(app)?;
        }
        match &self.workload {
            Workload::RandomSet {
                size,
                pool,
                with_replacement,
            } => {
                if pool.is_empty() {
                    return invalid("random set drawn from an empty pool".into());
                }
                if !with_replacement && *size as usize > pool.len() {
                    return invalid(format!(
                        "cannot draw {size} distinct apps from a pool of {}",
                        pool.len()
                    ));
                }
            }
            Workload::Periodic {
                waves,
                apps_per_wave,
                interval,
                pool,
            } => {
                if pool.is_empty()
                    || *waves == 0
                    || *apps_per_wave == 0
                    || *interval == Micros::ZERO
                {
                    return invalid(
                        "periodic workload needs a pool and positive parameters".into(),
                    );
                }
            }
            Workload::Throughput {
                images, duration, ..
            } => {
                if *images == 0 || *duration == Micros::ZERO {
                    return invalid("throughput workload needs images and a duration".into());
                }
            }
            Workload::Mix {
                set_size,
                slow_count,
                ..
            } => {
                if slow_count > set_size {
                    return invalid("mix has more slow apps than the set holds".into());
                }
            }
            Workload::MixSweep { fractions, .. } => {
                if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                    return invalid(format!("mix fraction {f} outside [0, 1]"));
                }
            }
            Workload::FixedSet { .. } => {}
        }
        if let Background::Periodic {
            waves,
            apps_per_wave,
            interval,
            pool,
        } = &self.background
        {
            if pool.is_empty() || *waves == 0 || *apps_per_wave == 0 || *interval == Micros::ZERO {
                return invalid("periodic background needs a pool and positive parameters".into());
            }
        }
        Ok(())
    }

    /// Splits a mix sweep into one scenario per fraction, labelled by the
    /// percentage of slow apps. Any other workload is returned as is, labelled 0.
    pub fn expand(&self) -> Vec<(f64, SimScenario)> {
        match &self.workload {
            Workload::MixSweep {
                slow,
                fast,
                set_size,
                fractions,
            } => fractions
                .iter()
                .map(|&f| {
                    let slow_count = (f * f64::from(*set_size)).round() as u32;
                    let pct = f * 100.0;
                    let point = SimScenario {
                        id: format!("{}-{}", self.id, pct.round()),
                        workload: Workload::Mix {
                            slow: slow.clone(),
                            fast: fast.clone(),
                            set_size: *set_size,
                            slow_count,
                        },
                        ..self.clone()
                    };
                    (pct, point)
                })
                .collect(),
            _ => vec![(0.0, self.clone())],
        }
    }
}
