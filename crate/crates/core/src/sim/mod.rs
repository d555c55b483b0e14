//! Deterministic discrete-event model of the platform running a workload
//! under one placement policy.

mod engine;
mod metrics;
mod pool;
mod scenario;
mod workload;

use thiserror::Error;

use crate::packer::PackError;
use crate::platform::{Micros, PlatformError};
use crate::scheduler::SchedulerError;

pub use engine::{run, run_observed, run_repeated, Census, EventKind, SimEvent};
pub use metrics::{
    write_metrics_csv, AppCompletion, MeanStd, RepeatedMetrics, SimMetrics, TargetCounts,
    METRICS_HEADER,
};
pub use scenario::{
    Background, FpgaInit, Policy, SimScenario, ThresholdSource, Workload, DEFAULT_TIME_CAP,
};
pub use workload::{gen_workload, ArrivalSchedule, PlannedArrival};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no profile for application `{0}`")]
    UnknownApp(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("simulation passed its {cap} ms time cap with {unfinished} process(es) unfinished")]
    Timeout { cap: Micros, unfinished: usize },
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Pack(#[from] PackError),
}
