//! Per-request placement decisions and the FPGA configuration state machine.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::packer::ConfigImage;
use crate::platform::{Micros, PlatformSpec, TargetKind};
use crate::threshold::ThresholdEntry;

/// Where a function should run, plus an optional FPGA reconfiguration the
/// caller should start while it runs there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationDecision {
    pub target: TargetKind,
    pub reconfigure: Option<String>,
}

impl MigrationDecision {
    pub fn to(target: TargetKind) -> Self {
        MigrationDecision {
            target,
            reconfigure: None,
        }
    }

    pub fn flag(&self) -> u8 {
        self.target.flag()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("kernel `{0}` is not part of any configuration image")]
    UnknownKernel(String),
    #[error("a reconfiguration is already in flight")]
    Busy,
    #[error("image `{0}` is not part of the plan")]
    UnknownImage(String),
    #[error("no reconfiguration in flight")]
    Idle,
    #[error("reconfiguration completes at {due}, not before (now {now})")]
    NotReady { due: Micros, now: Micros },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconfiguration {
    pub image_id: String,
    pub completes_at: Micros,
}

/// What is loaded on the FPGA and which kernels can be invoked.
///
/// `available_kernels` only changes when a reconfiguration completes; while
/// one is in flight, queries keep returning the previous set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FpgaState {
    plan: Vec<ConfigImage>,
    loaded_image: Option<String>,
    available_kernels: BTreeSet<String>,
    reconfiguring: Option<Reconfiguration>,
}

impl FpgaState {
    /// An unconfigured device.
    pub fn new(plan: Vec<ConfigImage>) -> Self {
        FpgaState {
            plan,
            ..FpgaState::default()
        }
    }

    /// A device with `image_id` already loaded.
    pub fn preloaded(plan: Vec<ConfigImage>, image_id: &str) -> Result<Self, SchedulerError> {
        let mut state = FpgaState::new(plan);
        let kernels = state.image_kernels(image_id)?;
        state.loaded_image = Some(image_id.to_string());
        state.available_kernels = kernels;
        Ok(state)
    }

    pub fn plan(&self) -> &[ConfigImage] {
        &self.plan
    }

    pub fn loaded_image(&self) -> Option<&str> {
        self.loaded_image.as_deref()
    }

    pub fn reconfiguring(&self) -> Option<&Reconfiguration> {
        self.reconfiguring.as_ref()
    }

    pub fn is_available(&self, kernel_id: &str) -> bool {
        self.available_kernels.contains(kernel_id)
    }

    /// The image holding `kernel_id`; lowest image id when several do.
    pub fn image_for(&self, kernel_id: &str) -> Option<&str> {
        self.plan
            .iter()
            .filter(|img| img.contains(kernel_id))
            .map(|img| img.image_id.as_str())
            .min()
    }

    fn image_kernels(&self, image_id: &str) -> Result<BTreeSet<String>, SchedulerError> {
        self.plan
            .iter()
            .find(|img| img.image_id == image_id)
            .map(|img| img.kernel_ids().map(str::to_string).collect())
            .ok_or_else(|| SchedulerError::UnknownImage(image_id.to_string()))
    }

    /// Starts loading `image_id`. Fails with [`SchedulerError::Busy`] (and
    /// leaves the state untouched) if another load is in flight.
    pub fn begin_reconfiguration(
        &mut self,
        image_id: &str,
        now: Micros,
        spec: &PlatformSpec,
    ) -> Result<Micros, SchedulerError> {
        if self.reconfiguring.is_some() {
            return Err(SchedulerError::Busy);
        }
        self.image_kernels(image_id)?;
        let completes_at = now + spec.reconfig_latency;
        self.reconfiguring = Some(Reconfiguration {
            image_id: image_id.to_string(),
            completes_at,
        });
        Ok(completes_at)
    }

    pub fn complete_reconfiguration(&mut self, now: Micros) -> Result<(), SchedulerError> {
        let r = self.reconfiguring.as_ref().ok_or(SchedulerError::Idle)?;
        if now < r.completes_at {
            return Err(SchedulerError::NotReady {
                due: r.completes_at,
                now,
            });
        }
        let image_id = r.image_id.clone();
        self.available_kernels = self.image_kernels(&image_id)?;
        self.loaded_image = Some(image_id);
        self.reconfiguring = None;
        Ok(())
    }

    /// Completes the in-flight reconfiguration if it is due. Returns whether
    /// the loaded image changed.
    pub fn poll(&mut self, now: Micros) -> bool {
        match &self.reconfiguring {
            Some(r) if now >= r.completes_at => self.complete_reconfiguration(now).is_ok(),
            _ => false,
        }
    }

    pub fn query_kernels(&self) -> BTreeSet<String> {
        self.available_kernels.clone()
    }
}

/// Chooses a target for one invocation.
///
/// With `K` = the entry's kernel is currently loaded:
///
/// | load vs thresholds                         | K   | result                        |
/// |--------------------------------------------|-----|-------------------------------|
/// | `≤ arm_thr` and `≤ fpga_thr`               | any | x86                           |
/// | `> arm_thr` and `≤ fpga_thr`               | any | ARM                           |
/// | `> fpga_thr`                               | yes | FPGA if `fpga_thr < arm_thr`, else ARM |
/// | `> fpga_thr`, `≤ arm_thr`                  | no  | x86 + reconfigure             |
/// | `> fpga_thr`, `> arm_thr`                  | no  | ARM + reconfigure             |
pub fn decide(
    load: u32,
    entry: &ThresholdEntry,
    fpga: &FpgaState,
) -> Result<MigrationDecision, SchedulerError> {
    let kernel = entry.kernel_id.as_deref();
    let available = kernel.is_some_and(|k| fpga.is_available(k));

    if load <= entry.fpga_thr {
        let target = if load <= entry.arm_thr {
            TargetKind::X86
        } else {
            TargetKind::Arm
        };
        return Ok(MigrationDecision::to(target));
    }

    if available {
        let target = if entry.fpga_thr < entry.arm_thr {
            TargetKind::Fpga
        } else {
            TargetKind::Arm
        };
        return Ok(MigrationDecision::to(target));
    }

    let target = if load <= entry.arm_thr {
        TargetKind::X86
    } else {
        TargetKind::Arm
    };
    let reconfigure = match kernel {
        Some(k) => Some(
            fpga.image_for(k)
                .ok_or_else(|| SchedulerError::UnknownKernel(k.to_string()))?
                .to_string(),
        ),
        None => None,
    };
    Ok(MigrationDecision {
        target,
        reconfigure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packer::{pack_auto, pack_manual, KernelResource};

    fn kernel(id: &str, area: u64) -> KernelResource {
        KernelResource {
            kernel_id: id.into(),
            area,
            function_id: format!("{id}_fn"),
        }
    }

    fn sample_kernels() -> Vec<KernelResource> {
        vec![
            kernel("KNL_HW_CG_A", 30),
            kernel("KNL_HW_FD320", 15),
            kernel("KNL_HW_FD640", 25),
            kernel("KNL_HW_DR500", 10),
            kernel("KNL_HW_DR200", 15),
        ]
    }

    fn two_images() -> Vec<ConfigImage> {
        let map = [
            ("KNL_HW_CG_A", "xclbin-0"),
            ("KNL_HW_FD320", "xclbin-0"),
            ("KNL_HW_FD640", "xclbin-0"),
            ("KNL_HW_DR500", "xclbin-1"),
            ("KNL_HW_DR200", "xclbin-1"),
        ]
        .iter()
        .map(|(k, i)| (k.to_string(), i.to_string()))
        .collect();
        pack_manual(&map, &sample_kernels(), 100).unwrap()
    }

    fn entry(app: &str, kernel: &str, fpga_thr: u32, arm_thr: u32) -> ThresholdEntry {
        ThresholdEntry {
            app_id: app.into(),
            kernel_id: Some(kernel.into()),
            fpga_thr,
            arm_thr,
            last_x86_exec: Micros::ZERO,
            last_arm_exec: Micros::ZERO,
            last_fpga_exec: Micros::ZERO,
        }
    }

    fn spec(latency_ms: u64) -> PlatformSpec {
        PlatformSpec {
            reconfig_latency: Micros::from_ms_int(latency_ms),
            ..PlatformSpec::default()
        }
    }

    #[test]
    fn fast_fpga_function_migrates_at_low_load() {
        let plan = pack_auto(&sample_kernels(), 100).unwrap();
        let fpga = FpgaState::preloaded(plan, "xclbin-0").unwrap();
        let d = decide(5, &entry("Digit2000", "KNL_HW_DR200", 0, 17), &fpga).unwrap();
        assert_eq!(d, MigrationDecision::to(TargetKind::Fpga));
        assert_eq!(d.flag(), 2);
    }

    #[test]
    fn smaller_threshold_wins_when_kernel_loaded() {
        let plan = pack_auto(&sample_kernels(), 100).unwrap();
        let fpga = FpgaState::preloaded(plan, "xclbin-0").unwrap();
        let d = decide(40, &entry("CG_A", "KNL_HW_CG_A", 31, 25), &fpga).unwrap();
        assert_eq!(d.target, TargetKind::Arm);
        // equal thresholds resolve to ARM
        let d = decide(40, &entry("CG_A", "KNL_HW_CG_A", 25, 25), &fpga).unwrap();
        assert_eq!(d.target, TargetKind::Arm);
    }

    #[test]
    fn missing_kernel_stays_and_reconfigures() {
        let fpga = FpgaState::preloaded(two_images(), "xclbin-1").unwrap();
        let d = decide(26, &entry("FaceDet320", "KNL_HW_FD320", 16, 31), &fpga).unwrap();
        assert_eq!(d.target, TargetKind::X86);
        assert_eq!(d.reconfigure.as_deref(), Some("xclbin-0"));

        let d = decide(40, &entry("FaceDet320", "KNL_HW_FD320", 16, 31), &fpga).unwrap();
        assert_eq!(d.target, TargetKind::Arm);
        assert_eq!(d.reconfigure.as_deref(), Some("xclbin-0"));
    }

    #[test]
    fn zero_load_runs_locally() {
        let fpga = FpgaState::new(two_images());
        for (f, a) in [(0, 0), (0, 17), (16, 31), (31, 25)] {
            let d = decide(0, &entry("x", "KNL_HW_CG_A", f, a), &fpga).unwrap();
            assert_eq!(d, MigrationDecision::to(TargetKind::X86));
        }
    }

    #[test]
    fn unknown_kernel_is_an_error_only_when_needed() {
        let fpga = FpgaState::new(two_images());
        let e = entry("x", "KNL_NOPE", 3, 10);
        assert_eq!(decide(2, &e, &fpga).unwrap().target, TargetKind::X86);
        assert_eq!(
            decide(5, &e, &fpga),
            Err(SchedulerError::UnknownKernel("KNL_NOPE".into()))
        );
        let mut no_kernel = e.clone();
        no_kernel.kernel_id = None;
        assert_eq!(
            decide(50, &no_kernel, &fpga).unwrap(),
            MigrationDecision::to(TargetKind::Arm)
        );
    }

    #[test]
    fn reconfiguration_lifecycle() {
        let mut fpga = FpgaState::new(two_images());
        assert!(fpga.query_kernels().is_empty());
        let done = fpga
            .begin_reconfiguration("xclbin-1", Micros::ZERO, &spec(100))
            .unwrap();
        assert_eq!(done, Micros::from_ms_int(100));

        let before = fpga.clone();
        assert_eq!(
            fpga.begin_reconfiguration("xclbin-0", Micros::from_ms_int(1), &spec(100)),
            Err(SchedulerError::Busy)
        );
        assert_eq!(fpga, before);
        // stale view during the load
        assert!(fpga.query_kernels().is_empty());
        assert!(matches!(
            fpga.complete_reconfiguration(Micros::from_ms_int(99)),
            Err(SchedulerError::NotReady { .. })
        ));

        fpga.complete_reconfiguration(done).unwrap();
        let want: BTreeSet<String> = ["KNL_HW_DR200", "KNL_HW_DR500"].map(String::from).into();
        assert_eq!(fpga.query_kernels(), want);
        assert!(!fpga.is_available("KNL_HW_CG_A"));
        assert_eq!(
            fpga.complete_reconfiguration(done),
            Err(SchedulerError::Idle)
        );
    }

    #[test]
    fn unknown_image_rejected() {
        let mut fpga = FpgaState::new(two_images());
        assert_eq!(
            fpga.begin_reconfiguration("xclbin-9", Micros::ZERO, &spec(1)),
            Err(SchedulerError::UnknownImage("xclbin-9".into()))
        );
        assert!(fpga.reconfiguring().is_none());
    }

    #[test]
    fn reloading_current_image_is_idempotent() {
        let mut fpga = FpgaState::preloaded(two_images(), "xclbin-0").unwrap();
        let before = fpga.clone();
        let t = fpga
            .begin_reconfiguration("xclbin-0", Micros(5), &spec(10))
            .unwrap();
        assert!(fpga.poll(t));
        assert_eq!(fpga, before);
    }

    #[test]
    fn preloaded_single_image_exposes_all_kernels() {
        let plan = pack_auto(&sample_kernels(), 100).unwrap();
        assert_eq!(plan.len(), 1);
        let fpga = FpgaState::preloaded(plan, "xclbin-0").unwrap();
        assert_eq!(fpga.query_kernels().len(), 5);
        assert!(FpgaState::new(Vec::new()).query_kernels().is_empty());
    }

    #[test]
    fn shared_kernel_resolves_to_lowest_image_id() {
        let img = |id: &str, kernels: Vec<KernelResource>| ConfigImage {
            image_id: id.into(),
            total_area: kernels.iter().map(|k| k.area).sum(),
            kernels,
        };
        let plan = vec![
            img("xclbin-b", vec![kernel("K", 10), kernel("L", 10)]),
            img("xclbin-a", vec![kernel("K", 10)]),
        ];
        let fpga = FpgaState::new(plan);
        assert_eq!(fpga.image_for("K"), Some("xclbin-a"));
        assert_eq!(fpga.image_for("L"), Some("xclbin-b"));
        assert_eq!(fpga.image_for("M"), None);
    }
}
