use std::collections::{BTreeMap, VecDeque};

use log::debug;

use crate::packer::{pack_auto, KernelResource};
use crate::platform::{FunctionProfile, Micros, ProcessorSharing, TargetKind};
use crate::scheduler::{decide, FpgaState, SchedulerError};
use crate::threshold::{ExecutionRecord, ThresholdTable};

use super::metrics::{AppCompletion, RepeatedMetrics, SimMetrics, TargetCounts};
use super::pool::PsPool;
use super::scenario::{Background, FpgaInit, Policy, SimScenario, ThresholdSource, Workload};
use super::workload::{gen_background, gen_workload, merge};
use super::SimError;

/// What happened at one step of the event loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// A call of process `pid` finished on `target`.
    Completion {
        pid: usize,
        target: TargetKind,
    },
    ReconfigDone,
    WaveStart {
        wave_time: Micros,
    },
    Arrival {
        pid: usize,
    },
    LoadSample,
    /// Process `pid` asks where to run.
    FunctionCall {
        pid: usize,
    },
    /// Process `pid` reached its time limit.
    Deadline {
        pid: usize,
    },
}

impl EventKind {
    /// Tie-break among events at the same instant; lower runs first.
    fn priority(&self) -> u8 {
        match self {
            EventKind::Completion { .. } => 0,
            EventKind::ReconfigDone => 1,
            EventKind::WaveStart { .. } => 2,
            EventKind::Arrival { .. } => 3,
            EventKind::LoadSample => 4,
            EventKind::FunctionCall { .. } => 5,
            EventKind::Deadline { .. } => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: Micros,
    pub kind: EventKind,
}

/// Process counts after an event has been handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    pub not_started: usize,
    pub in_flight: usize,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Stage {
    Pending,
    Undecided,
    X86,
    Channel,
    Arm,
    FpgaQueued(String),
    FpgaRunning(String),
    Done,
}

#[derive(Debug, Clone)]
struct Proc {
    app: usize,
    arrival: Micros,
    calls_total: u32,
    calls_done: u32,
    time_limit: Option<Micros>,
    measured: bool,
    run_target: TargetKind,
    call_target: TargetKind,
    load_at_start: u32,
    stage: Stage,
    finished: Option<Micros>,
}

#[derive(Debug, Default)]
struct Unit {
    busy: Option<usize>,
    queue: VecDeque<usize>,
}

struct Engine<'a> {
    sc: &'a SimScenario,
    table: ThresholdTable,
    fpga: FpgaState,
    procs: Vec<Proc>,
    x86: PsPool,
    channel: PsPool,
    arm: PsPool,
    units: BTreeMap<String, Unit>,
    events: BTreeMap<(Micros, u8, u64), EventKind>,
    waves: BTreeMap<Micros, Vec<usize>>,
    seq: u64,
    now: Micros,
    undecided: u32,
    sampled_load: u32,
    unfinished: usize,
    not_started: usize,
    completed: usize,
    migrations: TargetCounts,
    fallbacks: u32,
    reconfigurations: u32,
    x86_demand: f64,
    bg_demand: Option<Micros>,
}

/// Runs one scenario to completion.
pub fn run(scenario: &SimScenario) -> Result<SimMetrics, SimError> {
    run_observed(scenario, |_, _| {})
}

/// Like [`run`], calling `observe` after every handled event.
pub fn run_observed(
    scenario: &SimScenario,
    mut observe: impl FnMut(&SimEvent, &Census),
) -> Result<SimMetrics, SimError> {
    let mut engine = Engine::new(scenario)?;
    engine.run(&mut observe)?;
    Ok(engine.metrics())
}

/// Runs `repeats` copies with seeds `seed`, `seed + 1`, ...
pub fn run_repeated(scenario: &SimScenario, repeats: u32) -> Result<RepeatedMetrics, SimError> {
    if repeats == 0 {
        return Err(SimError::InvalidScenario(
            "repeats must be at least 1".into(),
        ));
    }
    let runs = (0..repeats)
        .map(|i| {
            let sc = SimScenario {
                seed: scenario.seed.wrapping_add(u64::from(i)),
                ..scenario.clone()
            };
            run(&sc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RepeatedMetrics::from_runs(runs))
}

fn plan_kernels(profiles: &[FunctionProfile]) -> Vec<KernelResource> {
    let mut seen = std::collections::BTreeSet::new();
    profiles
        .iter()
        .filter_map(|p| p.kernel.clone())
        .filter(|k| seen.insert(k.kernel_id.clone()))
        .collect()
}

impl<'a> Engine<'a> {
    fn new(sc: &'a SimScenario) -> Result<Self, SimError> {
        sc.validate()?;
        if matches!(sc.workload, Workload::MixSweep { .. }) {
            return Err(SimError::InvalidScenario(
                "a mix sweep must be expanded into points before running".into(),
            ));
        }
        let spec = &sc.platform;
        let plan = match &sc.plan {
            Some(p) => p.clone(),
            None => pack_auto(&plan_kernels(&sc.profiles), spec.fpga_area_capacity)?,
        };
        let fpga = match &sc.fpga_init {
            FpgaInit::Empty => FpgaState::new(plan.clone()),
            FpgaInit::Preload(Some(id)) => FpgaState::preloaded(plan.clone(), id)?,
            FpgaInit::Preload(None) => match plan.first() {
                Some(img) => FpgaState::preloaded(plan.clone(), &img.image_id.clone())?,
                None => FpgaState::new(plan.clone()),
            },
        };
        let table = match &sc.thresholds {
            ThresholdSource::Estimate { max_load } => {
                ThresholdTable::estimate(&sc.profiles, spec, &ProcessorSharing, *max_load)
            }
            ThresholdSource::Table(t) => t.clone(),
        };

        let schedule = merge(
            gen_workload(&sc.workload, sc.seed),
            gen_background(&sc.background, sc.seed),
        );
        let mut procs = Vec::with_capacity(schedule.len());
        for a in &schedule.arrivals {
            let app = sc.profile_index(&a.app_id)?;
            procs.push(Proc {
                app,
                arrival: a.time,
                calls_total: a.calls.unwrap_or(sc.profiles[app].calls_per_run),
                calls_done: 0,
                time_limit: a.time_limit,
                measured: a.measured,
                run_target: TargetKind::X86,
                call_target: TargetKind::X86,
                load_at_start: 0,
                stage: Stage::Pending,
                finished: None,
            });
        }

        let (persistent, bg_demand) = match sc.background {
            Background::Constant {
                processes,
                demand: None,
            } => (processes, None),
            Background::Constant {
                demand: Some(d), ..
            } => (0, Some(d)),
            _ => (0, None),
        };

        let units = plan
            .iter()
            .flat_map(|img| img.kernel_ids().map(str::to_string))
            .map(|k| (k, Unit::default()))
            .collect();

        let mut engine = Engine {
            sc,
            table,
            fpga,
            x86: PsPool::new(spec.x86_cores, persistent),
            channel: PsPool::new(1, 0),
            arm: PsPool::new(spec.arm_cores, 0),
            units,
            events: BTreeMap::new(),
            waves: BTreeMap::new(),
            seq: 0,
            now: Micros::ZERO,
            undecided: 0,
            sampled_load: 0,
            unfinished: procs.len(),
            not_started: procs.len(),
            completed: 0,
            procs,
            migrations: TargetCounts::default(),
            fallbacks: 0,
            reconfigurations: 0,
            x86_demand: 0.0,
            bg_demand,
        };

        if let (Background::Constant { processes, .. }, Some(d)) = (&sc.background, bg_demand) {
            let base = engine.procs.len();
            for i in 0..*processes as usize {
                engine.x86.add(base + i, d);
            }
        }
        for (pid, a) in schedule.arrivals.iter().enumerate() {
            if a.wave.is_some() {
                engine.waves.entry(a.time).or_default().push(pid);
            } else {
                engine.push(a.time, EventKind::Arrival { pid });
            }
        }
        let wave_times: Vec<Micros> = engine.waves.keys().copied().collect();
        for t in wave_times {
            engine.push(t, EventKind::WaveStart { wave_time: t });
        }
        if spec.load_sampler_period > Micros::ZERO && engine.unfinished > 0 {
            engine.push(Micros::ZERO, EventKind::LoadSample);
        }
        Ok(engine)
    }

    fn push(&mut self, time: Micros, kind: EventKind) {
        self.seq += 1;
        self.events.insert((time, kind.priority(), self.seq), kind);
    }

    fn census(&self) -> Census {
        Census {
            not_started: self.not_started,
            in_flight: self.procs.len() - self.not_started - self.completed,
            completed: self.completed,
            total: self.procs.len(),
        }
    }

    fn next_pool_completion(&self) -> Option<Micros> {
        [&self.x86, &self.channel, &self.arm]
            .iter()
            .filter_map(|p| p.next_completion())
            .min()
    }

    fn run(&mut self, observe: &mut dyn FnMut(&SimEvent, &Census)) -> Result<(), SimError> {
        while self.unfinished > 0 {
            let pool_t = self.next_pool_completion();
            let event_t = self.events.keys().next().map(|k| k.0);
            let t = match (pool_t, event_t) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => {
                    return Err(SimError::InvalidScenario(format!(
                        "no pending events with {} process(es) unfinished",
                        self.unfinished
                    )))
                }
            };
            if t > self.sc.time_cap {
                return Err(SimError::Timeout {
                    cap: self.sc.time_cap,
                    unfinished: self.unfinished,
                });
            }
            debug_assert!(t >= self.now);
            self.now = t;
            self.x86.advance(t);
            self.channel.advance(t);
            self.arm.advance(t);

            if pool_t == Some(t) {
                for (stage, pool) in [(Stage::X86, 0), (Stage::Channel, 1), (Stage::Arm, 2)] {
                    let done = match pool {
                        0 => self.x86.take_finished(),
                        1 => self.channel.take_finished(),
                        _ => self.arm.take_finished(),
                    };
                    for pid in done {
                        if pid >= self.procs.len() {
                            if let Some(d) = self.bg_demand {
                                self.x86_demand += d.0 as f64;
                            }
                            continue;
                        }
                        debug_assert_eq!(self.procs[pid].stage, stage);
                        let target = self.pool_stage_done(pid)?;
                        if let Some(target) = target {
                            let ev = SimEvent {
                                time: t,
                                kind: EventKind::Completion { pid, target },
                            };
                            observe(&ev, &self.census());
                        }
                    }
                }
                continue;
            }

            let (key, kind) = self
                .events
                .pop_first()
                .expect("event time came from the queue");
            debug_assert_eq!(key.0, t);
            self.handle(&kind)?;
            observe(&SimEvent { time: t, kind }, &self.census());
        }
        Ok(())
    }

    fn handle(&mut self, kind: &EventKind) -> Result<(), SimError> {
        let now = self.now;
        match *kind {
            EventKind::Arrival { pid } => {
                self.procs[pid].stage = Stage::Undecided;
                self.not_started -= 1;
                self.undecided += 1;
                self.push(now, EventKind::FunctionCall { pid });
            }
            EventKind::WaveStart { wave_time } => {
                for pid in self.waves.remove(&wave_time).unwrap_or_default() {
                    self.push(now, EventKind::Arrival { pid });
                }
            }
            EventKind::LoadSample => {
                self.sampled_load = self.x86_load();
                if self.unfinished > 0 {
                    self.push(
                        now + self.sc.platform.load_sampler_period,
                        EventKind::LoadSample,
                    );
                }
            }
            EventKind::FunctionCall { pid } => self.start_run(pid)?,
            EventKind::ReconfigDone => self.reconfig_done()?,
            EventKind::Deadline { pid } => self.deadline(pid)?,
            EventKind::Completion { pid, target } => {
                // Only FPGA completions are queued as events.
                debug_assert_eq!(target, TargetKind::Fpga);
                let Stage::FpgaRunning(k) = self.procs[pid].stage.clone() else {
                    return Ok(());
                };
                let unit = self
                    .units
                    .get_mut(&k)
                    .expect("unit exists for running kernel");
                if unit.busy != Some(pid) {
                    return Ok(());
                }
                unit.busy = None;
                self.call_done(pid)?;
                self.try_start(&k);
            }
        }
        Ok(())
    }

    /// Runnable x86 processes: jobs on the x86 cores plus arrived processes
    /// still waiting for their placement.
    fn x86_load(&self) -> u32 {
        self.x86.occupancy() + self.undecided
    }

    fn profile(&self, pid: usize) -> &'a FunctionProfile {
        &self.sc.profiles[self.procs[pid].app]
    }

    fn usable(&self, p: &FunctionProfile, t: TargetKind) -> bool {
        match t {
            TargetKind::X86 => true,
            TargetKind::Arm => p.arm_exec.is_some() && self.sc.platform.arm_cores > 0,
            TargetKind::Fpga => p.kernel.is_some() && p.fpga_exec.is_some(),
        }
    }

    fn begin_reconfiguration(&mut self, image: &str) -> Result<bool, SimError> {
        match self
            .fpga
            .begin_reconfiguration(image, self.now, &self.sc.platform)
        {
            Ok(done) => {
                self.reconfigurations += 1;
                debug!("t={} reconfiguring to {image}", self.now);
                self.push(done, EventKind::ReconfigDone);
                Ok(true)
            }
            Err(SchedulerError::Busy) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn start_run(&mut self, pid: usize) -> Result<(), SimError> {
        let load = if self.sc.platform.load_sampler_period > Micros::ZERO {
            self.sampled_load
        } else {
            self.x86_load()
        };
        let profile = self.profile(pid);
        let target = match self.sc.policy.pinned() {
            Some(t) if self.usable(profile, t) => t,
            Some(_) => TargetKind::X86,
            None => match self.table.get(&profile.app_id) {
                None => TargetKind::X86,
                Some(entry) => {
                    let d = decide(load, entry, &self.fpga)?;
                    if let Some(image) = &d.reconfigure {
                        self.begin_reconfiguration(image)?;
                    }
                    if self.usable(profile, d.target) {
                        d.target
                    } else {
                        TargetKind::X86
                    }
                }
            },
        };
        self.undecided -= 1;
        self.migrations.bump(target);
        let p = &mut self.procs[pid];
        p.run_target = target;
        p.load_at_start = load;
        if let Some(limit) = p.time_limit {
            let at = p.arrival + limit;
            self.push(at, EventKind::Deadline { pid });
        }
        self.start_call(pid)
    }

    fn start_call(&mut self, pid: usize) -> Result<(), SimError> {
        let profile = self.profile(pid);
        let spec = &self.sc.platform;
        match self.procs[pid].run_target {
            TargetKind::X86 => self.start_x86(pid),
            TargetKind::Arm => {
                self.procs[pid].call_target = TargetKind::Arm;
                self.procs[pid].stage = Stage::Channel;
                self.channel
                    .add(pid, profile.arm_transfer + spec.ethernet_migration_overhead);
            }
            TargetKind::Fpga => {
                let k = profile
                    .kernel_id()
                    .expect("FPGA runs have a kernel")
                    .to_string();
                let available = self.fpga.is_available(&k);
                let reconfiguring = self.fpga.reconfiguring().is_some();
                if !available && !reconfiguring {
                    let image = self.fpga.image_for(&k).map(str::to_string);
                    let pinned = self.sc.policy == Policy::AlwaysFpga;
                    match image {
                        Some(img) if pinned => {
                            self.begin_reconfiguration(&img)?;
                        }
                        _ => {
                            self.fallbacks += 1;
                            self.start_x86(pid);
                            return Ok(());
                        }
                    }
                }
                self.procs[pid].call_target = TargetKind::Fpga;
                self.procs[pid].stage = Stage::FpgaQueued(k.clone());
                self.units
                    .entry(k.clone())
                    .or_default()
                    .queue
                    .push_back(pid);
                self.try_start(&k);
            }
        }
        Ok(())
    }

    fn start_x86(&mut self, pid: usize) {
        let work = self.profile(pid).x86_exec;
        self.procs[pid].call_target = TargetKind::X86;
        self.procs[pid].stage = Stage::X86;
        self.x86.add(pid, work);
    }

    fn try_start(&mut self, kernel: &str) {
        if self.fpga.reconfiguring().is_some() || !self.fpga.is_available(kernel) {
            return;
        }
        let unit = self.units.get_mut(kernel).expect("unit exists");
        if unit.busy.is_some() {
            return;
        }
        let Some(pid) = unit.queue.pop_front() else {
            return;
        };
        unit.busy = Some(pid);
        let p = &self.sc.profiles[self.procs[pid].app];
        let mut service =
            p.fpga_exec.expect("FPGA runs have a time") + self.sc.platform.pcie_transfer_overhead;
        if self.sc.policy == Policy::AlwaysFpga {
            service += p.fpga_setup;
        }
        self.procs[pid].stage = Stage::FpgaRunning(kernel.to_string());
        self.push(
            self.now + service,
            EventKind::Completion {
                pid,
                target: TargetKind::Fpga,
            },
        );
    }

    /// Moves a process on after one of its pool jobs finished. Returns the
    /// target when this ended a call.
    fn pool_stage_done(&mut self, pid: usize) -> Result<Option<TargetKind>, SimError> {
        match self.procs[pid].stage {
            Stage::X86 => {
                self.x86_demand += self.profile(pid).x86_exec.0 as f64;
                self.call_done(pid)?;
                Ok(Some(TargetKind::X86))
            }
            Stage::Channel => {
                let p = self.profile(pid);
                let compute = p
                    .arm_exec
                    .expect("ARM runs have a time")
                    .saturating_sub(p.arm_transfer);
                self.procs[pid].stage = Stage::Arm;
                self.arm.add(pid, compute);
                Ok(None)
            }
            Stage::Arm => {
                self.call_done(pid)?;
                Ok(Some(TargetKind::Arm))
            }
            ref s => unreachable!("pool job finished for a process in stage {s:?}"),
        }
    }

    fn call_done(&mut self, pid: usize) -> Result<(), SimError> {
        let p = &mut self.procs[pid];
        p.calls_done += 1;
        if p.calls_done >= p.calls_total {
            self.finish(pid);
            Ok(())
        } else {
            self.start_call(pid)
        }
    }

    fn finish(&mut self, pid: usize) {
        let now = self.now;
        let p = &mut self.procs[pid];
        p.stage = Stage::Done;
        p.finished = Some(now);
        self.unfinished -= 1;
        self.completed += 1;
        if self.sc.policy == Policy::XarTrek && p.calls_done > 0 {
            let elapsed = now.saturating_sub(p.arrival);
            let rec = ExecutionRecord {
                app_id: self.sc.profiles[p.app].app_id.clone(),
                target: p.call_target,
                exec_time: Micros(elapsed.0 / u64::from(p.calls_done)),
                load_at_start: p.load_at_start,
            };
            self.table.apply(&rec);
        }
    }

    fn deadline(&mut self, pid: usize) -> Result<(), SimError> {
        match self.procs[pid].stage.clone() {
            Stage::Done | Stage::Pending => return Ok(()),
            Stage::Undecided => self.undecided -= 1,
            Stage::X86 => {
                self.x86.remove(pid);
            }
            Stage::Channel => {
                self.channel.remove(pid);
            }
            Stage::Arm => {
                self.arm.remove(pid);
            }
            Stage::FpgaQueued(k) => {
                if let Some(u) = self.units.get_mut(&k) {
                    u.queue.retain(|q| *q != pid);
                }
            }
            Stage::FpgaRunning(k) => {
                if let Some(u) = self.units.get_mut(&k) {
                    u.busy = None;
                }
                self.finish(pid);
                self.try_start(&k);
                return Ok(());
            }
        }
        self.finish(pid);
        Ok(())
    }

    fn reconfig_done(&mut self) -> Result<(), SimError> {
        self.fpga.poll(self.now);
        let kernels: Vec<String> = self.units.keys().cloned().collect();
        for k in &kernels {
            if self.fpga.is_available(k) {
                continue;
            }
            let waiting: Vec<usize> = self.units[k].queue.iter().copied().collect();
            if waiting.is_empty() {
                continue;
            }
            if self.sc.policy == Policy::AlwaysFpga {
                if self.fpga.reconfiguring().is_none() {
                    if let Some(img) = self.fpga.image_for(k).map(str::to_string) {
                        self.begin_reconfiguration(&img)?;
                    }
                }
            } else {
                self.units.get_mut(k).expect("listed unit").queue.clear();
                for pid in waiting {
                    self.fallbacks += 1;
                    self.start_x86(pid);
                }
            }
        }
        for k in &kernels {
            self.try_start(k);
        }
        Ok(())
    }

    fn metrics(self) -> SimMetrics {
        let mut completions = Vec::new();
        let mut throughput = 0.0;
        for p in self.procs.iter().filter(|p| p.measured) {
            let end = p.finished.unwrap_or(self.now);
            completions.push(AppCompletion {
                app_id: self.sc.profiles[p.app].app_id.clone(),
                arrival: p.arrival,
                completion: end.saturating_sub(p.arrival),
                target: p.call_target,
                calls_done: p.calls_done,
            });
            if let Some(limit) = p.time_limit {
                throughput += f64::from(p.calls_done) / (limit.0 as f64 / 1e6);
            }
        }
        let mean_completion_ms = if completions.is_empty() {
            0.0
        } else {
            completions
                .iter()
                .map(|c| c.completion.as_ms())
                .sum::<f64>()
                / completions.len() as f64
        };
        SimMetrics {
            completions,
            mean_completion_ms,
            throughput,
            migrations: self.migrations,
            fpga_fallbacks: self.fallbacks,
            reconfigurations: self.reconfigurations,
            makespan: self.now,
            x86_work_ms: self.x86.served() / 1000.0,
            x86_demand_ms: self.x86_demand / 1000.0,
            final_table: self.table,
        }
    }
}
