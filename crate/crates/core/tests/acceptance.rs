//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero when any criterion fails.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xartrek_core::experiment::{cmd_calibrate, cmd_run, ExperimentConfig, RunOutput};
use xartrek_core::packer::{pack_auto, ConfigImage, KernelResource};
use xartrek_core::platform::{
    load_platform, load_profiles, Micros, PlatformSpec, ProcessorSharing, TargetKind,
};
use xartrek_core::protocol::codec::read_frame;
use xartrek_core::protocol::{
    decode, encode, single_image_state, Client, Endpoint, FixedLoad, SchedulerServer, WireMessage,
};
use xartrek_core::scheduler::{decide, FpgaState};
use xartrek_core::sim::Policy;
use xartrek_core::threshold::{
    table_load, update_on_completion, ExecutionRecord, ThresholdEntry, ThresholdTable,
};

type Outcome = Result<String, String>;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(n: u32, name: &str, budget: Duration, body: fn() -> Outcome) -> bool {
    let started = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(format!("panic: {msg}"))
    });
    let elapsed = started.elapsed();
    let (pass, detail) = match outcome {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
        Err(e) => (false, e),
    };
    println!(
        "criterion {n}: {} {name} ({:.2}s / {:.0}s) {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    let _ = std::io::stdout().flush();
    pass
}

// --- 1 ---------------------------------------------------------------------

/// Straight transcription of the five placement rules, evaluated in order.
fn placement_oracle(
    load: u32,
    fpga_thr: u32,
    arm_thr: u32,
    kernel_ready: bool,
) -> (TargetKind, bool) {
    let mut out = None;
    if load <= arm_thr && load > fpga_thr && !kernel_ready {
        out = Some((TargetKind::X86, true));
    }
    if load > arm_thr && load > fpga_thr && !kernel_ready {
        out = Some((TargetKind::Arm, true));
    }
    if load <= arm_thr && load <= fpga_thr {
        out = Some((TargetKind::X86, false));
    }
    if load > arm_thr && load <= fpga_thr {
        out = Some((TargetKind::Arm, false));
    }
    if load > fpga_thr && kernel_ready {
        out = Some(if fpga_thr < arm_thr {
            (TargetKind::Fpga, false)
        } else {
            (TargetKind::Arm, false)
        });
    }
    out.expect("the rules cover every case")
}

fn decision_oracle() -> Outcome {
    let table =
        table_load(&data_dir().join("measured_thresholds.csv")).map_err(|e| e.to_string())?;
    ensure(table.len() == 5, || {
        format!("expected 5 entries, got {}", table.len())
    })?;
    let image = ConfigImage {
        image_id: "xclbin-0".into(),
        kernels: table
            .kernel_ids()
            .into_iter()
            .map(|k| KernelResource {
                function_id: k.clone(),
                kernel_id: k,
                area: 10,
            })
            .collect(),
        total_area: 50,
    };
    let loaded =
        FpgaState::preloaded(vec![image.clone()], "xclbin-0").map_err(|e| e.to_string())?;
    let empty = FpgaState::new(vec![image]);

    let mut cases = 0;
    for entry in table.entries() {
        for ready in [true, false] {
            let fpga = if ready { &loaded } else { &empty };
            for load in 0..=200u32 {
                let got = decide(load, entry, fpga).map_err(|e| e.to_string())?;
                let want = placement_oracle(load, entry.fpga_thr, entry.arm_thr, ready);
                ensure((got.target, got.reconfigure.is_some()) == want, || {
                    format!(
                        "{} load {load} kernel ready {ready}: decide gave {:?}/{:?}, oracle {want:?}",
                        entry.app_id, got.target, got.reconfigure
                    )
                })?;
                cases += 1;
            }
        }
    }
    ensure(cases == 2010, || {
        format!("ran {cases} cases, expected 2010")
    })?;
    Ok(format!("{cases}/{cases} cases agree"))
}

// --- 2 ---------------------------------------------------------------------

/// Largest load in 0..=max whose shared x86 time (ms, 6 cores) stays within
/// `budget_ms`, scanning every load with exact integer arithmetic.
fn scan_threshold(x86_ms: u64, budget_ms: u64, max: u32) -> u32 {
    let cores = 6u64;
    let mut best = 0;
    for n in 0..=max {
        // ceil(x86 * max(n, cores) / cores) <= budget  <=>  x86 * max(n, cores) <= budget * cores
        if x86_ms * u64::from(n).max(cores) <= budget_ms * cores {
            best = n;
        } else {
            break;
        }
    }
    best
}

fn threshold_zeros() -> Outcome {
    // app, x86, fpga, arm (ms)
    let measured = [
        ("CG-A", 2182, 10597, 8406),
        ("FaceDet320", 175, 332, 642),
        ("FaceDet640", 885, 832, 2991),
        ("Digit500", 883, 470, 2281),
        ("Digit2000", 3521, 1229, 8963),
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("thresholds.csv");
    let table = cmd_calibrate(
        &data_dir().join("profiles.toml"),
        Some(&data_dir().join("platform.toml")),
        &out,
        200,
    )
    .map_err(|e| e.to_string())?;
    let stored = table_load(&out).map_err(|e| e.to_string())?;
    ensure(stored == table, || {
        "stored table differs from the returned one".into()
    })?;

    let mut summary = Vec::new();
    for (app, x86, fpga, arm) in measured {
        let e = table.get(app).ok_or_else(|| format!("{app} missing"))?;
        let want = (
            scan_threshold(x86, fpga, 200),
            scan_threshold(x86, arm, 200),
        );
        ensure((e.fpga_thr, e.arm_thr) == want, || {
            format!(
                "{app}: calibrated {}/{}, scan oracle {}/{}",
                e.fpga_thr, e.arm_thr, want.0, want.1
            )
        })?;
        summary.push(format!("{app} {}/{}", e.fpga_thr, e.arm_thr));
    }
    let zeros: Vec<bool> = measured
        .iter()
        .map(|(app, ..)| table.get(app).unwrap().fpga_thr == 0)
        .collect();
    ensure(zeros == [false, false, true, true, true], || {
        format!("zero pattern {zeros:?}")
    })?;
    let pinned = |app: &str| {
        let e = table.get(app).unwrap();
        (e.fpga_thr, e.arm_thr)
    };
    ensure(
        pinned("CG-A") == (29, 23) && pinned("FaceDet320") == (11, 22),
        || {
            format!(
                "CG-A {:?}, FaceDet320 {:?}",
                pinned("CG-A"),
                pinned("FaceDet320")
            )
        },
    )?;
    Ok(summary.join(", "))
}

// --- 3 ---------------------------------------------------------------------

fn record_strategy(app: String) -> impl Strategy<Value = ExecutionRecord> {
    (
        prop_oneof![
            Just(TargetKind::X86),
            Just(TargetKind::Arm),
            Just(TargetKind::Fpga)
        ],
        0u64..30_000_000,
        0u32..=260,
    )
        .prop_map(move |(target, us, load)| ExecutionRecord {
            app_id: app.clone(),
            target,
            exec_time: Micros(us),
            load_at_start: load,
        })
}

fn check_step(
    prev: &ThresholdEntry,
    next: &ThresholdEntry,
    rec: &ExecutionRecord,
) -> Result<(), TestCaseError> {
    let fpga_changed = next.fpga_thr != prev.fpga_thr;
    let arm_changed = next.arm_thr != prev.arm_thr;
    match rec.target {
        TargetKind::X86 => {
            prop_assert!(next.fpga_thr <= prev.fpga_thr && next.arm_thr <= prev.arm_thr);
            prop_assert!(!(fpga_changed && arm_changed));
            if fpga_changed {
                prop_assert_eq!(next.fpga_thr, rec.load_at_start);
            }
            if arm_changed {
                prop_assert_eq!(next.arm_thr, rec.load_at_start);
            }
        }
        TargetKind::Arm => {
            prop_assert!(!fpga_changed);
            prop_assert!(next.arm_thr >= prev.arm_thr);
        }
        TargetKind::Fpga => {
            prop_assert!(!arm_changed);
            prop_assert!(next.fpga_thr >= prev.fpga_thr);
        }
    }
    Ok(())
}

fn update_invariants() -> Outcome {
    let table =
        table_load(&data_dir().join("measured_thresholds.csv")).map_err(|e| e.to_string())?;
    let mut total = 0usize;
    for start in table.entries() {
        // 100 cases x 100 consecutive records = 10,000 records per entry.
        let mut runner = TestRunner::new(PropConfig {
            cases: 100,
            failure_persistence: None,
            ..PropConfig::default()
        });
        let applied = RefCell::new(0usize);
        runner
            .run(
                &proptest::collection::vec(record_strategy(start.app_id.clone()), 100),
                |records| {
                    let mut entry = start.clone();
                    for rec in &records {
                        let next = update_on_completion(&entry, rec)
                            .map_err(|e| TestCaseError::fail(e.to_string()))?;
                        check_step(&entry, &next, rec)?;
                        entry = next;
                    }
                    *applied.borrow_mut() += records.len();
                    Ok(())
                },
            )
            .map_err(|e| format!("{}: {e}", start.app_id))?;
        let n = applied.into_inner();
        ensure(n >= 10_000, || {
            format!("{}: only {n} records applied", start.app_id)
        })?;
        total += n;
    }
    Ok(format!("{total} records over {} entries", table.len()))
}

// --- 4 ---------------------------------------------------------------------

fn run_config(name: &str, keep: impl Fn(f64) -> bool) -> Result<RunOutput, String> {
    let mut config = ExperimentConfig::load(&data_dir().join("experiments").join(name))
        .map_err(|e| e.to_string())?;
    config.points.retain(|p| keep(p.x));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cmd_run(&config, dir.path()).map_err(|e| e.to_string())
}

fn low_load_sets() -> Outcome {
    let out = run_config("low-load.toml", |_| true)?;
    let estimated = ThresholdTable::estimate(
        &load_profiles(&data_dir().join("profiles.toml")).map_err(|e| e.to_string())?,
        &load_platform(&data_dir().join("platform.toml")).map_err(|e| e.to_string())?,
        &ProcessorSharing,
        200,
    );
    let mut by_key = BTreeMap::new();
    for (point, policy, m) in &out.results {
        by_key.insert((point.scenario.id.clone(), *policy), m);
    }
    let (mut with_cga, mut quiet) = (0, 0);
    for (point, policy, xt) in &out.results {
        if *policy != Policy::XarTrek {
            continue;
        }
        let id = &point.scenario.id;
        let fpga = by_key[&(id.clone(), Policy::AlwaysFpga)];
        let x86 = by_key[&(id.clone(), Policy::AlwaysX86)];
        for (i, run) in xt.runs.iter().enumerate() {
            let apps: Vec<&str> = run.completions.iter().map(|c| c.app_id.as_str()).collect();
            let mut same: Vec<&str> = fpga.runs[i]
                .completions
                .iter()
                .map(|c| c.app_id.as_str())
                .collect();
            let mut mine = apps.clone();
            same.sort();
            mine.sort();
            ensure(same == mine, || {
                format!("{id} repeat {i}: policies saw different sets")
            })?;

            if apps.contains(&"CG-A") {
                with_cga += 1;
                let (x, f) = (run.mean_completion_ms, fpga.runs[i].mean_completion_ms);
                ensure(x <= f, || {
                    format!("{id} repeat {i} {apps:?}: xartrek {x:.0} ms > always-fpga {f:.0} ms")
                })?;
            }
            // The set's load never exceeds its size, so no migration is
            // warranted when every threshold is at least that large.
            let size = apps.len() as u32;
            let stays = apps.iter().all(|a| {
                let e = estimated.get(a).unwrap();
                e.fpga_thr >= size && e.arm_thr >= size
            });
            if stays {
                quiet += 1;
                let (x, b) = (run.mean_completion_ms, x86.runs[i].mean_completion_ms);
                ensure((x - b).abs() <= 0.05 * b, || {
                    format!("{id} repeat {i} {apps:?}: xartrek {x:.0} ms vs always-x86 {b:.0} ms")
                })?;
            }
        }
    }
    ensure(with_cga > 0 && quiet > 0, || {
        format!("corpus too thin: {with_cga} CG-A sets, {quiet} quiet sets")
    })?;
    Ok(format!(
        "{with_cga} sets with CG-A, {quiet} sets needing no migration"
    ))
}

// --- 5 ---------------------------------------------------------------------

fn throughput_preconfigured() -> Outcome {
    let out = run_config("throughput.toml", |x| x == 50.0)?;
    let tput = |p: Policy| {
        out.results
            .iter()
            .find(|(_, policy, _)| *policy == p)
            .map(|(_, _, m)| m.throughput.mean)
            .ok_or_else(|| format!("no {} result", p.name()))
    };
    let (xt, x86, fpga) = (
        tput(Policy::XarTrek)?,
        tput(Policy::AlwaysX86)?,
        tput(Policy::AlwaysFpga)?,
    );
    let line = format!("xartrek {xt:.3}/s, always-x86 {x86:.3}/s, always-fpga {fpga:.3}/s");
    ensure(xt >= 2.0 * x86 && xt >= fpga, || line.clone())?;
    Ok(line)
}

// --- 6 ---------------------------------------------------------------------

fn mix_sweep() -> Outcome {
    let out = run_config("slow-mix.toml", |_| true)?;
    let mut cells: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for (point, policy, m) in &out.results {
        let cell = cells.entry(point.x.round() as u64).or_default();
        match policy {
            Policy::XarTrek => cell.0 = Some(m.mean_completion.mean),
            Policy::AlwaysX86 => cell.1 = Some(m.mean_completion.mean),
            _ => {}
        }
    }
    ensure(cells.len() >= 3 && cells.contains_key(&100), || {
        format!("sweep points {:?}", cells.keys())
    })?;
    let mut line = Vec::new();
    for (pct, cell) in &cells {
        let (Some(x), Some(b)) = *cell else {
            return Err(format!("{pct}%: missing a policy"));
        };
        line.push(format!("{pct}%: {x:.0}/{b:.0}"));
        if *pct == 100 {
            ensure(b < x, || {
                format!("at 100% always-x86 {b:.0} ms should beat xartrek {x:.0} ms")
            })?;
        } else {
            ensure(x <= b, || {
                format!("at {pct}% xartrek {x:.0} ms lost to always-x86 {b:.0} ms")
            })?;
        }
    }
    Ok(format!("xartrek/always-x86 ms {}", line.join(" ")))
}

// --- 7 ---------------------------------------------------------------------

fn random_kernels(rng: &mut ChaCha8Rng, n: usize, capacity: u64) -> Vec<KernelResource> {
    (0..n)
        .map(|i| KernelResource {
            kernel_id: format!("k{i}"),
            area: rng.gen_range(1..=capacity),
            function_id: format!("f{i}"),
        })
        .collect()
}

fn feasible(kernels: &[KernelResource], plan: &[ConfigImage], capacity: u64) -> Result<(), String> {
    let mut seen: Vec<&str> = plan.iter().flat_map(|i| i.kernel_ids()).collect();
    let mut want: Vec<&str> = kernels.iter().map(|k| k.kernel_id.as_str()).collect();
    seen.sort();
    want.sort();
    ensure(seen == want, || "kernels lost or duplicated".into())?;
    for img in plan {
        let sum: u64 = img.kernels.iter().map(|k| k.area).sum();
        ensure(sum == img.total_area && sum <= capacity, || {
            format!(
                "{} holds {sum} (reported {}) over capacity {capacity}",
                img.image_id, img.total_area
            )
        })?;
    }
    Ok(())
}

/// Fewest bins over all set partitions, by DP on subsets.
fn optimal_bins(areas: &[u64], capacity: u64) -> u32 {
    let n = areas.len();
    let full = (1usize << n) - 1;
    let fits: Vec<bool> = (0..=full)
        .map(|m| {
            (0..n)
                .filter(|i| m >> i & 1 == 1)
                .map(|i| areas[i])
                .sum::<u64>()
                <= capacity
        })
        .collect();
    let mut best = vec![u32::MAX; full + 1];
    best[0] = 0;
    for m in 1..=full {
        let low = m & m.wrapping_neg();
        let rest = m ^ low;
        let mut sub = rest;
        loop {
            let bin = sub | low;
            if fits[bin] && best[m ^ bin] != u32::MAX {
                best[m] = best[m].min(best[m ^ bin] + 1);
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    best[full]
}

fn packing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let capacity = rng.gen_range(1..=500);
        let n = rng.gen_range(0..=40);
        let kernels = random_kernels(&mut rng, n, capacity);
        let plan = pack_auto(&kernels, capacity).map_err(|e| format!("fuzz case {case}: {e}"))?;
        feasible(&kernels, &plan, capacity).map_err(|e| format!("fuzz case {case}: {e}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut misses = Vec::new();
    for case in 0..200 {
        let n = rng.gen_range(1..=8);
        let kernels = random_kernels(&mut rng, n, 100);
        let plan = pack_auto(&kernels, 100).map_err(|e| format!("corpus case {case}: {e}"))?;
        feasible(&kernels, &plan, 100).map_err(|e| format!("corpus case {case}: {e}"))?;
        let areas: Vec<u64> = kernels.iter().map(|k| k.area).collect();
        let best = optimal_bins(&areas, 100);
        if plan.len() as u32 != best {
            misses.push(format!(
                "case {case} areas {areas:?}: {} images vs optimum {best}",
                plan.len()
            ));
        }
    }
    ensure(misses.is_empty(), || {
        format!(
            "{} of 200 corpus instances not optimal; first: {}",
            misses.len(),
            misses[0]
        )
    })?;
    Ok("1000 fuzzed plans feasible, 200/200 corpus plans optimal".into())
}

// --- 8 ---------------------------------------------------------------------

fn sample_messages() -> Vec<WireMessage> {
    vec![
        WireMessage::Request {
            app_id: "Digit2000".into(),
            function_id: "digit_rec".into(),
        },
        WireMessage::Response {
            target: TargetKind::Fpga,
        },
        WireMessage::Completion(ExecutionRecord {
            app_id: "CG-A".into(),
            target: TargetKind::Arm,
            exec_time: Micros(8_406_000),
            load_at_start: 40,
        }),
        WireMessage::KernelQuery,
        WireMessage::KernelList {
            kernel_ids: vec!["KNL_HW_CG_A".into(), "KNL_HW_FD320".into()],
        },
        WireMessage::Shutdown,
        WireMessage::Ack,
    ]
}

fn protocol() -> Outcome {
    for msg in sample_messages() {
        let back = decode(&encode(&msg)).map_err(|e| format!("{msg:?}: {e}"))?;
        ensure(back == msg, || format!("{msg:?} came back as {back:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let valid: Vec<Vec<u8>> = sample_messages().iter().map(encode).collect();
    for _ in 0..20_000 {
        let mut frame = if rng.gen_bool(0.5) {
            let len = rng.gen_range(0..64);
            (0..len).map(|_| rng.gen()).collect::<Vec<u8>>()
        } else {
            valid[rng.gen_range(0..valid.len())].clone()
        };
        for _ in 0..rng.gen_range(0..4) {
            if frame.is_empty() {
                break;
            }
            let at = rng.gen_range(0..frame.len());
            match rng.gen_range(0..3) {
                0 => frame[at] = rng.gen(),
                1 => frame.truncate(at),
                _ => frame.insert(at, rng.gen()),
            }
        }
        let _ = decode(&frame);
        let _ = read_frame(&mut frame.as_slice());
    }

    concurrent_clients()
}

fn concurrent_clients() -> Outcome {
    const CLIENTS: usize = 64;
    const PER_CLIENT: usize = 20;
    let initial =
        table_load(&data_dir().join("measured_thresholds.csv")).map_err(|e| e.to_string())?;
    let apps: Vec<String> = initial.entries().map(|e| e.app_id.clone()).collect();
    let server = SchedulerServer::bind(
        &"tcp:127.0.0.1:0".parse::<Endpoint>()?,
        initial.clone(),
        single_image_state(&initial),
        Box::new(FixedLoad(20)),
        PlatformSpec::default(),
    )
    .map_err(|e| e.to_string())?;
    let endpoint = server.local_endpoint().map_err(|e| e.to_string())?;
    let serving = thread::spawn(move || server.run());

    // A session sending garbage must not take the server down.
    {
        let addr = endpoint.to_string();
        let mut raw = std::net::TcpStream::connect(addr.trim_start_matches("tcp:"))
            .map_err(|e| e.to_string())?;
        raw.write_all(&[0, 0, 0, 3, 0xff, 0xee, 0xdd])
            .map_err(|e| e.to_string())?;
    }

    let gate = Arc::new(Barrier::new(CLIENTS));
    let workers: Vec<_> = (0..CLIENTS)
        .map(|c| {
            let endpoint = endpoint.clone();
            let apps = apps.clone();
            let gate = Arc::clone(&gate);
            thread::spawn(move || -> Result<Vec<ExecutionRecord>, String> {
                let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
                let mut client = Client::connect(&endpoint, Duration::from_secs(10))
                    .map_err(|e| e.to_string())?;
                gate.wait();
                let mut sent = Vec::new();
                for i in 0..PER_CLIENT {
                    let app = &apps[rng.gen_range(0..apps.len())];
                    let target = client.request(app, "main").map_err(|e| e.to_string())?;
                    let rec = ExecutionRecord {
                        app_id: app.clone(),
                        target,
                        exec_time: Micros(rng.gen_range(100_000..12_000_000)),
                        // Unique per client and step, so the applied order can be traced back.
                        load_at_start: (c * PER_CLIENT + i) as u32,
                    };
                    client.report(&rec).map_err(|e| e.to_string())?;
                    sent.push(rec);
                }
                Ok(sent)
            })
        })
        .collect();
    let mut sent = Vec::new();
    for w in workers {
        sent.push(
            w.join()
                .map_err(|_| "client thread panicked".to_string())??,
        );
    }
    Client::connect(&endpoint, Duration::from_secs(5))
        .and_then(|mut c| c.shutdown())
        .map_err(|e| e.to_string())?;
    let report = serving
        .join()
        .map_err(|_| "server thread panicked".to_string())?
        .map_err(|e| e.to_string())?;

    let total: usize = sent.iter().map(Vec::len).sum();
    ensure(report.applied.len() == total, || {
        format!("{} applied of {total} sent", report.applied.len())
    })?;
    let key = |r: &ExecutionRecord| {
        (
            r.load_at_start,
            r.app_id.clone(),
            r.target.flag(),
            r.exec_time,
        )
    };
    let mut a: Vec<_> = report.applied.iter().map(key).collect();
    let mut s: Vec<_> = sent.iter().flatten().map(key).collect();
    a.sort();
    s.sort();
    ensure(a == s, || {
        "applied completions differ from the ones sent".into()
    })?;
    for (c, recs) in sent.iter().enumerate() {
        let order: Vec<u32> = report
            .applied
            .iter()
            .filter(|r| r.load_at_start as usize / PER_CLIENT == c)
            .map(|r| r.load_at_start)
            .collect();
        let want: Vec<u32> = recs.iter().map(|r| r.load_at_start).collect();
        ensure(order == want, || {
            format!("client {c}: applied out of order")
        })?;
    }

    let mut replay = initial.clone();
    for rec in &report.applied {
        ensure(replay.apply(rec), || format!("replay rejected {rec:?}"))?;
    }
    ensure(replay == report.table, || {
        "serial replay of the applied order differs from the server table".into()
    })?;
    Ok(format!(
        "7 kinds round-trip, 20000 fuzzed frames, {CLIENTS} clients x {PER_CLIENT} completions match a serial replay"
    ))
}

// --- 9 ---------------------------------------------------------------------

fn determinism() -> Outcome {
    let mut checked = Vec::new();
    for name in ["low-load.toml", "periodic.toml"] {
        let config = ExperimentConfig::load(&data_dir().join("experiments").join(name))
            .map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let out = cmd_run(&config, dir.path()).map_err(|e| e.to_string())?;
            bytes.push(std::fs::read(&out.metrics_path).map_err(|e| e.to_string())?);
        }
        ensure(!bytes[0].is_empty() && bytes[0] == bytes[1], || {
            format!("{name}: metrics differ between runs")
        })?;
        checked.push(format!("{name} {} bytes", bytes[0].len()));
    }
    Ok(format!("identical metrics: {}", checked.join(", ")))
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "decision oracle equivalence", secs(1), decision_oracle),
        criterion(2, "threshold zero pattern", secs(5), threshold_zeros),
        criterion(3, "update invariants", secs(5), update_invariants),
        criterion(4, "low-load random sets", secs(10), low_load_sets),
        criterion(
            5,
            "throughput at 50 background jobs",
            secs(10),
            throughput_preconfigured,
        ),
        criterion(6, "slow-app mix sweep", secs(10), mix_sweep),
        criterion(7, "kernel packing", secs(10), packing),
        criterion(8, "protocol and concurrent clients", secs(30), protocol),
        criterion(9, "seeded determinism", secs(60), determinism),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
