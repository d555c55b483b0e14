//! The scheduler server: one acceptor thread, one thread per session, and a
//! single owner loop that holds the threshold table and the FPGA state.

use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::codec::{read_frame, write_frame, WireMessage};
use super::endpoint::{Conn, Endpoint, Listener};
use crate::packer::{ConfigImage, KernelResource};
use crate::platform::{Micros, PlatformSpec, TargetKind};
use crate::scheduler::{decide, FpgaState, SchedulerError};
use crate::threshold::{ExecutionRecord, ThresholdTable};

/// Source of the x86 load reading (runnable process count).
pub trait LoadSource: Send {
    fn read_load(&mut self) -> u32;
}

/// A constant, injected load.
#[derive(Debug, Clone, Copy)]
pub struct FixedLoad(pub u32);

impl LoadSource for FixedLoad {
    fn read_load(&mut self) -> u32 {
        self.0
    }
}

/// A load that tests (or an embedding program) can change at run time.
#[derive(Debug, Clone, Default)]
pub struct SharedLoad(pub Arc<AtomicU32>);

impl LoadSource for SharedLoad {
    fn read_load(&mut self) -> u32 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Runnable-task count from the fourth field of `/proc/loadavg`.
#[derive(Debug, Clone)]
pub struct ProcLoadavg {
    pub path: PathBuf,
}

impl Default for ProcLoadavg {
    fn default() -> Self {
        ProcLoadavg {
            path: PathBuf::from("/proc/loadavg"),
        }
    }
}

impl ProcLoadavg {
    pub fn parse(text: &str) -> Option<u32> {
        let field = text.split_whitespace().nth(3)?;
        field.split('/').next()?.parse().ok()
    }
}

impl LoadSource for ProcLoadavg {
    fn read_load(&mut self) -> u32 {
        std::fs::read_to_string(&self.path)
            .ok()
            .and_then(|t| Self::parse(&t))
            .unwrap_or(0)
    }
}

/// A device holding every kernel named in `table` as one preloaded image,
/// for serving without a packing plan.
pub fn single_image_state(table: &ThresholdTable) -> FpgaState {
    let kernels: Vec<KernelResource> = table
        .kernel_ids()
        .into_iter()
        .map(|kernel_id| KernelResource {
            function_id: kernel_id.clone(),
            kernel_id,
            area: 0,
        })
        .collect();
    let image = ConfigImage {
        image_id: "xclbin-0".into(),
        kernels,
        total_area: 0,
    };
    FpgaState::preloaded(vec![image], "xclbin-0").expect("the image is in the plan")
}

type Sessions = Arc<Mutex<Vec<(Conn, JoinHandle<()>)>>>;

struct Command {
    msg: WireMessage,
    reply: mpsc::SyncSender<WireMessage>,
}

/// Final server state, returned once a Shutdown has been processed.
#[derive(Debug, Clone)]
pub struct ServerReport {
    pub table: ThresholdTable,
    pub fpga: FpgaState,
    /// Completions in the order the owner applied them.
    pub applied: Vec<ExecutionRecord>,
    pub requests: u64,
    pub reconfigurations: u64,
}

pub struct SchedulerServer {
    listener: Listener,
    table: ThresholdTable,
    fpga: FpgaState,
    load: Box<dyn LoadSource>,
    spec: PlatformSpec,
}

impl SchedulerServer {
    pub fn bind(
        endpoint: &Endpoint,
        table: ThresholdTable,
        fpga: FpgaState,
        load: Box<dyn LoadSource>,
        spec: PlatformSpec,
    ) -> io::Result<SchedulerServer> {
        let listener = Listener::bind(endpoint)?;
        Ok(SchedulerServer {
            listener,
            table,
            fpga,
            load,
            spec,
        })
    }

    /// The bound endpoint; for `tcp:...:0` this carries the chosen port.
    pub fn local_endpoint(&self) -> io::Result<Endpoint> {
        self.listener.local_endpoint()
    }

    /// Serves until a client sends Shutdown.
    pub fn run(self) -> io::Result<ServerReport> {
        let SchedulerServer {
            listener,
            table,
            fpga,
            load,
            spec,
        } = self;
        info!(
            "scheduler server listening on {}",
            listener.local_endpoint()?
        );

        let stop = Arc::new(AtomicBool::new(false));
        let sessions: Sessions = Arc::default();
        let (tx, rx) = mpsc::channel::<Command>();

        let acceptor = {
            let stop = Arc::clone(&stop);
            let sessions = Arc::clone(&sessions);
            thread::Builder::new()
                .name("xartrek-accept".into())
                .spawn(move || accept_loop(listener, tx, stop, sessions))?
        };

        let mut owner = Owner {
            table,
            fpga,
            load,
            spec,
            started: Instant::now(),
            reading: 0,
            applied: Vec::new(),
            requests: 0,
            reconfigurations: 0,
        };
        owner.run(rx);

        stop.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        let drained: Vec<_> = std::mem::take(&mut *sessions.lock().unwrap());
        for (conn, handle) in drained {
            conn.shutdown();
            let _ = handle.join();
        }
        info!(
            "scheduler server stopped after {} request(s), {} completion(s)",
            owner.requests,
            owner.applied.len()
        );
        Ok(ServerReport {
            table: owner.table,
            fpga: owner.fpga,
            applied: owner.applied,
            requests: owner.requests,
            reconfigurations: owner.reconfigurations,
        })
    }
}

fn accept_loop(
    listener: Listener,
    tx: mpsc::Sender<Command>,
    stop: Arc<AtomicBool>,
    sessions: Sessions,
) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok(Some(conn)) => {
                let Ok(handle_conn) = conn.try_clone() else {
                    continue;
                };
                next_id += 1;
                let id = next_id;
                let tx = tx.clone();
                let spawned = thread::Builder::new()
                    .name(format!("xartrek-session-{id}"))
                    .spawn(move || session(id, conn, tx));
                match spawned {
                    Ok(h) => {
                        let mut live = sessions.lock().unwrap();
                        live.retain(|(_, h)| !h.is_finished());
                        live.push((handle_conn, h));
                    }
                    Err(e) => warn!("cannot start session thread: {e}"),
                }
            }
            Ok(None) => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

fn session(id: u64, mut conn: Conn, tx: mpsc::Sender<Command>) {
    let _ = conn.set_timeouts(None);
    debug!("session {id} opened");
    loop {
        let msg = match read_frame(&mut conn) {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) => {
                debug!("session {id}: closing on bad frame: {e}");
                break;
            }
        };
        if !matches!(
            msg,
            WireMessage::Request { .. }
                | WireMessage::Completion(_)
                | WireMessage::KernelQuery
                | WireMessage::Shutdown
        ) {
            debug!("session {id}: closing on unexpected {msg:?}");
            break;
        }
        let shutdown = msg == WireMessage::Shutdown;
        let (reply_tx, reply_rx) = mpsc::sync_channel(1);
        if tx
            .send(Command {
                msg,
                reply: reply_tx,
            })
            .is_err()
        {
            break;
        }
        let Ok(reply) = reply_rx.recv() else { break };
        if write_frame(&mut conn, &reply).is_err() || shutdown {
            break;
        }
    }
    debug!("session {id} closed");
}

struct Owner {
    table: ThresholdTable,
    fpga: FpgaState,
    load: Box<dyn LoadSource>,
    spec: PlatformSpec,
    started: Instant,
    reading: u32,
    applied: Vec<ExecutionRecord>,
    requests: u64,
    reconfigurations: u64,
}

impl Owner {
    fn now(&self) -> Micros {
        Micros(self.started.elapsed().as_micros() as u64)
    }

    fn period(&self) -> Option<Duration> {
        (self.spec.load_sampler_period > Micros::ZERO)
            .then(|| Duration::from_micros(self.spec.load_sampler_period.0))
    }

    fn run(&mut self, rx: mpsc::Receiver<Command>) {
        self.reading = self.load.read_load();
        let mut next_sample = self.period().map(|p| Instant::now() + p);
        loop {
            let wait = next_sample
                .map(|t| t.saturating_duration_since(Instant::now()))
                .unwrap_or(Duration::from_millis(50));
            match rx.recv_timeout(wait) {
                Ok(cmd) => {
                    let stop = cmd.msg == WireMessage::Shutdown;
                    let reply = self.handle(cmd.msg);
                    let _ = cmd.reply.send(reply);
                    if stop {
                        return;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
            if let (Some(t), Some(p)) = (next_sample, self.period()) {
                if Instant::now() >= t {
                    self.reading = self.load.read_load();
                    next_sample = Some(Instant::now() + p);
                }
            }
            let now = self.now();
            self.fpga.poll(now);
        }
    }

    fn current_load(&mut self) -> u32 {
        if self.period().is_none() {
            self.reading = self.load.read_load();
        }
        self.reading
    }

    fn handle(&mut self, msg: WireMessage) -> WireMessage {
        let now = self.now();
        self.fpga.poll(now);
        match msg {
            WireMessage::Request { app_id, .. } => {
                self.requests += 1;
                let target = self.place(&app_id, now);
                WireMessage::Response { target }
            }
            WireMessage::Completion(rec) => {
                if self.table.apply(&rec) {
                    self.applied.push(rec);
                } else {
                    warn!(
                        "completion for unknown application `{}` ignored",
                        rec.app_id
                    );
                }
                WireMessage::Ack
            }
            WireMessage::KernelQuery => WireMessage::KernelList {
                kernel_ids: self.fpga.query_kernels().into_iter().collect(),
            },
            WireMessage::Shutdown => WireMessage::Ack,
            other => unreachable!("sessions only forward client messages, got {other:?}"),
        }
    }

    fn place(&mut self, app_id: &str, now: Micros) -> TargetKind {
        let load = self.current_load();
        let Some(entry) = self.table.get(app_id) else {
            warn!("no thresholds for `{app_id}`; staying on x86");
            return TargetKind::X86;
        };
        match decide(load, entry, &self.fpga) {
            Ok(d) => {
                if let Some(image) = &d.reconfigure {
                    match self.fpga.begin_reconfiguration(image, now, &self.spec) {
                        Ok(_) => {
                            self.reconfigurations += 1;
                            info!("reconfiguring FPGA with {image}");
                        }
                        Err(SchedulerError::Busy) => {
                            debug!("reconfiguration to {image} dropped: busy")
                        }
                        Err(e) => warn!("reconfiguration to {image} failed: {e}"),
                    }
                }
                debug!("{app_id} at load {load} -> {}", d.target);
                d.target
            }
            Err(e) => {
                warn!("decision for `{app_id}` failed ({e}); staying on x86");
                TargetKind::X86
            }
        }
    }
}
