use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{error, warn};

use xartrek_core::experiment::{
    cmd_calibrate, cmd_pack, cmd_report, cmd_run, profile_kernels, ErrorClass, ExperimentConfig,
    ExperimentError, DEFAULT_MAX_LOAD,
};
use xartrek_core::packer::{load_plan, pack_auto};
use xartrek_core::platform::{
    load_platform, load_profiles, Micros, PlatformSpec, ProcessorSharing, TargetKind,
};
use xartrek_core::protocol::{
    client_request, single_image_state, Client, Endpoint, FixedLoad, LoadSource, ProcLoadavg,
    SchedulerServer, DEFAULT_ENDPOINT,
};
use xartrek_core::scheduler::FpgaState;
use xartrek_core::threshold::{table_load, ExecutionRecord, ThresholdTable};

const EXIT_FALLBACK: u8 = 3;
const EXIT_IO: u8 = 10;
const EXIT_SCHEMA: u8 = 11;
const EXIT_SIM: u8 = 12;
const EXIT_PROTOCOL: u8 = 13;

#[derive(Parser, Debug)]
#[command(
    name = "xartrek",
    version,
    about = "Threshold-driven x86/ARM/FPGA placement: calibrate, pack, simulate, serve"
)]
struct Cli {
    /// Seed for randomized workloads (overrides the experiment file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Scheduler endpoint: unix:<path>, tcp:<host:port> or <host:port>.
    #[arg(long, global = true, env = "XARTREK_ENDPOINT", default_value = DEFAULT_ENDPOINT)]
    endpoint: Endpoint,
    /// Client connect and reply timeout.
    #[arg(long, global = true, default_value_t = 1000)]
    timeout_ms: u64,
    /// More logging (-v info, -vv debug).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate load thresholds from profiles and write them as CSV.
    Calibrate {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        platform: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_LOAD)]
        max_load: u32,
    },
    /// Pack hardware kernels into configuration images.
    Pack {
        #[arg(long)]
        profiles: PathBuf,
        /// Device area; defaults to the platform file's, or its built-in default.
        #[arg(long)]
        capacity: Option<u64>,
        #[arg(long)]
        platform: Option<PathBuf>,
        /// `kernel = "image"` assignments instead of automatic packing.
        #[arg(long)]
        manual: Option<PathBuf>,
    },
    /// Run experiment files and write metrics.csv and summary.csv.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        repeats: Option<u32>,
    },
    /// Start the scheduler server and serve until a shutdown request.
    Serve(ServeArgs),
    /// Talk to a running scheduler server.
    Client {
        #[command(subcommand)]
        action: ClientAction,
    },
    /// Turn summary.csv files into one policy-by-x matrix per figure.
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Only these figures (repeatable).
        #[arg(long = "figure")]
        figures: Vec<String>,
    },
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Threshold table CSV.
    #[arg(long, conflicts_with = "profiles")]
    table: Option<PathBuf>,
    /// Calibrate from these profiles instead of reading a table.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    platform: Option<PathBuf>,
    /// Packing plan; without one, every known kernel forms a single image.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Start with nothing loaded on the FPGA.
    #[arg(long)]
    empty_fpga: bool,
    /// Report this x86 load instead of reading /proc/loadavg.
    #[arg(long)]
    load: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum ClientAction {
    /// Ask where to run a function; prints the migration flag.
    Request {
        app: String,
        #[arg(default_value = "main")]
        function: String,
    },
    /// Report a finished run.
    Report {
        app: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        exec_ms: f64,
        #[arg(long)]
        load: u32,
    },
    /// List kernels currently loaded on the FPGA.
    Kernels,
    /// Stop the server.
    Shutdown,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match e.class() {
            ErrorClass::Io => EXIT_IO,
            ErrorClass::Schema => EXIT_SCHEMA,
            ErrorClass::Simulation => EXIT_SIM,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(code: u8, message: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            error!("{}", f.message);
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    let timeout = Duration::from_millis(cli.timeout_ms.max(1));
    match &cli.command {
        Command::Calibrate {
            profiles,
            platform,
            max_load,
        } => {
            let out = out_or(cli, "thresholds.csv");
            let table = cmd_calibrate(profiles, platform.as_deref(), &out, *max_load)?;
            println!("{} row(s) -> {}", table.len(), out.display());
            Ok(0)
        }
        Command::Pack {
            profiles,
            capacity,
            platform,
            manual,
        } => {
            let capacity = match (capacity, platform) {
                (Some(c), _) => *c,
                (None, Some(p)) => {
                    load_platform(p)
                        .map_err(ExperimentError::from)?
                        .fpga_area_capacity
                }
                (None, None) => PlatformSpec::default().fpga_area_capacity,
            };
            let out = out_or(cli, "plan.toml");
            let plan = cmd_pack(profiles, capacity, manual.as_deref(), &out)?;
            println!("{} image(s) -> {}", plan.len(), out.display());
            Ok(0)
        }
        Command::Run { configs, repeats } => {
            for path in configs {
                let mut cfg = ExperimentConfig::load(path)?;
                if let Some(seed) = cli.seed {
                    cfg = cfg.with_seed(seed);
                }
                if let Some(r) = repeats {
                    if *r == 0 {
                        return Err(fail(2, "--repeats must be at least 1"));
                    }
                    cfg.repeats = *r;
                }
                let dir = match (&cli.out, &cfg.output) {
                    (Some(o), _) if configs.len() > 1 => o.join(&cfg.id),
                    (Some(o), _) => o.clone(),
                    (None, Some(o)) => o.clone(),
                    (None, None) => Path::new("out").join(&cfg.id),
                };
                let out = cmd_run(&cfg, &dir)?;
                print_summary(&out.summary);
                println!(
                    "-> {}, {}",
                    out.metrics_path.display(),
                    out.summary_path.display()
                );
            }
            Ok(0)
        }
        Command::Report { summaries, figures } => {
            let dir = out_or(cli, "report");
            let written = cmd_report(summaries, &dir, figures)?;
            if written.is_empty() {
                warn!("no summary rows found; nothing written");
            }
            for p in written {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Serve(args) => serve(cli, args),
        Command::Client { action } => client(cli, action, timeout),
    }
}

fn print_summary(rows: &[xartrek_core::experiment::SummaryRow]) {
    for r in rows {
        let value = if r.kind == "throughput" {
            format!("{:>10.3} img/s", r.throughput)
        } else {
            format!("{:>10.1} ms", r.mean_completion_ms)
        };
        let gains: Vec<String> = [
            ("x86", r.gain_vs_always_x86),
            ("arm", r.gain_vs_always_arm),
            ("fpga", r.gain_vs_always_fpga),
        ]
        .iter()
        .filter_map(|(n, g)| g.map(|g| format!("vs {n} {g:+.1}%")))
        .collect();
        println!(
            "{:<20} x={:<6} {:<11} {} {}",
            r.scenario_id,
            r.x,
            r.policy,
            value,
            gains.join("  ")
        );
    }
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<u8, Failure> {
    let spec = match &args.platform {
        Some(p) => load_platform(p).map_err(ExperimentError::from)?,
        None => PlatformSpec::default(),
    };
    let (table, profiles) = match (&args.table, &args.profiles) {
        (Some(t), _) => (table_load(t).map_err(ExperimentError::from)?, None),
        (None, Some(p)) => {
            let profiles = load_profiles(p).map_err(ExperimentError::from)?;
            let table =
                ThresholdTable::estimate(&profiles, &spec, &ProcessorSharing, DEFAULT_MAX_LOAD);
            (table, Some(profiles))
        }
        (None, None) => return Err(fail(2, "serve needs --table or --profiles")),
    };
    let plan = match (&args.plan, &profiles) {
        (Some(p), _) => Some(load_plan(p).map_err(ExperimentError::from)?),
        (None, Some(profiles)) => Some(
            pack_auto(&profile_kernels(profiles), spec.fpga_area_capacity)
                .map_err(ExperimentError::from)?,
        ),
        (None, None) => None,
    };
    let fpga = match plan {
        Some(plan) if args.empty_fpga || plan.is_empty() => FpgaState::new(plan),
        Some(plan) => {
            let first = plan[0].image_id.clone();
            FpgaState::preloaded(plan, &first).map_err(|e| fail(EXIT_SCHEMA, e))?
        }
        None if args.empty_fpga => FpgaState::new(single_image_state(&table).plan().to_vec()),
        None => single_image_state(&table),
    };
    let load: Box<dyn LoadSource> = match args.load {
        Some(n) => Box::new(FixedLoad(n)),
        None => Box::new(ProcLoadavg::default()),
    };
    let server = SchedulerServer::bind(&cli.endpoint, table, fpga, load, spec)
        .map_err(|e| fail(EXIT_IO, format!("cannot listen on {}: {e}", cli.endpoint)))?;
    let local = server.local_endpoint().map_err(|e| fail(EXIT_IO, e))?;
    println!("listening on {local}");
    let _ = std::io::stdout().flush();
    let report = server.run().map_err(|e| fail(EXIT_IO, e))?;
    println!(
        "served {} request(s), applied {} completion(s), {} reconfiguration(s)",
        report.requests,
        report.applied.len(),
        report.reconfigurations
    );
    if let Some(out) = &cli.out {
        xartrek_core::threshold::table_store(&report.table, out).map_err(ExperimentError::from)?;
    }
    Ok(0)
}

fn client(cli: &Cli, action: &ClientAction, timeout: Duration) -> Result<u8, Failure> {
    let connect = || Client::connect(&cli.endpoint, timeout).map_err(|e| fail(EXIT_PROTOCOL, e));
    match action {
        ClientAction::Request { app, function } => {
            let placement = client_request(&cli.endpoint, app, function, timeout);
            println!("{}", placement.target.flag());
            Ok(if placement.fallback { EXIT_FALLBACK } else { 0 })
        }
        ClientAction::Report {
            app,
            target,
            exec_ms,
            load,
        } => {
            let target = TargetKind::parse(target).ok_or_else(|| {
                fail(
                    2,
                    format!("unknown target `{target}` (x86, arm, fpga or 0-2)"),
                )
            })?;
            let rec = ExecutionRecord {
                app_id: app.clone(),
                target,
                exec_time: Micros::from_ms(*exec_ms),
                load_at_start: *load,
            };
            connect()?
                .report(&rec)
                .map_err(|e| fail(EXIT_PROTOCOL, e))?;
            Ok(0)
        }
        ClientAction::Kernels => {
            for k in connect()?.kernels().map_err(|e| fail(EXIT_PROTOCOL, e))? {
                println!("{k}");
            }
            Ok(0)
        }
        ClientAction::Shutdown => {
            connect()?.shutdown().map_err(|e| fail(EXIT_PROTOCOL, e))?;
            Ok(0)
        }
    }
}
