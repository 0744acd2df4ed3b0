use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ctsdr_core::analysis::{
    calibrate_runout, calibrate_stiffness_ratio, measure_path, measure_run, report_from_measurements, IdealParameters,
    SplitOptions,
};
use ctsdr_core::kinematics::Centerline;
use ctsdr_core::model::{default_config, validate_config, RobotConfig};
use ctsdr_core::phantom::{Axis, VoxelPhantom, DEFAULT_VOXEL_SIZE};
use ctsdr_core::planner::{plan_s_shape, PlanRequest, ScheduleStyle};
use ctsdr_core::sim::{builtin_scenario, default_phantom, run_scenario_with_dt, RunStatus, ScenarioScript, DEFAULT_DT};
use ctsdr_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::server::{serve, ServerOptions};
use crate::session::SessionOptions;

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const UNKNOWN_SCENARIO: i32 = 3;
    pub const BAD_INPUT: i32 = 4;
    pub const IO: i32 = 5;
    pub const RUN_FAULT: i32 = 6;
    pub const ANALYSIS: i32 = 7;
    pub const UNREACHABLE: i32 = 8;
}

#[derive(Debug, Parser)]
#[command(name = "ctsdr", version, about = "Concentric-tube steerable drilling simulator")]
pub struct Cli {
    /// Robot configuration (JSON). Defaults to the built-in reference tubes.
    #[arg(long, global = true, env = "CTSDR_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: CommandKind,
}

#[derive(Debug, Subcommand)]
pub enum CommandKind {
    /// Simulate a scenario and write its outputs.
    Run(RunArgs),
    /// Measure one or more run directories and print the summary table.
    Analyze(AnalyzeArgs),
    /// Find joint values for a target tip position.
    Plan(PlanArgs),
    /// Back out effective parameters from measurements.
    #[command(subcommand)]
    Calibrate(CalibrateKind),
    /// Serve the teleoperation protocol over WebSocket.
    Serve(ServeArgs),
    /// Print the resolved configuration as JSON.
    Config,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Builtin scenario name (S1, S2, OOP90).
    #[arg(long, conflicts_with = "script")]
    pub scenario: Option<String>,
    /// Scenario script file (JSON) instead of a builtin.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Voxel edge, mm.
    #[arg(long, default_value_t = DEFAULT_VOXEL_SIZE)]
    pub voxel: f64,
    /// Integration step, s.
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// Override the bit runout, mm.
    #[arg(long)]
    pub runout: Option<f64>,
    /// Override the outer/inner stiffness ratio.
    #[arg(long)]
    pub stiffness_ratio: Option<f64>,
    /// Also save the final phantom (phantom.bits + phantom.json).
    #[arg(long)]
    pub snapshot: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directories written by `run`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Ideal parameters (JSON); defaults to the S2 arcs and 50 mm inner radius.
    #[arg(long)]
    pub ideal: Option<PathBuf>,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Plan request (JSON).
    #[arg(long)]
    pub request: PathBuf,
    #[arg(long, default_value = "plan")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CalibrateKind {
    /// Stiffness ratio from an observed combined-section radius.
    Stiffness {
        #[arg(long)]
        observed_radius: f64,
        /// Pre-curvature radius, mm; defaults to the configured inner tube's.
        #[arg(long)]
        precurvature: Option<f64>,
    },
    /// Runout from an observed tunnel diameter.
    Runout {
        #[arg(long)]
        observed_diameter: f64,
        /// Bit diameter, mm; defaults to the configured bit.
        #[arg(long)]
        bit: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Voxel edge of session phantoms, mm.
    #[arg(long, default_value_t = 0.5)]
    pub voxel: f64,
    #[arg(long, default_value_t = 50.0)]
    pub tick_hz: f64,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn code_for(e: &Error) -> i32 {
    match e {
        Error::UnknownScenario(_) => exit::UNKNOWN_SCENARIO,
        Error::Io(_) => exit::IO,
        Error::Json(_) | Error::Csv(_) | Error::InvalidArgument(_) | Error::Contract(_) | Error::VoxelBudget { .. } => {
            exit::BAD_INPUT
        }
        Error::Inflection { .. } | Error::Calibration(_) | Error::NoTunnel => exit::ANALYSIS,
        Error::Unreachable { .. } => exit::UNREACHABLE,
        Error::Fault(_) => exit::RUN_FAULT,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(code_for(&e), e.to_string())
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(exit::IO, format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(exit::FAILURE, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

pub fn load_config(path: Option<&Path>) -> Result<RobotConfig, Failure> {
    let config = match path {
        None => default_config(),
        Some(p) => {
            let text = read_text(p)?;
            RobotConfig::from_json(&text)
                .map_err(|e| Failure::new(exit::BAD_INPUT, format!("{}: malformed config: {e}", p.display())))?
        }
    };
    let report = validate_config(&config);
    if !report.is_valid() {
        let lines: Vec<String> = report
            .violations
            .iter()
            .map(|v| format!("{}: {}", v.rule, v.detail))
            .collect();
        return Err(Failure::new(
            exit::BAD_INPUT,
            format!("invalid config: {}", lines.join("; ")),
        ));
    }
    Ok(config)
}

/// Summary written as `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub status: RunStatus,
    pub flagged: bool,
    pub dt: f64,
    pub voxel_size: f64,
    pub bone_contact_time: Option<f64>,
    pub insertion_time: Option<f64>,
    pub carved_voxels: usize,
    pub final_joints: ctsdr_core::model::JointState,
    pub faults: Vec<ctsdr_core::sim::Event>,
}

fn cmd_run(args: &RunArgs, mut config: RobotConfig) -> Result<i32, Failure> {
    if let Some(r) = args.runout {
        config = config.with_runout(r);
    }
    if let Some(rho) = args.stiffness_ratio {
        config = config.with_stiffness_ratio(rho);
    }
    let script = match (&args.scenario, &args.script) {
        (Some(name), _) => builtin_scenario(name, &config)?,
        (None, Some(path)) => ScenarioScript::from_json(&read_text(path)?)
            .map_err(|e| Failure::new(exit::BAD_INPUT, format!("{}: malformed script: {e}", path.display())))?,
        (None, None) => return Err(Failure::new(exit::USAGE, "either --scenario or --script is required")),
    };
    let mut phantom = default_phantom(&config, args.voxel)?;
    let record = run_scenario_with_dt(&script, &config, &mut phantom, args.dt)?;

    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    record.write_timeline_csv(create(&out.join("timeline.csv"))?)?;
    record.write_events_json(create(&out.join("events.json"))?)?;
    record.write_tip_locus_csv(create(&out.join("tip_locus.csv"))?)?;
    record
        .final_centerline
        .write_csv(create(&out.join("centerline.csv"))?)?;
    write_json(&out.join("scenario.json"), &script)?;
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        phantom
            .project(axis)
            .save_pgm(out.join(format!("projection_{}.pgm", axis.name())))?;
    }
    if args.snapshot {
        phantom.save_snapshot(out.join("phantom"))?;
    }
    let summary = RunSummary {
        scenario: record.scenario.clone(),
        status: record.status,
        flagged: record.flagged,
        dt: record.dt,
        voxel_size: args.voxel,
        bone_contact_time: record.bone_contact_time,
        insertion_time: record.insertion_time,
        carved_voxels: record.carved_voxels,
        final_joints: record.final_joints,
        faults: record.faults().cloned().collect(),
    };
    write_json(&out.join("run.json"), &summary)?;
    let metrics = match measure_run(&record, Some(&phantom), &SplitOptions::default()) {
        Ok(m) => json!({ "scenario": record.scenario, "measurement": m, "analysis_error": null }),
        Err(e) => json!({ "scenario": record.scenario, "measurement": null, "analysis_error": e.to_string() }),
    };
    write_json(&out.join("metrics.json"), &metrics)?;

    println!(
        "{}: {:?}, insertion {} s, {} voxels carved -> {}",
        record.scenario,
        record.status,
        record.insertion_time.map_or("n/a".into(), |t| format!("{t:.2}")),
        record.carved_voxels,
        out.display()
    );
    for (jump, exceeds) in record.discontinuities() {
        if exceeds {
            eprintln!("warning: tip jumped {jump:.3} mm during an in-place roll, beyond the channel clearance");
        }
    }
    if record.status == RunStatus::Aborted {
        for f in record.faults() {
            eprintln!(
                "fault at t = {:.2} s: {}",
                f.t,
                serde_json::to_string(&f.kind).unwrap_or_default()
            );
        }
        return Ok(exit::RUN_FAULT);
    }
    Ok(exit::OK)
}

type RunDir = (RunSummary, Vec<nalgebra::Point3<f64>>, Option<VoxelPhantom>);

fn load_run_dir(dir: &Path) -> Result<RunDir, Failure> {
    let summary: RunSummary = serde_json::from_str(&read_text(&dir.join("run.json"))?)
        .map_err(|e| Failure::new(exit::BAD_INPUT, format!("{}: {e}", dir.join("run.json").display())))?;
    let path = dir.join("tip_locus.csv");
    let locus = Centerline::read_csv(File::open(&path).map_err(|e| io_failure(&path, e))?)?.points();
    let stem = dir.join("phantom");
    let phantom = if stem.with_extension("json").exists() {
        Some(VoxelPhantom::load_snapshot(&stem)?)
    } else {
        None
    };
    Ok((summary, locus, phantom))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32, Failure> {
    let ideal = match &args.ideal {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| Failure::new(exit::BAD_INPUT, format!("{}: {e}", p.display())))?,
        None => IdealParameters::default(),
    };
    let mut measurements = Vec::new();
    let mut excluded = Vec::new();
    for dir in &args.runs {
        let (summary, locus, phantom) = load_run_dir(dir)?;
        match measure_path(
            &summary.scenario,
            &locus,
            phantom.as_ref(),
            summary.insertion_time,
            &SplitOptions::default(),
        ) {
            Ok(m) => measurements.push(m),
            Err(e) => excluded.push(format!("{}: {e}", dir.display())),
        }
    }
    for note in &excluded {
        eprintln!("excluded {note}");
    }
    let report = report_from_measurements(measurements, excluded, &ideal)
        .map_err(|e| Failure::new(exit::ANALYSIS, e.to_string()))?;
    print!("{}", report.to_table());
    match &args.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default()),
    }
    Ok(exit::OK)
}

fn cmd_plan(args: &PlanArgs, config: &RobotConfig) -> Result<i32, Failure> {
    let request = PlanRequest::from_json(&read_text(&args.request)?).map_err(|e| {
        Failure::new(
            exit::BAD_INPUT,
            format!("{}: malformed request: {e}", args.request.display()),
        )
    })?;
    let result = plan_s_shape(&request, config)?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    write_json(&args.out.join("plan.json"), &result)?;
    for schedule in &result.schedules {
        let name = match schedule.style {
            ScheduleStyle::Opposed => "script.json",
            ScheduleStyle::RollInPlace => "script_roll_in_place.json",
        };
        if schedule.feasible {
            write_json(&args.out.join(name), &schedule.script)?;
        }
    }
    let b = &result.best;
    println!(
        "outer arc {:.3} mm, inner length {:.3} mm, rolls {:.2}/{:.2} deg, tip error {:.4} mm -> {}",
        b.joints.outer_translation,
        b.joints.inner_translation,
        b.joints.outer_roll,
        b.joints.inner_roll,
        b.tip_error,
        args.out.display()
    );
    Ok(exit::OK)
}

fn cmd_calibrate(kind: &CalibrateKind, config: &RobotConfig) -> Result<i32, Failure> {
    match *kind {
        CalibrateKind::Stiffness {
            observed_radius,
            precurvature,
        } => {
            let pre = match precurvature {
                Some(p) => p,
                None => {
                    let k = config.inner_tube.curvature();
                    if k <= 0.0 {
                        return Err(Failure::new(
                            exit::BAD_INPUT,
                            "configured inner tube is straight; pass --precurvature",
                        ));
                    }
                    1.0 / k
                }
            };
            let rho = calibrate_stiffness_ratio(observed_radius, pre)?;
            println!("rho = {rho:.4}");
        }
        CalibrateKind::Runout { observed_diameter, bit } => {
            let runout = calibrate_runout(observed_diameter, bit.unwrap_or(config.bit.bit_diameter))?;
            println!("runout = {runout:.3} mm");
        }
    }
    Ok(exit::OK)
}

fn cmd_serve(args: &ServeArgs, config: RobotConfig) -> Result<i32, Failure> {
    let opts = ServerOptions {
        config,
        session: SessionOptions {
            voxel_size: args.voxel,
            tick_hz: args.tick_hz,
            ..SessionOptions::default()
        },
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(exit::FAILURE, e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .map_err(|e| Failure::new(exit::IO, format!("{}: {e}", args.addr)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::new(exit::IO, e.to_string()))?;
        println!("listening on http://{addr}");
        serve(listener, opts)
            .await
            .map_err(|e| Failure::new(exit::IO, e.to_string()))
    })?;
    Ok(exit::OK)
}

pub fn execute(cli: Cli) -> Result<i32, Failure> {
    let config = load_config(cli.config.as_deref())?;
    match &cli.command {
        CommandKind::Run(a) => cmd_run(a, config),
        CommandKind::Analyze(a) => cmd_analyze(a),
        CommandKind::Plan(a) => cmd_plan(a, &config),
        CommandKind::Calibrate(k) => cmd_calibrate(k, &config),
        CommandKind::Serve(a) => cmd_serve(a, config),
        CommandKind::Config => {
            println!("{}", config.to_json().map_err(Failure::from)?);
            Ok(exit::OK)
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match execute(cli) {
        Ok(code) => {
            let _ = std::io::stdout().flush();
            code
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
