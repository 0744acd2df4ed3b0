//! A teleoperation session: one simulator timeline and phantom driven by
//! protocol commands and a fixed-rate tick. No I/O happens here; the server
//! feeds it text and ships the returned messages.

use std::collections::HashMap;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ctsdr_core::analysis::{measure_run, SplitOptions};
use ctsdr_core::model::{JointState, RobotConfig};
use ctsdr_core::phantom::{Axis, GrayImage, VoxelPhantom};
use ctsdr_core::sim::{
    builtin_scenario, builtin_scenarios, capture_record, default_phantom, validate_script, JointRates, RunRecord,
    RunStatus, ScenarioScript, ScriptRunner, Simulator, StepOutcome,
};

use crate::protocol::{
    error, AdvertisedLimits, Command, ErrorCode, Inbound, Message, Mode, Outbound, Tile, PROTOCOL_VERSION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOptions {
    /// Voxel edge of the session phantom, mm.
    pub voxel_size: f64,
    pub tick_hz: f64,
    /// Simulation steps per tick.
    pub substeps: u32,
    pub projection_hz: f64,
    /// Top (along z) and side (along y) views by default.
    pub projection_axes: Vec<Axis>,
    pub tile_size: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            voxel_size: 0.5,
            tick_hz: 50.0,
            substeps: 2,
            projection_hz: 2.0,
            projection_axes: vec![Axis::Z, Axis::Y],
            tile_size: 32,
        }
    }
}

impl SessionOptions {
    pub fn dt(&self) -> f64 {
        1.0 / (self.tick_hz * self.substeps as f64)
    }

    fn ticks_per_projection(&self) -> u64 {
        (self.tick_hz / self.projection_hz).round().max(1.0) as u64
    }
}

pub struct Session {
    id: String,
    config: RobotConfig,
    opts: SessionOptions,
    phantom: VoxelPhantom,
    sim: Simulator,
    mode: Mode,
    jog: JointRates,
    spindle: f64,
    loaded: Option<ScenarioScript>,
    runner: Option<ScriptRunner>,
    last_record: Option<RunRecord>,
    seq: u64,
    event_cursor: usize,
    ticks: u64,
    sent: HashMap<Axis, GrayImage>,
    projected_carves: Option<usize>,
}

impl Session {
    pub fn new(id: impl Into<String>, config: RobotConfig, opts: SessionOptions) -> ctsdr_core::Result<Self> {
        if !(opts.tick_hz > 0.0 && opts.substeps > 0 && opts.projection_hz > 0.0 && opts.tile_size > 0) {
            return Err(ctsdr_core::Error::InvalidArgument(
                "tick rate, substeps, projection rate and tile size must be positive".into(),
            ));
        }
        let phantom = default_phantom(&config, opts.voxel_size)?;
        let sim = Self::fresh_sim(&config, &opts, JointState::default())?;
        Ok(Self {
            id: id.into(),
            config,
            opts,
            phantom,
            sim,
            mode: Mode::Idle,
            jog: JointRates::default(),
            spindle: 0.0,
            loaded: None,
            runner: None,
            last_record: None,
            seq: 0,
            event_cursor: 0,
            ticks: 0,
            sent: HashMap::new(),
            projected_carves: None,
        })
    }

    fn fresh_sim(config: &RobotConfig, opts: &SessionOptions, initial: JointState) -> ctsdr_core::Result<Simulator> {
        Ok(Simulator::new(config.clone(), initial)?.with_carve_chord(0.5 * opts.voxel_size))
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn joints(&self) -> &JointState {
        self.sim.joints()
    }
    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }
    pub fn phantom(&self) -> &VoxelPhantom {
        &self.phantom
    }
    pub fn options(&self) -> &SessionOptions {
        &self.opts
    }
    /// Record of the last scripted run that finished or faulted.
    pub fn last_record(&self) -> Option<&RunRecord> {
        self.last_record.as_ref()
    }

    fn broadcast(&mut self, body: Outbound) -> Message {
        let seq = self.seq;
        self.seq += 1;
        Message {
            v: PROTOCOL_VERSION,
            seq: Some(seq),
            body,
        }
    }

    pub fn limits(&self) -> AdvertisedLimits {
        let l = &self.config.joint_limits;
        AdvertisedLimits {
            max_feed: l.max_translation_speed.min(self.config.feed_limit),
            max_roll_speed: l.max_roll_speed,
            spindle_max: self.config.spindle_max,
            outer_translation: [l.outer_translation.min, l.outer_translation.max],
            inner_translation: [l.inner_translation.min, l.inner_translation.max],
            outer_roll: [l.outer_roll.min, l.outer_roll.max],
            inner_roll: [l.inner_roll.min, l.inner_roll.max],
        }
    }

    /// Greeting for a newly connected client, followed by the current state
    /// and full projections so it can render without waiting.
    pub fn hello(&self, writer: bool) -> Vec<Message> {
        let mut out = vec![Message::direct(Outbound::Hello {
            session: self.id.clone(),
            protocol: PROTOCOL_VERSION,
            tick_hz: self.opts.tick_hz,
            dt: self.opts.dt(),
            writer,
            limits: self.limits(),
            scenarios: builtin_scenarios(&self.config).into_iter().map(|s| s.name).collect(),
        })];
        out.push(Message::direct(self.state_body()));
        for &axis in &self.opts.projection_axes {
            let img = self.phantom.project(axis);
            out.extend(
                tiles(&img, None, self.opts.tile_size)
                    .into_iter()
                    .map(|t| Message::direct(projection_body(axis, &img, t))),
            );
        }
        out
    }

    fn state_body(&self) -> Outbound {
        Outbound::State {
            t: self.sim.time(),
            mode: self.mode,
            joints: *self.sim.joints(),
            tip: self.sim.tip(),
            spindle: self.spindle,
            fault: self.sim.fault(),
            flagged: self.runner.as_ref().is_some_and(ScriptRunner::flagged),
            scenario: self.loaded.as_ref().map(|s| s.name.clone()),
            phase: self
                .runner
                .as_ref()
                .and_then(|r| r.current_phase())
                .map(|p| p.label.clone()),
        }
    }

    fn state(&mut self) -> Message {
        let body = self.state_body();
        self.broadcast(body)
    }

    /// Parses and applies one protocol line.
    pub fn handle_message(&mut self, line: &str) -> Vec<Message> {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return vec![error(ErrorCode::Malformed, format!("invalid JSON: {e}"), None)],
        };
        let kind = value.get("kind").and_then(|k| k.as_str()).map(str::to_string);
        match value.get("v").and_then(|v| v.as_u64()) {
            Some(v) if v == PROTOCOL_VERSION as u64 => {}
            Some(v) => {
                return vec![error(
                    ErrorCode::UnsupportedVersion,
                    format!("protocol version {v} is not supported (expected {PROTOCOL_VERSION})"),
                    kind.as_deref(),
                )]
            }
            None => {
                return vec![error(
                    ErrorCode::Malformed,
                    "missing protocol version \"v\"",
                    kind.as_deref(),
                )]
            }
        }
        match serde_json::from_value::<Inbound>(value) {
            Ok(msg) => self.handle(msg.command),
            Err(e) => vec![error(ErrorCode::Malformed, e.to_string(), kind.as_deref())],
        }
    }

    pub fn handle(&mut self, command: Command) -> Vec<Message> {
        let kind = command.kind();
        let reject = |code, msg: &str| vec![error(code, msg, Some(kind))];
        if self.mode == Mode::Faulted && !matches!(command, Command::Reset | Command::RequestSnapshot) {
            return reject(ErrorCode::Faulted, "session is faulted; send reset");
        }
        match command {
            Command::Jog { rates } => {
                if self.mode == Mode::Scripted {
                    return reject(ErrorCode::WrongMode, "jogging is disabled during a scripted run");
                }
                if ![
                    rates.outer_translation,
                    rates.inner_translation,
                    rates.outer_roll,
                    rates.inner_roll,
                ]
                .iter()
                .all(|v| v.is_finite())
                {
                    return reject(ErrorCode::InvalidArgument, "jog rates must be finite");
                }
                self.jog = rates;
                self.mode = if rates.is_zero() { Mode::Idle } else { Mode::Jogging };
                vec![self.state()]
            }
            Command::SetSpindle { rpm } => {
                if self.mode == Mode::Scripted {
                    return reject(ErrorCode::WrongMode, "the running script controls the spindle");
                }
                if !(rpm >= 0.0 && rpm <= self.config.spindle_max) {
                    return reject(
                        ErrorCode::InvalidArgument,
                        &format!("spindle speed must be within 0..={} rpm", self.config.spindle_max),
                    );
                }
                self.spindle = rpm;
                vec![self.state()]
            }
            Command::LoadScenario { name, script } => {
                if self.mode != Mode::Idle {
                    return reject(ErrorCode::WrongMode, "stop before loading a scenario");
                }
                let script = match (name, script) {
                    (_, Some(s)) => s,
                    (Some(n), None) => match builtin_scenario(&n, &self.config) {
                        Ok(s) => s,
                        Err(e) => return reject(ErrorCode::UnknownScenario, &e.to_string()),
                    },
                    (None, None) => return reject(ErrorCode::Malformed, "load_scenario needs a name or a script"),
                };
                if let Err(e) = validate_script(&script, &self.config) {
                    return reject(ErrorCode::InvalidScript, &e.to_string());
                }
                self.loaded = Some(script);
                vec![self.state()]
            }
            Command::Start => {
                if self.mode != Mode::Idle {
                    return reject(ErrorCode::WrongMode, "stop before starting a scenario");
                }
                let Some(script) = self.loaded.clone() else {
                    return reject(ErrorCode::NoScenario, "load a scenario first");
                };
                match Self::fresh_sim(&self.config, &self.opts, script.initial) {
                    Ok(sim) => self.sim = sim,
                    Err(e) => return reject(ErrorCode::InvalidScript, &e.to_string()),
                }
                self.event_cursor = 0;
                self.jog = JointRates::default();
                self.spindle = 0.0;
                self.runner = Some(ScriptRunner::new(script));
                self.mode = Mode::Scripted;
                vec![self.state()]
            }
            Command::Stop => {
                self.jog = JointRates::default();
                if self.mode == Mode::Scripted {
                    self.runner = None;
                }
                self.mode = Mode::Idle;
                vec![self.state()]
            }
            Command::Reset => {
                let initial = self.loaded.as_ref().map(|s| s.initial).unwrap_or_default();
                let rebuilt = default_phantom(&self.config, self.opts.voxel_size)
                    .and_then(|p| Ok((p, Self::fresh_sim(&self.config, &self.opts, initial)?)));
                match rebuilt {
                    Ok((phantom, sim)) => {
                        self.phantom = phantom;
                        self.sim = sim;
                    }
                    Err(e) => return reject(ErrorCode::Internal, &e.to_string()),
                }
                self.event_cursor = 0;
                self.jog = JointRates::default();
                self.spindle = 0.0;
                self.runner = None;
                self.mode = Mode::Idle;
                let mut out = vec![self.state()];
                out.extend(self.projections(true));
                out
            }
            Command::RequestSnapshot => {
                let mut bits = Vec::new();
                if let Err(e) = self.phantom.write_bits(&mut bits) {
                    return reject(ErrorCode::Internal, &e.to_string());
                }
                vec![Message::direct(Outbound::Snapshot {
                    header: self.phantom.snapshot_header(),
                    data: BASE64.encode(bits),
                })]
            }
        }
    }

    /// Advances one tick and returns the messages it produced.
    pub fn tick(&mut self) -> Vec<Message> {
        self.ticks += 1;
        let dt = self.opts.dt();
        let mut out = Vec::new();
        let mut stepped = false;
        let mut finished: Option<RunStatus> = None;
        match self.mode {
            Mode::Jogging => {
                for _ in 0..self.opts.substeps {
                    stepped = true;
                    match self.sim.step(&self.jog, self.spindle, dt, &mut self.phantom) {
                        Ok(StepOutcome::Faulted(_)) => {
                            self.mode = Mode::Faulted;
                            break;
                        }
                        Ok(_) => {}
                        Err(e) => {
                            out.push(error(ErrorCode::Internal, e.to_string(), None));
                            self.mode = Mode::Faulted;
                            break;
                        }
                    }
                }
                if self.mode == Mode::Faulted {
                    let _ = self.sim.flush(&mut self.phantom);
                }
            }
            Mode::Scripted => {
                let runner = self.runner.as_mut().expect("scripted mode has a runner");
                for _ in 0..self.opts.substeps {
                    match runner.advance(&mut self.sim, &mut self.phantom, dt) {
                        Ok(None) => {
                            finished = Some(RunStatus::Completed);
                            break;
                        }
                        Ok(Some(StepOutcome::Faulted(_))) => {
                            stepped = true;
                            let _ = self.sim.flush(&mut self.phantom);
                            finished = Some(RunStatus::Aborted);
                            break;
                        }
                        Ok(Some(_)) => stepped = true,
                        Err(e) => {
                            out.push(error(ErrorCode::Internal, e.to_string(), None));
                            finished = Some(RunStatus::Aborted);
                            break;
                        }
                    }
                }
            }
            Mode::Idle | Mode::Faulted => {}
        }

        let new_events: Vec<_> = self.sim.events()[self.event_cursor..].to_vec();
        self.event_cursor = self.sim.events().len();
        for event in new_events {
            out.push(self.broadcast(Outbound::Event { event }));
        }
        if let Some(status) = finished {
            out.extend(self.finish_run(status));
        }
        if stepped || finished.is_some() {
            out.push(self.state());
        }
        if self.ticks.is_multiple_of(self.opts.ticks_per_projection()) {
            out.extend(self.projections(false));
        }
        out
    }

    fn finish_run(&mut self, status: RunStatus) -> Vec<Message> {
        let runner = self.runner.as_ref().expect("finishing a scripted run");
        let record = match capture_record(&self.sim, runner, self.opts.dt(), status, self.phantom.material()) {
            Ok(r) => r,
            Err(e) => {
                self.mode = Mode::Faulted;
                return vec![error(ErrorCode::Internal, e.to_string(), None)];
            }
        };
        self.mode = if status == RunStatus::Completed {
            Mode::Idle
        } else {
            Mode::Faulted
        };
        let (measurement, analysis_error) = match measure_run(&record, Some(&self.phantom), &SplitOptions::default()) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let body = Outbound::Metrics {
            scenario: record.scenario.clone(),
            status,
            flagged: record.flagged,
            insertion_time: record.insertion_time,
            measurement,
            analysis_error,
        };
        self.last_record = Some(record);
        vec![self.broadcast(body)]
    }

    /// Tiles that changed since the last broadcast (all tiles when `force`).
    fn projections(&mut self, force: bool) -> Vec<Message> {
        let carved = self.phantom.carved_count();
        if !force && self.projected_carves == Some(carved) {
            return Vec::new();
        }
        self.projected_carves = Some(carved);
        if force {
            self.sent.clear();
        }
        let mut out = Vec::new();
        for axis in self.opts.projection_axes.clone() {
            let img = self.phantom.project(axis);
            for t in tiles(&img, self.sent.get(&axis), self.opts.tile_size) {
                let body = projection_body(axis, &img, t);
                out.push(self.broadcast(body));
            }
            self.sent.insert(axis, img);
        }
        out
    }
}

fn tile_bytes(img: &GrayImage, t: Tile) -> Vec<u8> {
    (t.y..t.y + t.h)
        .flat_map(|row| {
            img.data[row * img.width + t.x..row * img.width + t.x + t.w]
                .iter()
                .copied()
        })
        .collect()
}

/// Tiles of `img` differing from `previous` (every tile without one).
fn tiles(img: &GrayImage, previous: Option<&GrayImage>, size: usize) -> Vec<Tile> {
    let mut out = Vec::new();
    for y in (0..img.height).step_by(size) {
        for x in (0..img.width).step_by(size) {
            let t = Tile {
                x,
                y,
                w: size.min(img.width - x),
                h: size.min(img.height - y),
            };
            let changed = match previous {
                Some(p) if p.width == img.width && p.height == img.height => tile_bytes(p, t) != tile_bytes(img, t),
                _ => true,
            };
            if changed {
                out.push(t);
            }
        }
    }
    out
}

fn projection_body(axis: Axis, img: &GrayImage, tile: Tile) -> Outbound {
    Outbound::Projection {
        axis,
        width: img.width,
        height: img.height,
        tile,
        data: BASE64.encode(tile_bytes(img, tile)),
    }
}
