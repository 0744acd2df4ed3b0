//! Fixed-step drilling simulator and scripted scenarios.
//!
//! The simulator integrates joint rates, enforces actuation limits and
//! cutting legality, and carves the phantom along the tip path. Geometry always
//! comes from [`crate::kinematics`]; the simulator only adds time and rules.

use std::io::Write;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, tip_frame, Centerline, DEFAULT_SAMPLE_STEP};
use crate::model::{validate_config, Dof, JointState, RobotConfig};
use crate::phantom::VoxelPhantom;

/// Default integration step, s.
pub const DEFAULT_DT: f64 = 0.01;

/// Extent of the default bone block, mm (along the sheath axis, then across).
pub const DEFAULT_BLOCK_SIZE: [f64; 3] = [100.0, 60.0, 60.0];

/// A tip speed above `feed_limit × (1 + FEED_TOLERANCE)` while cutting is a fault.
pub const FEED_TOLERANCE: f64 = 0.25;

const TARGET_EPS: f64 = 1e-9;

/// Signed joint velocities (mm/s, deg/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct JointRates {
    pub outer_translation: f64,
    pub inner_translation: f64,
    pub outer_roll: f64,
    pub inner_roll: f64,
}

impl JointRates {
    pub fn get(&self, dof: Dof) -> f64 {
        match dof {
            Dof::OuterTranslation => self.outer_translation,
            Dof::InnerTranslation => self.inner_translation,
            Dof::OuterRoll => self.outer_roll,
            Dof::InnerRoll => self.inner_roll,
        }
    }

    pub fn set(&mut self, dof: Dof, v: f64) {
        match dof {
            Dof::OuterTranslation => self.outer_translation = v,
            Dof::InnerTranslation => self.inner_translation = v,
            Dof::OuterRoll => self.outer_roll = v,
            Dof::InnerRoll => self.inner_roll = v,
        }
    }

    pub fn is_zero(&self) -> bool {
        Dof::ALL.iter().all(|&d| self.get(d) == 0.0)
    }
}

/// Per-DoF position targets; unset DoFs are held.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct JointTargets {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_translation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_translation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_roll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_roll: Option<f64>,
}

impl JointTargets {
    pub fn get(&self, dof: Dof) -> Option<f64> {
        match dof {
            Dof::OuterTranslation => self.outer_translation,
            Dof::InnerTranslation => self.inner_translation,
            Dof::OuterRoll => self.outer_roll,
            Dof::InnerRoll => self.inner_roll,
        }
    }

    pub fn set(&mut self, dof: Dof, v: f64) {
        match dof {
            Dof::OuterTranslation => self.outer_translation = Some(v),
            Dof::InnerTranslation => self.inner_translation = Some(v),
            Dof::OuterRoll => self.outer_roll = Some(v),
            Dof::InnerRoll => self.inner_roll = Some(v),
        }
    }

    fn translates(&self) -> bool {
        self.outer_translation.is_some() || self.inner_translation.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Until {
    /// Run the rates for a fixed time, s.
    Duration(f64),
    /// Drive the targeted DoFs to their targets at the commanded speeds.
    Reached(JointTargets),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    /// Velocities for `Duration`; speed magnitudes for `Reached`.
    pub rates: JointRates,
    /// rpm
    pub spindle: f64,
    pub until: Until,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub label: String,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub initial: JointState,
    pub phases: Vec<Phase>,
}

impl ScenarioScript {
    /// Relative roll of the inner tube at the start of the script, deg.
    pub fn initial_relative_roll(&self) -> f64 {
        self.initial.relative_roll()
    }

    pub fn phase(&self, label: &str) -> Option<&Phase> {
        self.phases.iter().find(|p| p.label == label)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    AdvanceWithoutSpindle,
    FeedLimitExceeded,
    JointLimitReached,
    InnerBehindOuter,
}

impl FaultKind {
    pub fn describe(self) -> &'static str {
        match self {
            FaultKind::AdvanceWithoutSpindle => "advance without spindle",
            FaultKind::FeedLimitExceeded => "feed limit exceeded",
            FaultKind::JointLimitReached => "joint limit reached",
            FaultKind::InnerBehindOuter => "inner tip behind outer tip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    PhaseStarted {
        label: String,
    },
    PhaseCompleted {
        label: String,
    },
    SpindleChanged {
        rpm: f64,
    },
    Clamp {
        dof: Dof,
        commanded: f64,
        applied: f64,
    },
    BoneContact,
    Fault {
        fault: FaultKind,
        detail: String,
    },
    /// Tip jump caused by re-computing the static shape during an in-place roll.
    TipDiscontinuity {
        phase: String,
        magnitude: f64,
        clearance: f64,
        exceeds_clearance: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub joints: JointState,
    pub tip: Point3<f64>,
}

/// Outcome of a single integration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Moved,
    Idle,
    Faulted(FaultKind),
}

/// Time-stepped robot state bound to one configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: RobotConfig,
    t: f64,
    joints: JointState,
    tip: Point3<f64>,
    events: Vec<Event>,
    samples: Vec<StateSample>,
    fault: Option<FaultKind>,
    clamped: [bool; 4],
    carve_from: Option<Point3<f64>>,
    carve_chord: f64,
    bone_contact: Option<f64>,
    last_motion: Option<f64>,
    carved: usize,
}

impl Simulator {
    pub fn new(config: RobotConfig, initial: JointState) -> Result<Self> {
        let report = validate_config(&config);
        if !report.is_valid() {
            return Err(Error::InvalidArgument(format!("invalid configuration: {report}")));
        }
        if !config.joint_limits.contains(&initial) {
            return Err(Error::Contract("initial joints outside limits".into()));
        }
        let tip = tip_frame(&config, &initial)?.origin;
        Ok(Self {
            config,
            t: 0.0,
            joints: initial,
            tip,
            events: Vec::new(),
            samples: vec![StateSample {
                t: 0.0,
                joints: initial,
                tip,
            }],
            fault: None,
            clamped: [false; 4],
            carve_from: None,
            carve_chord: 0.1,
            bone_contact: None,
            last_motion: None,
            carved: 0,
        })
    }

    /// Maximum chord carved at once; shorter chords are accumulated.
    pub fn with_carve_chord(mut self, chord: f64) -> Self {
        self.carve_chord = chord.max(0.0);
        self
    }

    pub fn config(&self) -> &RobotConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn joints(&self) -> &JointState {
        &self.joints
    }

    pub fn tip(&self) -> Point3<f64> {
        self.tip
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn samples(&self) -> &[StateSample] {
        &self.samples
    }

    pub fn fault(&self) -> Option<FaultKind> {
        self.fault
    }

    pub fn bone_contact_time(&self) -> Option<f64> {
        self.bone_contact
    }

    pub fn carved_voxels(&self) -> usize {
        self.carved
    }

    pub fn log(&mut self, kind: EventKind) {
        self.events.push(Event { t: self.t, kind });
    }

    /// Clears a fault so motion can resume; joints and time are kept.
    pub fn clear_fault(&mut self) {
        self.fault = None;
    }

    fn raise(&mut self, fault: FaultKind, detail: String) -> StepOutcome {
        self.fault = Some(fault);
        self.log(EventKind::Fault { fault, detail });
        StepOutcome::Faulted(fault)
    }

    /// Places a joint exactly on a value reached within tolerance.
    fn snap(&mut self, dof: Dof, value: f64) -> Result<()> {
        if self.joints.get(dof) != value {
            self.joints.set(dof, value);
            self.tip = tip_frame(&self.config, &self.joints)?.origin;
            if let Some(last) = self.samples.last_mut() {
                last.joints = self.joints;
                last.tip = self.tip;
            }
        }
        Ok(())
    }

    fn clamp_rates(&mut self, rates: &JointRates) -> JointRates {
        let limits = self.config.joint_limits.clone();
        let mut out = *rates;
        for dof in Dof::ALL {
            let max = if dof.is_translation() {
                limits.max_speed(dof).min(self.config.feed_limit)
            } else {
                limits.max_speed(dof)
            };
            let v = rates.get(dof);
            let clamped = v.abs() > max;
            if clamped {
                out.set(dof, max.copysign(v));
                if !self.clamped[dof.index()] {
                    self.log(EventKind::Clamp {
                        dof,
                        commanded: v,
                        applied: out.get(dof),
                    });
                }
            }
            self.clamped[dof.index()] = clamped;
        }
        out
    }

    /// Carves whatever chord is pending.
    pub fn flush(&mut self, phantom: &mut VoxelPhantom) -> Result<()> {
        if let Some(from) = self.carve_from {
            if (self.tip - from).norm() > 0.0 {
                self.carved += phantom.carve_swept_sphere(&[from, self.tip], self.config.bit.cut_radius())?;
            }
            self.carve_from = Some(self.tip);
        }
        Ok(())
    }

    /// Advances the simulation by `dt` under signed joint `rates`.
    pub fn step(
        &mut self,
        rates: &JointRates,
        spindle: f64,
        dt: f64,
        phantom: &mut VoxelPhantom,
    ) -> Result<StepOutcome> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if let Some(f) = self.fault {
            return Ok(StepOutcome::Faulted(f));
        }
        let spindle = spindle.clamp(0.0, self.config.spindle_max);
        if spindle != self.joints.spindle {
            if spindle < self.config.bit.min_cut_rpm {
                self.flush(phantom)?;
                self.carve_from = None;
            }
            self.joints.spindle = spindle;
            self.log(EventKind::SpindleChanged { rpm: spindle });
        }
        let cutting = spindle >= self.config.bit.min_cut_rpm;

        let rates = self.clamp_rates(rates);
        let mut next = self.joints;
        for dof in Dof::ALL {
            next.set(dof, self.joints.get(dof) + rates.get(dof) * dt);
        }

        let t_start = self.t;
        self.t += dt;
        let mut outcome = StepOutcome::Idle;

        let limits = self.config.joint_limits.clone();
        let mut limit_hit = None;
        for dof in Dof::ALL {
            let r = limits.range(dof);
            let v = next.get(dof);
            if !r.contains(v) {
                next.set(dof, v.clamp(r.min, r.max));
                limit_hit = Some((dof, v));
            }
        }
        if next.inner_translation < next.outer_translation - TARGET_EPS {
            outcome = self.raise(
                FaultKind::InnerBehindOuter,
                format!(
                    "inner {:.3} mm behind outer {:.3} mm",
                    next.inner_translation, next.outer_translation
                ),
            );
            self.record();
            return Ok(outcome);
        }

        let tip = tip_frame(&self.config, &next)?.origin;
        let displacement = tip - self.tip;
        let distance = displacement.norm();
        if distance > 0.0 {
            let probe = tip + displacement / distance * self.config.bit.cut_radius();
            let contact = phantom.is_material_at(&probe) || phantom.is_material_at(&tip);
            if contact && !cutting {
                outcome = self.raise(
                    FaultKind::AdvanceWithoutSpindle,
                    format!("tip would enter material with spindle at {spindle} rpm"),
                );
                self.record();
                return Ok(outcome);
            }
            let speed = distance / dt;
            if contact && speed > self.config.feed_limit * (1.0 + FEED_TOLERANCE) {
                outcome = self.raise(
                    FaultKind::FeedLimitExceeded,
                    format!("tip speed {speed:.3} mm/s above feed limit {}", self.config.feed_limit),
                );
                self.record();
                return Ok(outcome);
            }
            if contact && self.bone_contact.is_none() {
                self.bone_contact = Some(t_start);
                self.events.push(Event {
                    t: t_start,
                    kind: EventKind::BoneContact,
                });
            }
            self.last_motion = Some(self.t);
            outcome = StepOutcome::Moved;
        } else if next != self.joints {
            outcome = StepOutcome::Moved;
        }
        if cutting && self.carve_from.is_none() {
            self.carve_from = Some(self.tip);
        }

        self.joints = next;
        self.tip = tip;
        if let Some(from) = self.carve_from {
            if cutting && (self.tip - from).norm() >= self.carve_chord {
                self.flush(phantom)?;
            }
        }

        if let Some((dof, v)) = limit_hit {
            outcome = self.raise(
                FaultKind::JointLimitReached,
                format!("{dof} commanded to {v:.3}, limit reached"),
            );
        }
        self.record();
        Ok(outcome)
    }

    fn record(&mut self) {
        self.samples.push(StateSample {
            t: self.t,
            joints: self.joints,
            tip: self.tip,
        });
    }

    /// Time of the last step that moved the tip.
    pub fn last_motion_time(&self) -> Option<f64> {
        self.last_motion
    }
}

/// Channel clearance between the cut and the outer tube, mm.
pub fn channel_clearance(config: &RobotConfig) -> f64 {
    0.5 * config.bit.bit_diameter - 0.5 * config.outer_tube.outer_diameter
}

/// Executes a script phase by phase on a [`Simulator`].
#[derive(Debug, Clone)]
pub struct ScriptRunner {
    script: ScenarioScript,
    phase: usize,
    started: bool,
    phase_t0: f64,
    phase_tip0: Point3<f64>,
    flagged: bool,
}

impl ScriptRunner {
    pub fn new(script: ScenarioScript) -> Self {
        Self {
            script,
            phase: 0,
            started: false,
            phase_t0: 0.0,
            phase_tip0: Point3::origin(),
            flagged: false,
        }
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    pub fn is_finished(&self) -> bool {
        self.phase >= self.script.phases.len()
    }

    pub fn current_phase(&self) -> Option<&Phase> {
        self.script.phases.get(self.phase)
    }

    /// True once a tip discontinuity exceeded the channel clearance.
    pub fn flagged(&self) -> bool {
        self.flagged
    }

    fn remaining(targets: &JointTargets, joints: &JointState) -> Vec<(Dof, f64, f64)> {
        Dof::ALL
            .iter()
            .filter_map(|&d| targets.get(d).map(|t| (d, t, t - joints.get(d))))
            .collect()
    }

    fn complete_phase(&mut self, sim: &mut Simulator, phantom: &mut VoxelPhantom) -> Result<()> {
        let phase = self.script.phases[self.phase].clone();
        sim.flush(phantom)?;
        if let Until::Reached(targets) = phase.command.until {
            if !targets.translates() {
                let magnitude = (sim.tip() - self.phase_tip0).norm();
                if magnitude > 1e-9 {
                    let clearance = channel_clearance(sim.config());
                    let exceeds = magnitude >= clearance;
                    self.flagged |= exceeds;
                    sim.log(EventKind::TipDiscontinuity {
                        phase: phase.label.clone(),
                        magnitude,
                        clearance,
                        exceeds_clearance: exceeds,
                    });
                }
            }
        }
        sim.log(EventKind::PhaseCompleted { label: phase.label });
        self.phase += 1;
        self.started = false;
        Ok(())
    }

    /// Runs one step of the current phase (or closes phases that are already
    /// satisfied). Returns the step outcome, or `None` when the script is done.
    pub fn advance(&mut self, sim: &mut Simulator, phantom: &mut VoxelPhantom, dt: f64) -> Result<Option<StepOutcome>> {
        loop {
            let Some(phase) = self.script.phases.get(self.phase).cloned() else {
                return Ok(None);
            };
            if !self.started {
                self.started = true;
                self.phase_t0 = sim.time();
                self.phase_tip0 = sim.tip();
                sim.log(EventKind::PhaseStarted {
                    label: phase.label.clone(),
                });
            }
            let cmd = phase.command;
            let rates = match cmd.until {
                Until::Duration(d) => {
                    if sim.time() - self.phase_t0 >= d - 1e-9 {
                        self.complete_phase(sim, phantom)?;
                        continue;
                    }
                    cmd.rates
                }
                Until::Reached(targets) => {
                    let rem = Self::remaining(&targets, sim.joints());
                    if rem.iter().all(|&(_, _, r)| r.abs() <= TARGET_EPS) {
                        for (dof, target, _) in rem {
                            sim.snap(dof, target)?;
                        }
                        self.complete_phase(sim, phantom)?;
                        continue;
                    }
                    let mut rates = JointRates::default();
                    for (dof, _, r) in rem {
                        let speed = cmd.rates.get(dof).abs();
                        rates.set(dof, (speed.min(r.abs() / dt)).copysign(r));
                    }
                    rates
                }
            };
            let outcome = sim.step(&rates, cmd.spindle, dt, phantom)?;
            if let Until::Reached(targets) = cmd.until {
                if outcome == StepOutcome::Idle
                    && Self::remaining(&targets, sim.joints())
                        .iter()
                        .any(|&(_, _, r)| r.abs() > TARGET_EPS)
                    && cmd.rates.is_zero()
                {
                    return Err(Error::Contract(format!(
                        "phase '{}' targets a joint with zero commanded speed",
                        phase.label
                    )));
                }
            }
            return Ok(Some(outcome));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub dt: f64,
    pub status: RunStatus,
    /// Set when a tip discontinuity exceeded the channel clearance.
    pub flagged: bool,
    pub samples: Vec<StateSample>,
    pub events: Vec<Event>,
    /// Tip positions with consecutive duplicates removed.
    pub tip_locus: Vec<Point3<f64>>,
    /// Backbone at the final joint state.
    pub final_centerline: Centerline,
    pub final_joints: JointState,
    pub bone_contact_time: Option<f64>,
    /// Time from first bone contact to the last tip motion, s.
    pub insertion_time: Option<f64>,
    pub carved_voxels: usize,
    pub phantom_material: String,
}

impl RunRecord {
    pub fn faults(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Fault { .. }))
    }

    pub fn discontinuities(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::TipDiscontinuity {
                magnitude,
                exceeds_clearance,
                ..
            } => Some((magnitude, exceeds_clearance)),
            _ => None,
        })
    }

    pub fn completed_phases(&self) -> Vec<&str> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::PhaseCompleted { label } => Some(label.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn tip_locus_centerline(&self) -> Centerline {
        Centerline::from_points(&self.tip_locus)
    }

    /// `t_s, joints…, spindle, tip` rows.
    pub fn write_timeline_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t_s",
            "outer_translation_mm",
            "inner_translation_mm",
            "outer_roll_deg",
            "inner_roll_deg",
            "spindle_rpm",
            "tip_x_mm",
            "tip_y_mm",
            "tip_z_mm",
        ])?;
        for s in &self.samples {
            let j = &s.joints;
            w.serialize((
                s.t,
                j.outer_translation,
                j.inner_translation,
                j.outer_roll,
                j.inner_roll,
                j.spindle,
                s.tip.x,
                s.tip.y,
                s.tip.z,
            ))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_events_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.events)?;
        Ok(())
    }

    pub fn write_tip_locus_csv<W: Write>(&self, out: W) -> Result<()> {
        self.tip_locus_centerline().write_csv(out)
    }
}

/// Snapshot of a run driven by `script` on `sim` so far.
pub fn capture_record(
    sim: &Simulator,
    script: &ScriptRunner,
    dt: f64,
    status: RunStatus,
    material: &str,
) -> Result<RunRecord> {
    let mut tip_locus: Vec<Point3<f64>> = Vec::new();
    for s in sim.samples() {
        if tip_locus.last() != Some(&s.tip) {
            tip_locus.push(s.tip);
        }
    }
    let (final_centerline, _) = forward_kinematics(sim.config(), sim.joints(), DEFAULT_SAMPLE_STEP)?;
    let insertion_time = match (sim.bone_contact_time(), sim.last_motion_time()) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(RunRecord {
        scenario: script.script().name.clone(),
        dt,
        status,
        flagged: script.flagged(),
        samples: sim.samples().to_vec(),
        events: sim.events().to_vec(),
        tip_locus,
        final_centerline,
        final_joints: *sim.joints(),
        bone_contact_time: sim.bone_contact_time(),
        insertion_time,
        carved_voxels: sim.carved_voxels(),
        phantom_material: material.to_string(),
    })
}

/// Rejects scripts whose phase targets lie outside the joint limits.
pub fn validate_script(script: &ScenarioScript, config: &RobotConfig) -> Result<()> {
    for p in &script.phases {
        if let Until::Reached(t) = p.command.until {
            for dof in Dof::ALL {
                if let Some(v) = t.get(dof) {
                    if !config.joint_limits.range(dof).contains(v) {
                        return Err(Error::Contract(format!(
                            "phase '{}' targets {dof} = {v} outside joint limits",
                            p.label
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Runs `script` to completion (or to the first fault) on `phantom`.
pub fn run_scenario(script: &ScenarioScript, config: &RobotConfig, phantom: &mut VoxelPhantom) -> Result<RunRecord> {
    run_scenario_with_dt(script, config, phantom, DEFAULT_DT)
}

pub fn run_scenario_with_dt(
    script: &ScenarioScript,
    config: &RobotConfig,
    phantom: &mut VoxelPhantom,
    dt: f64,
) -> Result<RunRecord> {
    validate_script(script, config)?;
    let mut sim = Simulator::new(config.clone(), script.initial)?.with_carve_chord(0.5 * phantom.voxel_size());
    let mut runner = ScriptRunner::new(script.clone());
    let mut status = RunStatus::Completed;
    let max_steps = (24.0 * 3600.0 / dt) as u64;
    for _ in 0..max_steps {
        match runner.advance(&mut sim, phantom, dt)? {
            None => break,
            Some(StepOutcome::Faulted(_)) => {
                sim.flush(phantom)?;
                status = RunStatus::Aborted;
                break;
            }
            Some(_) => {}
        }
    }
    if !runner.is_finished() && status == RunStatus::Completed {
        return Err(Error::Contract("scenario did not finish within the step budget".into()));
    }
    capture_record(&sim, &runner, dt, status, phantom.material())
}

/// Bone block whose entry face sits at the sheath mouth, spanning
/// [`DEFAULT_BLOCK_SIZE`] along +x and centred across.
pub fn default_phantom(config: &RobotConfig, voxel_size: f64) -> Result<VoxelPhantom> {
    let [lx, ly, lz] = DEFAULT_BLOCK_SIZE;
    VoxelPhantom::block_at_entry(Vector3::new(lx, ly, lz), voxel_size, config.sheath.pose.origin)
}

/// Pre-extension of the nested tubes beyond the sheath in S2, mm.
pub const S2_PRE_EXTENSION: f64 = 10.8;
/// Exposed outer-tube arc in S2, mm.
pub const S2_OUTER_ARC: f64 = 40.7;
/// Inner-tube arc beyond the outer tube in S2, mm.
pub const S2_INNER_ARC: f64 = 50.0;
/// First-phase co-advance in S1 and OOP90, mm.
pub const S1_CO_ADVANCE: f64 = 20.0;
/// Operating spindle speed, rpm.
pub const OPERATING_RPM: f64 = 1000.0;
/// Spindle spin-up dwell before the first advance, s.
pub const SPIN_UP_TIME: f64 = 1.0;

fn spin_up() -> Phase {
    Phase {
        label: "spin-up".into(),
        command: Command {
            rates: JointRates::default(),
            spindle: OPERATING_RPM,
            until: Until::Duration(SPIN_UP_TIME),
        },
    }
}

fn translate(label: &str, feed: f64, outer: Option<f64>, inner: Option<f64>) -> Phase {
    Phase {
        label: label.into(),
        command: Command {
            rates: JointRates {
                outer_translation: if outer.is_some() { feed } else { 0.0 },
                inner_translation: if inner.is_some() { feed } else { 0.0 },
                ..Default::default()
            },
            spindle: OPERATING_RPM,
            until: Until::Reached(JointTargets {
                outer_translation: outer,
                inner_translation: inner,
                ..Default::default()
            }),
        },
    }
}

fn roll_inner(label: &str, speed: f64, target: f64) -> Phase {
    Phase {
        label: label.into(),
        command: Command {
            rates: JointRates {
                inner_roll: speed,
                ..Default::default()
            },
            spindle: OPERATING_RPM,
            until: Until::Reached(JointTargets {
                inner_roll: Some(target),
                ..Default::default()
            }),
        },
    }
}

/// Opposed-from-start S-shape: pre-extend, co-advance to the outer arc, then
/// advance the inner tube alone.
pub fn s2_script(feed: f64) -> ScenarioScript {
    ScenarioScript {
        name: "S2".into(),
        description: "tubes opposed from the start; co-advance then inner advance".into(),
        initial: JointState::new(0.0, 0.0, 0.0, 180.0),
        phases: vec![
            spin_up(),
            translate("pre-extend", feed, Some(S2_PRE_EXTENSION), Some(S2_PRE_EXTENSION)),
            translate("co-advance", feed, Some(S2_OUTER_ARC), Some(S2_OUTER_ARC)),
            translate("inner-advance", feed, None, Some(S2_OUTER_ARC + S2_INNER_ARC)),
        ],
    }
}

fn rotate_in_place_script(
    name: &str,
    description: &str,
    relative_roll: f64,
    feed: f64,
    roll_speed: f64,
) -> ScenarioScript {
    ScenarioScript {
        name: name.into(),
        description: description.into(),
        initial: JointState::new(0.0, 0.0, 0.0, 0.0),
        phases: vec![
            spin_up(),
            translate("co-advance", feed, Some(S1_CO_ADVANCE), Some(S1_CO_ADVANCE)),
            roll_inner("roll-inner", roll_speed, relative_roll),
            translate("inner-advance", feed, None, Some(S1_CO_ADVANCE + S2_INNER_ARC)),
        ],
    }
}

/// S2-style schedule ending at the given joints: rolls set before drilling,
/// co-advance to `outer_arc`, then the inner tube alone to `inner_total`.
pub fn opposed_schedule(
    name: &str,
    outer_arc: f64,
    inner_total: f64,
    outer_roll: f64,
    inner_roll: f64,
    feed: f64,
) -> ScenarioScript {
    let mut phases = vec![spin_up()];
    if outer_arc > 0.0 {
        phases.push(translate("co-advance", feed, Some(outer_arc), Some(outer_arc)));
    }
    if inner_total > outer_arc {
        phases.push(translate("inner-advance", feed, None, Some(inner_total)));
    }
    ScenarioScript {
        name: name.into(),
        description: "rolls set before drilling; co-advance then inner advance".into(),
        initial: JointState::new(0.0, 0.0, outer_roll, inner_roll),
        phases,
    }
}

/// S1-style schedule ending at the given joints: aligned co-advance, inner
/// roll in place, then the inner tube alone.
pub fn roll_in_place_schedule(
    name: &str,
    outer_arc: f64,
    inner_total: f64,
    outer_roll: f64,
    inner_roll: f64,
    feed: f64,
    roll_speed: f64,
) -> ScenarioScript {
    let mut phases = vec![spin_up()];
    if outer_arc > 0.0 {
        phases.push(translate("co-advance", feed, Some(outer_arc), Some(outer_arc)));
    }
    if inner_roll != outer_roll {
        phases.push(roll_inner("roll-inner", roll_speed, inner_roll));
    }
    if inner_total > outer_arc {
        phases.push(translate("inner-advance", feed, None, Some(inner_total)));
    }
    ScenarioScript {
        name: name.into(),
        description: "aligned co-advance, inner roll in place, inner advance".into(),
        initial: JointState::new(0.0, 0.0, outer_roll, outer_roll),
        phases,
    }
}

/// The builtin scenarios `S1`, `S2` and `OOP90` for `config`.
pub fn builtin_scenarios(config: &RobotConfig) -> Vec<ScenarioScript> {
    let feed = config.feed_default;
    let roll_speed = config.joint_limits.max_roll_speed;
    vec![
        rotate_in_place_script(
            "S1",
            "aligned co-advance, in-place 180 deg inner roll, inner advance",
            180.0,
            feed,
            roll_speed,
        ),
        s2_script(feed),
        rotate_in_place_script(
            "OOP90",
            "aligned co-advance, in-place 90 deg inner roll, out-of-plane inner advance",
            90.0,
            feed,
            roll_speed,
        ),
    ]
}

pub fn builtin_scenario(name: &str, config: &RobotConfig) -> Result<ScenarioScript> {
    builtin_scenarios(config)
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_config;
    use approx::assert_abs_diff_eq;

    fn air(config: &RobotConfig) -> VoxelPhantom {
        let mut p = default_phantom(config, 1.0).unwrap();
        p.clear_all();
        p
    }

    #[test]
    fn builtin_names_and_parameters() {
        let cfg = default_config();
        let names: Vec<_> = builtin_scenarios(&cfg).into_iter().map(|s| s.name).collect();
        assert_eq!(names, ["S1", "S2", "OOP90"]);

        let s2 = builtin_scenario("S2", &cfg).unwrap();
        let pre = s2.phase("pre-extend").unwrap();
        assert_eq!(
            pre.command.until,
            Until::Reached(JointTargets {
                outer_translation: Some(10.8),
                inner_translation: Some(10.8),
                ..Default::default()
            })
        );
        assert_eq!(s2.initial_relative_roll(), 180.0);

        let s1 = builtin_scenario("S1", &cfg).unwrap();
        let co = s1.phase("co-advance").unwrap();
        assert!(
            matches!(co.command.until, Until::Reached(t) if t.outer_translation == Some(20.0) && t.inner_translation == Some(20.0))
        );
        assert_eq!(s1.initial_relative_roll(), 0.0);

        let oop = builtin_scenario("OOP90", &cfg).unwrap();
        let roll = oop.phase("roll-inner").unwrap();
        assert!(matches!(roll.command.until, Until::Reached(t) if t.inner_roll == Some(90.0)));
        assert!(matches!(builtin_scenario("NOPE", &cfg), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn script_json_round_trip() {
        let s = s2_script(1.65);
        assert_eq!(ScenarioScript::from_json(&s.to_json().unwrap()).unwrap(), s);
    }

    #[test]
    fn constant_feed_integrates() {
        let cfg = default_config();
        let mut p = air(&cfg);
        let mut sim = Simulator::new(cfg, JointState::default()).unwrap();
        let rates = JointRates {
            inner_translation: 1.65,
            ..Default::default()
        };
        for _ in 0..5500 {
            sim.step(&rates, 1000.0, DEFAULT_DT, &mut p).unwrap();
        }
        assert_abs_diff_eq!(sim.joints().inner_translation, 90.75, epsilon = 1e-9);
    }

    #[test]
    fn overspeed_is_clamped_and_logged() {
        let cfg = default_config();
        let mut p = air(&cfg);
        let mut sim = Simulator::new(cfg, JointState::default()).unwrap();
        let rates = JointRates {
            inner_translation: 10.0,
            ..Default::default()
        };
        for _ in 0..100 {
            sim.step(&rates, 1000.0, DEFAULT_DT, &mut p).unwrap();
        }
        assert_abs_diff_eq!(sim.joints().inner_translation, 3.0, epsilon = 1e-9);
        let clamps: Vec<_> = sim
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Clamp { .. }))
            .collect();
        assert_eq!(clamps.len(), 1);
        assert!(
            matches!(clamps[0].kind, EventKind::Clamp { dof: Dof::InnerTranslation, applied, .. } if applied == 3.0)
        );
    }

    #[test]
    fn advancing_into_bone_without_spindle_faults() {
        let cfg = default_config();
        let mut p = default_phantom(&cfg, 0.5).unwrap();
        let mut sim = Simulator::new(cfg, JointState::default()).unwrap();
        let rates = JointRates {
            inner_translation: 1.0,
            ..Default::default()
        };
        let out = sim.step(&rates, 0.0, DEFAULT_DT, &mut p).unwrap();
        assert_eq!(out, StepOutcome::Faulted(FaultKind::AdvanceWithoutSpindle));
        assert_eq!(sim.joints().inner_translation, 0.0);
        assert_eq!(sim.tip(), Point3::origin());
        assert_eq!(
            sim.step(&rates, 1000.0, DEFAULT_DT, &mut p).unwrap(),
            StepOutcome::Faulted(FaultKind::AdvanceWithoutSpindle)
        );
    }

    #[test]
    fn joint_limit_faults() {
        let cfg = default_config();
        let mut p = air(&cfg);
        let mut sim = Simulator::new(cfg, JointState::new(41.4, 41.4, 0.0, 0.0)).unwrap();
        let rates = JointRates {
            outer_translation: 1.0,
            inner_translation: 1.0,
            ..Default::default()
        };
        let mut last = StepOutcome::Idle;
        for _ in 0..20 {
            last = sim.step(&rates, 1000.0, DEFAULT_DT, &mut p).unwrap();
        }
        assert_eq!(last, StepOutcome::Faulted(FaultKind::JointLimitReached));
        assert_eq!(sim.joints().outer_translation, 41.5);
    }

    #[test]
    fn inner_retracting_behind_outer_faults() {
        let cfg = default_config();
        let mut p = air(&cfg);
        let mut sim = Simulator::new(cfg, JointState::new(10.0, 10.0, 0.0, 0.0)).unwrap();
        let rates = JointRates {
            inner_translation: -1.0,
            ..Default::default()
        };
        let out = sim.step(&rates, 0.0, DEFAULT_DT, &mut p).unwrap();
        assert_eq!(out, StepOutcome::Faulted(FaultKind::InnerBehindOuter));
        assert_eq!(sim.joints().inner_translation, 10.0);
    }

    #[test]
    fn rejects_bad_dt_and_config() {
        let cfg = default_config();
        let mut p = air(&cfg);
        let mut sim = Simulator::new(cfg.clone(), JointState::default()).unwrap();
        assert!(sim.step(&JointRates::default(), 0.0, 0.0, &mut p).is_err());
        let mut bad = cfg;
        bad.bit.bit_diameter = 3.0;
        assert!(Simulator::new(bad, JointState::default()).is_err());
    }

    #[test]
    fn out_of_limit_script_is_rejected() {
        let cfg = default_config();
        let mut p = air(&cfg);
        let mut script = s2_script(1.65);
        script.phases[2] = translate("co-advance", 1.65, Some(45.0), Some(45.0));
        assert!(matches!(run_scenario(&script, &cfg, &mut p), Err(Error::Contract(_))));
    }

    #[test]
    fn s2_in_air_reaches_targets() {
        let cfg = default_config();
        let mut p = air(&cfg);
        let rec = run_scenario(&s2_script(1.65), &cfg, &mut p).unwrap();
        assert_eq!(rec.status, RunStatus::Completed);
        assert_eq!(rec.final_joints.outer_translation, 40.7);
        assert_eq!(rec.final_joints.inner_translation, 90.7);
        assert_eq!(
            rec.completed_phases(),
            ["spin-up", "pre-extend", "co-advance", "inner-advance"]
        );
        assert!(rec.bone_contact_time.is_none());
        assert!(rec.samples.windows(2).all(|w| w[1].t > w[0].t));
    }
}
