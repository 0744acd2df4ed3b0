//! Teleoperation wire protocol, version 1.
//!
//! Every message is one JSON object on its own line. Messages carry the
//! protocol version `v` and a `kind`. Messages broadcast on a session's
//! stream carry a gapless `seq`; replies addressed to a single client
//! (hello, errors, snapshots, catch-up projections) carry none.

use ctsdr_core::analysis::RunMeasurement;
use ctsdr_core::model::JointState;
use ctsdr_core::phantom::{Axis, SnapshotHeader};
use ctsdr_core::sim::{Event, FaultKind, JointRates, RunStatus, ScenarioScript};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Client → server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    /// Velocity targets (mm/s, deg/s); omitted joints are zero.
    Jog {
        #[serde(default)]
        rates: JointRates,
    },
    SetSpindle {
        rpm: f64,
    },
    /// A builtin scenario by `name`, or an inline `script`.
    LoadScenario {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        script: Option<ScenarioScript>,
    },
    Start,
    Stop,
    Reset,
    RequestSnapshot,
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::Jog { .. } => "jog",
            Command::SetSpindle { .. } => "set_spindle",
            Command::LoadScenario { .. } => "load_scenario",
            Command::Start => "start",
            Command::Stop => "stop",
            Command::Reset => "reset",
            Command::RequestSnapshot => "request_snapshot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inbound {
    pub v: u32,
    #[serde(flatten)]
    pub command: Command,
}

impl Inbound {
    pub fn new(command: Command) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            command,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("inbound messages serialize") + "\n"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    Jogging,
    Scripted,
    Faulted,
}

/// Limits a client maps its input range onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvertisedLimits {
    /// mm/s, the lower of the actuator limit and the safe feed.
    pub max_feed: f64,
    /// deg/s
    pub max_roll_speed: f64,
    pub spindle_max: f64,
    pub outer_translation: [f64; 2],
    pub inner_translation: [f64; 2],
    pub outer_roll: [f64; 2],
    pub inner_roll: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    Faulted,
    WrongMode,
    UnknownScenario,
    InvalidScript,
    NoScenario,
    InvalidArgument,
    ReadOnly,
    Internal,
}

/// Server → client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outbound {
    Hello {
        session: String,
        protocol: u32,
        tick_hz: f64,
        dt: f64,
        /// Whether this connection may send commands.
        writer: bool,
        limits: AdvertisedLimits,
        scenarios: Vec<String>,
    },
    State {
        t: f64,
        mode: Mode,
        joints: JointState,
        tip: Point3<f64>,
        spindle: f64,
        fault: Option<FaultKind>,
        flagged: bool,
        scenario: Option<String>,
        phase: Option<String>,
    },
    Event {
        event: Event,
    },
    Metrics {
        scenario: String,
        status: RunStatus,
        flagged: bool,
        insertion_time: Option<f64>,
        measurement: Option<RunMeasurement>,
        analysis_error: Option<String>,
    },
    /// Changed region of a projection image; `data` is base64 of the
    /// row-major 8-bit pixels of the tile.
    Projection {
        axis: Axis,
        width: usize,
        height: usize,
        tile: Tile,
        data: String,
    },
    /// Full occupancy grid; `data` is base64 of the packed bits.
    Snapshot {
        header: SnapshotHeader,
        data: String,
    },
    Error {
        code: ErrorCode,
        message: String,
        in_reply_to: Option<String>,
    },
}

impl Outbound {
    pub fn kind(&self) -> &'static str {
        match self {
            Outbound::Hello { .. } => "hello",
            Outbound::State { .. } => "state",
            Outbound::Event { .. } => "event",
            Outbound::Metrics { .. } => "metrics",
            Outbound::Projection { .. } => "projection",
            Outbound::Snapshot { .. } => "snapshot",
            Outbound::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub body: Outbound,
}

impl Message {
    /// A reply for one client only.
    pub fn direct(body: Outbound) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            seq: None,
            body,
        }
    }

    pub fn is_broadcast(&self) -> bool {
        self.seq.is_some()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("outbound messages serialize") + "\n"
    }

    pub fn from_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}

pub fn error(code: ErrorCode, message: impl Into<String>, in_reply_to: Option<&str>) -> Message {
    Message::direct(Outbound::Error {
        code,
        message: message.into(),
        in_reply_to: in_reply_to.map(str::to_string),
    })
}
