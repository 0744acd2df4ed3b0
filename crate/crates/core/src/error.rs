use thiserror::Error;

/// Errors raised by the simulator core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("voxel budget exceeded: {requested} voxels requested, budget is {budget}")]
    VoxelBudget { requested: u128, budget: u64 },

    #[error("no tunnel found in the requested cross-section")]
    NoTunnel,

    #[error("expected exactly one inflection, found {count}")]
    Inflection { count: usize },

    #[error("infeasible calibration: {0}")]
    Calibration(String),

    #[error("unreachable target: best tip error {tip_error:.3} mm (cost {cost:.4})")]
    Unreachable { tip_error: f64, cost: f64 },

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("run aborted: {0}")]
    Fault(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
