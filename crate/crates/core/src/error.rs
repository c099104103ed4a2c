use thiserror::Error;

use crate::backend::BackendError;
use crate::active::Trajectory;
use crate::probe::DecisionMap;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{n_points} points cannot be split evenly across {num_classes} classes")]
    Balance { n_points: usize, num_classes: usize },

    #[error("unsupported class count {0} (linear tasks support 2..=4, circle/moon exactly 2)")]
    UnsupportedClassCount(usize),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("label index {index} out of range for {num_classes} classes")]
    Label { index: usize, num_classes: usize },

    #[error("ambiguous labels: {0}")]
    AmbiguousLabels(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("probe degraded: {abstain_fraction:.3} of cells abstained")]
    ProbeDegraded {
        abstain_fraction: f64,
        map: Box<DecisionMap>,
    },

    #[error("active loop stopped after {} completed steps: {source}", partial.steps.len())]
    ActiveLoop {
        source: Box<Error>,
        partial: Box<Trajectory>,
    },

    #[error("value outside the probability simplex: {0}")]
    Domain(String),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("decision maps are defined on different grids")]
    GridMismatch,

    #[error("decision map carries no entropy (generation-mode backend?)")]
    NoUncertaintySignal,

    #[error("ledger is empty")]
    EmptyLedger,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
