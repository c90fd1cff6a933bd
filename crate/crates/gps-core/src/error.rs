//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty panel")]
    EmptyPanel,

    /// Balanced-panel violation; lists every missing `(unit, time)` cell.
    #[error("unbalanced: missing {}", format_cells(.missing))]
    Unbalanced { missing: Vec<(String, String)> },

    #[error("non-numeric cell in column '{column}' at row {row}: '{value}'")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate cell ({unit},{time})")]
    DuplicateCell { unit: String, time: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("restriction matrix is rank deficient: rank {rank} < {rows} rows")]
    RankDeficient { rank: usize, rows: usize },

    #[error("unit '{unit}' has singular Gram matrix (condition number {cond:.3e})")]
    SingularUnitGram { unit: String, cond: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("hypothesis covariance singular")]
    SingularHypothesisCov,

    #[error("group {group} is a singleton; need at least 2 units per group")]
    SingletonGroup { group: usize },

    #[error("group {group} is empty")]
    EmptyGroup { group: usize },

    #[error("could not draw an initialization with all {groups} groups nonempty after {tries} tries")]
    InitFailed { groups: usize, tries: usize },

    #[error("all {0} restarts were discarded")]
    AllRestartsFailed(usize),

    #[error("instance too large for exhaustive search: {groups}^{units} > {limit}")]
    BruteForceTooLarge {
        groups: usize,
        units: usize,
        limit: u64,
    },

    #[error("trace infeasible: decomposition inconsistent (phi_obs = {phi_obs:.6e} outside truncation set)")]
    InfeasibleTrace { phi_obs: f64 },

    #[error("truncation set carries no chi-squared probability mass")]
    ZeroMassTruncation,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for validation problems, 3 for
    /// numerical failures discovered mid-computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyPanel
            | Error::Unbalanced { .. }
            | Error::NonNumeric { .. }
            | Error::DuplicateCell { .. }
            | Error::InvalidInput(_)
            | Error::RankDeficient { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            _ => 3,
        }
    }
}

fn format_cells(cells: &[(String, String)]) -> String {
    const SHOWN: usize = 8;
    let mut s = cells
        .iter()
        .take(SHOWN)
        .map(|(u, t)| format!("({u},{t})"))
        .collect::<Vec<_>>()
        .join(", ");
    if cells.len() > SHOWN {
        s.push_str(&format!(", ... ({} cells total)", cells.len()));
    }
    s
}
