use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout generation failed after {attempts} attempts (grid {grid_size}, hazard density {hazard_density})")]
    Generation {
        attempts: usize,
        grid_size: usize,
        hazard_density: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("step called on a finished episode")]
    EpisodeDone,

    #[error("training diverged after {episodes} episodes (non-finite parameters)")]
    Divergence { episodes: usize },

    #[error("empty score pool: no states visited during candidate generation")]
    EmptyScorePool,

    #[error("need at least 2 curve points, got {0}")]
    TooFewPoints(usize),

    #[error("bootstrap subsample m={m} exceeds episodes per alpha M={episodes}")]
    Subsample { m: usize, episodes: usize },

    #[error("faithfulness ratio undefined: novice mean return on the test distribution is {0}")]
    RatioUndefined(f64),

    #[error("no candidates to select from")]
    NoCandidates,

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
