use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("at least one treatment is required")]
    NoTreatments,

    #[error("propensity score {index} is {value}, outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f64 },

    #[error("propensity scores sum to {sum}, treatments cannot be mutually exclusive")]
    NotExclusive { sum: f64 },

    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("negative or non-finite probability {value} for profile {profile:?}")]
    BadProbability { profile: Vec<bool>, value: f64 },

    #[error("profile has {found} treatments, expected {expected}")]
    ProfileLength { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("moment matrix must have a unit intercept entry, found {0}")]
    BadIntercept(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("treatment diagonal entry {index} is zero, the Schur complement is undefined")]
    ZeroDiagonal { index: usize },

    #[error("matrix has non-zero off-diagonal treatment entry at ({row}, {col})")]
    NotDiagonalBlock { row: usize, col: usize },

    #[error("empty cell collection")]
    NoCells,

    #[error("cell weights sum to {0}, expected 1")]
    BadWeights(f64),

    #[error("cell {0} has weight outside [0, 1]")]
    BadWeight(String),

    #[error("duplicate cell id {0}")]
    DuplicateCell(String),

    #[error("cell {0} is not in exclusive mode")]
    NotExclusiveMode(String),

    #[error("cell {cell} has a zero propensity score")]
    ZeroScore { cell: String },

    #[error("no coefficient vector for cell {0}")]
    MissingCell(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("row {row}: {msg}")]
    InvalidRow { row: usize, msg: String },

    #[error("control scheme mismatch: {0}")]
    Scheme(String),

    #[error("coordinate v{coordinate} has {distinct} distinct values, fewer than {bins} bins")]
    TooManyBins {
        coordinate: usize,
        distinct: usize,
        bins: usize,
    },

    #[error("no control cell is identified")]
    NotIdentifiedEverywhere,

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}
