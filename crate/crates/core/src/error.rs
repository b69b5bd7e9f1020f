use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("class {class} has {count} members, too few to stratify")]
    ClassTooSmall { class: i64, count: usize },
    #[error("ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("masked labels where true labels are required")]
    MaskedLabels,
    #[error("need at least two classes to fit a classifier")]
    SingleClass,
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("sample weights have no mass")]
    DegenerateWeights,
    #[error("optimizer diverged")]
    Diverged,
    #[error("kernel gram matrix is not finite")]
    GramNotFinite,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("unsupported option: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("covariance is singular")]
    SingularCovariance,
    #[error("domain classifier failed: {0}")]
    DomainClassifierFailed(String),
    #[error("kernel matrix is degenerate")]
    DegenerateKernel,
    #[error("matrix is not positive semi-definite")]
    NonPsd,
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("transport problem too large: {0} x {1}")]
    TooLarge(usize, usize),
    #[error("marginals are unbalanced (difference {0:e})")]
    Unbalanced(f64),
    #[error("source row {0} carries no transport mass")]
    ZeroRowMass(usize),
    #[error("requested {requested} components but numerical rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("eigen solver failed")]
    EigSolverFailed,
    #[error("matrix is ill-conditioned")]
    IllConditioned,
    #[error("method requires exactly two classes")]
    NotBinary,
    #[error("labeled pool became empty")]
    EmptyPool,
    #[error("prediction row {0} has zero norm")]
    DegenerateRows(usize),
    #[error("too few samples: {0}")]
    TooFewSamples(usize),
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("zero variance input")]
    ZeroVariance,
    #[error("empty table")]
    EmptyTable,
}

pub type Result<T> = std::result::Result<T, Error>;
