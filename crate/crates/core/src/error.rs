use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // model configuration
    #[error("invalid offspring pmf: {0}")]
    InvalidPmf(String),
    #[error("offspring law is not supercritical (mean {mean} <= 1)")]
    SubcriticalOrCritical { mean: f64 },
    #[error("offspring support contains 0; the model requires p0 = 0")]
    ZeroOffspring,
    #[error("invalid resistance law: {0}")]
    InvalidResistanceLaw(String),
    #[error("required moment {0} of the resistance law is not finite")]
    MissingMoment(&'static str),

    // tree engine
    #[error("projected node count {projected:.3e} exceeds the node budget {budget}")]
    DepthOverflow { projected: f64, budget: u64 },
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("fluctuation truncation L = {truncation} must be smaller than the depth n = {depth}")]
    TruncationTooDeep { truncation: usize, depth: usize },

    // pool dynamics
    #[error("pool size {0} is below the minimum of 1000 particles")]
    PoolTooSmall(usize),
    #[error("requested work {work:.3e} exceeds the compute budget {budget:.3e}")]
    BudgetExceeded { work: f64, budget: f64 },
    #[error("E[1/xi] is not finite; c0 cannot be estimated")]
    MissingInverseMoment,
    #[error("Monte Carlo noise {noise:.3e} dominates the fitted signal range {signal:.3e}")]
    NoiseDominates { noise: f64, signal: f64 },

    // oracles
    #[error("network is disconnected")]
    Disconnected,
    #[error("Kirchhoff system is singular")]
    SingularSystem,
    #[error("network is not a rooted tree: {0}")]
    NotATree(String),
    #[error("tree leaves are at mixed depths")]
    LeavesAtMixedDepth,
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("network has {vertices} vertices, above the dense-solver cap of {cap}")]
    NetworkTooLarge { vertices: usize, cap: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    // harness
    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("p1 * m = {p1m} >= 1, so E[1/W] is infinite")]
    DubucViolated { p1m: f64 },
    #[error("run {0} not found")]
    MissingRun(String),
    #[error("run {0} already exists with different contents")]
    RunExists(String),
    #[error("replica {index}: {source}")]
    Replica {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Configuration errors: malformed laws, options or inputs.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidPmf(_)
            | Error::SubcriticalOrCritical { .. }
            | Error::ZeroOffspring
            | Error::InvalidResistanceLaw(_)
            | Error::MissingMoment(_)
            | Error::InvalidOption(_)
            | Error::TruncationTooDeep { .. }
            | Error::PoolTooSmall(_)
            | Error::MissingInverseMoment
            | Error::InvalidNetwork(_)
            | Error::Parse { .. }
            | Error::Disconnected
            | Error::NotATree(_)
            | Error::LeavesAtMixedDepth
            | Error::InsufficientSamples { .. }
            | Error::MissingRun(_)
            | Error::Json(_)
            | Error::DubucViolated { .. } => true,
            Error::Replica { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub fn is_budget(&self) -> bool {
        match self {
            Error::DepthOverflow { .. }
            | Error::BudgetExceeded { .. }
            | Error::NetworkTooLarge { .. } => true,
            Error::Replica { source, .. } => source.is_budget(),
            _ => false,
        }
    }

    pub(crate) fn in_replica(self, index: usize) -> Self {
        Error::Replica {
            index,
            source: Box::new(self),
        }
    }
}
