use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration (catalog entry, tolerances, eps list, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Stencil assembly failed a monotonicity precondition.
    #[error("assembly error at node {node}: {detail}")]
    Assembly { node: usize, detail: String },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("iteration limit reached after {iterations} iterations (residual {residual:.3e})")]
    IterationLimit { iterations: usize, residual: f64 },

    /// Power iteration did not certify the eigenvalue within the budget.
    #[error("eigen solver stopped after {iterations} iterations with bracket [{lower}, {upper}]")]
    NotConverged {
        iterations: usize,
        lower: f64,
        upper: f64,
    },

    /// An iterate lost strict positivity, which means the operator is not monotone.
    #[error("positivity lost at node {node} (value {value:.3e})")]
    Positivity { node: usize, value: f64 },

    #[error("policy iteration cycled: {detail}")]
    PolicyCycle {
        detail: String,
        previous: Vec<usize>,
        current: Vec<usize>,
    },

    #[error("differentiation error: {0}")]
    Differentiation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("while solving {context}: {source}")]
    Context {
        context: String,
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
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by the user's input or configuration rather than a numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Input(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}
