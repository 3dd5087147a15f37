use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("ellipticity violated at ({x}, {y}), t = {t}: smallest eigenvalue {min_eig} < c1 = {c1}")]
    Ellipticity {
        x: f64,
        y: f64,
        t: f64,
        min_eig: f64,
        c1: f64,
    },

    #[error("step {step}: {msg}")]
    Step { step: usize, msg: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("unsupported problem: {0}")]
    Unsupported(String),

    #[error("sample {sample}, dt = {dt}: {source}")]
    Sweep {
        sample: u64,
        dt: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short machine-readable kind, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Assembly(_) => "assembly",
            Error::Ellipticity { .. } => "ellipticity",
            Error::Step { .. } => "step",
            Error::Numerical(_) => "numerical",
            Error::Unsupported(_) => "unsupported-problem",
            Error::Sweep { .. } => "sweep",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
