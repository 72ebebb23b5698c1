use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("{op}: precondition violated: {reason}")]
    Precondition { op: &'static str, reason: String },

    #[error("no resonance found: {0}")]
    NoResonance(String),

    #[error("root bracketing did not converge: {0}")]
    Bracketing(String),

    #[error("grid refinement exhausted: {0}")]
    GridRefinement(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("scenario step `{step}` failed: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn pre(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Precondition { op, reason: reason.into() }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), reason: reason.into() }
    }

    /// Wraps an error with the name of the pipeline step that produced it.
    pub fn at_step(self, step: &'static str) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step { step, source: Box::new(e) },
        }
    }

    /// The innermost step name, if this error came out of a scenario pipeline.
    pub fn step(&self) -> Option<&'static str> {
        match self {
            Error::Step { step, .. } => Some(step),
            _ => None,
        }
    }
}
