use crate::numerics::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Several configuration violations collected in one pass.
    #[error("{} configuration error(s):\n  {}", .0.len(), join_errors(.0))]
    ConfigList(Vec<Error>),

    #[error("hole radius {radius} is below the grid spacing {h}; the hole cannot be resolved")]
    GeometryResolution { radius: f64, h: f64 },

    #[error("point {point:?} lies outside the period block of hole {hole}")]
    Domain { point: [f64; 3], hole: usize },

    #[error("{what} did not converge: {report}")]
    Solver { what: String, report: SolveReport },

    #[error("negative concentration {value:e} at t = {time} persists after {halvings} time-step halvings")]
    Positivity { value: f64, time: f64, halvings: u32 },

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// `Ok` when `errors` is empty, the single error, or a [`Error::ConfigList`].
    pub(crate) fn collect(mut errors: Vec<Error>) -> Result<()> {
        match errors.len() {
            0 => Ok(()),
            1 => Err(errors.pop().unwrap()),
            _ => Err(Error::ConfigList(errors)),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigList(_) | Error::Parse(_) => 2,
            Error::GeometryResolution { .. } | Error::Domain { .. } => 2,
            Error::Solver { .. } | Error::Positivity { .. } | Error::Factorization(_) => 3,
            Error::Consistency(_) | Error::Invariant(_) => 4,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}

fn join_errors(errors: &[Error]) -> String {
    errors
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("\n  ")
}
