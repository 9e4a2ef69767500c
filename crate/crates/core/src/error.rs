use thiserror::Error;

/// Errors produced by the solver and the statistics toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid, solver, sampler or analysis parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// An input violates an operation's precondition (e.g. a field that is not divergence free).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The time integration produced NaN or unphysical energy growth.
    #[error("solver blow-up at t = {time}: {reason}")]
    BlowUp { time: f64, reason: String },

    /// Blow-up of one ensemble member during evolution.
    #[error("member {member} blew up at t = {time}: {reason}")]
    MemberBlowUp {
        member: usize,
        time: f64,
        reason: String,
    },

    /// A normalisation by a quantity that is zero while the numerator is not.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Mutually inconsistent inputs, e.g. a zero initial energy with nonzero third moments.
    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    /// Two objects that must live on the same grid (or time axis) do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The cubic moment path requires fields whose spectrum lies inside the dealiased band.
    #[error("field is not band limited: {0}")]
    NotBandLimited(String),

    /// Malformed snapshot or manifest data.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
