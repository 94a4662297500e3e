use thiserror::Error;

/// Everything that can go wrong across the crate. Each variant carries a
/// stable machine-readable code (see [`Error::code`]) so callers like the CLI
/// can report failures without parsing messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field data: {0}")]
    InvalidField(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A query (cylinder, time window, test function support) falls outside
    /// the stored data domain.
    #[error("query outside data domain: {0}")]
    Domain(String),

    /// A geometric precondition failed, e.g. a ball too large for the
    /// periodic box.
    #[error("geometry violation: {0}")]
    Geometry(String),

    /// The requested scale cannot be resolved on this grid. `minimal_rho` is
    /// the smallest usable outer scale for the same query.
    #[error("unresolvable at grid resolution: {detail} (minimal usable rho {minimal_rho:.6e})")]
    Resolution { detail: String, minimal_rho: f64 },

    #[error("CFL violation: {0}")]
    Cfl(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed container header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A bug: state the library believes is impossible.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Stable identifier for scripting against error kinds.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidField(_) => "invalid_field",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Geometry(_) => "geometry",
            Error::Resolution { .. } => "resolution",
            Error::Cfl(_) => "cfl",
            Error::Numerical(_) => "numerical",
            Error::MalformedHeader(_) => "malformed_header",
            Error::TruncatedPayload(_) => "truncated_payload",
            Error::ChecksumMismatch(_) => "checksum_mismatch",
            Error::Io(_) => "io",
            Error::Internal(_) => "internal",
        }
    }

    /// Process exit code convention: 1 for domain/validation problems,
    /// 2 for internal errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
