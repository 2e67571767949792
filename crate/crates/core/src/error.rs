use thiserror::Error;

/// A single configuration problem, keyed by the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid configuration:\n{}", format_diagnostics(.0))]
    Config(Vec<Diagnostic>),

    #[error("failed to parse configuration: {0}")]
    Parse(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ACIM capacity exhausted: first unplaced layer is {layer} ({needed} subarrays needed, {available} available)")]
    Capacity {
        layer: String,
        needed: u64,
        available: u64,
    },

    #[error("layer {0} has no placement in the mapping plan")]
    Unplaced(String),

    #[error("DCIM chiplet {chiplet} buffer too small: {needed} bytes needed for {heads} heads, {available} available")]
    DcimBuffer {
        chiplet: usize,
        heads: usize,
        needed: u64,
        available: u64,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    /// Process exit code for this error class: 1 config, 2 capacity/placement, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Model(_) | Error::Config(_) | Error::Parse(_) | Error::Shape(_) => 1,
            Error::Capacity { .. } | Error::Unplaced(_) | Error::DcimBuffer { .. } => 2,
            Error::Invariant(_) => 3,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
