use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input. `line` is 1-based; for CSV inputs it counts the header.
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate ad_id `{0}`")]
    DuplicateAd(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown keyword `{0}`")]
    UnknownKeyword(String),

    #[error("no mappable keyword among [{}]", .unknown.join(", "))]
    Mapping { unknown: Vec<String> },

    #[error("cannot encode {what} `{label}`")]
    Encoding { what: &'static str, label: String },

    #[error("feature column `{column}` is constant")]
    DegenerateFeature { column: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("matrix is singular or rank deficient (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("gradient descent diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("no eligible ad for request")]
    NoFill,

    #[error("model was not trained by gradient descent, no cost trace")]
    NoTrace,

    #[error("cannot load model: {0}")]
    Load(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name, used in machine-readable error lines and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::DuplicateAd(_) => "duplicate_ad",
            Error::Domain(_) => "domain",
            Error::UnknownKeyword(_) => "unknown_keyword",
            Error::Mapping { .. } => "mapping",
            Error::Encoding { .. } => "encoding",
            Error::DegenerateFeature { .. } => "degenerate_feature",
            Error::Contract(_) => "contract",
            Error::Singular { .. } => "singular",
            Error::Divergence { .. } => "divergence",
            Error::NoFill => "no_fill",
            Error::NoTrace => "no_trace",
            Error::Load(_) => "load",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn parse(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}
