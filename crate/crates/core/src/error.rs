use std::io;

use thiserror::Error;

/// Errors produced by the attribute-propagation and relation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("attribute `{0}` needs at least one positive and one negative label")]
    DegenerateAttribute(String),

    #[error("relation trait `{0}` needs at least one positive and one negative label")]
    DegenerateTrait(String),

    #[error("correlation undefined: weight vector of `{0}` has zero variance")]
    UndefinedCorrelation(String),

    #[error("co-occurrence needs at least two attributes, found {0}")]
    TooFewAttributes(usize),

    #[error("need more than {h} nodes for {h}-nearest neighbours, found {n}")]
    InsufficientNodes { n: usize, h: usize },

    #[error("node {0} has zero degree")]
    IsolatedNode(usize),

    #[error("no labeled nodes to initialise from")]
    NoLabeledData,

    #[error("class {0} is empty")]
    EmptyClass(u8),

    #[error("tiny MRF has {n} nodes, limit is {limit}")]
    SizeLimit { n: usize, limit: usize },

    #[error("invalid box: {0}")]
    NonPositiveBox(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("unknown sample id `{0}`")]
    UnknownSample(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("balanced accuracy needs both classes present (N_p = {n_pos}, N_n = {n_neg})")]
    OneClassAbsent { n_pos: usize, n_neg: usize },

    #[error("empty evaluation set")]
    EmptySet,

    #[error("requested attribute correlation {0} is not positive semidefinite")]
    InfeasibleCorrelation(f64),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable code, used as the CLI error tag.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Schema(_) => "schema",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DuplicateId(_) => "duplicate_id",
            Error::DegenerateAttribute(_) => "degenerate_attribute",
            Error::DegenerateTrait(_) => "degenerate_trait",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::TooFewAttributes(_) => "too_few_attributes",
            Error::InsufficientNodes { .. } => "insufficient_nodes",
            Error::IsolatedNode(_) => "isolated_node",
            Error::NoLabeledData => "no_labeled_data",
            Error::EmptyClass(_) => "empty_class",
            Error::SizeLimit { .. } => "size_limit",
            Error::NonPositiveBox(_) => "nonpositive_box",
            Error::UnknownAttribute(_) => "unknown_attribute",
            Error::UnknownSample(_) => "unknown_sample",
            Error::IdMismatch(_) => "id_mismatch",
            Error::OneClassAbsent { .. } => "one_class_absent",
            Error::EmptySet => "empty_set",
            Error::InfeasibleCorrelation(_) => "infeasible_correlation",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
