use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(String),
    #[error("bad header: {0}")]
    Header(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("duplicate image_id {image_id:?} at row {row}")]
    DuplicateImage { image_id: String, row: usize },
    #[error("variable {0:?} declared twice")]
    DuplicateVariable(String),
    #[error("row {row}, column {column:?}: invalid value {value:?} ({reason})")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("column {column:?} has {present} present values, need at least 2")]
    TooFewValues { column: String, present: usize },
    #[error("column {column:?} is not declared in the variable metadata")]
    UndeclaredVariable { column: String },
    #[error("variable {name:?} is declared but has no column in the labels CSV")]
    MissingColumn { name: String },
    #[error("column {column:?}: unknown variable kind {kind:?} (expected \"binary\" or \"continuous\")")]
    UnknownKind { column: String, kind: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("{file}: unsupported dtype {dtype:?}, expected \"f32le\"")]
    UnsupportedDtype { file: String, dtype: String },
    #[error("{file}: byte length mismatch: expected {expected}, found {found}")]
    ByteLength {
        file: String,
        expected: u64,
        found: u64,
    },
    #[error("{file}: non-finite value at (row {row}, col {col})")]
    NonFinite { file: String, row: usize, col: usize },
    #[error("source {source_task:?}: layer ids must be strictly increasing ({prev} then {next})")]
    LayerOrder {
        source_task: String,
        prev: u32,
        next: u32,
    },
    #[error("{file}: declares {declared} rows but the label table has {expected}")]
    RowCount {
        file: String,
        declared: usize,
        expected: usize,
    },
    #[error("image ids file, line {line}: expected {expected:?}, found {found:?}")]
    ImageOrder {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("unknown image_id {image_id:?} at row {row}")]
    UnknownImage { image_id: String, row: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("need at least 2 train rows, found {0}")]
    Degenerate(usize),
    #[error("Gram matrix for {context} could not be factored even at lambda {lambda:e}")]
    Singular { context: String, lambda: f64 },
    #[error("dimension mismatch: probe has {expected} weights, features have {found} columns")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("results file: {0}")]
    Format(String),
    #[error("run stopped after committing {committed} of {total} cells")]
    Interrupted { committed: usize, total: usize },
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("anchor source {anchor:?} not in results; available sources: {}", available.join(", "))]
    MissingAnchor {
        anchor: String,
        available: Vec<String>,
    },
    #[error("layer {0} not present in results")]
    MissingLayer(u32),
    #[error("target {0:?} not present in results")]
    MissingTarget(String),
    #[error("no off-diagonal (source, target) pair has a defined layer value")]
    NoPairs,
    #[error("nothing to render: {0}")]
    Empty(String),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(
        "layer {layer_id}: {relevant} non-nuisance channels cannot hold a {latent}-dimensional task subspace"
    )]
    TooFewChannels {
        layer_id: u32,
        relevant: usize,
        latent: usize,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}
