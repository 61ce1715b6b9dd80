//! Cross-task linear probe grids over pooled CNN embeddings.
//!
//! For every (source task, target task, layer) triple a closed-form linear
//! probe is fitted on the train split and scored on the test split (AUC for
//! binary targets, R² for continuous ones). One factored Gram matrix per
//! (source, layer) serves every target. Baseline probes on raw source
//! values, source-model predictions and uniform noise run through the same
//! path. The [`analysis`] module turns the results table into layer curves,
//! best-layer histograms, band tables and heatmaps.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod solver;
pub mod synth;

pub use error::{AnalysisError, GridError, IngestError, SolverError, SynthError};
pub use grid::{run_grid, run_grid_with, GridConfig, GridReport, Provenance, RunOptions};
pub use model::{
    LabelTable, LayerEmbedding, MetricKind, ProbeResult, ProbeSource, ProbeSpec, ProbeStatus,
    SourceKind, Split, SplitAssignment, TaskKind, TaskVariable,
};
