//! Domain types shared across ingest, solver, grid and analysis.
//!
//! Everything here is immutable once built. Missing labels are `None`,
//! never a sentinel value.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::IngestError;

/// Whether a variable is scored by AUC (binary) or R² (continuous).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Continuous,
}

impl TaskKind {
    pub fn metric(self) -> MetricKind {
        match self {
            TaskKind::Binary => MetricKind::Auc,
            TaskKind::Continuous => MetricKind::R2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Binary => "binary",
            TaskKind::Continuous => "continuous",
        }
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(TaskKind::Binary),
            "continuous" => Ok(TaskKind::Continuous),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskVariable {
    pub name: String,
    pub kind: TaskKind,
}

impl TaskVariable {
    pub fn new(name: impl Into<String>, kind: TaskKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Per-image values of every task variable, plus the patient grouping.
///
/// Values are stored column-major: one `Vec<Option<f64>>` per variable,
/// each parallel to `image_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    image_ids: Vec<String>,
    patient_ids: Vec<String>,
    variables: Vec<TaskVariable>,
    columns: Vec<Vec<Option<f64>>>,
    row_index: HashMap<String, usize>,
}

impl LabelTable {
    /// Builds a table, enforcing every validity rule.
    pub fn new(
        image_ids: Vec<String>,
        patient_ids: Vec<String>,
        variables: Vec<TaskVariable>,
        columns: Vec<Vec<Option<f64>>>,
    ) -> Result<Self, IngestError> {
        if image_ids.len() != patient_ids.len() {
            return Err(IngestError::Shape(format!(
                "{} image ids but {} patient ids",
                image_ids.len(),
                patient_ids.len()
            )));
        }
        if variables.len() != columns.len() {
            return Err(IngestError::Shape(format!(
                "{} variables but {} value columns",
                variables.len(),
                columns.len()
            )));
        }
        let mut row_index = HashMap::with_capacity(image_ids.len());
        for (row, id) in image_ids.iter().enumerate() {
            if row_index.insert(id.clone(), row).is_some() {
                return Err(IngestError::DuplicateImage {
                    image_id: id.clone(),
                    row: row + 1,
                });
            }
        }
        let mut seen = HashMap::new();
        for (var, column) in variables.iter().zip(&columns) {
            if seen.insert(var.name.as_str(), ()).is_some() {
                return Err(IngestError::DuplicateVariable(var.name.clone()));
            }
            if column.len() != image_ids.len() {
                return Err(IngestError::Shape(format!(
                    "column {} has {} values for {} images",
                    var.name,
                    column.len(),
                    image_ids.len()
                )));
            }
            for (row, value) in column.iter().enumerate() {
                let Some(v) = *value else { continue };
                if !v.is_finite() {
                    return Err(IngestError::InvalidValue {
                        row: row + 1,
                        column: var.name.clone(),
                        value: v.to_string(),
                        reason: "not finite".into(),
                    });
                }
                if var.kind == TaskKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(IngestError::InvalidValue {
                        row: row + 1,
                        column: var.name.clone(),
                        value: v.to_string(),
                        reason: "binary variables take only 0 or 1".into(),
                    });
                }
            }
            let present = column.iter().filter(|v| v.is_some()).count();
            if present < 2 {
                return Err(IngestError::TooFewValues {
                    column: var.name.clone(),
                    present,
                });
            }
        }
        Ok(Self {
            image_ids,
            patient_ids,
            variables,
            columns,
            row_index,
        })
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn variables(&self) -> &[TaskVariable] {
        &self.variables
    }

    pub fn variable(&self, name: &str) -> Option<&TaskVariable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn column_at(&self, index: usize) -> &[Option<f64>] {
        &self.columns[index]
    }

    pub fn row_of(&self, image_id: &str) -> Option<usize> {
        self.row_index.get(image_id).copied()
    }

    /// Number of absent cells across the whole table.
    pub fn missing_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|v| v.is_none()).count())
            .sum()
    }
}

/// Pooled activations for one (source task, layer). Rows follow the label
/// table's image order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEmbedding {
    pub source_task: String,
    pub layer_id: u32,
    pub layer_name: String,
    pub matrix: Array2<f64>,
}

impl LayerEmbedding {
    pub fn channels(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-image train/test assignment; all images of a patient share a side.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub assignment: Vec<Split>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn is_train(&self, row: usize) -> bool {
        self.assignment[row] == Split::Train
    }

    pub fn train_mask(&self) -> Vec<bool> {
        self.assignment.iter().map(|s| *s == Split::Train).collect()
    }

    pub fn test_mask(&self) -> Vec<bool> {
        self.assignment.iter().map(|s| *s == Split::Test).collect()
    }

    pub fn n_test(&self) -> usize {
        self.assignment.iter().filter(|s| **s == Split::Test).count()
    }
}

/// Where a probe's input features come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeSource {
    Embedding { source_task: String, layer_id: u32 },
    RawValue { source_task: String },
    Prediction { source_task: String },
    RandomUniform,
}

/// Name written in the `source` column for the random-uniform baseline.
pub const RANDOM_SOURCE_NAME: &str = "random_uniform";

impl ProbeSource {
    pub fn source_name(&self) -> &str {
        match self {
            ProbeSource::Embedding { source_task, .. }
            | ProbeSource::RawValue { source_task }
            | ProbeSource::Prediction { source_task } => source_task,
            ProbeSource::RandomUniform => RANDOM_SOURCE_NAME,
        }
    }

    pub fn kind(&self) -> SourceKind {
        match self {
            ProbeSource::Embedding { .. } => SourceKind::Embedding,
            ProbeSource::RawValue { .. } => SourceKind::Raw,
            ProbeSource::Prediction { .. } => SourceKind::Prediction,
            ProbeSource::RandomUniform => SourceKind::Random,
        }
    }

    pub fn layer_id(&self) -> Option<u32> {
        match self {
            ProbeSource::Embedding { layer_id, .. } => Some(*layer_id),
            _ => None,
        }
    }
}

/// The `source_kind` column of results.csv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Embedding,
    Raw,
    Prediction,
    Random,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Embedding => "embedding",
            SourceKind::Raw => "raw",
            SourceKind::Prediction => "prediction",
            SourceKind::Random => "random",
        }
    }
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "embedding" => Ok(SourceKind::Embedding),
            "raw" => Ok(SourceKind::Raw),
            "prediction" => Ok(SourceKind::Prediction),
            "random" => Ok(SourceKind::Random),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProbeSpec {
    pub source: ProbeSource,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Auc,
    R2,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Auc => "auc",
            MetricKind::R2 => "r2",
        }
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auc" => Ok(MetricKind::Auc),
            "r2" => Ok(MetricKind::R2),
            other => Err(other.to_string()),
        }
    }
}

/// Why a probe has (or lacks) a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeStatus {
    Ok,
    /// Fewer than two usable train rows.
    InsufficientTrain,
    /// Fewer than two usable test rows.
    InsufficientTest,
    /// Test rows hold a single class, so AUC is undefined.
    SingleClass,
    /// Test truths have zero variance, so R² is undefined.
    ZeroVariance,
    /// Every ridge retry failed to factor the Gram matrix.
    Singular,
    /// A raw-value baseline whose source is not a label variable.
    SourceNotVariable,
}

impl ProbeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeStatus::Ok => "ok",
            ProbeStatus::InsufficientTrain => "insufficient_train",
            ProbeStatus::InsufficientTest => "insufficient_test",
            ProbeStatus::SingleClass => "single_class",
            ProbeStatus::ZeroVariance => "zero_variance",
            ProbeStatus::Singular => "singular",
            ProbeStatus::SourceNotVariable => "source_not_variable",
        }
    }
}

impl FromStr for ProbeStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ok" => ProbeStatus::Ok,
            "insufficient_train" => ProbeStatus::InsufficientTrain,
            "insufficient_test" => ProbeStatus::InsufficientTest,
            "single_class" => ProbeStatus::SingleClass,
            "zero_variance" => ProbeStatus::ZeroVariance,
            "singular" => ProbeStatus::Singular,
            "source_not_variable" => ProbeStatus::SourceNotVariable,
            other => return Err(other.to_string()),
        })
    }
}

impl fmt::Display for ProbeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One scored probe. `value` is `None` exactly when `status` is not `Ok`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub spec: ProbeSpec,
    pub metric_kind: MetricKind,
    pub value: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub lambda: f64,
    pub status: ProbeStatus,
}
