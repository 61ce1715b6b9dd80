//! File formats and preprocessing: label/variable/prediction CSVs, the
//! float32 embedding container, spatial pooling, and patient-grouped splits.

mod container;
mod labels;
mod pool;
mod predictions;
mod split;

pub use container::{
    check_embeddings, encode_f32le, load_embeddings, load_manifest, read_image_ids,
    write_image_ids, EmbeddingManifest, LayerEntry, SourceEntry, DTYPE_F32LE, FORMAT_VERSION,
};
pub use labels::{
    load_labels, parse_variable_meta, write_labels, write_variable_meta,
};
pub use pool::pool_spatial;
pub use predictions::{load_predictions, write_predictions, Predictions};
pub use split::{assign_split, split_hash};

/// Formats a value the way every CSV writer in this crate does: the
/// shortest decimal string that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn parse_cell(
    cell: &str,
    row: usize,
    column: &str,
) -> Result<Option<f64>, crate::error::IngestError> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| crate::error::IngestError::InvalidValue {
            row,
            column: column.to_string(),
            value: cell.to_string(),
            reason: "not a number".into(),
        })?;
    if !v.is_finite() {
        return Err(crate::error::IngestError::InvalidValue {
            row,
            column: column.to_string(),
            value: cell.to_string(),
            reason: "not finite".into(),
        });
    }
    Ok(Some(v))
}
