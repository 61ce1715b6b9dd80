use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use super::{format_value, parse_cell};
use crate::error::IngestError;
use crate::model::LabelTable;

/// Per-source scalar model outputs, aligned to the label table's rows.
pub type Predictions = BTreeMap<String, Vec<Option<f64>>>;

/// Reads a predictions CSV (`image_id,<source_task...>`) and realigns it to
/// `labels` by image id. Images absent from the CSV get missing values.
pub fn load_predictions<R: Read>(
    csv: R,
    labels: &LabelTable,
) -> Result<Predictions, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv);
    let header = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();
    if header.is_empty() || &header[0] != "image_id" {
        return Err(IngestError::Header(
            "predictions CSV must start with image_id".into(),
        ));
    }
    let sources: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut unique = HashSet::new();
    for s in &sources {
        if !unique.insert(s.as_str()) {
            return Err(IngestError::DuplicateVariable(s.clone()));
        }
    }
    let mut columns = vec![vec![None; labels.n_images()]; sources.len()];
    let mut seen = vec![false; labels.n_images()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        if record.len() != header.len() {
            return Err(IngestError::Csv(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let image_id = &record[0];
        let target_row = labels
            .row_of(image_id)
            .ok_or_else(|| IngestError::UnknownImage {
                image_id: image_id.to_string(),
                row,
            })?;
        if std::mem::replace(&mut seen[target_row], true) {
            return Err(IngestError::DuplicateImage {
                image_id: image_id.to_string(),
                row,
            });
        }
        for (j, source) in sources.iter().enumerate() {
            columns[j][target_row] = parse_cell(&record[j + 1], row, source)?;
        }
    }
    Ok(sources.into_iter().zip(columns).collect())
}

/// Writes predictions in label-table row order, sources in map order.
pub fn write_predictions(labels: &LabelTable, predictions: &Predictions) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["image_id".to_string()];
    header.extend(predictions.keys().cloned());
    writer.write_record(&header).expect("in-memory write");
    for (row, id) in labels.image_ids().iter().enumerate() {
        let mut record = vec![id.clone()];
        record.extend(
            predictions
                .values()
                .map(|col| col[row].map(format_value).unwrap_or_default()),
        );
        writer.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf8")
}
