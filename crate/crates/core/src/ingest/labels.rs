use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{format_value, parse_cell};
use crate::error::IngestError;
use crate::model::{LabelTable, TaskKind, TaskVariable};

#[derive(Deserialize)]
struct RawMeta {
    name: String,
    kind: String,
}

#[derive(Serialize)]
struct MetaOut<'a> {
    name: &'a str,
    kind: &'a str,
}

/// Parses the variable-meta JSON: `[{"name": ..., "kind": "binary"|"continuous"}]`.
pub fn parse_variable_meta(json: &[u8]) -> Result<Vec<TaskVariable>, IngestError> {
    let raw: Vec<RawMeta> =
        serde_json::from_slice(json).map_err(|e| IngestError::Json(e.to_string()))?;
    let mut seen = HashMap::new();
    raw.into_iter()
        .map(|m| {
            let kind = m.kind.parse::<TaskKind>().map_err(|kind| IngestError::UnknownKind {
                column: m.name.clone(),
                kind,
            })?;
            if seen.insert(m.name.clone(), ()).is_some() {
                return Err(IngestError::DuplicateVariable(m.name));
            }
            Ok(TaskVariable::new(m.name, kind))
        })
        .collect()
}

pub fn write_variable_meta(variables: &[TaskVariable]) -> String {
    let out: Vec<MetaOut<'_>> = variables
        .iter()
        .map(|v| MetaOut {
            name: &v.name,
            kind: v.kind.as_str(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&out).expect("meta serializes");
    s.push('\n');
    s
}

/// Reads a labels CSV with header `image_id,patient_id,<var...>`.
///
/// Empty cells are missing values. Every CSV variable must be declared in
/// `meta`, and every declared variable must have a column.
pub fn load_labels<R: Read>(csv: R, meta: &[TaskVariable]) -> Result<LabelTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv);
    let header = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "image_id" || &header[1] != "patient_id" {
        return Err(IngestError::Header(
            "labels CSV must start with image_id,patient_id".into(),
        ));
    }
    let kinds: HashMap<&str, TaskKind> = meta.iter().map(|v| (v.name.as_str(), v.kind)).collect();
    let mut variables = Vec::with_capacity(header.len() - 2);
    for name in header.iter().skip(2) {
        let kind = kinds
            .get(name)
            .copied()
            .ok_or_else(|| IngestError::UndeclaredVariable {
                column: name.to_string(),
            })?;
        variables.push(TaskVariable::new(name, kind));
    }
    for declared in meta {
        if !variables.iter().any(|v| v.name == declared.name) {
            return Err(IngestError::MissingColumn {
                name: declared.name.clone(),
            });
        }
    }

    let mut image_ids = Vec::new();
    let mut patient_ids = Vec::new();
    let mut columns = vec![Vec::new(); variables.len()];
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
        image_ids.push(record[0].to_string());
        patient_ids.push(record[1].to_string());
        for (j, var) in variables.iter().enumerate() {
            columns[j].push(parse_cell(&record[j + 2], row, &var.name)?);
        }
    }
    LabelTable::new(image_ids, patient_ids, variables, columns)
}

/// Serializes a table in the exact layout `load_labels` reads.
pub fn write_labels(table: &LabelTable) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["image_id".to_string(), "patient_id".to_string()];
    header.extend(table.variables().iter().map(|v| v.name.clone()));
    writer.write_record(&header).expect("in-memory write");
    let n_vars = table.variables().len();
    for row in 0..table.n_images() {
        let mut record = Vec::with_capacity(n_vars + 2);
        record.push(table.image_ids()[row].clone());
        record.push(table.patient_ids()[row].clone());
        for j in 0..n_vars {
            record.push(table.column_at(j)[row].map(format_value).unwrap_or_default());
        }
        writer.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Vec<TaskVariable> {
        vec![
            TaskVariable::new("sex", TaskKind::Binary),
            TaskVariable::new("age", TaskKind::Continuous),
        ]
    }

    #[test]
    fn empty_cell_is_missing() {
        let csv = "image_id,patient_id,sex,age\na,p1,0,61.5\nb,p1,1,\nc,p2,1,40\n";
        let table = load_labels(csv.as_bytes(), &meta()).unwrap();
        assert_eq!(table.missing_count(), 1);
        assert_eq!(table.column("age").unwrap()[1], None);
        assert_eq!(table.column("age").unwrap()[0], Some(61.5));
    }

    #[test]
    fn binary_half_is_rejected_with_cell() {
        let csv = "image_id,patient_id,sex,age\na,p1,0,1\nb,p2,0.5,2\nc,p3,1,3\n";
        let err = load_labels(csv.as_bytes(), &meta()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("\"sex\""), "{msg}");
    }

    #[test]
    fn duplicate_image_rejected() {
        let csv = "image_id,patient_id,sex,age\na,p1,0,1\na,p2,1,2\n";
        assert!(matches!(
            load_labels(csv.as_bytes(), &meta()),
            Err(IngestError::DuplicateImage { .. })
        ));
    }

    #[test]
    fn undeclared_column_rejected() {
        let csv = "image_id,patient_id,sex,age,bmi\na,p1,0,1,2\nb,p2,1,2,3\n";
        match load_labels(csv.as_bytes(), &meta()) {
            Err(IngestError::UndeclaredVariable { column }) => assert_eq!(column, "bmi"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_kind_names_column() {
        let err = parse_variable_meta(br#"[{"name":"grade","kind":"ordinal"}]"#).unwrap_err();
        assert!(err.to_string().contains("\"grade\""));
    }

    #[test]
    fn round_trips_bytes() {
        let csv = "image_id,patient_id,sex,age\na,p1,0,61.5\nb,p1,1,\n\"c,x\",p2,1,-0.125\n";
        let table = load_labels(csv.as_bytes(), &meta()).unwrap();
        assert_eq!(write_labels(&table), csv);
        let meta_json = write_variable_meta(table.variables());
        assert_eq!(parse_variable_meta(meta_json.as_bytes()).unwrap(), meta());
    }
}
