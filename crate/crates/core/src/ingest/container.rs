//! The embedding container: a JSON manifest, a newline-delimited image ids
//! file, and one headerless little-endian `f32` row-major file per layer.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pool_spatial;
use crate::error::IngestError;
use crate::model::{LabelTable, LayerEmbedding};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";

fn default_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub dataset_name: String,
    pub image_ids_file: String,
    /// Free text, e.g. how the prediction column was produced.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
    pub sources: Vec<SourceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub source_task: String,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer_id: u32,
    pub layer_name: String,
    pub file: String,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<[usize; 2]>,
    pub channels: usize,
    pub dtype: String,
}

impl LayerEntry {
    /// Floats per row as stored on disk.
    pub fn row_width(&self) -> usize {
        match self.spatial {
            Some([h, w]) => h * w * self.channels,
            None => self.channels,
        }
    }

    pub fn expected_bytes(&self) -> u64 {
        self.rows as u64 * self.row_width() as u64 * 4
    }
}

impl EmbeddingManifest {
    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.format_version != FORMAT_VERSION {
            return Err(IngestError::UnsupportedVersion(self.format_version));
        }
        let mut sources = HashSet::new();
        for source in &self.sources {
            if !sources.insert(source.source_task.as_str()) {
                return Err(IngestError::Invalid(format!(
                    "source {:?} listed twice",
                    source.source_task
                )));
            }
            if source.layers.is_empty() {
                return Err(IngestError::Invalid(format!(
                    "source {:?} has no layers",
                    source.source_task
                )));
            }
            for pair in source.layers.windows(2) {
                if pair[1].layer_id <= pair[0].layer_id {
                    return Err(IngestError::LayerOrder {
                        source_task: source.source_task.clone(),
                        prev: pair[0].layer_id,
                        next: pair[1].layer_id,
                    });
                }
            }
            for layer in &source.layers {
                if layer.dtype != DTYPE_F32LE {
                    return Err(IngestError::UnsupportedDtype {
                        file: layer.file.clone(),
                        dtype: layer.dtype.clone(),
                    });
                }
                if layer.channels == 0 {
                    return Err(IngestError::Invalid(format!(
                        "{}: channels must be at least 1",
                        layer.file
                    )));
                }
                if let Some([h, w]) = layer.spatial {
                    if h == 0 || w == 0 {
                        return Err(IngestError::Invalid(format!(
                            "{}: spatial dims must be at least 1x1",
                            layer.file
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn layer_count(&self) -> usize {
        self.sources.iter().map(|s| s.layers.len()).sum()
    }
}

/// Reads and structurally validates `manifest.json`.
pub fn load_manifest(path: &Path) -> Result<EmbeddingManifest, IngestError> {
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: EmbeddingManifest =
        serde_json::from_slice(&bytes).map_err(|e| IngestError::Json(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Reads a newline-delimited ids file. A final newline is allowed; blank
/// lines are not.
pub fn read_image_ids(path: &Path) -> Result<Vec<String>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            if line.is_empty() {
                Err(IngestError::Invalid(format!(
                    "{}: blank line {}",
                    path.display(),
                    i + 1
                )))
            } else {
                Ok(line.to_string())
            }
        })
        .collect()
}

pub fn write_image_ids(ids: &[String]) -> String {
    let mut s = ids.join("\n");
    s.push('\n');
    s
}

/// Encodes values as little-endian `f32`.
pub fn encode_f32le(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values
        .into_iter()
        .flat_map(|v| (v as f32).to_le_bytes())
        .collect()
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_image_order(base: &Path, manifest: &EmbeddingManifest, labels: &LabelTable) -> Result<(), IngestError> {
    let ids = read_image_ids(&resolve(base, &manifest.image_ids_file))?;
    if ids.len() != labels.n_images() {
        return Err(IngestError::Shape(format!(
            "image ids file lists {} images, label table has {}",
            ids.len(),
            labels.n_images()
        )));
    }
    for (i, (found, expected)) in ids.iter().zip(labels.image_ids()).enumerate() {
        if found != expected {
            return Err(IngestError::ImageOrder {
                line: i + 1,
                expected: expected.clone(),
                found: found.clone(),
            });
        }
    }
    Ok(())
}

fn load_layer(
    base: &Path,
    source_task: &str,
    entry: &LayerEntry,
    n_images: usize,
) -> Result<LayerEmbedding, IngestError> {
    if entry.rows != n_images {
        return Err(IngestError::RowCount {
            file: entry.file.clone(),
            declared: entry.rows,
            expected: n_images,
        });
    }
    let path = resolve(base, &entry.file);
    let bytes = fs::read(&path).map_err(|source| IngestError::Io {
        path: path.clone(),
        source,
    })?;
    let expected = entry.expected_bytes();
    if bytes.len() as u64 != expected {
        return Err(IngestError::ByteLength {
            file: entry.file.clone(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let width = entry.row_width();
    let mut values = Vec::with_capacity(entry.rows * width);
    for (idx, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(IngestError::NonFinite {
                file: entry.file.clone(),
                row: idx / width,
                col: idx % width,
            });
        }
        values.push(f64::from(v));
    }
    let matrix = match entry.spatial {
        None => Array2::from_shape_vec((entry.rows, entry.channels), values)
            .expect("length checked above"),
        Some([h, w]) => {
            let tensor = ArrayView4::from_shape((entry.rows, h, w, entry.channels), &values)
                .expect("length checked above");
            pool_spatial(tensor)
        }
    };
    Ok(LayerEmbedding {
        source_task: source_task.to_string(),
        layer_id: entry.layer_id,
        layer_name: entry.layer_name.clone(),
        matrix,
    })
}

fn entries(manifest: &EmbeddingManifest) -> Vec<(&str, &LayerEntry)> {
    manifest
        .sources
        .iter()
        .flat_map(|s| s.layers.iter().map(move |l| (s.source_task.as_str(), l)))
        .collect()
}

/// Loads every layer in manifest order, pooling spatial entries.
///
/// `base` is the directory relative paths in the manifest resolve against.
/// Files are read in parallel; the first error in manifest order wins.
pub fn load_embeddings(
    manifest: &EmbeddingManifest,
    base: &Path,
    labels: &LabelTable,
) -> Result<Vec<LayerEmbedding>, IngestError> {
    manifest.validate()?;
    check_image_order(base, manifest, labels)?;
    let n = labels.n_images();
    entries(manifest)
        .into_par_iter()
        .map(|(source, entry)| load_layer(base, source, entry, n))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Like [`load_embeddings`] but reports every problem instead of stopping
/// at the first.
pub fn check_embeddings(
    manifest: &EmbeddingManifest,
    base: &Path,
    labels: &LabelTable,
) -> Vec<IngestError> {
    if let Err(e) = manifest.validate() {
        return vec![e];
    }
    let mut errors = Vec::new();
    if let Err(e) = check_image_order(base, manifest, labels) {
        errors.push(e);
    }
    let n = labels.n_images();
    errors.extend(
        entries(manifest)
            .into_par_iter()
            .map(|(source, entry)| load_layer(base, source, entry, n).err())
            .collect::<Vec<_>>()
            .into_iter()
            .flatten(),
    );
    errors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TaskKind, TaskVariable};

    fn labels(n: usize) -> LabelTable {
        let ids: Vec<String> = (0..n).map(|i| format!("img{i}")).collect();
        LabelTable::new(
            ids.clone(),
            ids,
            vec![TaskVariable::new("y", TaskKind::Continuous)],
            vec![(0..n).map(|i| Some(i as f64)).collect()],
        )
        .unwrap()
    }

    fn entry(rows: usize, channels: usize, spatial: Option<[usize; 2]>) -> LayerEntry {
        LayerEntry {
            layer_id: 0,
            layer_name: "conv".into(),
            file: "l0.f32".into(),
            rows,
            spatial,
            channels,
            dtype: DTYPE_F32LE.into(),
        }
    }

    fn setup(dir: &Path, n: usize, e: LayerEntry, data: &[u8]) -> EmbeddingManifest {
        let table = labels(n);
        fs::write(dir.join("ids.txt"), write_image_ids(table.image_ids())).unwrap();
        fs::write(dir.join(&e.file), data).unwrap();
        EmbeddingManifest {
            format_version: 1,
            dataset_name: "t".into(),
            image_ids_file: "ids.txt".into(),
            notes: String::new(),
            sources: vec![SourceEntry {
                source_task: "y".into(),
                layers: vec![e],
            }],
        }
    }

    #[test]
    fn loads_four_by_three() {
        let dir = tempfile::tempdir().unwrap();
        let data = encode_f32le((0..12).map(f64::from));
        assert_eq!(data.len(), 48);
        let m = setup(dir.path(), 4, entry(4, 3, None), &data);
        let out = load_embeddings(&m, dir.path(), &labels(4)).unwrap();
        assert_eq!(out[0].matrix.dim(), (4, 3));
        assert_eq!(out[0].matrix[[3, 2]], 11.0);
    }

    #[test]
    fn short_file_reports_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let data = encode_f32le((0..11).map(f64::from));
        let m = setup(dir.path(), 4, entry(4, 3, None), &data);
        let err = load_embeddings(&m, dir.path(), &labels(4)).unwrap_err();
        assert!(err.to_string().contains("expected 48, found 44"), "{err}");
    }

    #[test]
    fn spatial_entry_is_pooled() {
        let dir = tempfile::tempdir().unwrap();
        let data = encode_f32le((0..10 * 2 * 2 * 5).map(|i| f64::from(i % 7)));
        let m = setup(dir.path(), 10, entry(10, 5, Some([2, 2])), &data);
        let out = load_embeddings(&m, dir.path(), &labels(10)).unwrap();
        assert_eq!(out[0].matrix.dim(), (10, 5));
        assert_eq!(out[0].channels(), 5);
    }

    #[test]
    fn non_finite_located() {
        let dir = tempfile::tempdir().unwrap();
        let mut vals: Vec<f64> = (0..12).map(f64::from).collect();
        vals[7] = f64::NAN;
        let m = setup(dir.path(), 4, entry(4, 3, None), &encode_f32le(vals));
        match load_embeddings(&m, dir.path(), &labels(4)) {
            Err(IngestError::NonFinite { row, col, .. }) => assert_eq!((row, col), (2, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_non_increasing_layers() {
        let mut m = setup(
            tempfile::tempdir().unwrap().path(),
            4,
            entry(4, 3, None),
            &[],
        );
        let dup = m.sources[0].layers[0].clone();
        m.sources[0].layers.push(dup);
        assert!(matches!(m.validate(), Err(IngestError::LayerOrder { .. })));
    }

    #[test]
    fn rejects_other_dtype() {
        let mut e = entry(4, 3, None);
        e.dtype = "f16".into();
        let m = setup(tempfile::tempdir().unwrap().path(), 4, e, &[]);
        assert!(matches!(m.validate(), Err(IngestError::UnsupportedDtype { .. })));
    }
}
