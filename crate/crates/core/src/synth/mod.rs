//! Synthetic label tables, predictions and layered embeddings with known
//! cross-task structure.
//!
//! Each image draws a latent `z ~ N(0, I_k)`. Task `t` has loading `β_t`
//! and noise `σ_t`; its latent score is `β_tᵀz + σ_t·ε` (binary tasks keep
//! only the sign). The label noise never reaches the embeddings.
//!
//! Source `s` at layer `ℓ` exposes a k-dimensional view of `z` where the
//! direction `u_s = β_s/‖β_s‖` is kept with fidelity
//! `f = max(r(ℓ), p(ℓ)·q_s)` and every orthogonal direction with fidelity
//! `r(ℓ)`. Here `r` is the layer's relevance, `p` its specialization and
//! `q_s = ‖β_s‖²/(‖β_s‖²+σ_s²)` how learnable the source task is. A
//! direction with fidelity `f` is stored as `f·z_dir + √(1−f²)·noise`. The
//! view is padded with extra noise channels, rotated by a random orthogonal
//! matrix, and followed by independent nuisance channels.
//!
//! Because everything is jointly Gaussian, the best linear probe has a
//! closed-form population score; see [`SynthScenario::ceiling`].

mod presets;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{IngestError, SynthError};
use crate::ingest::{
    encode_f32le, write_image_ids, write_labels, write_predictions, write_variable_meta,
    EmbeddingManifest, LayerEntry, Predictions, SourceEntry, DTYPE_F32LE, FORMAT_VERSION,
};
use crate::model::{LabelTable, LayerEmbedding, TaskKind, TaskVariable};
use crate::rng::{label, CounterRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub loading: Vec<f64>,
    pub noise: f64,
    #[serde(default)]
    pub missing_rate: f64,
}

impl TaskSpec {
    fn signal(&self) -> f64 {
        self.loading.iter().map(|b| b * b).sum()
    }

    /// Fraction of latent-score variance explained by `z`.
    pub fn learnability(&self) -> f64 {
        let s = self.signal();
        if s == 0.0 {
            0.0
        } else {
            s / (s + self.noise * self.noise)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub layer_id: u32,
    #[serde(default)]
    pub layer_name: String,
    pub channels: usize,
    /// Fidelity of the shared latent representation, in `[0, 1]`.
    pub relevance: f64,
    /// Extra fidelity of the source's own task direction, in `[0, 1]`.
    #[serde(default)]
    pub specialization: f64,
    #[serde(default)]
    pub nuisance_dims: usize,
    /// Stores the layer as an `[h, w, channels]` tensor per image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScenario {
    pub name: String,
    pub n_patients: usize,
    #[serde(default = "one")]
    pub images_per_patient: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
    pub layers: Vec<LayerSpec>,
    /// Tasks that get source models; all tasks when absent.
    #[serde(default)]
    pub sources: Option<Vec<String>>,
    /// Prediction noise, in label standard deviations.
    #[serde(default = "half")]
    pub prediction_noise: f64,
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

/// Everything a scenario generates, held in memory. Embedding values are
/// already rounded to `f32`, so they equal what loading the files yields.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub labels: LabelTable,
    pub predictions: Predictions,
    pub embeddings: Vec<LayerEmbedding>,
    pub manifest: EmbeddingManifest,
    spatial_files: BTreeMap<(String, u32), Vec<f64>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGE_IDS_FILE: &str = "image_ids.txt";
pub const LABELS_FILE: &str = "labels.csv";
pub const VARIABLES_FILE: &str = "variables.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SCENARIO_FILE: &str = "scenario.json";

impl SynthScenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Scenario(m));
        if self.n_patients == 0 || self.images_per_patient == 0 {
            return bad("need at least one patient and one image per patient".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.tasks.is_empty() || self.layers.is_empty() {
            return bad("need at least one task and one layer".into());
        }
        let mut names = std::collections::HashSet::new();
        for t in &self.tasks {
            if !names.insert(t.name.as_str()) {
                return bad(format!("task {:?} listed twice", t.name));
            }
            if t.loading.len() != self.latent_dim {
                return bad(format!(
                    "task {:?}: loading has {} entries, latent_dim is {}",
                    t.name,
                    t.loading.len(),
                    self.latent_dim
                ));
            }
            if t.loading.iter().any(|b| !b.is_finite()) || !t.noise.is_finite() || t.noise < 0.0 {
                return bad(format!("task {:?}: loadings and noise must be finite, noise ≥ 0", t.name));
            }
            if !(0.0..1.0).contains(&t.missing_rate) {
                return bad(format!("task {:?}: missing_rate must lie in [0, 1)", t.name));
            }
        }
        if let Some(sources) = &self.sources {
            for s in sources {
                if !names.contains(s.as_str()) {
                    return bad(format!("source {s:?} is not a task"));
                }
            }
        }
        for pair in self.layers.windows(2) {
            if pair[1].layer_id <= pair[0].layer_id {
                return bad("layer ids must be strictly increasing".into());
            }
        }
        for l in &self.layers {
            for (what, v) in [("relevance", l.relevance), ("specialization", l.specialization)] {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("layer {}: {what} must lie in [0, 1]", l.layer_id));
                }
            }
            let relevant = l.channels.saturating_sub(l.nuisance_dims);
            if relevant < self.latent_dim {
                return Err(SynthError::TooFewChannels {
                    layer_id: l.layer_id,
                    relevant,
                    latent: self.latent_dim,
                });
            }
            if let Some([h, w]) = l.spatial {
                if h == 0 || w == 0 {
                    return bad(format!("layer {}: spatial dims must be at least 1", l.layer_id));
                }
            }
        }
        if !(self.prediction_noise >= 0.0) {
            return bad("prediction_noise must be ≥ 0".into());
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.n_patients * self.images_per_patient
    }

    pub fn source_names(&self) -> Vec<&str> {
        match &self.sources {
            Some(s) => s.iter().map(String::as_str).collect(),
            None => self.tasks.iter().map(|t| t.name.as_str()).collect(),
        }
    }

    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == name)
    }

    fn layer(&self, layer_id: u32) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    /// Fidelity of source `s`'s own direction at a layer.
    fn own_fidelity(&self, source: &TaskSpec, layer: &LayerSpec) -> f64 {
        layer
            .relevance
            .max(layer.specialization * source.learnability())
    }

    /// Population R² of the best linear predictor of target `t`'s latent
    /// score from source `s`'s embedding at `layer_id`.
    pub fn latent_r2(&self, source: &str, target: &str, layer_id: u32) -> Option<f64> {
        let s = self.task(source)?;
        let t = self.task(target)?;
        let layer = self.layer(layer_id)?;
        let r = layer.relevance;
        let f = self.own_fidelity(s, layer);
        let s_norm = s.signal().sqrt();
        let along = if s_norm > 0.0 {
            t.loading.iter().zip(&s.loading).map(|(a, b)| a * b).sum::<f64>() / s_norm
        } else {
            0.0
        };
        let total = t.signal();
        let explained = along * along * f * f + (total - along * along) * r * r;
        let var = total + t.noise * t.noise;
        Some(if var > 0.0 { explained / var } else { 0.0 })
    }

    /// Population score of the best linear probe: R² for continuous
    /// targets, AUC for binary ones. For a binary target thresholded at 0,
    /// a Gaussian score correlated `ρ` with the latent has
    /// `AUC = ½ + (2/π)·asin(ρ/√2)`.
    pub fn ceiling(&self, source: &str, target: &str, layer_id: u32) -> Option<f64> {
        let r2 = self.latent_r2(source, target, layer_id)?;
        Some(match self.task(target)?.kind {
            TaskKind::Continuous => r2,
            TaskKind::Binary => gaussian_threshold_auc(r2.sqrt()),
        })
    }

    /// Population Pearson correlation between two generated label columns.
    pub fn label_correlation(&self, a: &str, b: &str) -> Option<f64> {
        let ta = self.task(a)?;
        let tb = self.task(b)?;
        let cov: f64 = ta.loading.iter().zip(&tb.loading).map(|(x, y)| x * y).sum();
        let sd = |t: &TaskSpec| (t.signal() + t.noise * t.noise).sqrt();
        let rho = if a == b {
            1.0
        } else {
            cov / (sd(ta) * sd(tb))
        };
        use std::f64::consts::PI;
        Some(match (ta.kind, tb.kind) {
            (TaskKind::Continuous, TaskKind::Continuous) => rho,
            // Point-biserial correlation of a Gaussian with a median split.
            (TaskKind::Binary, TaskKind::Continuous) | (TaskKind::Continuous, TaskKind::Binary) => {
                rho * (2.0 / PI).sqrt()
            }
            _ if a == b => 1.0,
            // Phi coefficient of two median-split Gaussians.
            _ => 2.0 / PI * rho.asin(),
        })
    }

    /// Generates every label, prediction and embedding.
    pub fn generate(&self) -> Result<SynthData, SynthError> {
        self.validate()?;
        let n = self.n_images();
        let k = self.latent_dim;

        let image_ids: Vec<String> = (0..n).map(|i| format!("img{i:07}")).collect();
        let patient_ids: Vec<String> = (0..n)
            .map(|i| format!("pat{:07}", i / self.images_per_patient))
            .collect();

        let mut latent = Array2::<f64>::zeros((n, k));
        let mut rng = CounterRng::from_labels(self.seed, &[label("latent")]);
        latent.iter_mut().for_each(|v| *v = rng.normal());

        let mut columns = Vec::with_capacity(self.tasks.len());
        let mut full_labels = Vec::with_capacity(self.tasks.len());
        for task in &self.tasks {
            let mut noise = CounterRng::from_labels(self.seed, &[label("label"), label(&task.name)]);
            let mut missing = CounterRng::from_labels(self.seed, &[label("missing"), label(&task.name)]);
            let mut full = Vec::with_capacity(n);
            let mut column = Vec::with_capacity(n);
            for i in 0..n {
                let score: f64 = latent
                    .row(i)
                    .iter()
                    .zip(&task.loading)
                    .map(|(z, b)| z * b)
                    .sum::<f64>()
                    + task.noise * noise.normal();
                let y = match task.kind {
                    TaskKind::Continuous => score,
                    TaskKind::Binary => f64::from(u8::from(score > 0.0)),
                };
                full.push(y);
                let drop = task.missing_rate > 0.0 && missing.uniform() < task.missing_rate;
                column.push((!drop).then_some(y));
            }
            full_labels.push(full);
            columns.push(column);
        }
        let variables = self
            .tasks
            .iter()
            .map(|t| TaskVariable::new(&t.name, t.kind))
            .collect();
        let labels = LabelTable::new(image_ids, patient_ids, variables, columns)?;

        let mut predictions = Predictions::new();
        for source in self.source_names() {
            let idx = self.tasks.iter().position(|t| t.name == source).expect("validated");
            let task = &self.tasks[idx];
            let sd = match task.kind {
                TaskKind::Continuous => (task.signal() + task.noise * task.noise).sqrt(),
                TaskKind::Binary => 0.5,
            };
            let mut rng = CounterRng::from_labels(self.seed, &[label("prediction"), label(source)]);
            let values = full_labels[idx]
                .iter()
                .map(|y| Some(round_f32(y + self.prediction_noise * sd * rng.normal())))
                .collect();
            predictions.insert(source.to_string(), values);
        }

        let mut embeddings = Vec::new();
        let mut spatial_files = BTreeMap::new();
        let mut manifest_sources = Vec::new();
        for source in self.source_names() {
            let task = self.task(source).expect("validated");
            let mut entries = Vec::new();
            for layer in &self.layers {
                let (matrix, spatial) = self.layer_matrix(&latent, task, layer);
                let file = format!("embeddings/{}/layer_{:03}.f32", source, layer.layer_id);
                entries.push(LayerEntry {
                    layer_id: layer.layer_id,
                    layer_name: layer_name(layer),
                    file,
                    rows: n,
                    spatial: layer.spatial,
                    channels: layer.channels,
                    dtype: DTYPE_F32LE.to_string(),
                });
                if let Some(raw) = spatial {
                    spatial_files.insert((source.to_string(), layer.layer_id), raw);
                }
                embeddings.push(LayerEmbedding {
                    source_task: source.to_string(),
                    layer_id: layer.layer_id,
                    layer_name: layer_name(layer),
                    matrix,
                });
            }
            manifest_sources.push(SourceEntry {
                source_task: source.to_string(),
                layers: entries,
            });
        }
        let manifest = EmbeddingManifest {
            format_version: FORMAT_VERSION,
            dataset_name: self.name.clone(),
            image_ids_file: IMAGE_IDS_FILE.to_string(),
            notes: "synthetic; predictions are labels plus Gaussian noise".to_string(),
            sources: manifest_sources,
        };
        Ok(SynthData {
            labels,
            predictions,
            embeddings,
            manifest,
            spatial_files,
        })
    }

    /// Pooled matrix for one (source, layer), plus the raw spatial tensor
    /// when the layer is spatial.
    fn layer_matrix(
        &self,
        latent: &Array2<f64>,
        source: &TaskSpec,
        layer: &LayerSpec,
    ) -> (Array2<f64>, Option<Vec<f64>>) {
        let n = latent.nrows();
        let k = self.latent_dim;
        let relevant = layer.channels - layer.nuisance_dims;
        let stream = [label("embedding"), label(&source.name), u64::from(layer.layer_id)];
        let mut rng = CounterRng::from_labels(self.seed, &stream);
        let rotation = random_orthogonal(relevant, &mut rng);

        let r = layer.relevance;
        let f = self.own_fidelity(source, layer);
        let s_norm = source.signal().sqrt();
        let dir: Vec<f64> = if s_norm > 0.0 {
            source.loading.iter().map(|b| b / s_norm).collect()
        } else {
            vec![0.0; k]
        };
        let noise_r = (1.0 - r * r).max(0.0).sqrt();
        let noise_f = (1.0 - f * f).max(0.0).sqrt();

        let mut out = Array2::<f64>::zeros((n, layer.channels));
        let mut view = vec![0.0; relevant];
        let mut xi = vec![0.0; k];
        for i in 0..n {
            let z = latent.row(i);
            xi.iter_mut().for_each(|v| *v = rng.normal());
            let z_dir: f64 = z.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let xi_dir: f64 = xi.iter().zip(&dir).map(|(a, b)| a * b).sum();
            for j in 0..k {
                view[j] = r * z[j] + (f - r) * z_dir * dir[j] + noise_r * xi[j]
                    + (noise_f - noise_r) * xi_dir * dir[j];
            }
            for v in view.iter_mut().skip(k) {
                *v = rng.normal();
            }
            for c in 0..relevant {
                let row = rotation.row(c);
                out[[i, c]] = row.iter().zip(&view).map(|(a, b)| a * b).sum();
            }
            for c in relevant..layer.channels {
                out[[i, c]] = rng.normal();
            }
        }

        match layer.spatial {
            None => {
                out.mapv_inplace(round_f32);
                (out, None)
            }
            Some([h, w]) => {
                // Zero-mean jitter per position so the spatial mean is the
                // pooled value up to f32 rounding.
                let positions = h * w;
                let mut raw = Vec::with_capacity(n * positions * layer.channels);
                let mut jitter = vec![0.0; positions * layer.channels];
                for i in 0..n {
                    jitter.iter_mut().for_each(|v| *v = 0.25 * rng.normal());
                    for c in 0..layer.channels {
                        let mean = (0..positions)
                            .map(|p| jitter[p * layer.channels + c])
                            .sum::<f64>()
                            / positions as f64;
                        for p in 0..positions {
                            jitter[p * layer.channels + c] -= mean;
                        }
                    }
                    for p in 0..positions {
                        for c in 0..layer.channels {
                            raw.push(round_f32(out[[i, c]] + jitter[p * layer.channels + c]));
                        }
                    }
                }
                let tensor = ndarray::ArrayView4::from_shape((n, h, w, layer.channels), &raw)
                    .expect("sized above");
                (crate::ingest::pool_spatial(tensor), Some(raw))
            }
        }
    }
}

fn layer_name(layer: &LayerSpec) -> String {
    if layer.layer_name.is_empty() {
        format!("layer_{}", layer.layer_id)
    } else {
        layer.layer_name.clone()
    }
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

/// AUC of a Gaussian score correlated `rho` with a latent thresholded at 0.
pub fn gaussian_threshold_auc(rho: f64) -> f64 {
    0.5 + 2.0 / std::f64::consts::PI * (rho / std::f64::consts::SQRT_2).asin()
}

/// Orthogonal matrix from modified Gram–Schmidt on a Gaussian matrix.
fn random_orthogonal(dim: usize, rng: &mut CounterRng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((dim, dim));
    q.iter_mut().for_each(|v| *v = rng.normal());
    for i in 0..dim {
        for j in 0..i {
            let dot: f64 = (0..dim).map(|c| q[[i, c]] * q[[j, c]]).sum();
            for c in 0..dim {
                q[[i, c]] -= dot * q[[j, c]];
            }
        }
        let norm = (0..dim).map(|c| q[[i, c]] * q[[i, c]]).sum::<f64>().sqrt();
        for c in 0..dim {
            q[[i, c]] /= norm;
        }
    }
    q
}

impl SynthData {
    /// Writes the container, labels, variable meta, predictions and the
    /// scenario into `dir`.
    pub fn write(&self, dir: &Path, scenario: &SynthScenario) -> Result<(), SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Ingest(IngestError::Io { path, source })
        };
        let put = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io(parent))?;
            }
            fs::write(&path, bytes).map_err(io(&path))
        };
        put(MANIFEST_FILE, self.manifest.to_json().as_bytes())?;
        put(IMAGE_IDS_FILE, write_image_ids(self.labels.image_ids()).as_bytes())?;
        put(LABELS_FILE, write_labels(&self.labels).as_bytes())?;
        put(
            VARIABLES_FILE,
            write_variable_meta(self.labels.variables()).as_bytes(),
        )?;
        put(
            PREDICTIONS_FILE,
            write_predictions(&self.labels, &self.predictions).as_bytes(),
        )?;
        let mut scenario_json = serde_json::to_string_pretty(scenario).expect("scenario serializes");
        scenario_json.push('\n');
        put(SCENARIO_FILE, scenario_json.as_bytes())?;

        let entries = self
            .manifest
            .sources
            .iter()
            .flat_map(|s| s.layers.iter().map(move |l| (s.source_task.as_str(), l)));
        for ((source, entry), emb) in entries.zip(&self.embeddings) {
            let bytes = match self.spatial_files.get(&(source.to_string(), entry.layer_id)) {
                Some(raw) => encode_f32le(raw.iter().copied()),
                None => encode_f32le(emb.matrix.iter().copied()),
            };
            put(&entry.file, &bytes)?;
        }
        Ok(())
    }
}

/// Parses a scenario JSON document.
pub fn parse_scenario(json: &[u8]) -> Result<SynthScenario, SynthError> {
    let s: SynthScenario =
        serde_json::from_slice(json).map_err(|e| SynthError::Scenario(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

pub use presets::{preset, PRESET_NAMES};
