//! Enumerates and runs every probe: one cell per (source, layer) over the
//! pooled embeddings, plus raw-value, prediction and uniform-noise
//! baselines.
//!
//! Cells are the unit of parallelism. Inside a cell, targets run in
//! declared order, and the final table is sorted, so output bytes do not
//! depend on the worker count.

mod checkpoint;
mod config;
mod results;

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

pub use config::{sha256_hex, GridConfig, Provenance, DEFAULT_ANCHOR_SOURCE};
pub use results::{format_rows, parse_results, parse_rows, result_order, write_results, RESULTS_HEADER};

use crate::error::{GridError, SolverError};
use crate::ingest::{assign_split, write_labels, write_predictions, Predictions};
use crate::metrics::{auc, r_squared};
use crate::model::{
    LabelTable, LayerEmbedding, MetricKind, ProbeResult, ProbeSource, ProbeSpec, ProbeStatus,
    SplitAssignment, TaskKind, TaskVariable,
};
use crate::rng::{label, CounterRng};
use crate::solver::{
    build_gram_with, fit_targets, predict, LinearProbe, RidgeSchedule, TargetColumn,
};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    /// Write-ahead file; completed cells found there are skipped.
    pub checkpoint: Option<PathBuf>,
    /// Stop with [`GridError::Interrupted`] after committing this many new
    /// cells.
    pub max_cells: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            checkpoint: None,
            max_cells: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub results: Vec<ProbeResult>,
    pub provenance: Provenance,
}

impl GridReport {
    pub fn to_csv(&self) -> String {
        write_results(&self.results)
    }
}

/// Row counts the grid must produce for a given plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowCounts {
    pub embedding: usize,
    pub raw: usize,
    pub prediction: usize,
    pub random: usize,
}

impl RowCounts {
    pub fn total(&self) -> usize {
        self.embedding + self.raw + self.prediction + self.random
    }
}

/// Digest of in-memory embeddings, for runs that do not start from files.
pub fn digest_embeddings(embeddings: &[LayerEmbedding]) -> String {
    let mut bytes = Vec::new();
    for e in embeddings {
        bytes.extend_from_slice(e.source_task.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&e.layer_id.to_le_bytes());
        bytes.extend_from_slice(&(e.matrix.nrows() as u64).to_le_bytes());
        bytes.extend_from_slice(&(e.matrix.ncols() as u64).to_le_bytes());
        for v in e.matrix.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

impl Provenance {
    /// Digests the canonical serialization of each input, so a run from
    /// files and a run from the same data in memory share an identity.
    pub fn from_inputs(
        config: GridConfig,
        embeddings: &[LayerEmbedding],
        labels: &LabelTable,
        predictions: &Predictions,
    ) -> Self {
        Self::new(
            config,
            digest_embeddings(embeddings),
            sha256_hex(write_labels(labels).as_bytes()),
            sha256_hex(write_predictions(labels, predictions).as_bytes()),
        )
    }
}

/// Runs the whole grid on one worker without a checkpoint.
pub fn run_grid(
    embeddings: &[LayerEmbedding],
    labels: &LabelTable,
    predictions: &Predictions,
    config: &GridConfig,
) -> Result<GridReport, GridError> {
    let provenance = Provenance::from_inputs(config.clone(), embeddings, labels, predictions);
    run_grid_with(embeddings, labels, predictions, &provenance, &RunOptions::default())
}

enum Cell<'a> {
    Embedding(&'a LayerEmbedding),
    Raw(&'a str),
    Prediction(&'a str),
    Random,
}

impl Cell<'_> {
    fn key(&self) -> String {
        match self {
            Cell::Embedding(e) => format!("embedding\t{}\t{}", e.source_task, e.layer_id),
            Cell::Raw(s) => format!("raw\t{s}"),
            Cell::Prediction(s) => format!("prediction\t{s}"),
            Cell::Random => "random".to_string(),
        }
    }
}

/// Validated selection of what to run.
pub struct GridPlan<'a> {
    labels: &'a LabelTable,
    predictions: &'a Predictions,
    config: &'a GridConfig,
    sources: Vec<&'a str>,
    layers: Vec<&'a LayerEmbedding>,
    targets: Vec<&'a TaskVariable>,
    split: SplitAssignment,
    train_mask: Vec<bool>,
}

impl<'a> GridPlan<'a> {
    pub fn new(
        embeddings: &'a [LayerEmbedding],
        labels: &'a LabelTable,
        predictions: &'a Predictions,
        config: &'a GridConfig,
    ) -> Result<Self, GridError> {
        let mut all_sources: Vec<&str> = Vec::new();
        for e in embeddings {
            if !all_sources.contains(&e.source_task.as_str()) {
                all_sources.push(&e.source_task);
            }
            if e.matrix.nrows() != labels.n_images() {
                return Err(GridError::Config(format!(
                    "source {} layer {} has {} rows, label table has {}",
                    e.source_task,
                    e.layer_id,
                    e.matrix.nrows(),
                    labels.n_images()
                )));
            }
        }
        if let Some(filter) = &config.sources {
            for s in filter {
                if !all_sources.contains(&s.as_str()) {
                    return Err(GridError::Config(format!(
                        "unknown source {s:?}; available: {}",
                        all_sources.join(", ")
                    )));
                }
            }
        }
        if let Some(filter) = &config.targets {
            for t in filter {
                if labels.variable(t).is_none() {
                    return Err(GridError::Config(format!("unknown target {t:?}")));
                }
            }
        }
        if let Some(filter) = &config.layers {
            let known: BTreeSet<u32> = embeddings.iter().map(|e| e.layer_id).collect();
            for l in filter {
                if !known.contains(l) {
                    return Err(GridError::Config(format!("unknown layer {l}")));
                }
            }
        }
        let keep_source =
            |s: &str| config.sources.as_ref().is_none_or(|f| f.iter().any(|x| x == s));
        let sources: Vec<&str> = all_sources.into_iter().filter(|s| keep_source(s)).collect();
        let layers = embeddings
            .iter()
            .filter(|e| keep_source(&e.source_task))
            .filter(|e| config.layers.as_ref().is_none_or(|f| f.contains(&e.layer_id)))
            .collect();
        let targets = labels
            .variables()
            .iter()
            .filter(|v| config.targets.as_ref().is_none_or(|f| f.contains(&v.name)))
            .collect();
        let split = assign_split(labels, config.test_fraction, config.split_seed)
            .map_err(|e| GridError::Config(e.to_string()))?;
        let train_mask = split.train_mask();
        Ok(Self {
            labels,
            predictions,
            config,
            sources,
            layers,
            targets,
            split,
            train_mask,
        })
    }

    pub fn split(&self) -> &SplitAssignment {
        &self.split
    }

    pub fn row_counts(&self) -> RowCounts {
        let t = self.targets.len();
        RowCounts {
            embedding: self.layers.len() * t,
            raw: self.sources.len() * t,
            prediction: self
                .sources
                .iter()
                .filter(|s| self.predictions.contains_key(**s))
                .count()
                * t,
            random: t,
        }
    }

    fn cells(&self) -> Vec<Cell<'a>> {
        let mut cells: Vec<Cell<'a>> = self.layers.iter().map(|e| Cell::Embedding(e)).collect();
        for s in &self.sources {
            cells.push(Cell::Raw(s));
            if self.predictions.contains_key(*s) {
                cells.push(Cell::Prediction(s));
            }
        }
        cells.push(Cell::Random);
        cells
    }

    fn run_cell(&self, cell: &Cell<'_>) -> Vec<ProbeResult> {
        match cell {
            Cell::Embedding(e) => self.embedding_cell(e),
            Cell::Raw(s) => match self.labels.column(s) {
                Some(col) => self.scalar_cell(
                    ProbeSource::RawValue {
                        source_task: s.to_string(),
                    },
                    col,
                ),
                None => self
                    .targets
                    .iter()
                    .map(|t| ProbeResult {
                        spec: ProbeSpec {
                            source: ProbeSource::RawValue {
                                source_task: s.to_string(),
                            },
                            target: t.name.clone(),
                        },
                        metric_kind: t.kind.metric(),
                        value: None,
                        n_train: 0,
                        n_test: 0,
                        lambda: 0.0,
                        status: ProbeStatus::SourceNotVariable,
                    })
                    .collect(),
            },
            Cell::Prediction(s) => self.scalar_cell(
                ProbeSource::Prediction {
                    source_task: s.to_string(),
                },
                &self.predictions[*s],
            ),
            Cell::Random => {
                let feature = random_feature(self.labels, self.config.random_seed);
                self.scalar_cell(ProbeSource::RandomUniform, &feature)
            }
        }
    }

    fn column(&self, target: &TaskVariable) -> &'a [Option<f64>] {
        self.labels.column(&target.name).expect("target validated")
    }

    fn embedding_cell(&self, emb: &LayerEmbedding) -> Vec<ProbeResult> {
        let x = emb.matrix.view();
        let context = format!("source {} layer {}", emb.source_task, emb.layer_id);
        let source = ProbeSource::Embedding {
            source_task: emb.source_task.clone(),
            layer_id: emb.layer_id,
        };
        let shared = build_gram_with(x, &self.train_mask, &self.config.ridge, &context);

        // Targets fitted against the shared factor, by index.
        let batch: Vec<usize> = (0..self.targets.len())
            .filter(|&i| {
                !self.config.exact_masks
                    || self
                        .column(self.targets[i])
                        .iter()
                        .zip(&self.train_mask)
                        .all(|(v, &t)| !t || v.is_some())
            })
            .collect();
        let mut fits: Vec<Option<Result<LinearProbe, SolverError>>> =
            vec![None; self.targets.len()];
        match &shared {
            Ok(cache) => {
                let columns: Vec<TargetColumn<'_>> = batch
                    .iter()
                    .map(|&i| TargetColumn {
                        name: &self.targets[i].name,
                        values: self.column(self.targets[i]),
                    })
                    .collect();
                for (&i, fit) in batch.iter().zip(fit_targets(cache, x, &columns)) {
                    fits[i] = Some(fit);
                }
            }
            Err(e) => {
                for &i in &batch {
                    fits[i] = Some(Err(e.clone()));
                }
            }
        }
        for (i, slot) in fits.iter_mut().enumerate() {
            if slot.is_none() {
                let values = self.column(self.targets[i]);
                let mask: Vec<bool> = self
                    .train_mask
                    .iter()
                    .zip(values)
                    .map(|(&t, v)| t && v.is_some())
                    .collect();
                *slot = Some(fit_one(x, &mask, &self.targets[i].name, values, &self.config.ridge));
            }
        }
        fits.into_iter()
            .zip(&self.targets)
            .map(|(fit, target)| {
                score_probe(
                    source.clone(),
                    target,
                    self.column(target),
                    &self.split,
                    fit.expect("every slot filled"),
                    x,
                    None,
                )
            })
            .collect()
    }

    fn scalar_cell(&self, source: ProbeSource, feature: &[Option<f64>]) -> Vec<ProbeResult> {
        self.targets
            .iter()
            .map(|target| {
                scalar_probe(
                    source.clone(),
                    feature,
                    target,
                    self.column(target),
                    &self.split,
                    &self.config.ridge,
                )
            })
            .collect()
    }

}

/// Scores a fitted (or failed) probe on the test rows where the target and
/// the feature are present.
fn score_probe(
    source: ProbeSource,
    target: &TaskVariable,
    values: &[Option<f64>],
    split: &SplitAssignment,
    fit: Result<LinearProbe, SolverError>,
    x: ArrayView2<'_, f64>,
    feature_ok: Option<&[bool]>,
) -> ProbeResult {
    let usable = |i: usize| values[i].is_some() && feature_ok.is_none_or(|f| f[i]);
    let mut result = ProbeResult {
        spec: ProbeSpec {
            source,
            target: target.name.clone(),
        },
        metric_kind: target.kind.metric(),
        value: None,
        n_train: 0,
        n_test: 0,
        lambda: 0.0,
        status: ProbeStatus::Ok,
    };
    let test_rows: Vec<usize> = (0..values.len())
        .filter(|&i| !split.is_train(i) && usable(i))
        .collect();
    result.n_test = test_rows.len();
    let probe = match fit {
        Ok(p) => p,
        Err(SolverError::Degenerate(k)) => {
            result.n_train = k;
            result.status = ProbeStatus::InsufficientTrain;
            return result;
        }
        Err(SolverError::Singular { lambda, .. }) => {
            result.n_train = (0..values.len())
                .filter(|&i| split.is_train(i) && usable(i))
                .count();
            result.lambda = lambda;
            result.status = ProbeStatus::Singular;
            return result;
        }
        Err(SolverError::Dimension { .. }) => unreachable!("dimensions fixed per cell"),
    };
    result.n_train = probe.n_train;
    result.lambda = probe.lambda;
    if test_rows.len() < 2 {
        result.status = ProbeStatus::InsufficientTest;
        return result;
    }
    let test_x = x.select(Axis(0), &test_rows);
    let scores = predict(&probe, test_x.view()).expect("same feature width");
    let truths: Vec<f64> = test_rows
        .iter()
        .map(|&i| values[i].expect("usable rows have labels"))
        .collect();
    let (value, undefined) = match target.kind {
        TaskKind::Binary => {
            let labels: Vec<bool> = truths.iter().map(|&y| y == 1.0).collect();
            (auc(&scores, &labels), ProbeStatus::SingleClass)
        }
        TaskKind::Continuous => (r_squared(&scores, &truths), ProbeStatus::ZeroVariance),
    };
    result.value = value;
    if value.is_none() {
        result.status = undefined;
    }
    debug_assert_eq!(
        result.metric_kind == MetricKind::Auc,
        target.kind == TaskKind::Binary
    );
    result
}

/// Fits and scores one scalar-feature probe over rows where both the
/// feature and the target are present.
fn scalar_probe(
    source: ProbeSource,
    feature: &[Option<f64>],
    target: &TaskVariable,
    values: &[Option<f64>],
    split: &SplitAssignment,
    ridge: &RidgeSchedule,
) -> ProbeResult {
    let n = feature.len();
    let x = Array2::from_shape_fn((n, 1), |(i, _)| feature[i].unwrap_or(0.0));
    let feature_ok: Vec<bool> = feature.iter().map(Option::is_some).collect();
    let mask: Vec<bool> = (0..n)
        .map(|i| split.is_train(i) && feature_ok[i] && values[i].is_some())
        .collect();
    let fit = fit_one(x.view(), &mask, &target.name, values, ridge);
    score_probe(source, target, values, split, fit, x.view(), Some(&feature_ok))
}

fn lookup<'t>(labels: &'t LabelTable, name: &str) -> Result<(&'t TaskVariable, &'t [Option<f64>]), GridError> {
    match (labels.variable(name), labels.column(name)) {
        (Some(v), Some(c)) => Ok((v, c)),
        _ => Err(GridError::Config(format!("unknown variable {name:?}"))),
    }
}

/// Regresses `target` on the raw value of `source`.
pub fn baseline_raw_value(
    source: &str,
    target: &str,
    labels: &LabelTable,
    split: &SplitAssignment,
) -> Result<ProbeResult, GridError> {
    let (_, feature) = lookup(labels, source)?;
    let (var, values) = lookup(labels, target)?;
    Ok(scalar_probe(
        ProbeSource::RawValue {
            source_task: source.to_string(),
        },
        feature,
        var,
        values,
        split,
        &RidgeSchedule::default(),
    ))
}

/// Regresses `target` on a seeded per-image uniform draw.
pub fn baseline_random_source(
    target: &str,
    labels: &LabelTable,
    split: &SplitAssignment,
    seed: u64,
) -> Result<ProbeResult, GridError> {
    let (var, values) = lookup(labels, target)?;
    Ok(scalar_probe(
        ProbeSource::RandomUniform,
        &random_feature(labels, seed),
        var,
        values,
        split,
        &RidgeSchedule::default(),
    ))
}

fn fit_one(
    x: ArrayView2<'_, f64>,
    mask: &[bool],
    name: &str,
    values: &[Option<f64>],
    ridge: &RidgeSchedule,
) -> Result<LinearProbe, SolverError> {
    let cache = build_gram_with(x, mask, ridge, name)?;
    fit_targets(&cache, x, &[TargetColumn { name, values }])
        .pop()
        .expect("one target in, one fit out")
}

/// One uniform `[0, 1)` draw per image, keyed by image id so that it does
/// not depend on row order.
pub fn random_feature(labels: &LabelTable, seed: u64) -> Vec<Option<f64>> {
    let tag = label("random_uniform");
    labels
        .image_ids()
        .iter()
        .map(|id| Some(CounterRng::from_labels(seed, &[tag, label(id)]).uniform()))
        .collect()
}

/// Runs the grid with an explicit worker count and optional checkpoint.
///
/// Cells already recorded in a checkpoint whose provenance digest matches
/// are reused rather than recomputed.
pub fn run_grid_with(
    embeddings: &[LayerEmbedding],
    labels: &LabelTable,
    predictions: &Predictions,
    provenance: &Provenance,
    options: &RunOptions,
) -> Result<GridReport, GridError> {
    let config = &provenance.config;
    let plan = GridPlan::new(embeddings, labels, predictions, config)?;
    let cells = plan.cells();
    let total = cells.len();
    let keys: Vec<String> = cells.iter().map(Cell::key).collect();

    let digest = provenance.digest();
    let mut completed: HashMap<String, Vec<ProbeResult>> = match &options.checkpoint {
        Some(path) => checkpoint::read_completed(path, &digest)?,
        None => HashMap::new(),
    };
    completed.retain(|k, _| keys.contains(k));
    let mut writer = match &options.checkpoint {
        Some(path) => {
            let mut kept: Vec<(&String, &Vec<ProbeResult>)> = completed.iter().collect();
            kept.sort_by(|a, b| a.0.cmp(b.0));
            Some(checkpoint::Checkpoint::create(path, &digest, &kept)?)
        }
        None => None,
    };
    if !completed.is_empty() {
        log::info!("resuming: {} of {} cells already done", completed.len(), total);
    }

    let pending: Vec<usize> = (0..total).filter(|&i| !completed.contains_key(&keys[i])).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| GridError::Config(e.to_string()))?;
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Vec<ProbeResult>)>();
    let mut committed = 0usize;
    let mut failure: Option<GridError> = None;

    std::thread::scope(|scope| {
        let plan = &plan;
        let cells = &cells;
        let stop = &stop;
        let pending = &pending;
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, &i| {
                    if stop.load(Ordering::Relaxed) {
                        return;
                    }
                    let rows = plan.run_cell(&cells[i]);
                    let _ = tx.send((i, rows));
                });
            });
        });
        for (i, rows) in rx {
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.commit(&keys[i], &rows) {
                    failure = Some(e);
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
            }
            completed.insert(keys[i].clone(), rows);
            committed += 1;
            if options.max_cells.is_some_and(|m| committed >= m) && completed.len() < total {
                stop.store(true, Ordering::Relaxed);
                break;
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if completed.len() < total {
        return Err(GridError::Interrupted {
            committed: completed.len(),
            total,
        });
    }
    let mut results: Vec<ProbeResult> = completed.into_values().flatten().collect();
    results.sort_by(result_order);
    Ok(GridReport {
        results,
        provenance: provenance.clone(),
    })
}
