//! Aggregates derived from a results table: per-pair layer curves,
//! best-layer histograms, per-target band tables and the single-layer
//! cross-task heatmap.
//!
//! Every function takes the flat result rows, so recomputing from a parsed
//! `results.csv` gives the same output as using the in-memory report.

mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

pub use svg::{render_bands, render_curve, render_curve_grid, render_heatmap, render_histogram};

use crate::error::AnalysisError;
use crate::ingest::format_value;
use crate::model::{MetricKind, ProbeResult, ProbeSource, RANDOM_SOURCE_NAME};

fn cell(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCurve {
    pub source: String,
    pub target: String,
    pub metric_kind: MetricKind,
    /// `(layer_id, value)` with strictly increasing layer ids.
    pub points: Vec<(u32, Option<f64>)>,
    pub raw_value: Option<f64>,
    pub prediction: Option<f64>,
}

impl LayerCurve {
    pub fn is_same_task(&self) -> bool {
        self.source == self.target
    }

    /// Best defined value, ties toward the smaller layer id.
    pub fn best(&self) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for &(layer, v) in &self.points {
            if let Some(v) = v {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((layer, v));
                }
            }
        }
        best
    }

    pub fn value_at(&self, layer_id: u32) -> Option<f64> {
        self.points
            .iter()
            .find(|(l, _)| *l == layer_id)
            .and_then(|(_, v)| *v)
    }
}

/// One curve per (source, target) pair with embedding rows, sorted by
/// source then target.
pub fn layer_curves(results: &[ProbeResult]) -> Vec<LayerCurve> {
    let mut curves: BTreeMap<(String, String), LayerCurve> = BTreeMap::new();
    let mut baselines: BTreeMap<(String, String), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in results {
        let key = (r.spec.source.source_name().to_string(), r.spec.target.clone());
        match &r.spec.source {
            ProbeSource::Embedding { layer_id, .. } => {
                curves
                    .entry(key.clone())
                    .or_insert_with(|| LayerCurve {
                        source: key.0,
                        target: key.1,
                        metric_kind: r.metric_kind,
                        points: Vec::new(),
                        raw_value: None,
                        prediction: None,
                    })
                    .points
                    .push((*layer_id, r.value));
            }
            ProbeSource::RawValue { .. } => baselines.entry(key).or_default().0 = r.value,
            ProbeSource::Prediction { .. } => baselines.entry(key).or_default().1 = r.value,
            ProbeSource::RandomUniform => {}
        }
    }
    curves
        .into_iter()
        .map(|(key, mut c)| {
            c.points.sort_by_key(|(l, _)| *l);
            c.points.dedup_by_key(|(l, _)| *l);
            if let Some((raw, pred)) = baselines.get(&key) {
                c.raw_value = *raw;
                c.prediction = *pred;
            }
            c
        })
        .collect()
}

pub fn curves_csv(curves: &[LayerCurve]) -> String {
    let mut out = String::from("source,target,metric_kind,series,layer_id,value\n");
    for c in curves {
        let head = format!(
            "{},{},{}",
            csv_field(&c.source),
            csv_field(&c.target),
            c.metric_kind.as_str()
        );
        for (layer, v) in &c.points {
            let _ = writeln!(out, "{head},embedding,{layer},{}", cell(*v));
        }
        if let Some(v) = c.raw_value {
            let _ = writeln!(out, "{head},raw,,{}", format_value(v));
        }
        if let Some(v) = c.prediction {
            let _ = writeln!(out, "{head},prediction,,{}", format_value(v));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairBest {
    pub source: String,
    pub target: String,
    pub layer_id: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestLayerHistogram {
    /// `layer_id → number of pairs peaking there`; every observed layer is
    /// present, possibly with a zero count.
    pub counts: BTreeMap<u32, usize>,
    /// Off-diagonal pairs with no defined layer value.
    pub excluded: usize,
    pub pairs: Vec<PairBest>,
}

impl BestLayerHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Most frequent layer; ties toward the smaller id.
    pub fn mode(&self) -> Option<u32> {
        let mut best: Option<(u32, usize)> = None;
        for (&l, &c) in &self.counts {
            if c > 0 && best.is_none_or(|(_, b)| c > b) {
                best = Some((l, c));
            }
        }
        best.map(|(l, _)| l)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_id,count\n");
        for (l, c) in &self.counts {
            let _ = writeln!(out, "{l},{c}");
        }
        out
    }
}

/// Argmax layer per off-diagonal (source, target) pair.
pub fn best_layer_histogram(results: &[ProbeResult]) -> Result<BestLayerHistogram, AnalysisError> {
    let curves = layer_curves(results);
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for c in &curves {
        for (l, _) in &c.points {
            counts.entry(*l).or_insert(0);
        }
    }
    let mut excluded = 0;
    let mut pairs = Vec::new();
    for c in curves.iter().filter(|c| !c.is_same_task()) {
        match c.best() {
            Some((layer_id, value)) => {
                *counts.entry(layer_id).or_insert(0) += 1;
                pairs.push(PairBest {
                    source: c.source.clone(),
                    target: c.target.clone(),
                    layer_id,
                    value,
                });
            }
            None => excluded += 1,
        }
    }
    if pairs.is_empty() {
        return Err(AnalysisError::NoPairs);
    }
    Ok(BestLayerHistogram {
        counts,
        excluded,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandRow {
    pub source: String,
    pub same_task: bool,
    /// Values aligned with [`BandTable::layers`].
    pub values: Vec<Option<f64>>,
    /// The source's best-layer score when predicting itself.
    pub self_score: Option<f64>,
    /// Rank of `self_score` among this table's sources, 0 = best.
    pub self_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandTable {
    pub target: String,
    pub metric_kind: Option<MetricKind>,
    pub layers: Vec<u32>,
    pub rows: Vec<BandRow>,
}

impl BandTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,same_task,self_rank,self_score");
        for l in &self.layers {
            let _ = write!(out, ",layer_{l}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{}",
                csv_field(&r.source),
                r.same_task,
                r.self_rank.map(|v| v.to_string()).unwrap_or_default(),
                cell(r.self_score)
            );
            for v in &r.values {
                let _ = write!(out, ",{}", cell(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn same_task_row(&self) -> Option<&BandRow> {
        self.rows.iter().find(|r| r.same_task)
    }
}

/// Every source's layer curve for one target. A target absent from the
/// results gives an empty table.
pub fn band_table(results: &[ProbeResult], target: &str) -> BandTable {
    let curves = layer_curves(results);
    let self_best: BTreeMap<&str, f64> = curves
        .iter()
        .filter(|c| c.is_same_task())
        .filter_map(|c| c.best().map(|(_, v)| (c.source.as_str(), v)))
        .collect();
    let mine: Vec<&LayerCurve> = curves.iter().filter(|c| c.target == target).collect();
    let layers: Vec<u32> = mine
        .iter()
        .flat_map(|c| c.points.iter().map(|(l, _)| *l))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut ranked: Vec<(&str, f64)> = mine
        .iter()
        .filter_map(|c| self_best.get(c.source.as_str()).map(|v| (c.source.as_str(), *v)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let rows = mine
        .iter()
        .map(|c| BandRow {
            source: c.source.clone(),
            same_task: c.is_same_task(),
            values: layers.iter().map(|&l| c.value_at(l)).collect(),
            self_score: self_best.get(c.source.as_str()).copied(),
            self_rank: ranked.iter().position(|(s, _)| *s == c.source),
        })
        .collect();
    BandTable {
        target: target.to_string(),
        metric_kind: mine.first().map(|c| c.metric_kind),
        layers,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapMatrix {
    pub layer_id: u32,
    pub anchor_source: String,
    /// Targets, binary block first, then by anchor score.
    pub rows: Vec<String>,
    pub row_kinds: Vec<MetricKind>,
    /// Each row's score under the anchor source at this layer.
    pub anchor_scores: Vec<Option<f64>>,
    /// Sources: tasks in row order, then other sources by name, then the
    /// uniform-noise baseline when present.
    pub columns: Vec<String>,
    /// `values[row][col]`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl HeatmapMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,metric_kind");
        for c in &self.columns {
            let _ = write!(out, ",{}", csv_field(c));
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{},{}", csv_field(row), self.row_kinds[i].as_str());
            for v in &self.values[i] {
                let _ = write!(out, ",{}", cell(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Maps AUC and R² onto one `[0, 1]` colour scale: `2·AUC − 1` and `R²`,
/// both clamped.
pub fn normalized_score(kind: MetricKind, value: f64) -> f64 {
    match kind {
        MetricKind::Auc => (2.0 * value - 1.0).clamp(0.0, 1.0),
        MetricKind::R2 => value.clamp(0.0, 1.0),
    }
}

/// Sorts descending by score with undefined last and names breaking ties.
fn order_by_score(items: &mut [(String, Option<f64>)]) {
    items.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
}

pub fn heatmap(
    results: &[ProbeResult],
    layer_id: u32,
    anchor_source: &str,
) -> Result<HeatmapMatrix, AnalysisError> {
    let at_layer: Vec<&ProbeResult> = results
        .iter()
        .filter(|r| r.spec.source.layer_id() == Some(layer_id))
        .collect();
    if at_layer.is_empty() {
        return Err(AnalysisError::MissingLayer(layer_id));
    }
    let sources: BTreeSet<&str> = at_layer.iter().map(|r| r.spec.source.source_name()).collect();
    if !sources.contains(anchor_source) {
        return Err(AnalysisError::MissingAnchor {
            anchor: anchor_source.to_string(),
            available: sources.iter().map(|s| s.to_string()).collect(),
        });
    }
    let mut kinds: BTreeMap<&str, MetricKind> = BTreeMap::new();
    let mut grid: BTreeMap<(&str, &str), Option<f64>> = BTreeMap::new();
    for r in &at_layer {
        kinds.insert(&r.spec.target, r.metric_kind);
        grid.insert((r.spec.target.as_str(), r.spec.source.source_name()), r.value);
    }
    let mut binary = Vec::new();
    let mut continuous = Vec::new();
    for (&target, &kind) in &kinds {
        let score = grid.get(&(target, anchor_source)).copied().flatten();
        match kind {
            MetricKind::Auc => binary.push((target.to_string(), score)),
            MetricKind::R2 => continuous.push((target.to_string(), score)),
        }
    }
    order_by_score(&mut binary);
    order_by_score(&mut continuous);
    let ordered: Vec<(String, Option<f64>)> = binary.into_iter().chain(continuous).collect();

    let mut columns: Vec<String> = ordered
        .iter()
        .filter(|(t, _)| sources.contains(t.as_str()))
        .map(|(t, _)| t.clone())
        .collect();
    columns.extend(
        sources
            .iter()
            .filter(|s| !kinds.contains_key(*s))
            .map(|s| s.to_string()),
    );
    let random: BTreeMap<&str, Option<f64>> = results
        .iter()
        .filter(|r| matches!(r.spec.source, ProbeSource::RandomUniform))
        .map(|r| (r.spec.target.as_str(), r.value))
        .collect();
    if !random.is_empty() {
        columns.push(RANDOM_SOURCE_NAME.to_string());
    }

    let values = ordered
        .iter()
        .map(|(target, _)| {
            columns
                .iter()
                .map(|col| {
                    if col == RANDOM_SOURCE_NAME && !sources.contains(col.as_str()) {
                        random.get(target.as_str()).copied().flatten()
                    } else {
                        grid.get(&(target.as_str(), col.as_str())).copied().flatten()
                    }
                })
                .collect()
        })
        .collect();
    Ok(HeatmapMatrix {
        layer_id,
        anchor_source: anchor_source.to_string(),
        row_kinds: ordered.iter().map(|(t, _)| kinds[t.as_str()]).collect(),
        anchor_scores: ordered.iter().map(|(_, s)| *s).collect(),
        rows: ordered.into_iter().map(|(t, _)| t).collect(),
        columns,
        values,
    })
}
