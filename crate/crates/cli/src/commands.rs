use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use probegrid::analysis::{
    band_table, best_layer_histogram, curves_csv, heatmap, layer_curves, render_bands,
    render_curve_grid, render_heatmap, render_histogram,
};
use probegrid::grid::{parse_results, DEFAULT_ANCHOR_SOURCE};
use probegrid::ingest::{
    check_embeddings, load_embeddings, load_labels, load_manifest, load_predictions,
    parse_variable_meta, Predictions,
};
use probegrid::synth::{self, parse_scenario, preset, PRESET_NAMES};
use probegrid::{
    run_grid_with, GridConfig, GridError, LabelTable, LayerEmbedding, ProbeSource, Provenance,
    RunOptions,
};
use serde::Serialize;

use crate::{Failure, InputArgs, ReportArgs, ReportKind, RunArgs, SynthArgs};

const RESULTS_FILE: &str = "results.csv";
const PARTIAL_FILE: &str = "results.csv.partial";
const PROVENANCE_FILE: &str = "provenance.json";

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

struct InputPaths {
    manifest: PathBuf,
    labels: PathBuf,
    variables: PathBuf,
    predictions: Option<PathBuf>,
}

impl InputArgs {
    fn resolve(&self) -> Result<InputPaths, Failure> {
        let pick = |explicit: &Option<PathBuf>, name: &str, flag: &str| {
            explicit
                .clone()
                .or_else(|| self.data_dir.as_ref().map(|d| d.join(name)))
                .ok_or_else(|| usage(anyhow!("--{flag} (or --data-dir) is required")))
        };
        let predictions = self.predictions.clone().or_else(|| {
            self.data_dir
                .as_ref()
                .map(|d| d.join(synth::PREDICTIONS_FILE))
                .filter(|p| p.exists())
        });
        Ok(InputPaths {
            manifest: pick(&self.manifest, synth::MANIFEST_FILE, "manifest")?,
            labels: pick(&self.labels, synth::LABELS_FILE, "labels")?,
            variables: pick(&self.variables, synth::VARIABLES_FILE, "variables")?,
            predictions,
        })
    }
}

fn read_labels(paths: &InputPaths) -> anyhow::Result<LabelTable> {
    let meta_bytes = fs::read(&paths.variables)
        .with_context(|| format!("reading {}", paths.variables.display()))?;
    let meta = parse_variable_meta(&meta_bytes)
        .with_context(|| format!("{}", paths.variables.display()))?;
    let file =
        File::open(&paths.labels).with_context(|| format!("reading {}", paths.labels.display()))?;
    load_labels(BufReader::new(file), &meta)
        .with_context(|| format!("{}", paths.labels.display()))
}

fn read_predictions(paths: &InputPaths, labels: &LabelTable) -> anyhow::Result<Predictions> {
    let Some(path) = &paths.predictions else {
        return Ok(Predictions::new());
    };
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    load_predictions(BufReader::new(file), labels)
        .with_context(|| format!("{}", path.display()))
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or_else(|| Path::new("."))
}

pub(crate) fn validate(args: &InputArgs) -> Result<u8, Failure> {
    let paths = args.resolve()?;
    let mut errors: Vec<String> = Vec::new();
    let labels = read_labels(&paths).map_err(|e| errors.push(format!("{e:#}"))).ok();
    let manifest = load_manifest(&paths.manifest)
        .map_err(|e| errors.push(e.to_string()))
        .ok();
    if let Some(labels) = &labels {
        if let Some(manifest) = &manifest {
            errors.extend(
                check_embeddings(manifest, base_dir(&paths.manifest), labels)
                    .iter()
                    .map(|e| e.to_string()),
            );
        }
        if let Err(e) = read_predictions(&paths, labels) {
            errors.push(format!("{e:#}"));
        }
    }
    for e in &errors {
        println!("error: {e}");
    }
    match errors.len() {
        1 => println!("1 error"),
        n => println!("{n} errors"),
    }
    Ok(if errors.is_empty() { 0 } else { 1 })
}

fn parse_list(raw: &str) -> Option<Vec<String>> {
    if raw.trim() == "*" {
        return None;
    }
    Some(
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
    )
}

fn effective_config(args: &RunArgs) -> Result<GridConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let bytes = fs::read(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(usage)?;
            serde_json::from_slice(&bytes)
                .with_context(|| format!("{}", path.display()))
                .map_err(usage)?
        }
        None => GridConfig::default(),
    };
    if let Some(v) = args.test_fraction {
        config.test_fraction = v;
    }
    if let Some(v) = args.split_seed {
        config.split_seed = v;
    }
    if let Some(v) = args.random_seed {
        config.random_seed = v;
    }
    if args.exact_masks {
        config.exact_masks = true;
    }
    if let Some(v) = &args.sources {
        config.sources = parse_list(v);
    }
    if let Some(v) = &args.targets {
        config.targets = parse_list(v);
    }
    if let Some(v) = &args.layers {
        config.layers = match parse_list(v) {
            None => None,
            Some(items) => Some(
                items
                    .iter()
                    .map(|s| s.parse::<u32>().with_context(|| format!("--layers: {s:?}")))
                    .collect::<anyhow::Result<_>>()
                    .map_err(usage)?,
            ),
        };
    }
    if let Some(v) = &args.anchor_source {
        config.anchor_source = Some(v.clone());
    }
    if let Some(v) = args.ridge_start {
        config.ridge.start = v;
    }
    if let Some(v) = args.ridge_stop {
        config.ridge.stop = v;
    }
    if let Some(v) = args.ridge_factor {
        config.ridge.factor = v;
    }
    Ok(config)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn load_all(
    paths: &InputPaths,
) -> anyhow::Result<(LabelTable, Predictions, Vec<LayerEmbedding>)> {
    let labels = read_labels(paths)?;
    let predictions = read_predictions(paths, &labels)?;
    let manifest = load_manifest(&paths.manifest)?;
    let embeddings = load_embeddings(&manifest, base_dir(&paths.manifest), &labels)?;
    Ok((labels, predictions, embeddings))
}

pub(crate) fn run(args: &RunArgs) -> Result<u8, Failure> {
    let paths = args.inputs.resolve()?;
    let config = effective_config(args)?;
    let (labels, predictions, embeddings) = load_all(&paths).map_err(usage)?;
    let provenance = Provenance::from_inputs(config, &embeddings, &labels, &predictions);

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(runtime)?;
    let partial = args.out.join(PARTIAL_FILE);
    if !args.resume && partial.exists() {
        fs::remove_file(&partial)
            .with_context(|| format!("removing {}", partial.display()))
            .map_err(runtime)?;
    }
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let options = RunOptions {
        workers,
        checkpoint: Some(partial.clone()),
        max_cells: args.max_cells,
    };
    let report = match run_grid_with(&embeddings, &labels, &predictions, &provenance, &options) {
        Ok(r) => r,
        Err(e @ GridError::Config(_)) => return Err(usage(e)),
        Err(e) => {
            return Err(runtime(anyhow!(e).context(format!(
                "partial results kept in {}",
                partial.display()
            ))))
        }
    };
    write_atomic(&args.out.join(RESULTS_FILE), report.to_csv().as_bytes()).map_err(runtime)?;
    write_atomic(
        &args.out.join(PROVENANCE_FILE),
        report.provenance.to_json().as_bytes(),
    )
    .map_err(runtime)?;
    fs::remove_file(&partial)
        .with_context(|| format!("removing {}", partial.display()))
        .map_err(runtime)?;
    println!(
        "{} rows written to {}",
        report.results.len(),
        args.out.join(RESULTS_FILE).display()
    );
    Ok(0)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("aggregates serialize");
    s.push('\n');
    s
}

/// Writes `<stem>.csv`, `<stem>.json` and `<stem>.svg`.
fn emit(out: &Path, stem: &str, csv: &str, json: &str, svg: &str) -> Result<(), Failure> {
    for (ext, body) in [("csv", csv), ("json", json), ("svg", svg)] {
        let path = out.join(format!("{stem}.{ext}"));
        write_atomic(&path, body.as_bytes()).map_err(runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub(crate) fn report(args: &ReportArgs) -> Result<u8, Failure> {
    let text = fs::read_to_string(&args.results)
        .with_context(|| format!("reading {}", args.results.display()))
        .map_err(usage)?;
    let results = parse_results(&text)
        .with_context(|| format!("{}", args.results.display()))
        .map_err(usage)?;
    if results.is_empty() {
        return Err(usage(anyhow!("{} holds no result rows", args.results.display())));
    }
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(runtime)?;
    match args.kind {
        ReportKind::LayerCurves => {
            let mut curves = layer_curves(&results);
            if let Some(t) = &args.target {
                curves.retain(|c| &c.target == t);
            }
            if curves.is_empty() {
                return Err(usage(anyhow!("no layer curves match")));
            }
            emit(
                &args.out,
                "layer_curves",
                &curves_csv(&curves),
                &to_json(&curves),
                &render_curve_grid(&curves),
            )?;
        }
        ReportKind::BestLayerHist => {
            let hist = best_layer_histogram(&results).map_err(usage)?;
            emit(
                &args.out,
                "best_layer_hist",
                &hist.to_csv(),
                &to_json(&hist),
                &render_histogram(&hist),
            )?;
            if let Some(mode) = hist.mode() {
                println!("mode: layer {mode}");
            }
        }
        ReportKind::Bands => {
            let target = args
                .target
                .as_deref()
                .ok_or_else(|| usage(anyhow!("--target is required for bands")))?;
            let table = band_table(&results, target);
            if table.rows.is_empty() {
                return Err(usage(anyhow!("target {target:?} has no embedding rows")));
            }
            emit(
                &args.out,
                &format!("bands_{}", file_stem(target)),
                &table.to_csv(),
                &to_json(&table),
                &render_bands(&table),
            )?;
        }
        ReportKind::Heatmap => {
            let layer = match args.layer {
                Some(l) => l,
                None => results
                    .iter()
                    .filter_map(|r| match r.spec.source {
                        ProbeSource::Embedding { layer_id, .. } => Some(layer_id),
                        _ => None,
                    })
                    .max()
                    .ok_or_else(|| usage(anyhow!("results hold no embedding rows")))?,
            };
            let anchor = args.anchor_source.as_deref().unwrap_or(DEFAULT_ANCHOR_SOURCE);
            let matrix = heatmap(&results, layer, anchor).map_err(usage)?;
            emit(
                &args.out,
                &format!("heatmap_layer_{layer}"),
                &matrix.to_csv(),
                &to_json(&matrix),
                &render_heatmap(&matrix),
            )?;
        }
    }
    Ok(0)
}

pub(crate) fn synth(args: &SynthArgs) -> Result<u8, Failure> {
    let scenario = match (&args.choice.preset, &args.choice.scenario) {
        (Some(name), _) => preset(name).ok_or_else(|| {
            usage(anyhow!(
                "unknown preset {name:?}; available: {}",
                PRESET_NAMES.join(", ")
            ))
        })?,
        (None, Some(path)) => {
            let bytes = fs::read(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(usage)?;
            parse_scenario(&bytes)
                .with_context(|| format!("{}", path.display()))
                .map_err(usage)?
        }
        (None, None) => return Err(usage(anyhow!("--preset or --scenario is required"))),
    };
    let data = scenario.generate().map_err(usage)?;
    data.write(&args.out, &scenario).map_err(runtime)?;
    println!(
        "scenario {}: {} images, {} sources, {} layers written to {}",
        scenario.name,
        data.labels.n_images(),
        data.manifest.sources.len(),
        data.manifest.layer_count(),
        args.out.display()
    );
    Ok(0)
}
