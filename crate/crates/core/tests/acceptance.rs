//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line even when the run succeeds:
//!
//! ```text
//! cargo test -p probegrid-core --test acceptance
//! ```

mod common;

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{
    brute_auc, direct_r2, gaussian_matrix, normal_equations_oracle, rel_err, svd_reference,
};
use probegrid::analysis::{best_layer_histogram, layer_curves};
use probegrid::grid::{sha256_hex, GridPlan, RunOptions};
use probegrid::ingest::{
    assign_split, check_embeddings, load_embeddings, load_labels, load_manifest, load_predictions,
    parse_variable_meta, write_labels,
};
use probegrid::metrics::{auc, r_squared};
use probegrid::rng::CounterRng;
use probegrid::solver::{build_gram, fit_targets, TargetColumn};
use probegrid::synth::{self, preset, SynthScenario};
use probegrid::{
    run_grid, run_grid_with, GridConfig, GridError, IngestError, LabelTable, MetricKind,
    ProbeResult, ProbeSource, Provenance, Split, TaskKind, TaskVariable,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit), || {
        format!("took {:.1}s, limit {limit}s", elapsed.as_secs_f64())
    })
}

fn solver_oracles() -> Check {
    let start = Instant::now();
    let mut worst_oracle: f64 = 0.0;
    let mut worst_single: f64 = 0.0;
    let mut worst_unridged: f64 = 0.0;
    let mut over_ridged = 0;
    let mut over_unridged = 0;
    let mut ridged = 0;
    // Oracle and solver distances to an SVD reference for the worst case.
    let mut worst_case = (0u64, 0.0, 0.0);
    for case in 0..200u64 {
        let mut rng = CounterRng::from_labels(case, &[probegrid::rng::label("solver-oracle")]);
        let n = 10 + (rng.uniform() * 191.0) as usize;
        let d = 1 + (rng.uniform() * 32.0) as usize;
        let t = 1 + (rng.uniform() * 8.0) as usize;
        let missing = if case % 2 == 0 { 0.0 } else { 0.1 };
        let x = gaussian_matrix(&mut rng, n, d);
        let mask: Vec<bool> = (0..n).map(|i| i < 5 || rng.uniform() < 0.85).collect();
        let targets: Vec<Vec<Option<f64>>> = (0..t)
            .map(|_| {
                (0..n)
                    .map(|i| {
                        let v = rng.normal() * 3.0 + 1.0;
                        (i < 5 || rng.uniform() >= missing).then_some(v)
                    })
                    .collect()
            })
            .collect();
        let cols: Vec<TargetColumn<'_>> =
            targets.iter().map(|v| TargetColumn { name: "y", values: v }).collect();
        let cache = build_gram(x.view(), &mask).map_err(|e| format!("case {case}: {e}"))?;
        let lambda = cache.lambda();
        if lambda > 0.0 {
            ridged += 1;
        }
        let batch = fit_targets(&cache, x.view(), &cols);
        let mut case_worst: f64 = 0.0;
        for (k, col) in cols.iter().enumerate() {
            let probe = batch[k].as_ref().map_err(|e| format!("case {case}: {e}"))?;
            let oracle = normal_equations_oracle(&x, col.values, &mask, lambda);
            let err = rel_err(&probe.weights, &oracle);
            case_worst = case_worst.max(err);
            if err > worst_oracle {
                let reference = svd_reference(&x, col.values, &mask, lambda);
                worst_case = (case, rel_err(&oracle, &reference), rel_err(&probe.weights, &reference));
            }
            worst_oracle = worst_oracle.max(err);
            if lambda == 0.0 {
                worst_unridged = worst_unridged.max(err);
            }
            let own = build_gram(x.view(), &mask).unwrap();
            let single = fit_targets(&own, x.view(), std::slice::from_ref(col)).remove(0).unwrap();
            worst_single = worst_single.max(rel_err(&probe.weights, &single.weights));
        }
        if case_worst > 1e-8 {
            if lambda > 0.0 {
                over_ridged += 1;
            } else {
                over_unridged += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let (case, oracle_vs_svd, solver_vs_svd) = worst_case;
    let summary = format!(
        "max rel err {worst_oracle:.1e} vs inverse ({over_ridged} ridged and {over_unridged} unridged instances over 1e-8; \
         unridged max {worst_unridged:.1e}); worst case {case}: inverse-vs-SVD {oracle_vs_svd:.1e}, \
         solver-vs-SVD {solver_vs_svd:.1e}; {worst_single:.1e} vs independent; {ridged}/200 ridged; {:.2}s",
        elapsed.as_secs_f64()
    );
    ensure(worst_oracle <= 1e-8, || format!("inverse oracle tolerance 1e-8 exceeded: {summary}"))?;
    ensure(worst_single <= 1e-10, || format!("independent fit tolerance 1e-10 exceeded: {summary}"))?;
    within(elapsed, 30)?;
    Ok(summary)
}

fn metric_oracles() -> Check {
    let mut rng = CounterRng::new(2);
    let mut defined = 0;
    let mut worst_r2: f64 = 0.0;
    for case in 0..1000 {
        let n = 2 + (rng.uniform() * 80.0) as usize;
        let levels = 1 + (rng.uniform() * 10.0) as u64;
        let scores: Vec<f64> = (0..n).map(|_| (rng.next_u64() % levels) as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
        let (got, want) = (auc(&scores, &labels), brute_auc(&scores, &labels));
        ensure(got == want, || format!("case {case}: auc {got:?} vs pairwise {want:?}"))?;
        defined += usize::from(got.is_some());

        let truth: Vec<f64> = (0..n).map(|_| rng.normal() * 5.0).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.normal()).collect();
        let r2 = r_squared(&pred, &truth).ok_or(format!("case {case}: r2 undefined"))?;
        let direct = direct_r2(&pred, &truth);
        worst_r2 = worst_r2.max((r2 - direct).abs() / direct.abs().max(1.0));
    }
    ensure(worst_r2 <= 1e-12, || format!("r2 deviates {worst_r2:e} from the direct formula"))?;
    let t = [0.5, 1.5, -2.0, 4.0];
    let mean = vec![1.0; 4];
    ensure(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]) == Some(1.0), || "separated AUC".into())?;
    ensure(auc(&[0.3; 4], &[false, true, false, true]) == Some(0.5), || "tied AUC".into())?;
    ensure(r_squared(&t, &t) == Some(1.0), || "identity R²".into())?;
    ensure(r_squared(&mean, &t) == Some(0.0), || "mean-predictor R²".into())?;
    Ok(format!(
        "1000 AUC instances exact ({defined} defined), R² within {worst_r2:.1e}, anchors exact"
    ))
}

fn count_kinds(results: &[ProbeResult]) -> [usize; 4] {
    let mut c = [0; 4];
    for r in results {
        c[match r.spec.source {
            ProbeSource::Embedding { .. } => 0,
            ProbeSource::RawValue { .. } => 1,
            ProbeSource::Prediction { .. } => 2,
            ProbeSource::RandomUniform => 3,
        }] += 1;
    }
    c
}

fn grid_counting_and_determinism() -> Check {
    let start = Instant::now();
    let s = preset("demo").unwrap();
    let data = s.generate().map_err(|e| e.to_string())?;
    let prov = Provenance::from_inputs(GridConfig::default(), &data.embeddings, &data.labels, &data.predictions);
    let run = |opts: &RunOptions| {
        run_grid_with(&data.embeddings, &data.labels, &data.predictions, &prov, opts)
    };
    let one = run(&RunOptions { workers: 1, ..RunOptions::default() }).map_err(|e| e.to_string())?;
    let counts = count_kinds(&one.results);
    ensure(counts == [48, 16, 16, 4], || format!("row counts {counts:?}, expected [48, 16, 16, 4]"))?;
    let sha1 = sha256_hex(one.to_csv().as_bytes());
    let eight = run(&RunOptions { workers: 8, ..RunOptions::default() }).map_err(|e| e.to_string())?;
    let sha8 = sha256_hex(eight.to_csv().as_bytes());
    ensure(sha1 == sha8, || format!("1 worker {sha1} != 8 workers {sha8}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let partial = dir.path().join("results.csv.partial");
    let cells = 12 + 4 + 4 + 1;
    let killed = run(&RunOptions { workers: 4, checkpoint: Some(partial.clone()), max_cells: Some(cells / 2) });
    ensure(matches!(killed, Err(GridError::Interrupted { committed: 10, total: 21 })), || {
        format!("expected interruption at 10 of 21 cells, got {killed:?}")
    })?;
    // A kill can also land mid-write: drop the tail of the last cell.
    let text = fs::read_to_string(&partial).map_err(|e| e.to_string())?;
    let cut = text.trim_end().rfind("# done").unwrap() - 7;
    fs::write(&partial, &text[..cut]).map_err(|e| e.to_string())?;
    let resumed = run(&RunOptions { workers: 8, checkpoint: Some(partial), max_cells: None })
        .map_err(|e| e.to_string())?;
    let sha_r = sha256_hex(resumed.to_csv().as_bytes());
    ensure(sha_r == sha1, || format!("resumed {sha_r} != uninterrupted {sha1}"))?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "rows {counts:?}; sha256 {} for 1, 8 workers and resume; {:.2}s",
        &sha1[..12],
        start.elapsed().as_secs_f64()
    ))
}

fn split_contract() -> Check {
    let mut rng = CounterRng::new(4);
    let mut image_ids = Vec::new();
    let mut patient_ids = Vec::new();
    for p in 0..10_000 {
        let images = 1 + (rng.next_u64() % 3) as usize;
        for k in 0..images {
            image_ids.push(format!("p{p}-i{k}"));
            patient_ids.push(format!("patient-{p}"));
        }
    }
    let n = image_ids.len();
    let column: Vec<Option<f64>> = (0..n).map(|i| Some(i as f64)).collect();
    let labels = LabelTable::new(
        image_ids,
        patient_ids,
        vec![TaskVariable::new("v", TaskKind::Continuous)],
        vec![column],
    )
    .map_err(|e| e.to_string())?;
    let mut shares = Vec::new();
    for seed in 0..5 {
        let split = assign_split(&labels, 0.125, seed).map_err(|e| e.to_string())?;
        let mut test = HashSet::new();
        let mut train = HashSet::new();
        for (i, p) in labels.patient_ids().iter().enumerate() {
            match split.assignment[i] {
                Split::Test => test.insert(p.as_str()),
                Split::Train => train.insert(p.as_str()),
            };
        }
        let straddle = test.intersection(&train).count();
        ensure(straddle == 0, || format!("seed {seed}: {straddle} patients straddle"))?;
        let share = test.len() as f64 / 10_000.0;
        ensure((share - 0.125).abs() <= 0.01, || format!("seed {seed}: test share {share}"))?;
        shares.push(format!("{share:.4}"));
    }
    Ok(format!("10000 patients, no straddling, test shares {} (seeds 0-4)", shares.join(" ")))
}

fn run_scenario(s: &SynthScenario) -> Result<Vec<ProbeResult>, String> {
    let data = s.generate().map_err(|e| e.to_string())?;
    let plan_ok = GridPlan::new(&data.embeddings, &data.labels, &data.predictions, &GridConfig::default()).is_ok();
    ensure(plan_ok, || "plan rejected".into())?;
    run_grid(&data.embeddings, &data.labels, &data.predictions, &GridConfig::default())
        .map(|r| r.results)
        .map_err(|e| e.to_string())
}

fn mid_layer_generalization() -> Check {
    let s = preset("mid-layer").unwrap();
    let designed = 2;
    let results = run_scenario(&s)?;
    let hist = best_layer_histogram(&results).map_err(|e| e.to_string())?;
    let at = hist.counts.get(&designed).copied().unwrap_or(0);
    let share = at as f64 / (hist.total() + hist.excluded) as f64;
    ensure(hist.mode() == Some(designed), || format!("mode {:?}, designed {designed}", hist.mode()))?;
    ensure(share >= 0.9, || format!("only {at} of {} pairs peak at layer {designed}", hist.total()))?;
    let last = s.layers.last().unwrap().layer_id;
    let prev = s.layers[s.layers.len() - 2].layer_id;
    for c in layer_curves(&results).iter().filter(|c| c.is_same_task()) {
        let (f, p) = (c.value_at(last), c.value_at(prev));
        ensure(matches!((f, p), (Some(f), Some(p)) if f >= p), || {
            format!("{}: final {f:?} < penultimate {p:?}", c.source)
        })?;
    }
    Ok(format!(
        "{at}/{} off-diagonal pairs peak at layer {designed} ({:.0}%); diagonal final >= penultimate for all {} tasks",
        hist.total() + hist.excluded,
        share * 100.0,
        s.tasks.len()
    ))
}

fn correlated_source_advantage() -> Check {
    let s = preset("height").unwrap();
    let (target, easy) = ("height_like", "testosterone_like");
    let results = run_scenario(&s)?;
    let curves = layer_curves(&results);
    let best = |src: &str| {
        curves
            .iter()
            .find(|c| c.source == src && c.target == target)
            .and_then(|c| c.best())
            .map(|(_, v)| v)
            .ok_or(format!("{src} -> {target} has no defined value"))
    };
    let ceiling = |src: &str| {
        s.layers
            .iter()
            .filter_map(|l| s.ceiling(src, target, l.layer_id))
            .fold(f64::MIN, f64::max)
    };
    let (own, other) = (best(target)?, best(easy)?);
    let (own_c, other_c) = (ceiling(target), ceiling(easy));
    ensure(other - own >= 0.05, || format!("advantage {:.4} < 0.05", other - own))?;
    ensure((own - own_c).abs() <= 0.05, || format!("same-task {own:.4} vs ceiling {own_c:.4}"))?;
    ensure((other - other_c).abs() <= 0.05, || format!("{easy} {other:.4} vs ceiling {other_c:.4}"))?;
    Ok(format!(
        "R² on {target}: {easy} {other:.4} (ceiling {other_c:.4}) vs same-task {own:.4} (ceiling {own_c:.4}); advantage {:.4}",
        other - own
    ))
}

fn null_baselines() -> Check {
    let s = preset("null").unwrap();
    let results = run_scenario(&s)?;
    let mut parts = Vec::new();
    for r in results.iter().filter(|r| matches!(r.spec.source, ProbeSource::RandomUniform)) {
        ensure(r.n_test >= 2000, || format!("{}: n_test {}", r.spec.target, r.n_test))?;
        let v = r.value.ok_or(format!("{}: undefined", r.spec.target))?;
        match r.metric_kind {
            MetricKind::Auc => ensure((v - 0.5).abs() <= 0.03, || format!("{}: AUC {v}", r.spec.target))?,
            MetricKind::R2 => ensure(v <= 0.01, || format!("{}: R² {v}", r.spec.target))?,
        }
        parts.push(format!("{} {}={v:.4}", r.spec.target, r.metric_kind.as_str()));
    }
    ensure(parts.len() == s.tasks.len(), || "missing random rows".into())?;
    Ok(format!("{} (n_test >= 2000)", parts.join(", ")))
}

fn format_round_trip() -> Check {
    let s = preset("demo").unwrap();
    let data = s.generate().map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    data.write(root, &s).map_err(|e| e.to_string())?;

    let meta = parse_variable_meta(&fs::read(root.join(synth::VARIABLES_FILE)).unwrap())
        .map_err(|e| e.to_string())?;
    let labels_text = fs::read_to_string(root.join(synth::LABELS_FILE)).unwrap();
    let labels = load_labels(labels_text.as_bytes(), &meta).map_err(|e| e.to_string())?;
    ensure(labels == data.labels, || "labels differ after reload".into())?;
    ensure(write_labels(&labels) == labels_text, || "labels re-serialize differently".into())?;
    let preds = load_predictions(fs::read(root.join(synth::PREDICTIONS_FILE)).unwrap().as_slice(), &labels)
        .map_err(|e| e.to_string())?;
    ensure(preds == data.predictions, || "predictions differ after reload".into())?;
    let manifest = load_manifest(&root.join(synth::MANIFEST_FILE)).map_err(|e| e.to_string())?;
    ensure(manifest == data.manifest, || "manifest differs after reload".into())?;
    let errors = check_embeddings(&manifest, root, &labels);
    ensure(errors.is_empty(), || format!("validate reported {errors:?}"))?;
    let loaded = load_embeddings(&manifest, root, &labels).map_err(|e| e.to_string())?;
    ensure(loaded == data.embeddings, || "embeddings differ after reload".into())?;

    let entry = &manifest.sources[1].layers[1];
    let path = root.join(&entry.file);
    let bytes = fs::read(&path).unwrap();
    let expected = entry.expected_bytes();
    let mut diagnostics = Vec::new();
    for (name, corrupt) in [
        ("truncated", bytes[..bytes.len() - 4].to_vec()),
        ("extended", [bytes.as_slice(), &[0u8; 3]].concat()),
    ] {
        fs::write(&path, &corrupt).unwrap();
        let found = corrupt.len() as u64;
        let want = format!("{}: byte length mismatch: expected {expected}, found {found}", entry.file);
        match load_embeddings(&manifest, root, &labels) {
            Err(e @ IngestError::ByteLength { .. }) if e.to_string() == want => diagnostics.push(want),
            other => return Err(format!("{name} file: got {other:?}, wanted {want:?}")),
        }
    }
    Ok(format!(
        "labels, predictions, manifest and {} layers identical after reload; {}",
        loaded.len(),
        diagnostics.join("; ")
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("solver oracle equivalence", solver_oracles),
        ("metric oracles", metric_oracles),
        ("grid counting and determinism", grid_counting_and_determinism),
        ("patient split contract", split_contract),
        ("mid-layer generalization", mid_layer_generalization),
        ("correlated-source advantage", correlated_source_advantage),
        ("null baselines", null_baselines),
        ("format round-trip", format_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS - {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL - {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
