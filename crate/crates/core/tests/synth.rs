use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use probegrid::metrics::auc;
use probegrid::rng::CounterRng;
use probegrid::synth::{gaussian_threshold_auc, parse_scenario, preset, SCENARIO_FILE};

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_scenario_writes_identical_bytes() {
    let s = preset("demo").unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    s.generate().unwrap().write(a.path(), &s).unwrap();
    s.generate().unwrap().write(b.path(), &s).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() >= 18, "{:?}", ta.keys().collect::<Vec<_>>());
    assert_eq!(ta, tb);
}

#[test]
fn written_scenario_parses_back() {
    let s = preset("height").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut small = s.clone();
    small.n_patients = 50;
    small.generate().unwrap().write(dir.path(), &small).unwrap();
    let back = parse_scenario(&fs::read(dir.path().join(SCENARIO_FILE)).unwrap()).unwrap();
    assert_eq!(back, small);
}

#[test]
fn different_seeds_change_the_data() {
    let mut s = preset("demo").unwrap();
    let a = s.generate().unwrap();
    s.seed += 1;
    let b = s.generate().unwrap();
    assert_ne!(a.labels, b.labels);
}

fn pearson(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn label_correlations_match_population_values() {
    // Sixteen thousand images keep the sampling error near 0.008.
    for name in ["height", "mid-layer"] {
        let s = preset(name).unwrap();
        let data = s.generate().unwrap();
        for a in &s.tasks {
            for b in &s.tasks {
                let want = s.label_correlation(&a.name, &b.name).unwrap();
                let got = pearson(
                    data.labels.column(&a.name).unwrap(),
                    data.labels.column(&b.name).unwrap(),
                );
                assert!(
                    (got - want).abs() <= 0.05,
                    "{name}: corr({}, {}) = {got}, expected {want}",
                    a.name,
                    b.name
                );
            }
        }
    }
}

#[test]
fn threshold_auc_formula_matches_simulation() {
    let mut rng = CounterRng::new(99);
    for rho in [0.0, 0.3, 0.6, 0.9] {
        let n = 20_000;
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let z = rng.normal();
            let e = rng.normal();
            labels.push(z > 0.0);
            scores.push(rho * z + (1.0 - rho * rho).sqrt() * e);
        }
        let got = auc(&scores, &labels).unwrap();
        let want = gaussian_threshold_auc(rho);
        assert!((got - want).abs() < 0.01, "rho {rho}: {got} vs {want}");
    }
}
