//! Exact multi-target least squares over a shared, factored Gram matrix.
//!
//! One [`GramCache`] is built per (source, layer). It holds the train-row
//! feature means, the centered Gram `Σ (x−x̄)(x−x̄)ᵀ` and a Cholesky factor
//! of `gram + λI`. Every target is then fitted with two triangular solves
//! against that factor.
//!
//! Factorization is attempted at `λ = 0` first. If it fails, the ridge
//! schedule walks `λ = start·s, start·s·factor, …` up to `stop·s`, where
//! `s = trace(gram)/d` (or 1 when the trace is zero). The `λ` that
//! succeeded is recorded on the cache and on every probe fitted from it.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::SolverError;

/// Relative pivot threshold below which a Cholesky step counts as failed.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Ridge retry schedule, as multiples of `trace(gram)/d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeSchedule {
    pub start: f64,
    pub stop: f64,
    pub factor: f64,
}

impl Default for RidgeSchedule {
    fn default() -> Self {
        Self {
            start: 1e-8,
            stop: 1e-2,
            factor: 10.0,
        }
    }
}

impl RidgeSchedule {
    /// Relative multipliers tried after `λ = 0` fails.
    pub fn multipliers(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut m = self.start;
        // Slack so that 1e-8·10⁶ still counts as reaching 1e-2.
        while m <= self.stop * (1.0 + 1e-9) {
            out.push(m);
            m *= self.factor;
        }
        out
    }
}

/// Sufficient statistics for every least-squares fit over one design.
#[derive(Debug, Clone)]
pub struct GramCache {
    feature_mean: Vec<f64>,
    gram: Array2<f64>,
    /// Lower-triangular `L` with `L·Lᵀ = gram + λI`.
    factor: Array2<f64>,
    n_train: usize,
    lambda: f64,
    train_mask: Vec<bool>,
}

impl GramCache {
    pub fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn feature_mean(&self) -> &[f64] {
        &self.feature_mean
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn factor(&self) -> &Array2<f64> {
        &self.factor
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    /// Solves `(gram + λI) w = rhs` with the cached factor.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let l = &self.factor;
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = rhs[i];
            for k in 0..i {
                s -= l[[i, k]] * z[k];
            }
            z[i] = s / l[[i, i]];
        }
        let mut w = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in i + 1..d {
                s -= l[[k, i]] * w[k];
            }
            w[i] = s / l[[i, i]];
        }
        w
    }
}

/// A fitted affine probe: `wᵀ(x − x̄) + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub target: String,
    pub weights: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub n_train: usize,
}

/// One target column; `None` entries are missing labels.
#[derive(Debug, Clone, Copy)]
pub struct TargetColumn<'a> {
    pub name: &'a str,
    pub values: &'a [Option<f64>],
}

fn train_rows(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

fn centered_rows(features: ArrayView2<'_, f64>, rows: &[usize], mean: &[f64]) -> Array2<f64> {
    let d = features.ncols();
    let mut xc = Array2::<f64>::zeros((rows.len(), d));
    for (out_row, &r) in rows.iter().enumerate() {
        let src = features.row(r);
        let mut dst = xc.row_mut(out_row);
        for k in 0..d {
            dst[k] = src[k] - mean[k];
        }
    }
    xc
}

/// Cholesky of `a + λI`; `None` if a pivot falls below tolerance.
fn cholesky_shifted(a: &Array2<f64>, lambda: f64) -> Option<Array2<f64>> {
    let d = a.nrows();
    let max_diag = (0..d).map(|i| a[[i, i]] + lambda).fold(0.0f64, f64::max);
    let tol = PIVOT_TOLERANCE * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut s = a[[j, j]] + lambda;
        for k in 0..j {
            s -= l[[j, k]] * l[[j, k]];
        }
        if !(s > tol) {
            return None;
        }
        let pivot = s.sqrt();
        l[[j, j]] = pivot;
        for i in j + 1..d {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / pivot;
        }
    }
    Some(l)
}

fn accumulate(
    features: ArrayView2<'_, f64>,
    train_mask: &[bool],
) -> Result<(Vec<f64>, Array2<f64>, usize), SolverError> {
    assert_eq!(
        features.nrows(),
        train_mask.len(),
        "train mask length must match feature rows"
    );
    let rows = train_rows(train_mask);
    if rows.len() < 2 {
        return Err(SolverError::Degenerate(rows.len()));
    }
    let d = features.ncols();
    let mut mean = vec![0.0; d];
    for &r in &rows {
        for (m, x) in mean.iter_mut().zip(features.row(r)) {
            *m += x;
        }
    }
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let xc = centered_rows(features, &rows, &mean);
    let mut gram = xc.t().dot(&xc);
    // Mirror the lower triangle so the matrix is exactly symmetric.
    for i in 0..d {
        for j in 0..i {
            gram[[j, i]] = gram[[i, j]];
        }
    }
    Ok((mean, gram, rows.len()))
}

/// Builds the cache with the default ridge schedule.
pub fn build_gram(
    features: ArrayView2<'_, f64>,
    train_mask: &[bool],
) -> Result<GramCache, SolverError> {
    build_gram_with(features, train_mask, &RidgeSchedule::default(), "design")
}

/// Builds the cache, walking `schedule` if `λ = 0` fails. `context` names
/// the design in the singularity error.
pub fn build_gram_with(
    features: ArrayView2<'_, f64>,
    train_mask: &[bool],
    schedule: &RidgeSchedule,
    context: &str,
) -> Result<GramCache, SolverError> {
    let (feature_mean, gram, n_train) = accumulate(features, train_mask)?;
    let d = feature_mean.len();
    let trace: f64 = (0..d).map(|i| gram[[i, i]]).sum();
    let scale = if trace > 0.0 { trace / d as f64 } else { 1.0 };
    let mut last = 0.0;
    for lambda in std::iter::once(0.0).chain(schedule.multipliers().into_iter().map(|m| m * scale)) {
        last = lambda;
        if let Some(factor) = cholesky_shifted(&gram, lambda) {
            return Ok(GramCache {
                feature_mean,
                gram,
                factor,
                n_train,
                lambda,
                train_mask: train_mask.to_vec(),
            });
        }
    }
    Err(SolverError::Singular {
        context: context.to_string(),
        lambda: last,
    })
}

/// Builds the cache at exactly `lambda`, with no retries.
pub fn build_gram_fixed(
    features: ArrayView2<'_, f64>,
    train_mask: &[bool],
    lambda: f64,
) -> Result<GramCache, SolverError> {
    let (feature_mean, gram, n_train) = accumulate(features, train_mask)?;
    let factor = cholesky_shifted(&gram, lambda).ok_or_else(|| SolverError::Singular {
        context: "fixed lambda".into(),
        lambda,
    })?;
    Ok(GramCache {
        feature_mean,
        gram,
        factor,
        n_train,
        lambda,
        train_mask: train_mask.to_vec(),
    })
}

/// Fits every target against the shared factor, in the order given.
///
/// Cross-products sum only train rows where the target is present; the
/// intercept is the target mean over those rows. A target with fewer than
/// two usable rows yields `Err(Degenerate)` without affecting the others.
pub fn fit_targets(
    cache: &GramCache,
    features: ArrayView2<'_, f64>,
    targets: &[TargetColumn<'_>],
) -> Vec<Result<LinearProbe, SolverError>> {
    let rows = train_rows(&cache.train_mask);
    let d = cache.dim();
    assert_eq!(features.ncols(), d, "features must match the cache");

    let mut means = Vec::with_capacity(targets.len());
    let mut yc = Array2::<f64>::zeros((rows.len(), targets.len()));
    for (t, target) in targets.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &r in &rows {
            if let Some(y) = target.values[r] {
                sum += y;
                count += 1;
            }
        }
        if count < 2 {
            means.push(Err(SolverError::Degenerate(count)));
            continue;
        }
        let mean = sum / count as f64;
        for (i, &r) in rows.iter().enumerate() {
            if let Some(y) = target.values[r] {
                yc[[i, t]] = y - mean;
            }
        }
        means.push(Ok((mean, count)));
    }

    let xc = centered_rows(features, &rows, &cache.feature_mean);
    let cross = xc.t().dot(&yc);
    targets
        .iter()
        .zip(means)
        .enumerate()
        .map(|(t, (target, mean))| {
            let (intercept, n_train) = mean?;
            let rhs: Vec<f64> = cross.index_axis(Axis(1), t).to_vec();
            Ok(LinearProbe {
                target: target.name.to_string(),
                weights: cache.solve(&rhs),
                feature_mean: cache.feature_mean.clone(),
                intercept,
                lambda: cache.lambda,
                n_train,
            })
        })
        .collect()
}

/// Applies the probe to every row of `features`.
pub fn predict(probe: &LinearProbe, features: ArrayView2<'_, f64>) -> Result<Vec<f64>, SolverError> {
    if features.ncols() != probe.weights.len() {
        return Err(SolverError::Dimension {
            expected: probe.weights.len(),
            found: features.ncols(),
        });
    }
    Ok(features
        .rows()
        .into_iter()
        .map(|x| {
            probe.intercept
                + x.iter()
                    .zip(&probe.feature_mean)
                    .zip(&probe.weights)
                    .map(|((x, m), w)| w * (x - m))
                    .sum::<f64>()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use ndarray::array;

    fn random_design(seed: u64, n: usize, d: usize) -> Array2<f64> {
        let mut rng = CounterRng::from_labels(seed, &[n as u64, d as u64]);
        Array2::from_shape_fn((n, d), |_| rng.normal())
    }

    #[test]
    fn duplicate_rows_need_ridge() {
        let x = array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]];
        let cache = build_gram(x.view(), &[true, true]).unwrap();
        assert!(cache.lambda() > 0.0);
    }

    #[test]
    fn duplicate_columns_need_ridge() {
        let base = random_design(1, 20, 1);
        let x = Array2::from_shape_fn((20, 2), |(i, _)| base[[i, 0]]);
        let cache = build_gram(x.view(), &[true; 20]).unwrap();
        assert!(cache.lambda() > 0.0);
        let trace = cache.gram()[[0, 0]] + cache.gram()[[1, 1]];
        assert!(cache.lambda() >= 1e-8 * trace / 2.0 * (1.0 - 1e-12));
    }

    #[test]
    fn orthonormal_design_gives_scaled_identity() {
        let x = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let cache = build_gram(x.view(), &[true; 4]).unwrap();
        assert_eq!(cache.lambda(), 0.0);
        assert_eq!(cache.gram(), &array![[2.0, 0.0], [0.0, 2.0]]);
        let s = 2.0f64.sqrt();
        assert_eq!(cache.factor(), &array![[s, 0.0], [0.0, s]]);
    }

    #[test]
    fn gram_matches_naive_double_loop() {
        let x = random_design(2, 50, 8);
        let mask: Vec<bool> = (0..50).map(|i| i % 7 != 3).collect();
        let cache = build_gram(x.view(), &mask).unwrap();
        // Oracle: per-entry double loop over rows with a two-pass mean.
        let rows: Vec<usize> = (0..50).filter(|&i| mask[i]).collect();
        let mean: Vec<f64> = (0..8)
            .map(|k| rows.iter().map(|&r| x[[r, k]]).sum::<f64>() / rows.len() as f64)
            .collect();
        for a in 0..8 {
            for b in 0..8 {
                let mut g = 0.0;
                for &r in &rows {
                    g += (x[[r, a]] - mean[a]) * (x[[r, b]] - mean[b]);
                }
                let got = cache.gram()[[a, b]];
                assert!((got - g).abs() <= 1e-10 * g.abs().max(1.0), "{a},{b}: {got} vs {g}");
            }
        }
    }

    #[test]
    fn factor_reproduces_gram() {
        let x = random_design(3, 30, 6);
        let cache = build_gram(x.view(), &[true; 30]).unwrap();
        let l = cache.factor();
        let llt = l.dot(&l.t());
        let norm = cache.gram().iter().map(|v| v.abs()).fold(0.0, f64::max);
        for ((i, j), v) in llt.indexed_iter() {
            let shifted = cache.gram()[[i, j]] + if i == j { cache.lambda() } else { 0.0 };
            assert!((v - shifted).abs() <= 1e-8 * norm);
        }
    }

    #[test]
    fn exact_recovery_of_a_column() {
        let x = random_design(4, 25, 4);
        let y: Vec<Option<f64>> = (0..25).map(|i| Some(x[[i, 2]])).collect();
        let cache = build_gram(x.view(), &[true; 25]).unwrap();
        assert_eq!(cache.lambda(), 0.0);
        let probe = fit_targets(&cache, x.view(), &[TargetColumn { name: "y", values: &y }])
            .remove(0)
            .unwrap();
        for (k, w) in probe.weights.iter().enumerate() {
            let expect = if k == 2 { 1.0 } else { 0.0 };
            assert!((w - expect).abs() < 1e-10, "w[{k}] = {w}");
        }
        let col_mean = x.column(2).sum() / 25.0;
        assert!((probe.intercept - col_mean).abs() < 1e-12);
        let pred = predict(&probe, x.view()).unwrap();
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_target() {
        let x = random_design(5, 12, 3);
        let y = vec![Some(4.25); 12];
        let cache = build_gram(x.view(), &[true; 12]).unwrap();
        let probe = fit_targets(&cache, x.view(), &[TargetColumn { name: "c", values: &y }])
            .remove(0)
            .unwrap();
        assert!(probe.weights.iter().all(|w| *w == 0.0));
        assert_eq!(probe.intercept, 4.25);
    }

    #[test]
    fn too_few_rows_only_hits_that_target() {
        let x = random_design(6, 10, 2);
        let good: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64)).collect();
        let mut bad = vec![None; 10];
        bad[0] = Some(1.0);
        let cache = build_gram(x.view(), &[true; 10]).unwrap();
        let fits = fit_targets(
            &cache,
            x.view(),
            &[
                TargetColumn { name: "bad", values: &bad },
                TargetColumn { name: "good", values: &good },
            ],
        );
        assert_eq!(fits[0], Err(SolverError::Degenerate(1)));
        assert!(fits[1].is_ok());
    }

    #[test]
    fn build_rejects_single_row() {
        let x = random_design(7, 3, 2);
        assert_eq!(
            build_gram(x.view(), &[true, false, false]).unwrap_err(),
            SolverError::Degenerate(1)
        );
    }

    #[test]
    fn zero_weights_predict_intercept() {
        let probe = LinearProbe {
            target: "t".into(),
            weights: vec![0.0; 3],
            feature_mean: vec![1.0, 2.0, 3.0],
            intercept: -0.5,
            lambda: 0.0,
            n_train: 10,
        };
        let x = random_design(8, 6, 3);
        assert_eq!(predict(&probe, x.view()).unwrap(), vec![-0.5; 6]);
        assert!(matches!(
            predict(&probe, random_design(8, 2, 4).view()),
            Err(SolverError::Dimension { expected: 3, found: 4 })
        ));
    }

    #[test]
    fn predict_matches_elementwise_oracle() {
        let mut rng = CounterRng::from_labels(9, &[]);
        let d = 5;
        let probe = LinearProbe {
            target: "t".into(),
            weights: (0..d).map(|_| rng.normal()).collect(),
            feature_mean: (0..d).map(|_| rng.normal()).collect(),
            intercept: rng.normal(),
            lambda: 0.0,
            n_train: 2,
        };
        let x = random_design(10, 17, d);
        let got = predict(&probe, x.view()).unwrap();
        for i in 0..17 {
            let mut s = probe.intercept;
            for k in 0..d {
                s += probe.weights[k] * x[[i, k]] - probe.weights[k] * probe.feature_mean[k];
            }
            assert!((got[i] - s).abs() <= 1e-12 * s.abs().max(1.0));
        }
    }

    #[test]
    fn schedule_has_seven_steps() {
        let m = RidgeSchedule::default().multipliers();
        assert_eq!(m.len(), 7);
        assert_eq!(m[0], 1e-8);
        assert!((m[6] - 1e-2).abs() < 1e-15);
    }
}
