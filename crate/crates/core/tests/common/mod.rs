#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use probegrid::rng::CounterRng;

pub fn gaussian_matrix(rng: &mut CounterRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.normal())
}

/// `(XcᵀXc + λI)⁻¹ Xcᵀ yc` by explicit inverse, over rows where `mask`
/// holds and `y` is present.
pub fn normal_equations_oracle(
    x: &Array2<f64>,
    y: &[Option<f64>],
    mask: &[bool],
    lambda: f64,
) -> Vec<f64> {
    let rows: Vec<usize> = (0..x.nrows()).filter(|&i| mask[i]).collect();
    let d = x.ncols();
    let mut mean = vec![0.0; d];
    for &r in &rows {
        for j in 0..d {
            mean[j] += x[[r, j]];
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    let present: Vec<f64> = rows.iter().filter_map(|&r| y[r]).collect();
    let ymean = present.iter().sum::<f64>() / present.len() as f64;
    let xc = DMatrix::from_fn(rows.len(), d, |i, j| x[[rows[i], j]] - mean[j]);
    let yc = DVector::from_fn(rows.len(), |i, _| y[rows[i]].map_or(0.0, |v| v - ymean));
    let a = xc.transpose() * &xc + DMatrix::identity(d, d) * lambda;
    let inv = a.try_inverse().expect("oracle system invertible");
    (inv * xc.transpose() * yc).iter().copied().collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

/// Pairwise count: a positive above a negative wins 1, ties give ½.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

pub fn direct_r2(pred: &[f64], truth: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    1.0 - ss_res / ss_tot
}

/// Ridge solution from the SVD of the centered design, never forming the
/// Gram matrix: `Σ sᵢ/(sᵢ² + λ) · vᵢ uᵢᵀ yc`.
pub fn svd_reference(x: &Array2<f64>, y: &[Option<f64>], mask: &[bool], lambda: f64) -> Vec<f64> {
    let rows: Vec<usize> = (0..x.nrows()).filter(|&i| mask[i]).collect();
    let d = x.ncols();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|&r| x[[r, j]]).sum::<f64>() / rows.len() as f64)
        .collect();
    let present: Vec<f64> = rows.iter().filter_map(|&r| y[r]).collect();
    let ymean = present.iter().sum::<f64>() / present.len() as f64;
    let xc = DMatrix::from_fn(rows.len(), d, |i, j| x[[rows[i], j]] - mean[j]);
    let yc = DVector::from_fn(rows.len(), |i, _| y[rows[i]].map_or(0.0, |v| v - ymean));
    let svd = xc.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let uty = u.transpose() * yc;
    let mut w = DVector::zeros(d);
    for (i, s) in svd.singular_values.iter().enumerate() {
        w += vt.row(i).transpose() * (s / (s * s + lambda) * uty[i]);
    }
    w.iter().copied().collect()
}
