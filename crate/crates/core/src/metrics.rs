//! Held-out scoring: ROC AUC for binary targets, R² for continuous ones.
//!
//! Both return `None` for undefined scores instead of NaN.

/// ROC AUC via the Mann–Whitney statistic with midranks, so tied scores
/// count one half.
///
/// `None` when fewer than two rows are given or only one class is present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let m = scores.len();
    if m < 2 {
        return None;
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = m - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (1-based) midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < m {
        let mut j = i + 1;
        while j < m && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += midrank * pos_in_group as f64;
        i = j;
    }
    let p = n_pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// `1 − Σ(y−ŷ)² / Σ(y−ȳ)²` with `ȳ` the mean of `truths`.
///
/// `None` when fewer than two rows are given or the truths are constant.
/// Negative values are returned as is.
pub fn r_squared(predictions: &[f64], truths: &[f64]) -> Option<f64> {
    assert_eq!(predictions.len(), truths.len());
    let m = truths.len();
    if m < 2 {
        return None;
    }
    let mean = truths.iter().sum::<f64>() / m as f64;
    let ss_tot: f64 = truths.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    Some(1.0 - ss_res / ss_tot)
}
