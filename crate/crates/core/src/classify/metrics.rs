//! ROC AUC and its bootstrap distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Area under the ROC curve: the fraction of positive/negative pairs ranked
/// correctly, ties counting one half. Computed from mid-ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based mid-rank of the tie block i..=j
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Mean and population std of AUC over `n_boot` subject-level resamples
/// with replacement. Resamples containing a single class are redrawn.
pub fn bootstrap_auc(scores: &[f64], labels: &[u8], n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    auc(scores, labels)?;
    if n_boot == 0 {
        return Err(Error::invalid("n_boot must be positive"));
    }
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_boot);
    let (mut s, mut l) = (vec![0.0; n], vec![0u8; n]);
    while values.len() < n_boot {
        for k in 0..n {
            let i = rng.random_range(0..n);
            s[k] = scores[i];
            l[k] = labels[i];
        }
        let pos = l.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == n {
            continue;
        }
        values.push(auc(&s, &l)?);
    }
    Ok((crate::stats::mean(&values), crate::stats::variance(&values).sqrt()))
}
