use super::{EvalError, Result};

fn check(scores: &[f64], gold: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            gold: gold.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = gold.iter().filter(|&&g| g != 0).count() as u64;
    let n_neg = gold.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassGold);
    }
    Ok((n_pos, n_neg))
}

/// Area under the ROC curve with half credit for ties, from average ranks.
///
/// Works on doubled ranks so the Mann-Whitney numerator is an exact
/// integer; the only rounding is the final division.
pub fn auroc(scores: &[f64], gold: &[u8]) -> Result<f64> {
    let (num, den) = auroc_ratio(scores, gold)?;
    Ok(num as f64 / den as f64)
}

/// Exact AUROC as `(2·concordant + ties, 2·n_pos·n_neg)`.
pub fn auroc_ratio(scores: &[f64], gold: &[u8]) -> Result<(u128, u128)> {
    let (n_pos, n_neg) = check(scores, gold)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Treat -0.0 and 0.0 as one score.
    let same = |a: usize, b: usize| scores[a] == scores[b];
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && same(order[i], order[j]) {
            j += 1;
        }
        // Ranks i+1..=j share the average (i + 1 + j) / 2.
        let twice_avg = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| gold[k] != 0).count() as u128;
        twice_rank_sum += twice_avg * pos_in_group;
        i = j;
    }
    let n_pos = u128::from(n_pos);
    Ok((twice_rank_sum - n_pos * (n_pos + 1), 2 * n_pos * u128::from(n_neg)))
}

/// O(n²) pair counting, kept as the reference for [`auroc`].
pub fn auroc_pairwise(scores: &[f64], gold: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check(scores, gold)?;
    let mut twice: u128 = 0;
    for (i, &gi) in gold.iter().enumerate() {
        if gi == 0 {
            continue;
        }
        for (j, &gj) in gold.iter().enumerate() {
            if gj != 0 {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    Ok(twice as f64 / (2 * u128::from(n_pos) * u128::from(n_neg)) as f64)
}
